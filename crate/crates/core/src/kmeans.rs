//! k-means++ with Lloyd iterations, best-of-restarts, and silhouette-based
//! selection of `k`.
//!
//! Points are put into a canonical (lexicographic) order before seeding, so
//! the partition does not depend on input order. Cluster indices are numbered
//! by first appearance in that canonical order.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KMeansError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("k range {lo}..={hi} must lie within 2..={max}")]
    RangeError { lo: usize, hi: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChosenBy {
    Fixed,
    Silhouette,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionClustering {
    pub k: usize,
    /// Cluster index per input point, in input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub chosen_by: ChosenBy,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn check_points(points: &[Vec<f64>]) -> Result<usize, KMeansError> {
    let first = points.first().ok_or(KMeansError::EmptyInput)?;
    let dim = first.len();
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(KMeansError::DimensionMismatch { index, expected: dim, found: p.len() });
        }
    }
    Ok(dim)
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
}

fn plus_plus_init<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[next].to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        labels[i] = best;
        inertia += best_d;
    }
    inertia
}

fn lloyd<R: Rng>(points: &[&[f64]], k: usize, dim: usize, rng: &mut R) -> Run {
    let n = points.len();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut labels = vec![0usize; n];
    let mut inertia = assign(points, &centroids, &mut labels);
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for s in sums[j].iter_mut() {
                    *s /= counts[j] as f64;
                }
                centroids[j] = core::mem::take(&mut sums[j]);
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(points[a], &centroids[labels[a]])
                            .total_cmp(&sq_dist(points[b], &centroids[labels[b]]))
                            .then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = j;
                    counts[j] = 1;
                    centroids[j] = points[i].to_vec();
                }
            }
        }
        let next = assign(points, &centroids, &mut labels);
        let change = (inertia - next).abs();
        let scale = inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        if inertia == 0.0 || change / scale < RELATIVE_TOLERANCE {
            break;
        }
    }
    Run { labels, centroids, inertia }
}

/// Best-of-`restarts` k-means; restart `r` uses the stream `(seed, r)`.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ActionClustering, KMeansError> {
    let dim = check_points(points)?;
    let n = points.len();
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if k > n {
        return Err(KMeansError::KTooLarge { k, n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    let sorted: Vec<&[f64]> = order.iter().map(|&i| points[i].as_slice()).collect();

    let mut best: Option<Run> = None;
    for r in 0..restarts.max(1) {
        let mut rng = seed::rng_at(seed, &[r as u64]);
        let run = lloyd(&sorted, k, dim, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");

    // Number clusters by first appearance in canonical order.
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &run.labels {
        if relabel[l] == usize::MAX {
            relabel[l] = next;
            next += 1;
        }
    }
    for r in relabel.iter_mut() {
        if *r == usize::MAX {
            *r = next;
            next += 1;
        }
    }
    let mut centroids = vec![Vec::new(); k];
    for (old, c) in run.centroids.into_iter().enumerate() {
        centroids[relabel[old]] = c;
    }
    let mut assignments = vec![0usize; n];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = relabel[run.labels[pos]];
    }
    Ok(ActionClustering { k, assignments, centroids, inertia: run.inertia, chosen_by: ChosenBy::Fixed })
}

/// Mean silhouette with Euclidean distance. Points in singleton clusters
/// score 0.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += libm::sqrt(sq_dist(&points[i], &points[j]));
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteSelection {
    pub k: usize,
    pub clustering: ActionClustering,
    /// `(k, mean silhouette)` for every candidate.
    pub scores: Vec<(usize, f64)>,
}

/// Picks the `k` in `range` with the highest mean silhouette; ties go to the
/// smaller `k`.
pub fn select_k_silhouette(
    points: &[Vec<f64>],
    range: RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
) -> Result<SilhouetteSelection, KMeansError> {
    check_points(points)?;
    let n = points.len();
    let (lo, hi) = (*range.start(), *range.end());
    let max = n.saturating_sub(1);
    if lo < 2 || lo > hi || hi > max {
        return Err(KMeansError::RangeError { lo, hi, max });
    }
    let mut scores = Vec::new();
    let mut best: Option<(f64, ActionClustering)> = None;
    for k in range {
        let c = kmeans(points, k, seed, restarts)?;
        let s = silhouette_score(points, &c.assignments);
        scores.push((k, s));
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, c));
        }
    }
    let (_, mut clustering) = best.expect("non-empty range");
    clustering.chosen_by = ChosenBy::Silhouette;
    Ok(SilhouetteSelection { k: clustering.k, clustering, scores })
}
