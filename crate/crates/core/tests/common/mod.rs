//! Independent oracles and generated datasets shared by the test targets.
#![allow(dead_code)]

use cometh_core::distributions::JudgmentDistribution;
use cometh_core::generalization::FeatureMatrix;
use cometh_core::seed;
use rand::Rng;

pub fn random_dist<R: Rng>(rng: &mut R) -> JudgmentDistribution {
    let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    JudgmentDistribution::from_weights(w).unwrap()
}

/// Solves the 3x3 transport problem with cost |i - j| by enumerating basic
/// feasible solutions: every choice of 5 cells whose row/column equations
/// have a unique non-negative solution.
pub fn transport_oracle(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let cells: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << 9) {
        if mask.count_ones() != 5 {
            continue;
        }
        let chosen: Vec<(usize, usize)> =
            cells.iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0).map(|(_, c)| *c).collect();
        // Six equations (3 rows, 3 columns) in five unknowns.
        let mut a = vec![vec![0.0; 6]; 6];
        for (u, &(i, j)) in chosen.iter().enumerate() {
            a[i][u] = 1.0;
            a[3 + j][u] = 1.0;
        }
        for i in 0..3 {
            a[i][5] = p[i];
            a[3 + i][5] = q[i];
        }
        let Some(x) = solve_overdetermined(a) else { continue };
        if x.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let cost: f64 = chosen
            .iter()
            .zip(&x)
            .map(|(&(i, j), v)| (i as f64 - j as f64).abs() * v.max(0.0))
            .sum();
        best = best.min(cost);
    }
    best
}

/// Gaussian elimination on a 6x5 augmented system; `None` unless the
/// coefficient matrix has rank 5 and the system is consistent.
fn solve_overdetermined(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let (rows, cols) = (6, 5);
    let mut r = 0;
    for c in 0..cols {
        let piv = (r..rows).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(r, piv);
        let div = a[r][c];
        for k in 0..=cols {
            a[r][k] /= div;
        }
        for i in 0..rows {
            if i != r && a[i][c] != 0.0 {
                let f = a[i][c];
                for k in 0..=cols {
                    a[i][k] -= f * a[r][k];
                }
            }
        }
        r += 1;
    }
    if a[5][cols].abs() > 1e-9 {
        return None;
    }
    Some((0..cols).map(|c| a[c][cols]).collect())
}

/// All set partitions of `0..n` as restricted growth strings.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for b in 0..=max + 1 {
            prefix.push(b);
            rec(prefix, max.max(b), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut prefix = vec![0];
    rec(&mut prefix, 0, n, &mut out);
    out
}

pub fn count(labels: &[usize], pred: impl Fn(usize) -> bool) -> f64 {
    (0..labels.len()).filter(|&i| pred(i)).count() as f64
}

pub fn ari_oracle(u: &[usize], v: &[usize]) -> f64 {
    let n = u.len();
    let (mut both, mut in_u, mut in_v, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let su = u[i] == u[j];
            let sv = v[i] == v[j];
            pairs += 1.0;
            in_u += f64::from(u8::from(su));
            in_v += f64::from(u8::from(sv));
            both += f64::from(u8::from(su && sv));
        }
    }
    let expected = if pairs > 0.0 { in_u * in_v / pairs } else { 0.0 };
    let max = 0.5 * (in_u + in_v);
    if max - expected == 0.0 {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// (H(U), H(V), I(U;V)) as per-element averages.
pub fn info_oracle(u: &[usize], v: &[usize]) -> (f64, f64, f64) {
    let n = u.len() as f64;
    let (mut hu, mut hv, mut mi) = (0.0, 0.0, 0.0);
    for e in 0..u.len() {
        let a = count(u, |i| u[i] == u[e]);
        let b = count(v, |i| v[i] == v[e]);
        let ab = count(u, |i| u[i] == u[e] && v[i] == v[e]);
        hu -= (a / n).ln() / n;
        hv -= (b / n).ln() / n;
        mi += (n * ab / (a * b)).ln() / n;
    }
    (hu, hv, mi.max(0.0))
}

pub fn n_blocks(x: &[usize]) -> usize {
    x.iter().max().map_or(0, |m| m + 1)
}

/// NMI with arithmetic-mean normalization, from the per-element oracle.
pub fn nmi_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let (h_t, h_p, mi) = info_oracle(truth, pred);
    if n_blocks(truth) == 1 && n_blocks(pred) == 1 || h_t + h_p <= 0.0 {
        1.0
    } else {
        (mi / (0.5 * (h_t + h_p))).clamp(0.0, 1.0)
    }
}

pub fn v_measure_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let (h_t, h_p, mi) = info_oracle(truth, pred);
    let hom = if h_t == 0.0 { 1.0 } else { mi / h_t };
    let com = if h_p == 0.0 { 1.0 } else { mi / h_p };
    let v = if hom + com == 0.0 { 0.0 } else { 2.0 * hom * com / (hom + com) };
    v.clamp(0.0, 1.0)
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

pub struct Instance {
    pub matrix: FeatureMatrix,
    pub assignments: Vec<u64>,
}

pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let n_f = rng.random_range(1..=15);
    let n_c = rng.random_range(2..=4u64);
    let n = rng.random_range(n_c as usize..=20);
    let mut assignments: Vec<u64> = (0..n_c).collect();
    while assignments.len() < n {
        assignments.push(rng.random_range(0..n_c));
    }
    let rows = (0..n).map(|_| (0..n_f).map(|_| u8::from(rng.random_bool(0.4))).collect()).collect();
    Instance { matrix: FeatureMatrix::new(names(n_f), rows).unwrap(), assignments }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Five contexts of ten scenarios; context `c` owns features `3c..3c+3`,
/// which are on for its members and off for everyone else.
pub fn separable() -> (FeatureMatrix, Vec<u64>) {
    let mut rows = Vec::new();
    let mut assignments = Vec::new();
    for c in 0..5u64 {
        for _ in 0..10 {
            let mut row = vec![0u8; 15];
            for f in 0..3 {
                row[3 * c as usize + f] = 1;
            }
            rows.push(row);
            assignments.push(c);
        }
    }
    (FeatureMatrix::new(names(15), rows).unwrap(), assignments)
}

/// Six Gaussian-ish blobs in 8 dimensions: unit spread, centers at least 20
/// apart.
pub fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for b in 0..6 {
        let mut center = vec![0.0; 8];
        center[b] = 20.0;
        center[6] = 20.0 * (b % 2) as f64;
        for _ in 0..12 {
            // Sum of uniforms: bounded, roughly normal, variance 1.
            let p = center
                .iter()
                .map(|c| c + (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0)
                .collect();
            points.push(p);
            labels.push(b);
        }
    }
    (points, labels)
}

