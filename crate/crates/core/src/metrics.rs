//! Evaluation metrics for learned contexts, clusterings and judgment
//! predictions.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{emd, Judgment};
use crate::learner::LearnerState;
use crate::synthetic::CanonicalSet;

/// Duplicate-match penalty weight.
pub const DEFAULT_LAMBDA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("learner state has no contexts")]
    EmptyState,
    #[error("scenario {0} has no label")]
    UnlabeledMember(String),
    #[error("homogeneity must be positive")]
    ZeroHomogeneity,
    #[error("prediction and reference id sets differ")]
    IdMismatch,
    #[error("no items to score")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMatch {
    pub action: String,
    pub context_id: u64,
    pub canonical: String,
    pub emd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub assignments: Vec<ContextMatch>,
    pub match_counts: BTreeMap<String, usize>,
    pub penalty: f64,
    pub total: f64,
}

/// Matches every context barycenter to its own nearest canonical (first in
/// set order on ties). Each match beyond the first per canonical costs
/// `lambda`.
pub fn penalized_emd(
    state: &LearnerState,
    canonicals: &CanonicalSet,
    lambda: f64,
) -> Result<MatchReport, MetricsError> {
    if state.n_contexts() == 0 {
        return Err(MetricsError::EmptyState);
    }
    let mut assignments = Vec::new();
    let mut match_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut emd_sum = 0.0;
    for (action, ctx) in state.all_contexts() {
        let bary = ctx.barycenter();
        let mut best: Option<(&str, f64)> = None;
        for c in canonicals.entries() {
            let e = emd(&bary, &c.p);
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((c.label.as_str(), e));
            }
        }
        let (label, e) = best.expect("canonical set is never empty");
        *match_counts.entry(label.to_string()).or_default() += 1;
        emd_sum += e;
        assignments.push(ContextMatch {
            action: action.to_string(),
            context_id: ctx.id,
            canonical: label.to_string(),
            emd: e,
        });
    }
    let duplicates: usize = match_counts.values().map(|&n| n.saturating_sub(1)).sum();
    let penalty = lambda * duplicates as f64;
    Ok(MatchReport { assignments, match_counts, penalty, total: emd_sum + penalty })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomogeneityMode {
    #[default]
    SizeWeighted,
    Unweighted,
}

/// Share of each context held by its most frequent ground-truth label,
/// averaged over contexts.
pub fn homogeneity(
    state: &LearnerState,
    labels: &BTreeMap<String, String>,
    mode: HomogeneityMode,
) -> Result<f64, MetricsError> {
    if state.n_contexts() == 0 {
        return Err(MetricsError::EmptyState);
    }
    let mut weighted = 0.0;
    let mut total_members = 0u64;
    let mut unweighted = 0.0;
    for (_, ctx) in state.all_contexts() {
        let mut tally: BTreeMap<&str, u64> = BTreeMap::new();
        for m in &ctx.member_ids {
            let l = labels.get(m).ok_or_else(|| MetricsError::UnlabeledMember(m.clone()))?;
            *tally.entry(l.as_str()).or_default() += 1;
        }
        let modal = tally.values().copied().max().unwrap_or(0);
        weighted += modal as f64;
        total_members += ctx.size;
        unweighted += modal as f64 / ctx.size as f64;
    }
    Ok(match mode {
        HomogeneityMode::SizeWeighted => weighted / total_members as f64,
        HomogeneityMode::Unweighted => unweighted / state.n_contexts() as f64,
    })
}

/// `emd_pen + λ|n_contexts - n_canonicals| + λ|1 - 1/homogeneity|`.
pub fn loss(
    emd_penalized: f64,
    n_contexts: usize,
    homogeneity: f64,
    lambda: f64,
    n_canonicals: usize,
) -> Result<f64, MetricsError> {
    if !(homogeneity > 0.0) {
        return Err(MetricsError::ZeroHomogeneity);
    }
    let count_gap = (n_contexts as f64 - n_canonicals as f64).abs();
    Ok(emd_penalized + lambda * count_gap + lambda * (1.0 - 1.0 / homogeneity).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub n_contexts: f64,
    pub emd_penalized: f64,
    pub homogeneity: f64,
    pub loss: f64,
}

impl EvalScores {
    pub fn mean(scores: &[EvalScores]) -> Option<EvalScores> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let mut acc = EvalScores { n_contexts: 0.0, emd_penalized: 0.0, homogeneity: 0.0, loss: 0.0 };
        for s in scores {
            acc.n_contexts += s.n_contexts;
            acc.emd_penalized += s.emd_penalized;
            acc.homogeneity += s.homogeneity;
            acc.loss += s.loss;
        }
        acc.n_contexts /= n;
        acc.emd_penalized /= n;
        acc.homogeneity /= n;
        acc.loss /= n;
        Some(acc)
    }
}

/// All four benchmark metrics for one learner run.
pub fn evaluate(
    state: &LearnerState,
    canonicals: &CanonicalSet,
    labels: &BTreeMap<String, String>,
    lambda: f64,
    mode: HomogeneityMode,
) -> Result<EvalScores, MetricsError> {
    let report = penalized_emd(state, canonicals, lambda)?;
    let h = homogeneity(state, labels, mode)?;
    let n = state.n_contexts();
    Ok(EvalScores {
        n_contexts: n as f64,
        emd_penalized: report.total,
        homogeneity: h,
        loss: loss(report.total, n, h, lambda, canonicals.len())?,
    })
}

// ---------------------------------------------------------------------------
// Clustering agreement

/// Cluster sizes and co-occurrence counts of two labelings.
#[derive(Debug, Clone)]
pub struct Contingency {
    table: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    n: u64,
}

impl Contingency {
    /// Rows index `truth` labels, columns index `pred` labels.
    pub fn new<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> Result<Self, MetricsError> {
        if pred.len() != truth.len() {
            return Err(MetricsError::IdMismatch);
        }
        if pred.is_empty() {
            return Err(MetricsError::Empty);
        }
        let pred_idx = dense_index(pred);
        let truth_idx = dense_index(truth);
        let n_rows = truth_idx.iter().max().map_or(0, |m| m + 1);
        let n_cols = pred_idx.iter().max().map_or(0, |m| m + 1);
        let mut table = alloc::vec![alloc::vec![0u64; n_cols]; n_rows];
        for (&r, &c) in truth_idx.iter().zip(&pred_idx) {
            table[r][c] += 1;
        }
        let rows = table.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..n_cols).map(|c| table.iter().map(|r| r[c]).sum()).collect();
        Ok(Self { table, rows, cols, n: pred.len() as u64 })
    }

    pub fn table(&self) -> &[Vec<u64>] {
        &self.table
    }

    pub fn ari(&self) -> f64 {
        let comb2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
        let index: f64 = self.table.iter().flatten().map(|&x| comb2(x)).sum();
        let sum_rows: f64 = self.rows.iter().map(|&x| comb2(x)).sum();
        let sum_cols: f64 = self.cols.iter().map(|&x| comb2(x)).sum();
        let total = comb2(self.n);
        let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
        let max_index = 0.5 * (sum_rows + sum_cols);
        let denom = max_index - expected;
        if denom == 0.0 {
            // Both labelings trivial (one cluster each, or all singletons).
            return 1.0;
        }
        (index - expected) / denom
    }

    fn entropy(counts: &[u64], n: u64) -> f64 {
        let n = n as f64;
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * libm::log(p)
            })
            .sum()
    }

    fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let mut mi = 0.0;
        for (r, row) in self.table.iter().enumerate() {
            for (c, &nij) in row.iter().enumerate() {
                if nij == 0 {
                    continue;
                }
                let nij = nij as f64;
                mi += nij / n * libm::log(n * nij / (self.rows[r] as f64 * self.cols[c] as f64));
            }
        }
        mi.max(0.0)
    }

    /// Mutual information normalized by the arithmetic mean of the two
    /// entropies.
    pub fn nmi(&self) -> f64 {
        if self.rows.len() == 1 && self.cols.len() == 1 {
            return 1.0;
        }
        let h_truth = Self::entropy(&self.rows, self.n);
        let h_pred = Self::entropy(&self.cols, self.n);
        let denom = 0.5 * (h_truth + h_pred);
        if denom <= 0.0 {
            return 1.0;
        }
        (self.mutual_information() / denom).clamp(0.0, 1.0)
    }

    /// Homogeneity, completeness and their harmonic mean (beta = 1).
    pub fn homogeneity_completeness_v(&self) -> (f64, f64, f64) {
        let h_truth = Self::entropy(&self.rows, self.n);
        let h_pred = Self::entropy(&self.cols, self.n);
        let mi = self.mutual_information();
        let hom = if h_truth == 0.0 { 1.0 } else { mi / h_truth };
        let com = if h_pred == 0.0 { 1.0 } else { mi / h_pred };
        let v = if hom + com == 0.0 { 0.0 } else { 2.0 * hom * com / (hom + com) };
        (hom.clamp(0.0, 1.0), com.clamp(0.0, 1.0), v.clamp(0.0, 1.0))
    }

    pub fn v_measure(&self) -> f64 {
        self.homogeneity_completeness_v().2
    }
}

fn dense_index<T: Ord>(labels: &[T]) -> Vec<usize> {
    let mut map: BTreeMap<&T, usize> = BTreeMap::new();
    for l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    labels.iter().map(|l| map[l]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterAgreement {
    pub ari: f64,
    pub nmi: f64,
    pub v_measure: f64,
}

/// Aligns two id-keyed labelings and returns the aligned label vectors.
fn align<'a, K: Ord, A, B>(
    pred: &'a BTreeMap<K, A>,
    truth: &'a BTreeMap<K, B>,
) -> Result<(Vec<&'a A>, Vec<&'a B>), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::IdMismatch);
    }
    let mut p = Vec::with_capacity(pred.len());
    let mut t = Vec::with_capacity(pred.len());
    for ((kp, a), (kt, b)) in pred.iter().zip(truth) {
        if kp != kt {
            return Err(MetricsError::IdMismatch);
        }
        p.push(a);
        t.push(b);
    }
    Ok((p, t))
}

pub fn cluster_agreement<K: Ord, A: Ord, B: Ord>(
    pred: &BTreeMap<K, A>,
    truth: &BTreeMap<K, B>,
) -> Result<ClusterAgreement, MetricsError> {
    let (p, t) = align(pred, truth)?;
    let c = Contingency::new(&p, &t)?;
    Ok(ClusterAgreement { ari: c.ari(), nmi: c.nmi(), v_measure: c.v_measure() })
}

pub fn ari<K: Ord, A: Ord, B: Ord>(
    pred: &BTreeMap<K, A>,
    truth: &BTreeMap<K, B>,
) -> Result<f64, MetricsError> {
    cluster_agreement(pred, truth).map(|a| a.ari)
}

pub fn nmi<K: Ord, A: Ord, B: Ord>(
    pred: &BTreeMap<K, A>,
    truth: &BTreeMap<K, B>,
) -> Result<f64, MetricsError> {
    cluster_agreement(pred, truth).map(|a| a.nmi)
}

pub fn v_measure<K: Ord, A: Ord, B: Ord>(
    pred: &BTreeMap<K, A>,
    truth: &BTreeMap<K, B>,
) -> Result<f64, MetricsError> {
    cluster_agreement(pred, truth).map(|a| a.v_measure)
}

// ---------------------------------------------------------------------------
// Judgment agreement

/// Fraction of items whose predicted judgment equals the majority judgment.
pub fn alignment_rate<K: Ord>(
    predictions: &BTreeMap<K, Judgment>,
    majority: &BTreeMap<K, Judgment>,
) -> Result<f64, MetricsError> {
    let (p, t) = align(predictions, majority)?;
    if p.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / p.len() as f64)
}

fn is_wrapping_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}')
}

/// Strict response parser: trims, strips surrounding punctuation and quotes,
/// case-folds, then requires exactly one of the three judgment words.
pub fn parse_judgment(raw: &str) -> Option<Judgment> {
    let token = raw.trim().trim_matches(|c: char| c.is_whitespace() || is_wrapping_punctuation(c));
    Judgment::ALL.into_iter().find(|j| token.eq_ignore_ascii_case(j.as_str()))
}

/// Fraction of responses that do not parse to a valid judgment. An empty
/// batch has no errors.
pub fn error_rate<'a, I>(responses: I) -> f64
where
    I: IntoIterator<Item = &'a str>,
{
    let mut total = 0usize;
    let mut bad = 0usize;
    for r in responses {
        total += 1;
        if parse_judgment(r).is_none() {
            bad += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAlignmentEntry {
    pub action: String,
    pub context_id: u64,
    pub size: u64,
    pub dominant: Judgment,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAlignment {
    pub clusters: Vec<ClusterAlignmentEntry>,
    pub overall: f64,
}

/// Per context: share of members whose majority judgment equals the
/// context's dominant judgment (arg-max of its barycenter).
pub fn cluster_alignment_rate(
    state: &LearnerState,
    majority: &BTreeMap<String, Judgment>,
) -> Result<ClusterAlignment, MetricsError> {
    if state.n_contexts() == 0 {
        return Err(MetricsError::EmptyState);
    }
    let mut clusters = Vec::new();
    let mut hits_total = 0u64;
    let mut members_total = 0u64;
    for (action, ctx) in state.all_contexts() {
        let dominant = ctx.barycenter().mode();
        let mut hits = 0u64;
        for m in &ctx.member_ids {
            let j = majority.get(m).ok_or_else(|| MetricsError::UnlabeledMember(m.clone()))?;
            if *j == dominant {
                hits += 1;
            }
        }
        hits_total += hits;
        members_total += ctx.size;
        clusters.push(ClusterAlignmentEntry {
            action: action.to_string(),
            context_id: ctx.id,
            size: ctx.size,
            dominant,
            rate: hits as f64 / ctx.size as f64,
        });
    }
    Ok(ClusterAlignment { clusters, overall: hits_total as f64 / members_total as f64 })
}
