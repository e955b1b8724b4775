//! Interpretable generalization model.
//!
//! Each context gets a smoothed Bernoulli profile over binary features and a
//! prior. A scenario scores
//!
//! ```text
//! s_c = ln pi_c + sum_f w_f * (x_f ln p_cf + (1 - x_f) ln(1 - p_cf))
//! ```
//!
//! and the context distribution is `softmax(s)`. The weights `w_f` are fit by
//! minimizing the negative log-likelihood of the true contexts plus an L2
//! penalty.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{Judgment, JudgmentDistribution};
use crate::optim::{self, LbfgsConfig, OptimError};
use crate::seed;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_LAMBDA_REG: f64 = 0.1;
pub const DEFAULT_FOLDS: usize = 25;
pub const DEFAULT_HOLDOUT: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneralizationError {
    #[error("feature list is empty")]
    NoFeatures,
    #[error("feature name {0:?} appears twice")]
    DuplicateFeature(String),
    #[error("entry ({row}, {col}) is {value}, expected 0 or 1")]
    NonBinary { row: usize, col: usize, value: u8 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("context {0} has no members")]
    EmptyContext(u64),
    #[error("context {0} is not in the profile")]
    UnknownContext(u64),
    #[error("training needs at least two contexts")]
    SingleContext,
    #[error("objective diverged: {0}")]
    Divergence(#[from] OptimError),
    #[error("{n} scenarios cannot fill {folds} folds of {holdout}")]
    TooFewScenarios { n: usize, folds: usize, holdout: usize },
    #[error("smoothing must be positive, got {0}")]
    InvalidAlpha(f64),
}

/// Scenario-by-feature binary matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self, GeneralizationError> {
        if feature_names.is_empty() {
            return Err(GeneralizationError::NoFeatures);
        }
        let mut seen = BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(GeneralizationError::DuplicateFeature(name.clone()));
            }
        }
        for (row, r) in rows.iter().enumerate() {
            if r.len() != feature_names.len() {
                return Err(GeneralizationError::DimensionMismatch {
                    expected: feature_names.len(),
                    found: r.len(),
                });
            }
            if let Some((col, &value)) = r.iter().enumerate().find(|(_, v)| **v > 1) {
                return Err(GeneralizationError::NonBinary { row, col, value });
            }
        }
        Ok(Self { feature_names, rows })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i]
    }

    pub fn n_scenarios(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Rows `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Drops feature `f`. Fails when it is the only feature.
    pub fn without_feature(&self, f: usize) -> Result<Self, GeneralizationError> {
        let mut names = self.feature_names.clone();
        names.remove(f);
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.remove(f);
                r
            })
            .collect();
        Self::new(names, rows)
    }
}

/// Where the context frequency enters the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPlacement {
    /// Adds `ln pi_c` to every score.
    #[default]
    LogPrior,
    /// No prior term; each profile frequency is scaled by `pi_c` instead.
    ScaledProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextProfile {
    /// Ascending.
    pub context_ids: Vec<u64>,
    pub sizes: Vec<u64>,
    pub priors: Vec<f64>,
    /// `frequencies[c][f]`, smoothed into `[alpha/(n+2 alpha), (n+alpha)/(n+2 alpha)]`.
    pub frequencies: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl ContextProfile {
    pub fn n_contexts(&self) -> usize {
        self.context_ids.len()
    }

    pub fn index_of(&self, context: u64) -> Option<usize> {
        self.context_ids.binary_search(&context).ok()
    }
}

/// Profiles for the contexts that occur in `assignments`.
pub fn build_profiles(
    matrix: &FeatureMatrix,
    assignments: &[u64],
    alpha: f64,
) -> Result<ContextProfile, GeneralizationError> {
    let ids: Vec<u64> = assignments.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    build_profiles_for(matrix, assignments, &ids, alpha)
}

/// Profiles for an explicit context list; a listed context with no members
/// is an error.
pub fn build_profiles_for(
    matrix: &FeatureMatrix,
    assignments: &[u64],
    context_ids: &[u64],
    alpha: f64,
) -> Result<ContextProfile, GeneralizationError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(GeneralizationError::InvalidAlpha(alpha));
    }
    if assignments.len() != matrix.n_scenarios() {
        return Err(GeneralizationError::DimensionMismatch {
            expected: matrix.n_scenarios(),
            found: assignments.len(),
        });
    }
    let mut ids = context_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n_f = matrix.n_features();
    let mut sizes = vec![0u64; ids.len()];
    let mut positives = vec![vec![0u64; n_f]; ids.len()];
    for (row, &c) in matrix.rows().iter().zip(assignments) {
        let k = ids.binary_search(&c).map_err(|_| GeneralizationError::UnknownContext(c))?;
        sizes[k] += 1;
        for (p, &x) in positives[k].iter_mut().zip(row) {
            *p += u64::from(x);
        }
    }
    if let Some(k) = sizes.iter().position(|&s| s == 0) {
        return Err(GeneralizationError::EmptyContext(ids[k]));
    }
    let n = assignments.len() as f64;
    let priors = sizes.iter().map(|&s| s as f64 / n).collect();
    let frequencies = positives
        .iter()
        .zip(&sizes)
        .map(|(pos, &s)| pos.iter().map(|&p| (p as f64 + alpha) / (s as f64 + 2.0 * alpha)).collect())
        .collect();
    Ok(ContextProfile { context_ids: ids, sizes, priors, frequencies, alpha })
}

/// Per-context bias and per-feature log terms, precomputed once per profile.
struct LogTerms {
    bias: Vec<f64>,
    ln_on: Vec<Vec<f64>>,
    ln_off: Vec<Vec<f64>>,
}

impl LogTerms {
    fn new(profiles: &ContextProfile, placement: PriorPlacement) -> Self {
        let mut bias = Vec::new();
        let mut ln_on = Vec::new();
        let mut ln_off = Vec::new();
        for (freq, &prior) in profiles.frequencies.iter().zip(&profiles.priors) {
            let (b, scale) = match placement {
                PriorPlacement::LogPrior => (libm::log(prior), 1.0),
                PriorPlacement::ScaledProfile => (0.0, prior),
            };
            bias.push(b);
            ln_on.push(freq.iter().map(|p| libm::log(scale * p)).collect());
            ln_off.push(freq.iter().map(|p| libm::log1p(-scale * p)).collect());
        }
        Self { bias, ln_on, ln_off }
    }

    fn term(&self, c: usize, f: usize, x: u8) -> f64 {
        if x == 1 {
            self.ln_on[c][f]
        } else {
            self.ln_off[c][f]
        }
    }

    fn scores(&self, x: &[u8], weights: &[f64]) -> Vec<f64> {
        (0..self.bias.len())
            .map(|c| {
                self.bias[c]
                    + weights.iter().enumerate().map(|(f, w)| w * self.term(c, f, x[f])).sum::<f64>()
            })
            .collect()
    }
}

fn check_dims(
    x: &[u8],
    weights: &[f64],
    profiles: &ContextProfile,
) -> Result<(), GeneralizationError> {
    let n_f = profiles.frequencies.first().map_or(0, Vec::len);
    for found in [x.len(), weights.len()] {
        if found != n_f {
            return Err(GeneralizationError::DimensionMismatch { expected: n_f, found });
        }
    }
    Ok(())
}

/// Per-context scores `s_c`, in `profiles.context_ids` order.
pub fn score(
    x: &[u8],
    weights: &[f64],
    profiles: &ContextProfile,
    placement: PriorPlacement,
) -> Result<Vec<f64>, GeneralizationError> {
    check_dims(x, weights, profiles)?;
    Ok(LogTerms::new(profiles, placement).scores(x, weights))
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + libm::log(s.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| libm::exp(s - lse)).collect()
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Objective `sum_i -ln softmax(s(x_i))[c_i] + lambda_reg * |w|^2` and its
/// gradient. `targets` are profile indices.
pub fn objective(
    matrix: &FeatureMatrix,
    targets: &[usize],
    profiles: &ContextProfile,
    placement: PriorPlacement,
    weights: &[f64],
    lambda_reg: f64,
) -> (f64, Vec<f64>) {
    let terms = LogTerms::new(profiles, placement);
    objective_with(&terms, matrix, targets, weights, lambda_reg)
}

fn objective_with(
    terms: &LogTerms,
    matrix: &FeatureMatrix,
    targets: &[usize],
    weights: &[f64],
    lambda_reg: f64,
) -> (f64, Vec<f64>) {
    let n_f = weights.len();
    let n_c = terms.bias.len();
    let mut value = lambda_reg * weights.iter().map(|w| w * w).sum::<f64>();
    let mut grad: Vec<f64> = weights.iter().map(|w| 2.0 * lambda_reg * w).collect();
    for (x, &t) in matrix.rows().iter().zip(targets) {
        let s = terms.scores(x, weights);
        let lse = log_sum_exp(&s);
        value += lse - s[t];
        for c in 0..n_c {
            let p = libm::exp(s[c] - lse);
            let coef = if c == t { p - 1.0 } else { p };
            for (f, g) in grad.iter_mut().enumerate().take(n_f) {
                *g += coef * terms.term(c, f, x[f]);
            }
        }
    }
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_reg: f64,
    pub alpha: f64,
    pub placement: PriorPlacement,
    pub optimizer: LbfgsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_reg: DEFAULT_LAMBDA_REG,
            alpha: DEFAULT_ALPHA,
            placement: PriorPlacement::LogPrior,
            optimizer: LbfgsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub lambda_reg: f64,
    pub alpha: f64,
    pub placement: PriorPlacement,
    pub profiles: ContextProfile,
    /// Objective at the start point and at each accepted iterate.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl GeneralizationModel {
    /// A model with fixed weights and profiles, without training.
    pub fn with_weights(
        matrix: &FeatureMatrix,
        profiles: ContextProfile,
        weights: Vec<f64>,
        placement: PriorPlacement,
    ) -> Result<Self, GeneralizationError> {
        if weights.len() != matrix.n_features() {
            return Err(GeneralizationError::DimensionMismatch {
                expected: matrix.n_features(),
                found: weights.len(),
            });
        }
        Ok(Self {
            feature_names: matrix.feature_names().to_vec(),
            weights,
            lambda_reg: 0.0,
            alpha: profiles.alpha,
            placement,
            profiles,
            history: Vec::new(),
            converged: false,
        })
    }

    pub fn score(&self, x: &[u8]) -> Result<Vec<f64>, GeneralizationError> {
        score(x, &self.weights, &self.profiles, self.placement)
    }

    /// Probability per context, in `profiles.context_ids` order.
    pub fn predict_distribution(&self, x: &[u8]) -> Result<Vec<f64>, GeneralizationError> {
        Ok(softmax(&self.score(x)?))
    }

    /// Most probable context; ties go to the lower id.
    pub fn predict_context(&self, x: &[u8]) -> Result<u64, GeneralizationError> {
        let s = self.score(x)?;
        Ok(self.profiles.context_ids[argmax_first(&s)])
    }
}

pub fn train(
    matrix: &FeatureMatrix,
    assignments: &[u64],
    config: &TrainConfig,
) -> Result<GeneralizationModel, GeneralizationError> {
    let profiles = build_profiles(matrix, assignments, config.alpha)?;
    if profiles.n_contexts() < 2 {
        return Err(GeneralizationError::SingleContext);
    }
    let targets: Vec<usize> =
        assignments.iter().map(|c| profiles.index_of(*c).expect("profiled")).collect();
    let terms = LogTerms::new(&profiles, config.placement);
    let min = optim::minimize(
        |w| objective_with(&terms, matrix, &targets, w, config.lambda_reg),
        vec![1.0; matrix.n_features()],
        &config.optimizer,
    )?;
    Ok(GeneralizationModel {
        feature_names: matrix.feature_names().to_vec(),
        weights: min.x,
        lambda_reg: config.lambda_reg,
        alpha: config.alpha,
        placement: config.placement,
        profiles,
        history: min.history,
        converged: min.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub holdout: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: DEFAULT_FOLDS, holdout: DEFAULT_HOLDOUT, seed: 0, train: TrainConfig::default() }
    }
}

/// Seeded partition of `0..n` into `folds` disjoint holdouts of `holdout`
/// scenarios. Leftovers go round-robin onto the last folds.
pub fn fold_partition(
    n: usize,
    folds: usize,
    holdout: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, GeneralizationError> {
    if folds == 0 || holdout == 0 || n < folds * holdout {
        return Err(GeneralizationError::TooFewScenarios { n, folds, holdout });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut out: Vec<Vec<usize>> = order[..folds * holdout].chunks(holdout).map(<[usize]>::to_vec).collect();
    for (k, &i) in order[folds * holdout..].iter().enumerate() {
        out[folds - 1 - k % folds].push(i);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub holdout: Vec<usize>,
    pub predicted_contexts: Vec<u64>,
    pub true_contexts: Vec<u64>,
    pub predicted_judgments: Vec<Judgment>,
    pub accuracy: f64,
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Context accuracy over all held-out scenarios.
    pub accuracy: f64,
    /// Judgment alignment over all held-out scenarios.
    pub alignment_rate: f64,
}

/// Inputs shared by every fold.
#[derive(Debug, Clone, Copy)]
pub struct CvData<'a> {
    pub matrix: &'a FeatureMatrix,
    pub assignments: &'a [u64],
    /// Human majority judgment per scenario.
    pub majority: &'a [Judgment],
    /// Barycenter of every context that appears in `assignments`.
    pub barycenters: &'a BTreeMap<u64, JudgmentDistribution>,
}

/// Trains on everything outside `holdout` and predicts the held-out rows.
/// A training split with a single context predicts that context.
pub fn run_fold(
    data: &CvData<'_>,
    fold: usize,
    holdout: &[usize],
    config: &TrainConfig,
) -> Result<FoldResult, GeneralizationError> {
    let held: BTreeSet<usize> = holdout.iter().copied().collect();
    let train_idx: Vec<usize> = (0..data.matrix.n_scenarios()).filter(|i| !held.contains(i)).collect();
    let train_x = data.matrix.select_rows(&train_idx);
    let train_y: Vec<u64> = train_idx.iter().map(|&i| data.assignments[i]).collect();
    let model = match train(&train_x, &train_y, config) {
        Ok(m) => Some(m),
        Err(GeneralizationError::SingleContext) => None,
        Err(e) => return Err(e),
    };
    let mut predicted_contexts = Vec::with_capacity(holdout.len());
    let mut predicted_judgments = Vec::with_capacity(holdout.len());
    let (mut hits, mut aligned) = (0usize, 0usize);
    for &i in holdout {
        let c = match &model {
            Some(m) => m.predict_context(data.matrix.row(i))?,
            None => train_y[0],
        };
        let bary = data.barycenters.get(&c).ok_or(GeneralizationError::UnknownContext(c))?;
        let j = Judgment::argmax(bary.as_array());
        hits += usize::from(c == data.assignments[i]);
        aligned += usize::from(j == data.majority[i]);
        predicted_contexts.push(c);
        predicted_judgments.push(j);
    }
    let n = holdout.len().max(1) as f64;
    Ok(FoldResult {
        fold,
        holdout: holdout.to_vec(),
        predicted_contexts,
        true_contexts: holdout.iter().map(|&i| data.assignments[i]).collect(),
        predicted_judgments,
        accuracy: hits as f64 / n,
        alignment: aligned as f64 / n,
    })
}

/// Pools fold results in fold order.
pub fn summarize_folds(mut folds: Vec<FoldResult>) -> CvReport {
    folds.sort_by_key(|f| f.fold);
    let total: usize = folds.iter().map(|f| f.holdout.len()).sum();
    let weighted = |get: fn(&FoldResult) -> f64| {
        folds.iter().map(|f| get(f) * f.holdout.len() as f64).sum::<f64>() / total.max(1) as f64
    };
    let accuracy = weighted(|f| f.accuracy);
    let alignment_rate = weighted(|f| f.alignment);
    CvReport { folds, accuracy, alignment_rate }
}

pub fn cross_validate(data: &CvData<'_>, config: &CvConfig) -> Result<CvReport, GeneralizationError> {
    check_cv_inputs(data)?;
    let parts = fold_partition(data.matrix.n_scenarios(), config.folds, config.holdout, config.seed)?;
    let folds = parts
        .iter()
        .enumerate()
        .map(|(k, h)| run_fold(data, k, h, &config.train))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize_folds(folds))
}

pub fn check_cv_inputs(data: &CvData<'_>) -> Result<(), GeneralizationError> {
    let n = data.matrix.n_scenarios();
    for found in [data.assignments.len(), data.majority.len()] {
        if found != n {
            return Err(GeneralizationError::DimensionMismatch { expected: n, found });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub feature: String,
    pub weight: f64,
    /// `w_f * (ln p_cf - ln(1 - p_cf))` per context, in `context_ids` order.
    pub influence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub context_ids: Vec<u64>,
    /// Sorted by descending `|weight|`; ties keep feature order.
    pub rows: Vec<WeightRow>,
}

pub fn export_weights(model: &GeneralizationModel) -> WeightReport {
    let mut rows: Vec<WeightRow> = model
        .feature_names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let w = model.weights[f];
            let influence = model
                .profiles
                .frequencies
                .iter()
                .map(|freq| {
                    let p = freq[f];
                    w * (libm::log(p) - libm::log1p(-p))
                })
                .collect();
            WeightRow { feature: name.clone(), weight: w, influence }
        })
        .collect();
    rows.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
    WeightReport { context_ids: model.profiles.context_ids.clone(), rows }
}
