//! Exhaustive `(delta_add, delta_merge)` sweep over seeded synthetic
//! benchmarks.
//!
//! Every `(cell, repeat)` draws its benchmark from a seed derived from
//! `(seed, add index, merge index, repeat)`, so cells can be evaluated in any
//! order or in parallel with identical results.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{LearnerConfig, LearnerError, LearnerState};
use crate::metrics::{self, EvalScores, HomogeneityMode, MetricsError, DEFAULT_LAMBDA};
use crate::seed;
use crate::synthetic::{generate_benchmark, CanonicalSet, SampleSpec, SyntheticError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delta_add_values: Vec<f64>,
    pub delta_merge_values: Vec<f64>,
    pub repeats: usize,
    pub benchmark: SampleSpec,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub homogeneity: HomogeneityMode,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

/// `n` geometrically spaced points from `lo` to `hi` inclusive, rounded to
/// four decimals.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let ratio = libm::log(hi / lo);
            (0..n)
                .map(|i| {
                    let v = lo * libm::exp(ratio * i as f64 / (n - 1) as f64);
                    libm::round(v * 1e4) / 1e4
                })
                .collect()
        }
    }
}

impl Default for GridSpec {
    /// 14 x 14 over [0.01, 0.4], five repeats of 30 samples per canonical.
    fn default() -> Self {
        Self {
            delta_add_values: log_spaced(0.01, 0.4, 14),
            delta_merge_values: log_spaced(0.01, 0.4, 14),
            repeats: 5,
            benchmark: SampleSpec::default(),
            lambda: DEFAULT_LAMBDA,
            homogeneity: HomogeneityMode::SizeWeighted,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        for values in [&self.delta_add_values, &self.delta_merge_values] {
            if values.is_empty() {
                return Err(GridError::InvalidSpec("threshold lists must be non-empty"));
            }
            if values.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(GridError::InvalidSpec("thresholds must lie in (0, 1]"));
            }
            if values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GridError::InvalidSpec("thresholds must be strictly ascending"));
            }
        }
        if self.repeats == 0 {
            return Err(GridError::InvalidSpec("repeats must be at least 1"));
        }
        self.benchmark.validate()?;
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.delta_add_values.len() * self.delta_merge_values.len()
    }

    /// Cell `k` in row-major order over (merge index, add index).
    pub fn cell_indices(&self, k: usize) -> (usize, usize) {
        let n_add = self.delta_add_values.len();
        (k % n_add, k / n_add)
    }
}

/// Runs one repeat of one cell.
pub fn run_repeat(
    spec: &GridSpec,
    canonicals: &CanonicalSet,
    add_index: usize,
    merge_index: usize,
    repeat: usize,
) -> Result<EvalScores, GridError> {
    let bench_seed =
        seed::derive(spec.benchmark.seed, &[add_index as u64, merge_index as u64, repeat as u64]);
    let bench_spec = SampleSpec { seed: bench_seed, ..spec.benchmark };
    let samples = generate_benchmark(&bench_spec, canonicals)?;
    let config =
        LearnerConfig::new(spec.delta_add_values[add_index], spec.delta_merge_values[merge_index]);
    let state = LearnerState::run_stream(
        config,
        samples.iter().map(|s| (s.id.as_str(), s.action.as_str(), &s.distribution)),
    )?;
    let labels: BTreeMap<_, _> = samples.iter().map(|s| (s.id.clone(), s.label.clone())).collect();
    Ok(metrics::evaluate(&state, canonicals, &labels, spec.lambda, spec.homogeneity)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub add_index: usize,
    pub merge_index: usize,
    pub delta_add: f64,
    pub delta_merge: f64,
    pub mean: EvalScores,
    pub raw: Vec<EvalScores>,
}

pub fn run_cell(
    spec: &GridSpec,
    canonicals: &CanonicalSet,
    add_index: usize,
    merge_index: usize,
) -> Result<CellResult, GridError> {
    let raw = (0..spec.repeats)
        .map(|r| run_repeat(spec, canonicals, add_index, merge_index, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CellResult {
        add_index,
        merge_index,
        delta_add: spec.delta_add_values[add_index],
        delta_merge: spec.delta_merge_values[merge_index],
        mean: EvalScores::mean(&raw).expect("repeats >= 1"),
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub delta_add_values: Vec<f64>,
    pub delta_merge_values: Vec<f64>,
    /// Row-major over (merge index, add index).
    pub cells: Vec<CellResult>,
}

impl GridResult {
    /// Assembles a result from cells in any order.
    pub fn from_cells(spec: &GridSpec, mut cells: Vec<CellResult>) -> Self {
        cells.sort_by_key(|c| (c.merge_index, c.add_index));
        Self {
            delta_add_values: spec.delta_add_values.clone(),
            delta_merge_values: spec.delta_merge_values.clone(),
            cells,
        }
    }

    pub fn cell(&self, add_index: usize, merge_index: usize) -> &CellResult {
        &self.cells[merge_index * self.delta_add_values.len() + add_index]
    }

    /// Cell with the smallest mean loss; ties go to the first in row-major
    /// order.
    pub fn argmin_loss(&self) -> &CellResult {
        let mut best = &self.cells[0];
        for c in &self.cells[1..] {
            if c.mean.loss < best.mean.loss {
                best = c;
            }
        }
        best
    }
}

/// Serial sweep.
pub fn sweep(spec: &GridSpec, canonicals: &CanonicalSet) -> Result<GridResult, GridError> {
    spec.validate()?;
    let cells = (0..spec.n_cells())
        .map(|k| {
            let (a, m) = spec.cell_indices(k);
            run_cell(spec, canonicals, a, m)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GridResult::from_cells(spec, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::default_canonicals;

    #[test]
    fn log_spacing_endpoints() {
        let v = log_spaced(0.01, 0.4, 14);
        assert_eq!(v.len(), 14);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[13], 0.4);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_grid_matches_direct_run() {
        let spec = GridSpec {
            delta_add_values: alloc::vec![0.12],
            delta_merge_values: alloc::vec![0.03],
            repeats: 1,
            benchmark: SampleSpec { seed: 5, ..SampleSpec::default() },
            ..GridSpec::default()
        };
        let canon = default_canonicals();
        let grid = sweep(&spec, &canon).unwrap();
        assert_eq!(grid.cells.len(), 1);
        let direct = run_repeat(&spec, &canon, 0, 0, 0).unwrap();
        assert_eq!(grid.cells[0].mean, direct);
        assert_eq!(grid.cells[0].raw, [direct]);
    }

    #[test]
    fn validation() {
        let mut spec = GridSpec::default();
        spec.delta_add_values = alloc::vec![0.2, 0.1];
        assert!(spec.validate().is_err());
        spec.delta_add_values = alloc::vec![];
        assert!(spec.validate().is_err());
        spec.delta_add_values = alloc::vec![1.5];
        assert!(spec.validate().is_err());
        let spec = GridSpec { repeats: 0, ..GridSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cells_are_order_independent() {
        let spec = GridSpec {
            delta_add_values: alloc::vec![0.05, 0.12],
            delta_merge_values: alloc::vec![0.01, 0.03],
            repeats: 2,
            benchmark: SampleSpec { per_canonical: 6, sample_size: 300, noise: 0.0, seed: 9 },
            ..GridSpec::default()
        };
        let canon = default_canonicals();
        let forward = sweep(&spec, &canon).unwrap();
        let backward: Vec<_> = (0..spec.n_cells())
            .rev()
            .map(|k| {
                let (a, m) = spec.cell_indices(k);
                run_cell(&spec, &canon, a, m).unwrap()
            })
            .collect();
        assert_eq!(forward, GridResult::from_cells(&spec, backward));
    }
}
