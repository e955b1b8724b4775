//! Canonical distributions and seeded synthetic benchmarks for the learner.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{emd, normalize, JudgmentCounts, JudgmentDistribution};
use crate::seed;

/// Action key carried by every benchmark sample.
pub const BENCHMARK_ACTION: &str = "test";

/// Attempts at drawing a non-degenerate perturbed parameter.
const MAX_NOISE_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyntheticError {
    #[error("canonical label {0:?} appears twice")]
    DuplicateLabel(String),
    #[error("the Balanced canonical must be exactly uniform")]
    BalancedNotUniform,
    #[error("canonical set is empty")]
    EmptySet,
    #[error("invalid sample spec: {0}")]
    InvalidSpec(&'static str),
    #[error("noise clipped every component to zero after {0} attempts")]
    DegenerateAfterNoise(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Canonical {
    pub label: String,
    pub p: JudgmentDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Canonical>", into = "Vec<Canonical>")]
pub struct CanonicalSet {
    entries: Vec<Canonical>,
}

impl CanonicalSet {
    pub fn new(entries: Vec<Canonical>) -> Result<Self, SyntheticError> {
        if entries.is_empty() {
            return Err(SyntheticError::EmptySet);
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.label.as_str()) {
                return Err(SyntheticError::DuplicateLabel(e.label.clone()));
            }
            if e.label == "Balanced" && e.p != JudgmentDistribution::uniform() {
                return Err(SyntheticError::BalancedNotUniform);
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Canonical] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&Canonical> {
        self.entries.iter().find(|c| c.label == label)
    }

    /// Largest EMD between two members of the set; the penalty weight is
    /// chosen on the same scale.
    pub fn max_pairwise_emd(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                best = best.max(emd(&a.p, &b.p));
            }
        }
        best
    }
}

impl TryFrom<Vec<Canonical>> for CanonicalSet {
    type Error = SyntheticError;

    fn try_from(value: Vec<Canonical>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CanonicalSet> for Vec<Canonical> {
    fn from(set: CanonicalSet) -> Self {
        set.entries
    }
}

impl Default for CanonicalSet {
    fn default() -> Self {
        default_canonicals()
    }
}

/// Three dominant profiles, the uniform profile and a bimodal one.
pub fn default_canonicals() -> CanonicalSet {
    let entry = |label: &str, p: [f64; 3]| Canonical {
        label: label.into(),
        p: JudgmentDistribution::from_array(p).expect("valid canonical"),
    };
    CanonicalSet::new(alloc::vec![
        entry("Blame-dominant", [0.8, 0.1, 0.1]),
        entry("Neutral-dominant", [0.1, 0.8, 0.1]),
        entry("Support-dominant", [0.1, 0.1, 0.8]),
        entry("Balanced", [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
        entry("Polarized", [0.45, 0.10, 0.45]),
    ])
    .expect("default canonical set is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub per_canonical: usize,
    pub sample_size: u64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { per_canonical: 30, sample_size: 1000, noise: 0.0, seed: 0 }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.sample_size == 0 {
            return Err(SyntheticError::InvalidSpec("sample_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(SyntheticError::InvalidSpec("noise must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Perturbs each component by U(-noise/2, noise/2), clips at zero and
/// renormalizes.
pub fn perturb<R: Rng + ?Sized>(
    canonical: &JudgmentDistribution,
    noise: f64,
    rng: &mut R,
) -> Result<JudgmentDistribution, SyntheticError> {
    if noise == 0.0 {
        return Ok(*canonical);
    }
    let base = canonical.as_array();
    for _ in 0..MAX_NOISE_RETRIES {
        let mut w = [0.0; 3];
        for i in 0..3 {
            let u: f64 = rng.random::<f64>() - 0.5;
            w[i] = (base[i] + noise * u).max(0.0);
        }
        if let Ok(p) = JudgmentDistribution::from_weights(w) {
            return Ok(p);
        }
    }
    Err(SyntheticError::DegenerateAfterNoise(MAX_NOISE_RETRIES))
}

/// Two-stage draw: perturb the parameter, then tally `sample_size`
/// categorical judgments from it.
pub fn draw_counts<R: Rng + ?Sized>(
    canonical: &JudgmentDistribution,
    sample_size: u64,
    noise: f64,
    rng: &mut R,
) -> Result<JudgmentCounts, SyntheticError> {
    let p = perturb(canonical, noise, rng)?;
    let (p0, p1) = (p.p_blame(), p.p_blame() + p.p_neutral());
    let mut counts = JudgmentCounts::default();
    for _ in 0..sample_size {
        let u: f64 = rng.random();
        if u < p0 {
            counts.blame += 1;
        } else if u < p1 {
            counts.neutral += 1;
        } else {
            counts.support += 1;
        }
    }
    Ok(counts)
}

pub fn draw_sample<R: Rng + ?Sized>(
    canonical: &JudgmentDistribution,
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<JudgmentDistribution, SyntheticError> {
    spec.validate()?;
    let counts = draw_counts(canonical, spec.sample_size, spec.noise, rng)?;
    Ok(normalize(counts).expect("sample_size >= 1"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub action: String,
    pub label: String,
    pub counts: JudgmentCounts,
    pub distribution: JudgmentDistribution,
}

/// `per_canonical` labeled samples per canonical, shuffled by seed.
///
/// Sample `j` of canonical `i` draws from its own stream `(seed, i, j)`.
pub fn generate_benchmark(
    spec: &SampleSpec,
    canonicals: &CanonicalSet,
) -> Result<Vec<BenchmarkSample>, SyntheticError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.per_canonical * canonicals.len());
    for (i, c) in canonicals.entries().iter().enumerate() {
        for j in 0..spec.per_canonical {
            let mut rng = seed::rng_at(spec.seed, &[i as u64, j as u64]);
            let counts = draw_counts(&c.p, spec.sample_size, spec.noise, &mut rng)?;
            out.push(BenchmarkSample {
                id: format!("{}#{:03}", c.label, j),
                action: BENCHMARK_ACTION.into(),
                label: c.label.clone(),
                counts,
                distribution: normalize(counts).expect("sample_size >= 1"),
            });
        }
    }
    let mut rng = seed::rng_at(spec.seed, &[u64::MAX]);
    out.shuffle(&mut rng);
    Ok(out)
}
