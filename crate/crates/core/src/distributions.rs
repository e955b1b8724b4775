//! The ternary judgment space {Blame = -1, Neutral = 0, Support = +1} and the
//! divergences defined over it.
//!
//! All logarithms are natural, so every divergence and every threshold that
//! is compared against one is in nats.

use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for "sums to one" checks.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Smoothing constant added to every component before a divergence is taken.
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("judgment counts are all zero")]
    ZeroTotal,
    #[error("component {index} is not a probability: {value}")]
    InvalidComponent { index: usize, value: f64 },
    #[error("components sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("component {index} is not strictly positive ({value}); smooth the input first")]
    NonPositiveComponent { index: usize, value: f64 },
    #[error("sample weights must be at least 1")]
    ZeroWeight,
}

/// One ternary judgment. The declaration order is the fixed support order
/// (-1, 0, +1) and is also the tie-break order for arg-max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Judgment {
    Blame,
    Neutral,
    Support,
}

impl Judgment {
    pub const ALL: [Judgment; 3] = [Judgment::Blame, Judgment::Neutral, Judgment::Support];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position on the ordinal line.
    pub fn value(self) -> i8 {
        self as i8 - 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Judgment::Blame => "Blame",
            Judgment::Neutral => "Neutral",
            Judgment::Support => "Support",
        }
    }

    /// Arg-max over a ternary vector; the first maximum in support order wins.
    pub fn argmax(values: &[f64; 3]) -> Judgment {
        let mut best = 0;
        for i in 1..3 {
            if values[i] > values[best] {
                best = i;
            }
        }
        Judgment::ALL[best]
    }
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Raw response tallies for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JudgmentCounts {
    pub blame: u64,
    pub neutral: u64,
    pub support: u64,
}

impl JudgmentCounts {
    pub fn new(blame: u64, neutral: u64, support: u64) -> Self {
        Self { blame, neutral, support }
    }

    pub fn total(&self) -> u64 {
        self.blame + self.neutral + self.support
    }

    pub fn as_array(&self) -> [u64; 3] {
        [self.blame, self.neutral, self.support]
    }

    /// Majority judgment, ties broken in support order.
    pub fn majority(&self) -> Judgment {
        let a = self.as_array();
        Judgment::argmax(&[a[0] as f64, a[1] as f64, a[2] as f64])
    }

    pub fn normalize(&self) -> Result<JudgmentDistribution, DistributionError> {
        normalize(*self)
    }
}

/// A probability triple over (Blame, Neutral, Support).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct JudgmentDistribution([f64; 3]);

impl JudgmentDistribution {
    pub fn new(p_blame: f64, p_neutral: f64, p_support: f64) -> Result<Self, DistributionError> {
        Self::from_array([p_blame, p_neutral, p_support])
    }

    pub fn from_array(p: [f64; 3]) -> Result<Self, DistributionError> {
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DistributionError::InvalidComponent { index, value });
            }
        }
        let sum = p[0] + p[1] + p[2];
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::NotNormalized { sum });
        }
        Ok(Self(p))
    }

    /// Normalizes non-negative weights. Used for barycenters, whose sums are
    /// exact multiples of the member count.
    pub fn from_weights(w: [f64; 3]) -> Result<Self, DistributionError> {
        for (index, &value) in w.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(DistributionError::InvalidComponent { index, value });
            }
        }
        let total = w[0] + w[1] + w[2];
        if total <= 0.0 {
            return Err(DistributionError::ZeroTotal);
        }
        Ok(Self([w[0] / total, w[1] / total, w[2] / total]))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn as_array(&self) -> &[f64; 3] {
        &self.0
    }

    pub fn get(&self, judgment: Judgment) -> f64 {
        self.0[judgment.index()]
    }

    pub fn p_blame(&self) -> f64 {
        self.0[0]
    }

    pub fn p_neutral(&self) -> f64 {
        self.0[1]
    }

    pub fn p_support(&self) -> f64 {
        self.0[2]
    }

    /// Most probable judgment, first maximum in support order.
    pub fn mode(&self) -> Judgment {
        Judgment::argmax(&self.0)
    }

    pub fn smooth(&self, epsilon: f64) -> Self {
        smooth(self, epsilon)
    }
}

impl TryFrom<[f64; 3]> for JudgmentDistribution {
    type Error = DistributionError;

    fn try_from(value: [f64; 3]) -> Result<Self, Self::Error> {
        Self::from_array(value)
    }
}

impl From<JudgmentDistribution> for [f64; 3] {
    fn from(d: JudgmentDistribution) -> Self {
        d.0
    }
}

pub fn normalize(counts: JudgmentCounts) -> Result<JudgmentDistribution, DistributionError> {
    let total = counts.total();
    if total == 0 {
        return Err(DistributionError::ZeroTotal);
    }
    let t = total as f64;
    Ok(JudgmentDistribution([
        counts.blame as f64 / t,
        counts.neutral as f64 / t,
        counts.support as f64 / t,
    ]))
}

/// Adds `epsilon` to every component and renormalizes.
pub fn smooth(d: &JudgmentDistribution, epsilon: f64) -> JudgmentDistribution {
    debug_assert!(epsilon > 0.0);
    let z = 1.0 + 3.0 * epsilon;
    let p = d.0;
    JudgmentDistribution([(p[0] + epsilon) / z, (p[1] + epsilon) / z, (p[2] + epsilon) / z])
}

fn check_positive(d: &JudgmentDistribution) -> Result<(), DistributionError> {
    for (index, &value) in d.0.iter().enumerate() {
        if value <= 0.0 {
            return Err(DistributionError::NonPositiveComponent { index, value });
        }
    }
    Ok(())
}

/// `KL(p || q)` in nats. Both inputs must be strictly positive.
pub fn kl_divergence(
    p: &JudgmentDistribution,
    q: &JudgmentDistribution,
) -> Result<f64, DistributionError> {
    check_positive(p)?;
    check_positive(q)?;
    Ok(kl_unchecked(&p.0, &q.0))
}

fn kl_unchecked(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        acc += p[i] * libm::log(p[i] / q[i]);
    }
    // Rounding can leave a tiny negative residue for p ~ q.
    if acc < 0.0 {
        0.0
    } else {
        acc
    }
}

/// Semi-weighted Jensen-Shannon divergence: both sides are compared against
/// the count-weighted mixture `(n_p p + n_q q) / (n_p + n_q)`.
pub fn sw_js_divergence(
    p: &JudgmentDistribution,
    n_p: u64,
    q: &JudgmentDistribution,
    n_q: u64,
) -> Result<f64, DistributionError> {
    if n_p == 0 || n_q == 0 {
        return Err(DistributionError::ZeroWeight);
    }
    check_positive(p)?;
    check_positive(q)?;
    let (wp, wq) = (n_p as f64, n_q as f64);
    let total = wp + wq;
    let mut m = [0.0; 3];
    for i in 0..3 {
        m[i] = (wp * p.0[i] + wq * q.0[i]) / total;
    }
    Ok(0.5 * kl_unchecked(&p.0, &m) + 0.5 * kl_unchecked(&q.0, &m))
}

/// Classical (equal-weight) Jensen-Shannon divergence.
pub fn js_divergence(
    p: &JudgmentDistribution,
    q: &JudgmentDistribution,
) -> Result<f64, DistributionError> {
    sw_js_divergence(p, 1, q, 1)
}

/// Earth-mover distance on the ordinal line {-1, 0, 1} with unit spacing:
/// the L1 distance between the two cumulative distribution functions.
pub fn emd(p: &JudgmentDistribution, q: &JudgmentDistribution) -> f64 {
    let mut fp = 0.0;
    let mut fq = 0.0;
    let mut total = 0.0;
    for i in 0..3 {
        fp += p.0[i];
        fq += q.0[i];
        total += libm::fabs(fp - fq);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(a: f64, b: f64, c: f64) -> JudgmentDistribution {
        JudgmentDistribution::new(a, b, c).unwrap()
    }

    #[test]
    fn normalize_barn_counts() {
        let p = normalize(JudgmentCounts::new(3, 4, 10)).unwrap();
        assert_eq!(p.as_array(), &[3.0 / 17.0, 4.0 / 17.0, 10.0 / 17.0]);
        // Rounded values reported for the barn-shooting trace.
        assert!((p.p_blame() - 0.176).abs() < 5e-4);
        assert!((p.p_neutral() - 0.235).abs() < 5e-4);
        assert!((p.p_support() - 0.588).abs() < 5e-4);
    }

    #[test]
    fn normalize_trivial_cases() {
        assert_eq!(normalize(JudgmentCounts::new(1, 0, 0)).unwrap(), d(1.0, 0.0, 0.0));
        let u = normalize(JudgmentCounts::new(5, 5, 5)).unwrap();
        for v in u.as_array() {
            assert_eq!(*v, 1.0 / 3.0);
        }
        assert_eq!(normalize(JudgmentCounts::default()), Err(DistributionError::ZeroTotal));
    }

    #[test]
    fn smooth_point_mass() {
        let s = smooth(&d(1.0, 0.0, 0.0), 1e-5);
        let z = 1.0 + 3e-5;
        assert_eq!(s.as_array(), &[(1.0 + 1e-5) / z, 1e-5 / z, 1e-5 / z]);
    }

    #[test]
    fn smooth_uniform_is_fixed_point() {
        for eps in [1e-5, 0.1, 0.7] {
            let s = smooth(&JudgmentDistribution::uniform(), eps);
            for v in s.as_array() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kl_rejects_zero_components() {
        let err = kl_divergence(&d(1.0, 0.0, 0.0), &JudgmentDistribution::uniform());
        assert!(matches!(err, Err(DistributionError::NonPositiveComponent { index: 1, .. })));
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = d(0.2, 0.3, 0.5);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn sw_js_zero_weight() {
        let p = d(0.2, 0.3, 0.5);
        assert_eq!(sw_js_divergence(&p, 0, &p, 1), Err(DistributionError::ZeroWeight));
    }

    #[test]
    fn emd_extremes() {
        assert_eq!(emd(&d(1.0, 0.0, 0.0), &d(0.0, 0.0, 1.0)), 2.0);
        assert_eq!(emd(&d(0.2, 0.3, 0.5), &d(0.2, 0.3, 0.5)), 0.0);
    }

    #[test]
    fn majority_tie_order() {
        assert_eq!(JudgmentCounts::new(2, 2, 1).majority(), Judgment::Blame);
        assert_eq!(JudgmentCounts::new(0, 3, 3).majority(), Judgment::Neutral);
        assert_eq!(JudgmentCounts::new(1, 0, 4).majority(), Judgment::Support);
    }

    #[test]
    fn serde_rejects_invalid() {
        let ok: JudgmentDistribution = serde_json::from_str("[0.25,0.25,0.5]").unwrap();
        assert_eq!(ok, d(0.25, 0.25, 0.5));
        assert!(serde_json::from_str::<JudgmentDistribution>("[0.5,0.5,0.5]").is_err());
    }
}
