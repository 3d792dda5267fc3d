//! Value types for first-order distributions, credal predictions and
//! randomized (Bernoulli) prediction sets.
//!
//! Every type here is an immutable value. Constructors validate their
//! input once, so downstream code can rely on the invariants:
//!
//! - [`ProbabilityVector`]: `K >= 2` entries in `[0, 1]` summing to one.
//! - [`SecondOrderPrediction`]: a nonempty, duplicate-free list of
//!   probability vectors of equal dimension. Its convex hull is the credal set.
//! - [`BernoulliParams`]: per-label inclusion probabilities `b_j in [0, 1]`.
//! - [`LabelSet`]: one realized draw of a randomized prediction set.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for accepting float drift in exported distributions.
pub const DEFAULT_SIMPLEX_TOL: f64 = 1e-6;

/// Two vertices closer than this in L-infinity distance are treated as one.
pub const DEDUP_TOL: f64 = 1e-12;

/// A point on the probability simplex over `K >= 2` labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates `raw` against the simplex with tolerance `tol`, clamps small
    /// negative entries to zero and renormalizes.
    pub fn new(raw: &[f64], tol: f64) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::DimensionTooSmall(raw.len()));
        }
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if value < -tol {
                return Err(Error::NegativeEntry { index, value });
            }
        }
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotNormalized { sum, tol });
        }

        let mut probs: Vec<f64> = raw.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
        let clamped_sum: f64 = probs.iter().sum();
        // Skip the division when already normalized to rounding level, which
        // makes construction idempotent.
        let rounding = (4.0 * f64::EPSILON * probs.len() as f64).max(1e-12);
        if (clamped_sum - 1.0).abs() > rounding {
            for p in &mut probs {
                *p = (*p / clamped_sum).min(1.0);
            }
        }
        Ok(Self(probs))
    }

    /// Same as [`ProbabilityVector::new`] with [`DEFAULT_SIMPLEX_TOL`].
    pub fn from_slice(raw: &[f64]) -> Result<Self> {
        Self::new(raw, DEFAULT_SIMPLEX_TOL)
    }

    /// The point mass on `label`.
    pub fn one_hot(k: usize, label: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::DimensionTooSmall(k));
        }
        if label >= k {
            return Err(Error::LabelOutOfRange { label, k });
        }
        let mut probs = vec![0.0; k];
        probs[label] = 1.0;
        Ok(Self(probs))
    }

    /// The uniform distribution over `k` labels.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::DimensionTooSmall(k));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// L-infinity distance to `other`; dimensions must agree.
    pub fn linf_distance(&self, other: &ProbabilityVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Draws a label from this categorical distribution.
    pub fn sample_label<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &p) in self.0.iter().enumerate() {
            if p > 0.0 {
                last_positive = j;
                acc += p;
                if u < acc {
                    return j;
                }
            }
        }
        last_positive
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for ProbabilityVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        ProbabilityVector::from_slice(&raw).map_err(serde::de::Error::custom)
    }
}

/// A finite set of first-order distributions whose convex hull is the
/// credal set for one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SecondOrderPrediction(Vec<ProbabilityVector>);

impl SecondOrderPrediction {
    /// Builds a prediction from its vertices, dropping near-duplicates
    /// (first occurrence wins).
    pub fn new(vertices: Vec<ProbabilityVector>) -> Result<Self> {
        let k = vertices.first().ok_or(Error::EmptyPrediction)?.k();
        let mut kept: Vec<ProbabilityVector> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if v.k() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: v.k(),
                });
            }
            if !kept.iter().any(|w| w.linf_distance(&v) <= DEDUP_TOL) {
                kept.push(v);
            }
        }
        Ok(Self(kept))
    }

    /// A first-order prediction seen as a degenerate credal set.
    pub fn single(vertex: ProbabilityVector) -> Self {
        Self(vec![vertex])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let vertices = rows
            .iter()
            .map(|r| ProbabilityVector::from_slice(r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vertices)
    }

    pub fn k(&self) -> usize {
        self.0[0].k()
    }

    /// Number of (deduplicated) vertices.
    pub fn m(&self) -> usize {
        self.0.len()
    }

    pub fn vertices(&self) -> &[ProbabilityVector] {
        &self.0
    }

    /// Arithmetic mean of the stored vertices.
    pub fn mean(&self) -> ProbabilityVector {
        let k = self.k();
        let m = self.m() as f64;
        let mut acc = vec![0.0; k];
        for v in &self.0 {
            for (a, p) in acc.iter_mut().zip(v.iter()) {
                *a += p;
            }
        }
        let mean: Vec<f64> = acc.into_iter().map(|a| a / m).collect();
        ProbabilityVector::new(&mean, 1e-9).expect("mean of simplex points lies on the simplex")
    }
}

impl Deref for SecondOrderPrediction {
    type Target = [ProbabilityVector];

    fn deref(&self) -> &[ProbabilityVector] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for SecondOrderPrediction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<ProbabilityVector>::deserialize(deserializer)?;
        SecondOrderPrediction::new(rows).map_err(serde::de::Error::custom)
    }
}

/// Per-label inclusion probabilities of a Bernoulli prediction set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BernoulliParams(Vec<f64>);

impl BernoulliParams {
    pub fn new(b: Vec<f64>) -> Result<Self> {
        for (index, &value) in b.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange {
                    name: "inclusion probability",
                    value,
                    range: "[0, 1]",
                });
            }
        }
        Ok(Self(b))
    }

    /// Clamps solver output into `[0, 1]`.
    pub(crate) fn from_clamped(b: Vec<f64>) -> Self {
        Self(b.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn ones(k: usize) -> Self {
        Self(vec![1.0; k])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Inclusion probability of `label`.
    pub fn get(&self, label: usize) -> f64 {
        self.0[label]
    }

    /// Expected size of the randomized set, `sum_j b_j`.
    pub fn expected_size(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Expected coverage `b . p` of the set when labels follow `dist`.
    pub fn expected_coverage(&self, dist: &[f64]) -> Result<f64> {
        if dist.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: dist.len(),
            });
        }
        Ok(dot(&self.0, dist))
    }

    /// Draws one realization: label `j` is included with probability `b_j`,
    /// independently of the others.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LabelSet {
        let members = self
            .0
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| {
                let u: f64 = rng.random();
                (u < b).then_some(j)
            })
            .collect();
        LabelSet { members }
    }
}

impl Deref for BernoulliParams {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for BernoulliParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        BernoulliParams::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Free-function form of [`BernoulliParams::sample`].
pub fn sample_set<R: Rng + ?Sized>(params: &BernoulliParams, rng: &mut R) -> LabelSet {
    params.sample(rng)
}

/// Free-function form of [`BernoulliParams::expected_size`].
pub fn expected_size(params: &BernoulliParams) -> f64 {
    params.expected_size()
}

/// Free-function form of [`BernoulliParams::expected_coverage`].
pub fn expected_coverage(params: &BernoulliParams, dist: &ProbabilityVector) -> Result<f64> {
    params.expected_coverage(dist)
}

/// A realized prediction set: sorted, duplicate-free label indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet {
    members: Vec<usize>,
}

impl LabelSet {
    pub fn new(mut members: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&label) = members.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, k });
        }
        members.sort_unstable();
        members.dedup();
        Ok(Self { members })
    }

    pub fn contains(&self, label: usize) -> bool {
        self.members.binary_search(&label).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
