//! Prediction-set parameters for Bernoulli prediction sets (BPS) and the
//! adaptive prediction sets (APS) baseline.
//!
//! APS ranks labels by descending probability and includes them until the
//! cumulative mass reaches `tau`. The boundary label is dropped with
//! probability `(sum_{j <= L} pi_j - tau) / pi_L`. Its per-label inclusion
//! probabilities therefore coincide with the single-vertex BPS solution.

use serde::{Deserialize, Serialize};

use crate::dist::{BernoulliParams, LabelSet, ProbabilityVector, SecondOrderPrediction};
use crate::error::{check_open_unit, check_unit, Result};
use crate::lp::{descending_order, solve_bps, KNAPSACK_TOL};

/// How a second-order prediction is turned into set parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Solve the credal linear program over all vertices.
    Bps,
    /// Apply APS to the arithmetic mean of the vertices.
    Aps,
}

/// Bookkeeping for one APS draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApsDecision {
    /// `L(pi, tau)`: 1-based rank of the first label at which the cumulative
    /// mass reaches `tau`.
    pub boundary_rank: usize,
    /// Number of top-ranked labels in the realized set (`L - 1` or `L`).
    pub include_top: usize,
    /// Probability of dropping the boundary label.
    pub removal_probability: f64,
    pub u: f64,
}

/// BPS inclusion probabilities at coverage target `t`.
pub fn bps_params(prediction: &SecondOrderPrediction, t: f64) -> Result<BernoulliParams> {
    Ok(solve_bps(prediction, t)?.params)
}

struct ApsBoundary {
    order: Vec<usize>,
    /// 1-based boundary rank
    rank: usize,
    /// Inclusion probability of the boundary label, `1 - removal`.
    keep: f64,
}

impl ApsBoundary {
    fn removal(&self) -> f64 {
        1.0 - self.keep
    }
}

fn aps_boundary(dist: &ProbabilityVector, tau: f64) -> ApsBoundary {
    let order = descending_order(dist);
    if tau == 1.0 {
        return ApsBoundary {
            rank: dist.iter().filter(|&&p| p > 0.0).count(),
            order,
            keep: 1.0,
        };
    }
    let mut before = 0.0;
    let mut last_positive = 1;
    for (i, &j) in order.iter().enumerate() {
        let p = dist[j];
        if p > 0.0 {
            last_positive = i + 1;
        }
        if before + p >= tau - KNAPSACK_TOL {
            // (tau - before) / p equals 1 - (cum - tau) / p and matches the
            // knapsack's arithmetic bit for bit
            let keep = if p > 0.0 { ((tau - before) / p).clamp(0.0, 1.0) } else { 1.0 };
            let keep = if keep > 1.0 - KNAPSACK_TOL { 1.0 } else { keep };
            return ApsBoundary {
                order,
                rank: i + 1,
                keep,
            };
        }
        before += p;
    }
    // rounding left the total short of tau: keep the whole support
    ApsBoundary {
        order,
        rank: last_positive,
        keep: 1.0,
    }
}

/// Per-label inclusion probabilities of the APS randomized set at threshold
/// `tau`: one above the boundary rank, `1 - removal` at it, zero below.
pub fn aps_params(dist: &ProbabilityVector, tau: f64) -> Result<BernoulliParams> {
    check_unit("tau", tau)?;
    let boundary = aps_boundary(dist, tau);
    let mut b = vec![0.0; dist.k()];
    for &j in &boundary.order[..boundary.rank - 1] {
        b[j] = 1.0;
    }
    b[boundary.order[boundary.rank - 1]] = boundary.keep;
    Ok(BernoulliParams::from_clamped(b))
}

/// Realizes the APS set for noise `u`: the top `L - 1` labels when
/// `u <= removal`, else the top `L`.
pub fn aps_set(dist: &ProbabilityVector, tau: f64, u: f64) -> Result<(LabelSet, ApsDecision)> {
    check_unit("tau", tau)?;
    check_unit("u", u)?;
    let boundary = aps_boundary(dist, tau);
    let (rank, removal) = (boundary.rank, boundary.removal());
    let include_top = if u <= removal { rank - 1 } else { rank };
    let set = LabelSet::new(boundary.order[..include_top].to_vec(), dist.k())?;
    Ok((
        set,
        ApsDecision {
            boundary_rank: rank,
            include_top,
            removal_probability: removal,
            u,
        },
    ))
}

/// Parameters for `method` at coverage target `t`. APS runs on the vertex mean.
pub fn method_params(prediction: &SecondOrderPrediction, t: f64, method: Method) -> Result<BernoulliParams> {
    match method {
        Method::Bps => bps_params(prediction, t),
        Method::Aps => aps_params(&prediction.mean(), t),
    }
}

/// Uncalibrated parameters at the nominal target `1 - alpha`.
pub fn nominal_params(prediction: &SecondOrderPrediction, alpha: f64, method: Method) -> Result<BernoulliParams> {
    check_open_unit("alpha", alpha)?;
    method_params(prediction, 1.0 - alpha, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::solve_fractional_knapsack;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::from_slice(v).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn aps_params_examples() {
        let p = pv(&[0.5, 0.2, 0.3]);
        assert!(close(&aps_params(&p, 0.9).unwrap(), &[1.0, 0.5, 1.0], 1e-12));
        assert_eq!(aps_params(&p, 0.5).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        let e = ProbabilityVector::one_hot(3, 1).unwrap();
        assert!(close(&aps_params(&e, 0.9).unwrap(), &[0.0, 0.9, 0.0], 1e-15));
        assert!(aps_params(&p, 1.5).is_err());
    }

    #[test]
    fn aps_matches_knapsack() {
        let p = pv(&[0.1, 0.35, 0.05, 0.3, 0.2]);
        for i in 0..=20 {
            let tau = i as f64 / 20.0;
            let a = aps_params(&p, tau).unwrap();
            let k = solve_fractional_knapsack(&p, tau).unwrap().params;
            assert!(close(&a, &k, 1e-12), "tau {tau}: {a:?} vs {k:?}");
        }
    }

    #[test]
    fn aps_set_examples() {
        let p = pv(&[0.5, 0.2, 0.3]);
        let (set, d) = aps_set(&p, 0.9, 0.4).unwrap();
        assert_eq!(set.members(), &[0, 2]);
        assert_eq!(d.boundary_rank, 3);
        assert_eq!(d.include_top, 2);
        assert!((d.removal_probability - 0.5).abs() < 1e-12);

        let (set, d) = aps_set(&p, 0.9, 0.6).unwrap();
        assert_eq!(set.members(), &[0, 1, 2]);
        assert_eq!(d.include_top, 3);

        let (set, d) = aps_set(&p, 0.0, 0.0).unwrap();
        assert!(set.is_empty());
        assert_eq!(d.boundary_rank, 1);
    }

    #[test]
    fn aps_full_target_keeps_support_only() {
        let p = pv(&[0.6, 0.0, 0.4]);
        assert_eq!(aps_params(&p, 1.0).unwrap().as_slice(), &[1.0, 0.0, 1.0]);
        let (set, _) = aps_set(&p, 1.0, 1.0).unwrap();
        assert_eq!(set.members(), &[0, 2]);
    }

    #[test]
    fn nominal_modes() {
        let pred = SecondOrderPrediction::from_rows(&[vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        let bps = nominal_params(&pred, 0.1, Method::Bps).unwrap();
        assert_eq!(bps, bps_params(&pred, 0.9).unwrap());
        let aps = nominal_params(&pred, 0.1, Method::Aps).unwrap();
        assert_eq!(aps, aps_params(&pv(&[0.5, 0.5]), 0.9).unwrap());
        let near_one = nominal_params(&pred, 1.0 - 1e-15, Method::Bps).unwrap();
        assert!(near_one.iter().all(|&b| b < 1e-12));
        assert!(nominal_params(&pred, 1.0, Method::Bps).is_err());
    }

    #[test]
    fn bps_zero_target() {
        let pred = SecondOrderPrediction::from_rows(&[vec![0.2, 0.3, 0.5], vec![0.5, 0.3, 0.2]]).unwrap();
        assert_eq!(bps_params(&pred, 0.0).unwrap().as_slice(), &[0.0; 3]);
    }
}
