//! Conformal risk-control calibration of the coverage target.
//!
//! With miscoverage loss `1 - b_i(t)[y_i]` the calibrated target is the
//! smallest `t` in `[0, 1]` with
//!
//! ```text
//!   sum_i b_i(t)[y_i] >= ceil((1 - alpha) (n + 1))
//! ```
//!
//! found by bisection. When the ceiling exceeds what `t = 1` achieves the
//! result is flagged as saturated and `t = 1` is returned.
//!
//! Per-record solves inside one bisection step run on the rayon pool; their
//! values are collected in record order and summed sequentially, so the
//! result does not depend on the number of threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::SecondOrderPrediction;
use crate::error::{check_open_unit, check_unit, Error, Result};
use crate::sets::{method_params, Method};

/// Default bisection tolerance on `t`.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Upper bound on bisection steps.
pub const MAX_ITERATIONS: usize = 60;

/// A coverage sum counts as meeting the ceiling within this slack.
pub const COVERAGE_SLACK: f64 = 1e-9;

/// One labelled calibration example.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationExample {
    pub prediction: SecondOrderPrediction,
    pub label: usize,
}

impl CalibrationExample {
    pub fn new(prediction: SecondOrderPrediction, label: usize) -> Result<Self> {
        let k = prediction.k();
        if label >= k {
            return Err(Error::LabelOutOfRange { label, k });
        }
        Ok(Self { prediction, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub tol: f64,
    pub method: Method,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            method: Method::Bps,
        }
    }
}

/// Outcome of the calibration search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    /// Threshold to use at prediction time.
    pub t_star: f64,
    /// Raw risk-control threshold before the conservative rule.
    pub t_cp: f64,
    pub conservative: bool,
    /// The ceiling is out of reach even at `t = 1`.
    pub saturated: bool,
    /// `ceil((1 - alpha)(n + 1))`.
    pub required: usize,
    pub n: usize,
    pub iterations: usize,
    /// `(t, coverage sum)` for every evaluated target, in evaluation order.
    pub trace: Vec<(f64, f64)>,
}

impl CalibrationResult {
    /// Replaces `t_star` by `max(t_cp, 1 - alpha)`.
    pub fn with_conservative(mut self, alpha: f64) -> Self {
        self.t_star = conservative_threshold(self.t_cp, alpha);
        self.conservative = true;
        self
    }
}

/// `ceil((1 - alpha)(n + 1))`, guarded against products such as
/// `0.9 * 10 = 9.000000000000002`.
pub fn coverage_ceiling(n: usize, alpha: f64) -> usize {
    ((1.0 - alpha) * (n as f64 + 1.0) - 1e-9).ceil().max(0.0) as usize
}

fn true_label_coverage(example: &CalibrationExample, t: f64, method: Method) -> Result<f64> {
    Ok(method_params(&example.prediction, t, method)?.get(example.label))
}

/// `sum_i b_i(t)[y_i]` over the calibration set under BPS.
pub fn empirical_coverage_sum(cal: &[CalibrationExample], t: f64) -> Result<f64> {
    coverage_sum_with(cal, t, Method::Bps)
}

/// [`empirical_coverage_sum`] for an arbitrary method.
pub fn coverage_sum_with(cal: &[CalibrationExample], t: f64, method: Method) -> Result<f64> {
    check_unit("coverage target", t)?;
    let per_record: Vec<f64> = cal
        .par_iter()
        .map(|ex| true_label_coverage(ex, t, method))
        .collect::<Result<_>>()?;
    Ok(per_record.iter().sum())
}

/// Bisection for the smallest BPS target meeting the risk-control ceiling.
pub fn calibrate_risk_control(cal: &[CalibrationExample], alpha: f64, tol: f64) -> Result<CalibrationResult> {
    calibrate_with(
        cal,
        alpha,
        CalibrationOptions {
            tol,
            method: Method::Bps,
        },
    )
}

pub fn calibrate_with(cal: &[CalibrationExample], alpha: f64, options: CalibrationOptions) -> Result<CalibrationResult> {
    check_open_unit("alpha", alpha)?;
    if options.tol.is_nan() || options.tol <= 0.0 {
        return Err(Error::OutOfRange {
            name: "tol",
            value: options.tol,
            range: "(0, inf)",
        });
    }
    if cal.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let n = cal.len();
    let required = coverage_ceiling(n, alpha);
    let meets = |sum: f64| sum >= required as f64 - COVERAGE_SLACK;

    let full = coverage_sum_with(cal, 1.0, options.method)?;
    let mut trace = vec![(1.0, full)];
    let saturated_result = |trace| CalibrationResult {
        t_star: 1.0,
        t_cp: 1.0,
        conservative: false,
        saturated: true,
        required,
        n,
        iterations: 0,
        trace,
    };
    if required > n || !meets(full) {
        return Ok(saturated_result(trace));
    }

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 0;
    while hi - lo > options.tol && iterations < MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let sum = coverage_sum_with(cal, mid, options.method)?;
        trace.push((mid, sum));
        if meets(sum) {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(CalibrationResult {
        t_star: hi,
        t_cp: hi,
        conservative: false,
        saturated: false,
        required,
        n,
        iterations,
        trace,
    })
}

/// `max(t_cp, 1 - alpha)`: never calibrate below the nominal target.
pub fn conservative_threshold(t_cp: f64, alpha: f64) -> f64 {
    t_cp.max(1.0 - alpha)
}

/// Split-conformal quantile: the `ceil((1 - alpha)(n + 1))`-th smallest score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConformalQuantile {
    /// `+inf` when saturated.
    pub value: f64,
    /// 1-based order statistic that was requested.
    pub rank: usize,
    pub saturated: bool,
}

pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<ConformalQuantile> {
    check_open_unit("alpha", alpha)?;
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { index });
    }
    let n = scores.len();
    let rank = coverage_ceiling(n, alpha).max(1);
    if rank > n {
        return Ok(ConformalQuantile {
            value: f64::INFINITY,
            rank,
            saturated: true,
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ConformalQuantile {
        value: sorted[rank - 1],
        rank,
        saturated: false,
    })
}
