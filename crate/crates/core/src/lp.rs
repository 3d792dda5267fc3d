//! The Bernoulli prediction set linear program.
//!
//! For vertices `pi^(1..m)` and coverage target `t` we solve
//!
//! ```text
//!   minimize    sum_j b_j
//!   subject to  b . pi^(i) >= t      for every vertex i
//!               0 <= b_j <= 1
//! ```
//!
//! `b = 1` is always feasible, so the problem never needs a phase one. With a
//! single vertex the program is a fractional knapsack and is solved in closed
//! form; otherwise a dense bounded-variable primal simplex with Bland's rule
//! runs over the labels that carry mass in at least one vertex.

use serde::Serialize;

use crate::dist::{dot, BernoulliParams, ProbabilityVector, SecondOrderPrediction};
use crate::error::{check_unit, Error, Result};

/// Pivot and reduced-cost tolerance of the simplex.
pub const PIVOT_TOL: f64 = 1e-9;

/// A constraint counts as active when `|b . pi - t|` is below this.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Remaining coverage below this is treated as met by the knapsack.
pub(crate) const KNAPSACK_TOL: f64 = 1e-12;

/// Optimal inclusion probabilities for one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub params: BernoulliParams,
    /// Expected set size `sum_j b_j`.
    pub objective: f64,
    /// Vertex indices whose coverage constraint is tight.
    pub active_constraints: Vec<usize>,
    pub iterations: usize,
}

impl LpSolution {
    fn finish(b: Vec<f64>, vertices: &[ProbabilityVector], t: f64, iterations: usize) -> Self {
        let params = BernoulliParams::from_clamped(b);
        let objective = params.expected_size();
        let active_constraints = vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| (dot(&params, v) - t).abs() <= ACTIVE_TOL)
            .map(|(i, _)| i)
            .collect();
        Self {
            params,
            objective,
            active_constraints,
            iterations,
        }
    }

    /// `min_i b . pi^(i) - t`; nonnegative up to rounding for feasible solutions.
    pub fn coverage_slack(&self, prediction: &SecondOrderPrediction, t: f64) -> f64 {
        prediction
            .iter()
            .map(|v| dot(&self.params, v) - t)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Labels ordered by descending probability, ties broken by ascending index.
pub(crate) fn descending_order(dist: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    // stable sort keeps ascending index among equal probabilities
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]));
    order
}

/// Indicator of the labels with mass in at least one vertex: the only
/// solution at `t = 1`. Computed directly because vertex sums that round
/// below one would otherwise let a solver shave entries off one.
fn support_indicator(vertices: &[ProbabilityVector]) -> Vec<f64> {
    (0..vertices[0].k())
        .map(|j| if vertices.iter().any(|v| v[j] > 0.0) { 1.0 } else { 0.0 })
        .collect()
}

/// Solves the single-constraint program greedily: labels are filled in
/// descending probability order and the boundary label gets the fractional
/// value `(t - covered) / pi_boundary`.
pub fn solve_fractional_knapsack(dist: &ProbabilityVector, t: f64) -> Result<LpSolution> {
    check_unit("coverage target", t)?;
    if t == 1.0 {
        let vertices = std::slice::from_ref(dist);
        return Ok(LpSolution::finish(support_indicator(vertices), vertices, t, 0));
    }
    let mut b = vec![0.0; dist.k()];
    let mut covered = 0.0;
    let mut steps = 0;
    for j in descending_order(dist) {
        let need = t - covered;
        if need <= KNAPSACK_TOL {
            break;
        }
        let p = dist[j];
        if p <= 0.0 {
            break;
        }
        steps += 1;
        if p >= need {
            let frac = need / p;
            b[j] = if frac > 1.0 - KNAPSACK_TOL { 1.0 } else { frac };
            break;
        }
        b[j] = 1.0;
        covered += p;
    }
    Ok(LpSolution::finish(b, std::slice::from_ref(dist), t, steps))
}

/// Solves the Bernoulli prediction set program for `prediction` at coverage
/// target `t`.
///
/// Labels with zero probability under every vertex are fixed to zero. A
/// single-vertex prediction goes through [`solve_fractional_knapsack`];
/// `t = 0` and `t = 1` are answered directly.
pub fn solve_bps(prediction: &SecondOrderPrediction, t: f64) -> Result<LpSolution> {
    check_unit("coverage target", t)?;
    let k = prediction.k();
    if t == 0.0 {
        return Ok(LpSolution::finish(vec![0.0; k], prediction, t, 0));
    }
    if t == 1.0 {
        return Ok(LpSolution::finish(support_indicator(prediction), prediction, t, 0));
    }
    if prediction.m() == 1 {
        return solve_fractional_knapsack(&prediction[0], t);
    }
    solve_bps_simplex(prediction, t)
}

/// Runs the simplex regardless of the number of vertices. Exposed so tests can
/// compare it against the closed-form single-vertex path.
#[doc(hidden)]
pub fn solve_bps_simplex(prediction: &SecondOrderPrediction, t: f64) -> Result<LpSolution> {
    check_unit("coverage target", t)?;
    let k = prediction.k();
    let m = prediction.m();
    let support: Vec<usize> = (0..k)
        .filter(|&j| prediction.iter().any(|v| v[j] > 0.0))
        .collect();
    let kk = support.len();
    let n = kk + m;

    // rows: sum_j pi_ij b_j - s_i = t
    let mut a = vec![0.0; m * n];
    for (i, v) in prediction.iter().enumerate() {
        let row = &mut a[i * n..(i + 1) * n];
        for (col, &j) in support.iter().enumerate() {
            row[col] = v[j];
        }
        row[kk + i] = -1.0;
    }
    let mut cost = vec![0.0; n];
    cost[..kk].fill(1.0);
    let mut lower = vec![0.0; n];
    let mut upper = vec![1.0; n];
    upper[kk..].fill(f64::INFINITY);
    lower[kk..].fill(0.0);
    let basis: Vec<usize> = (kk..n).collect();
    let mut at_upper = vec![false; n];
    at_upper[..kk].fill(true);

    let mut lp = BoundedSimplex::new(a, vec![t; m], cost, lower, upper, &basis, &at_upper);
    let iterations = lp.optimize()?;
    let x = lp.values();

    let mut b = vec![0.0; k];
    for (col, &j) in support.iter().enumerate() {
        b[j] = x[col];
    }
    Ok(LpSolution::finish(b, prediction, t, iterations))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize),
    Lower,
    Upper,
}

/// Dense tableau simplex for `min c.x  s.t.  A x = rhs,  lower <= x <= upper`
/// started from a caller-supplied feasible basis.
///
/// Entering and leaving variables follow Bland's rule (lowest index among
/// eligible candidates), which rules out cycling and makes the pivot sequence
/// deterministic. A bound flip of the entering variable is preferred over a
/// pivot when both limit the step equally.
pub(crate) struct BoundedSimplex {
    rows: usize,
    cols: usize,
    /// `B^-1 A`, row-major.
    tab: Vec<f64>,
    /// Values of the basic variables, one per row.
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    reduced: Vec<f64>,
}

impl BoundedSimplex {
    /// `basis[r]` names the variable basic in row `r`; nonbasic variables sit at
    /// their upper bound where `at_upper` is set, else at their lower bound.
    /// The starting point must be feasible.
    pub(crate) fn new(
        a: Vec<f64>,
        rhs: Vec<f64>,
        cost: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        basis: &[usize],
        at_upper: &[bool],
    ) -> Self {
        let rows = rhs.len();
        let cols = cost.len();
        debug_assert_eq!(a.len(), rows * cols);
        debug_assert_eq!(basis.len(), rows);

        let mut state: Vec<VarState> = (0..cols)
            .map(|j| if at_upper[j] { VarState::Upper } else { VarState::Lower })
            .collect();
        for (r, &j) in basis.iter().enumerate() {
            state[j] = VarState::Basic(r);
        }

        // rhs minus the nonbasic contribution
        let mut beta = rhs;
        for (r, b) in beta.iter_mut().enumerate() {
            let row = &a[r * cols..(r + 1) * cols];
            for j in 0..cols {
                let x = match state[j] {
                    VarState::Basic(_) => continue,
                    VarState::Lower => lower[j],
                    VarState::Upper => upper[j],
                };
                if x != 0.0 {
                    *b -= row[j] * x;
                }
            }
        }

        let mut lp = Self {
            rows,
            cols,
            tab: a,
            beta,
            basis: basis.to_vec(),
            state,
            lower,
            upper,
            reduced: cost,
        };
        // Gauss-Jordan on the basis columns turns the tableau into B^-1 A and
        // beta into B^-1 (rhs - N x_N).
        for r in 0..rows {
            let col = lp.basis[r];
            lp.eliminate(r, col, true);
        }
        for r in 0..rows {
            let j = lp.basis[r];
            lp.beta[r] = lp.beta[r].clamp(lp.lower[j], lp.upper[j]);
        }
        lp
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.tab[r * self.cols..(r + 1) * self.cols]
    }

    /// Scales row `r` so column `col` becomes a unit vector, eliminating it
    /// from every other row and from the reduced costs. `beta` is transformed
    /// alongside only while setting up the initial basis.
    fn eliminate(&mut self, r: usize, col: usize, with_beta: bool) {
        let cols = self.cols;
        let pivot = self.tab[r * cols + col];
        {
            let row = &mut self.tab[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v /= pivot;
            }
            row[col] = 1.0;
        }
        if with_beta {
            self.beta[r] /= pivot;
        }
        let pivot_row: Vec<f64> = self.row(r).to_vec();
        let pivot_beta = self.beta[r];
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let factor = self.tab[i * cols + col];
            if factor == 0.0 {
                continue;
            }
            let row = &mut self.tab[i * cols..(i + 1) * cols];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            row[col] = 0.0;
            if with_beta {
                self.beta[i] -= factor * pivot_beta;
            }
        }
        let factor = self.reduced[col];
        if factor != 0.0 {
            for (v, p) in self.reduced.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            self.reduced[col] = 0.0;
        }
    }

    fn entering(&self) -> Option<(usize, f64)> {
        (0..self.cols).find_map(|j| match self.state[j] {
            VarState::Lower if self.reduced[j] < -PIVOT_TOL && self.upper[j] > self.lower[j] => Some((j, 1.0)),
            VarState::Upper if self.reduced[j] > PIVOT_TOL && self.upper[j] > self.lower[j] => Some((j, -1.0)),
            _ => None,
        })
    }

    /// Runs to optimality; returns the number of iterations (pivots plus
    /// bound flips).
    pub(crate) fn optimize(&mut self) -> Result<usize> {
        let cap = 100_000 + 50 * (self.rows + self.cols);
        let mut iterations = 0;
        while let Some((j, dir)) = self.entering() {
            if iterations >= cap {
                return Err(Error::SolverStalled(iterations));
            }
            iterations += 1;

            let flip = self.upper[j] - self.lower[j];
            let mut step = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None;
            for r in 0..self.rows {
                let alpha = dir * self.tab[r * self.cols + j];
                let var = self.basis[r];
                let (limit, to_upper) = if alpha > PIVOT_TOL {
                    (((self.beta[r] - self.lower[var]) / alpha).max(0.0), false)
                } else if alpha < -PIVOT_TOL && self.upper[var].is_finite() {
                    (((self.upper[var] - self.beta[r]) / -alpha).max(0.0), true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((best_r, _)) => {
                        limit < step - 1e-12 || (limit <= step + 1e-12 && var < self.basis[best_r])
                    }
                };
                if better {
                    step = limit;
                    leave = Some((r, to_upper));
                }
            }

            if flip <= step + 1e-12 {
                if !flip.is_finite() {
                    // unbounded direction; cannot happen for bounded costs
                    return Err(Error::SolverStalled(iterations));
                }
                for r in 0..self.rows {
                    self.beta[r] -= dir * flip * self.tab[r * self.cols + j];
                }
                self.state[j] = if dir > 0.0 { VarState::Upper } else { VarState::Lower };
                self.clamp_basics();
                continue;
            }

            let (r, to_upper) = leave.expect("finite step has a leaving row");
            for i in 0..self.rows {
                self.beta[i] -= dir * step * self.tab[i * self.cols + j];
            }
            let entering_value = match self.state[j] {
                VarState::Lower => self.lower[j] + step,
                VarState::Upper => self.upper[j] - step,
                VarState::Basic(_) => unreachable!("entering variable is nonbasic"),
            };
            let leaving = self.basis[r];
            self.state[leaving] = if to_upper { VarState::Upper } else { VarState::Lower };
            self.basis[r] = j;
            self.state[j] = VarState::Basic(r);
            self.beta[r] = entering_value;
            self.eliminate(r, j, false);
            self.clamp_basics();
        }
        Ok(iterations)
    }

    fn clamp_basics(&mut self) {
        for r in 0..self.rows {
            let var = self.basis[r];
            self.beta[r] = self.beta[r].clamp(self.lower[var], self.upper[var]);
        }
    }

    pub(crate) fn values(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| match self.state[j] {
                VarState::Basic(r) => self.beta[r],
                VarState::Lower => self.lower[j],
                VarState::Upper => self.upper[j],
            })
            .collect()
    }
}
