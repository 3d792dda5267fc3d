//! Credal-set geometry: total-variation balls, sampling inside a credal set,
//! hull membership and a Monte-Carlo Tukey depth.
//!
//! The TV ball of radius `d` around `p`, intersected with the simplex, is a
//! polytope. Its corner candidates move mass `d` from label `j` to label `i`:
//!
//! ```text
//!   p^{i,j} = p + eta_{i,j} * d * (e_i - e_j),   eta_{i,j} = min(1, (1 - p_i)/d, p_j/d)
//! ```
//!
//! When no clipping happens (`eta = 1` everywhere) these `K(K-1)` points span
//! the whole ball. When a label has less than `d` mass to give, the clipped
//! points alone miss part of the ball: e.g. for `p = [0.9, 0.05, 0.05]`,
//! `d = 0.2` the point `[0.75, 0.25, 0]` is in the ball but not in their hull.
//! [`VertexRule::Exact`] therefore adds the remaining corners: the point
//! masses `e_i` within reach, and the points that raise one label by `d` while
//! emptying a set of small labels and partially draining one more.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::dist::{dot, ProbabilityVector, SecondOrderPrediction};
use crate::error::{check_unit, Error, Result};
use crate::lp::BoundedSimplex;

/// Upper bound on the number of corners enumerated by [`VertexRule::Exact`].
pub const MAX_CORNERS: usize = 50_000;

/// Total-variation distance `(1/2) sum_k |p_k - q_k|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// All distributions within TV distance `radius` of `center`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvBall {
    center: ProbabilityVector,
    radius: f64,
}

impl TvBall {
    pub fn new(center: ProbabilityVector, radius: f64) -> Result<Self> {
        check_unit("radius", radius)?;
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &ProbabilityVector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, q: &[f64], tol: f64) -> Result<bool> {
        Ok(tv_distance(&self.center, q)? <= self.radius + tol)
    }
}

/// Which corner points [`tv_ball_corners`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VertexRule {
    /// Only the `K(K-1)` clipped points `p^{i,j}`.
    Clipped,
    /// Clipped points plus the extra corners created by clipping.
    #[default]
    Exact,
}

/// A corner of a TV ball together with its distance factor:
/// `tv_distance(center, point) == eta * radius`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvCorner {
    pub point: ProbabilityVector,
    pub eta: f64,
    /// `(i, j)` for the clipped point that moves mass from `j` to `i`.
    pub pair: Option<(usize, usize)>,
}

fn corner_from(center: &[f64], point: Vec<f64>, radius: f64, pair: Option<(usize, usize)>) -> TvCorner {
    let point = ProbabilityVector::new(&point, 1e-9).expect("corner lies on the simplex");
    let moved = tv_distance(center, &point).expect("same dimension");
    TvCorner {
        eta: moved / radius,
        point,
        pair,
    }
}

/// The clipped corner `p^{i,j}` (mass moved from `j` to `i`).
pub fn clipped_corner(ball: &TvBall, i: usize, j: usize) -> TvCorner {
    let p = ball.center.as_slice();
    let d = ball.radius;
    let shift = d.min(1.0 - p[i]).min(p[j]);
    let mut q = p.to_vec();
    q[i] += shift;
    q[j] = if shift == p[j] { 0.0 } else { p[j] - shift };
    corner_from(p, q, d, Some((i, j)))
}

/// Corner points of the ball (see the module docs), deduplicated at L-infinity
/// distance `1e-12`. A zero radius yields the center alone.
pub fn tv_ball_corners(ball: &TvBall, rule: VertexRule) -> Result<Vec<TvCorner>> {
    let p = ball.center.as_slice();
    let k = p.len();
    let d = ball.radius;
    let mut corners: Vec<TvCorner> = Vec::new();
    let push = |c: TvCorner, corners: &mut Vec<TvCorner>| -> Result<()> {
        if !corners.iter().any(|o| o.point.linf_distance(&c.point) <= crate::dist::DEDUP_TOL) {
            if corners.len() >= MAX_CORNERS {
                return Err(Error::TooManyVertices(MAX_CORNERS));
            }
            corners.push(c);
        }
        Ok(())
    };
    if d == 0.0 {
        push(
            TvCorner {
                point: ball.center.clone(),
                eta: 0.0,
                pair: None,
            },
            &mut corners,
        )?;
        return Ok(corners);
    }

    for i in 0..k {
        for j in 0..k {
            if i != j {
                push(clipped_corner(ball, i, j), &mut corners)?;
            }
        }
    }
    if rule == VertexRule::Clipped {
        return Ok(corners);
    }

    for i in 0..k {
        if 1.0 - p[i] <= d {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            push(corner_from(p, e, d, None), &mut corners)?;
            continue;
        }
        // labels that can be emptied within the budget
        let small: Vec<usize> = (0..k).filter(|&l| l != i && p[l] > 0.0 && p[l] < d).collect();
        let mut chosen: Vec<usize> = Vec::new();
        drain_subsets(p, d, &small, 0, 0.0, &mut chosen, &mut |emptied, rem| {
            for j in 0..k {
                if j == i || emptied.contains(&j) || p[j] < rem {
                    continue;
                }
                let mut q = p.to_vec();
                q[i] += d;
                for &l in emptied {
                    q[l] = 0.0;
                }
                q[j] = if p[j] == rem { 0.0 } else { p[j] - rem };
                push(corner_from(p, q, d, None), &mut corners)?;
            }
            Ok(())
        })?;
    }
    Ok(corners)
}

/// Visits every nonempty subset `Z` of `small[from..]` (ascending) whose mass
/// stays below `d`, passing `Z` and the remaining budget `d - mass(Z)`.
fn drain_subsets(
    p: &[f64],
    d: f64,
    small: &[usize],
    from: usize,
    mass: f64,
    chosen: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize], f64) -> Result<()>,
) -> Result<()> {
    for idx in from..small.len() {
        let l = small[idx];
        let next = mass + p[l];
        if next >= d {
            continue;
        }
        chosen.push(l);
        visit(chosen, d - next)?;
        drain_subsets(p, d, small, idx + 1, next, chosen, visit)?;
        chosen.pop();
    }
    Ok(())
}

/// Vertices of the ball under [`VertexRule::Exact`], as a credal prediction.
pub fn tv_ball_vertices(ball: &TvBall) -> Result<SecondOrderPrediction> {
    tv_ball_vertices_with(ball, VertexRule::Exact)
}

pub fn tv_ball_vertices_with(ball: &TvBall, rule: VertexRule) -> Result<SecondOrderPrediction> {
    let corners = tv_ball_corners(ball, rule)?;
    SecondOrderPrediction::new(corners.into_iter().map(|c| c.point).collect())
}

/// `sum_j w_j v_j` for nonnegative weights summing to one.
pub fn convex_combination(vertices: &[ProbabilityVector], weights: &[f64]) -> Result<ProbabilityVector> {
    if vertices.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: "vertices",
            left_len: vertices.len(),
            right: "weights",
            right_len: weights.len(),
        });
    }
    let first = vertices.first().ok_or(Error::EmptyPrediction)?;
    let mut acc = vec![0.0; first.k()];
    for (v, &w) in vertices.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += w * x;
        }
    }
    ProbabilityVector::new(&acc, 1e-9)
}

/// Dirichlet(1, ..., 1) weights.
pub fn flat_dirichlet<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// A random point of the hull of `prediction`, with Dirichlet(1) weights on
/// the vertices. Not uniform over the hull.
pub fn sample_in_hull<R: Rng + ?Sized>(prediction: &SecondOrderPrediction, rng: &mut R) -> ProbabilityVector {
    let weights = flat_dirichlet(prediction.m(), rng);
    convex_combination(prediction, &weights).expect("weights match vertices")
}

/// A random distribution inside the ball: a Dirichlet(1)-weighted combination
/// of its corners. Membership is exact by convexity; the law is not uniform
/// over the ball.
pub fn sample_in_tv_ball<R: Rng + ?Sized>(ball: &TvBall, rng: &mut R) -> Result<ProbabilityVector> {
    if ball.radius == 0.0 {
        return Ok(ball.center.clone());
    }
    Ok(sample_in_hull(&tv_ball_vertices(ball)?, rng))
}

/// Whether `q` lies in the convex hull of `prediction`, decided by a
/// phase-one feasibility program with residual tolerance `tol`.
pub fn hull_contains(prediction: &SecondOrderPrediction, q: &[f64], tol: f64) -> Result<bool> {
    let k = prediction.k();
    if q.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: q.len(),
        });
    }
    let m = prediction.m();
    let rows = k + 1;
    let cols = m + rows;
    // columns: weights lambda_0..m, then one artificial per row
    let mut a = vec![0.0; rows * cols];
    for (j, v) in prediction.iter().enumerate() {
        for (r, &x) in v.iter().enumerate() {
            a[r * cols + j] = x;
        }
        a[k * cols + j] = 1.0;
    }
    for r in 0..rows {
        a[r * cols + m + r] = 1.0;
    }
    let mut rhs: Vec<f64> = q.iter().map(|&x| x.max(0.0)).collect();
    rhs.push(1.0);
    let mut cost = vec![0.0; cols];
    cost[m..].fill(1.0);
    let lower = vec![0.0; cols];
    let mut upper = vec![f64::INFINITY; cols];
    upper[..m].fill(1.0);
    let basis: Vec<usize> = (m..cols).collect();
    let mut lp = BoundedSimplex::new(a, rhs, cost, lower, upper, &basis, &vec![false; cols]);
    lp.optimize()?;
    let x = lp.values();
    let residual: f64 = x[m..].iter().sum();
    Ok(residual <= tol)
}

fn random_tangent_direction<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut s: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mean = s.iter().sum::<f64>() / k as f64;
        for x in &mut s {
            *x -= mean;
        }
        let norm = dot(&s, &s).sqrt();
        if norm > 1e-12 {
            for x in &mut s {
                *x /= norm;
            }
            return s;
        }
    }
}

/// Monte-Carlo Tukey depth of `p` with respect to `samples`.
///
/// Draws `n_directions` unit directions in the simplex's tangent hyperplane
/// and returns the smallest fraction of samples strictly on the negative
/// side of the hyperplane through `p`. Since it is a minimum over a finite set
/// of directions, it over-estimates the true depth.
pub fn estimate_tukey_depth<R: Rng + ?Sized>(
    p: &ProbabilityVector,
    samples: &[ProbabilityVector],
    n_directions: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_directions == 0 {
        return Err(Error::Empty("direction count"));
    }
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let k = p.k();
    if let Some(s) = samples.iter().find(|s| s.k() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: s.k(),
        });
    }
    let diffs: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(p.iter()).map(|(a, b)| a - b).collect())
        .collect();
    let mut depth = f64::INFINITY;
    for _ in 0..n_directions {
        let s = random_tangent_direction(k, rng);
        let below = diffs.iter().filter(|d| dot(&s, d) < 0.0).count();
        depth = depth.min(below as f64 / samples.len() as f64);
    }
    Ok(depth)
}
