//! The simplex against exhaustive vertex enumeration on small programs.

use bernoulli_sets::lp::solve_bps_simplex;
use bernoulli_sets::{solve_bps, solve_fractional_knapsack, ProbabilityVector, SecondOrderPrediction};
use proptest::prelude::*;

/// `a . b >= rhs`
type Constraint = (Vec<f64>, f64);

fn solve_square(rows: &[&Constraint]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .map(|(a, r)| {
            let mut row = a.clone();
            row.push(*r);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        for i in 0..n {
            if i != col {
                let f = m[i][col] / m[col][col];
                let pivot_row = m[col].clone();
                for (x, p) in m[i][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, r, &mut Vec::new(), &mut out);
    out
}

/// Minimum of `sum b` over every basic feasible point of the polytope.
fn brute_force_objective(vertices: &[Vec<f64>], t: f64) -> f64 {
    let k = vertices[0].len();
    let mut cons: Vec<Constraint> = vertices.iter().map(|v| (v.clone(), t)).collect();
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        cons.push((e.clone(), 0.0));
        e[j] = -1.0;
        cons.push((e, -1.0));
    }
    let mut best = f64::INFINITY;
    for combo in combinations(cons.len(), k) {
        let rows: Vec<&Constraint> = combo.iter().map(|&i| &cons[i]).collect();
        let Some(b) = solve_square(&rows) else { continue };
        let feasible = cons
            .iter()
            .all(|(a, r)| a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() >= r - 1e-9);
        if feasible {
            best = best.min(b.iter().sum());
        }
    }
    best
}

fn dist(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![4 => 0.0..1.0f64, 1 => Just(0.0)], k)
        .prop_filter("some mass", |v| v.iter().sum::<f64>() > 1e-3)
        .prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
}

fn small_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, f64)> {
    (2..=4usize)
        .prop_flat_map(|k| (prop::collection::vec(dist(k), 1..=3), 0.0..=1.0f64))
}

fn prediction(rows: &[Vec<f64>]) -> SecondOrderPrediction {
    SecondOrderPrediction::from_rows(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn simplex_matches_enumeration((rows, t) in small_instance()) {
        let pred = prediction(&rows);
        let sol = solve_bps(&pred, t).unwrap();
        let expected = brute_force_objective(pred.iter().map(|v| v.to_vec()).collect::<Vec<_>>().as_slice(), t);
        prop_assert!((sol.objective - expected).abs() <= 1e-7, "{} vs {}", sol.objective, expected);
        prop_assert!(sol.coverage_slack(&pred, t) >= -1e-9);
        prop_assert!(sol.params.iter().all(|&b| (0.0..=1.0).contains(&b)));
    }

    #[test]
    fn general_path_agrees_with_knapsack(row in (2..=8usize).prop_flat_map(dist), t in 0.0..=1.0f64) {
        let p = ProbabilityVector::from_slice(&row).unwrap();
        let knap = solve_fractional_knapsack(&p, t).unwrap();
        let simplex = solve_bps_simplex(&SecondOrderPrediction::single(p.clone()), t).unwrap();
        prop_assert!((knap.objective - simplex.objective).abs() <= 1e-9);
        prop_assert!(knap.coverage_slack(&SecondOrderPrediction::single(p), t) >= -1e-12);
    }

    #[test]
    fn objective_ignores_vertex_order((rows, t) in small_instance()) {
        let forward = solve_bps(&prediction(&rows), t).unwrap().objective;
        let mut reversed = rows.clone();
        reversed.reverse();
        let backward = solve_bps(&prediction(&reversed), t).unwrap().objective;
        prop_assert!((forward - backward).abs() <= 1e-9);
    }
}

#[test]
fn worked_examples_against_enumeration() {
    let cases: &[(&[&[f64]], f64)] = &[
        (&[&[0.5, 0.2, 0.3]], 0.9),
        (&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], 0.5),
        (&[&[0.6, 0.4], &[0.4, 0.6]], 0.8),
        (&[&[0.25, 0.25, 0.25, 0.25], &[0.7, 0.1, 0.1, 0.1], &[0.1, 0.1, 0.1, 0.7]], 0.9),
    ];
    for (rows, t) in cases {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let sol = solve_bps(&prediction(&rows), *t).unwrap();
        let expected = brute_force_objective(&rows, *t);
        assert!((sol.objective - expected).abs() <= 1e-9, "{rows:?}: {} vs {expected}", sol.objective);
    }
}

#[test]
fn larger_programs_stay_feasible() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let k = rng.random_range(5..=30);
        let m = rng.random_range(2..=20);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(3)).collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let pred = prediction(&rows);
        let t = rng.random::<f64>();
        let sol = solve_bps(&pred, t).unwrap();
        assert!(sol.coverage_slack(&pred, t) >= -1e-9);
        assert!(sol.objective <= k as f64 + 1e-12);
    }
}
