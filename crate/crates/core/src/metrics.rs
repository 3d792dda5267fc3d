//! Coverage and efficiency metrics for randomized prediction sets, plus the
//! entropy-based split of predictive uncertainty into aleatoric and
//! epistemic parts.
//!
//! Randomized sets are scored in expectation: the coverage of record `i` is
//! `b_i[y_i]`, its size is `sum_j b_ij`, and its conditional coverage under an
//! oracle distribution `p_i` is `b_i . p_i`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dist::{BernoulliParams, ProbabilityVector, SecondOrderPrediction};
use crate::error::{Error, Result};

/// Shannon entropy in base `K`, so that the uniform distribution scores 1.
pub fn entropy(dist: &ProbabilityVector) -> f64 {
    let k = dist.k() as f64;
    let nats: f64 = dist.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    let h = nats / k.ln();
    // exact endpoints for one-hot and uniform inputs
    if dist.contains(&1.0) {
        0.0
    } else if dist.iter().all(|&p| p == dist[0]) {
        1.0
    } else {
        h
    }
}

/// Total, aleatoric and epistemic uncertainty in normalized entropy units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyTriple {
    /// Entropy of the mean distribution.
    pub total: f64,
    /// Mean entropy of the vertices.
    pub aleatoric: f64,
    /// `total - aleatoric`.
    pub epistemic: f64,
}

pub fn uncertainty_decomposition(prediction: &SecondOrderPrediction) -> UncertaintyTriple {
    let total = entropy(&prediction.mean());
    let aleatoric = prediction.iter().map(entropy).sum::<f64>() / prediction.m() as f64;
    UncertaintyTriple {
        total,
        aleatoric,
        epistemic: total - aleatoric,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryMetrics {
    pub marginal_coverage: f64,
    pub set_size: f64,
    pub conditional_coverage: Option<f64>,
    pub n: usize,
}

fn check_len(left: &'static str, left_len: usize, right: &'static str, right_len: usize) -> Result<()> {
    if left_len != right_len {
        return Err(Error::LengthMismatch {
            left,
            left_len,
            right,
            right_len,
        });
    }
    Ok(())
}

fn check_labels(params: &[BernoulliParams], labels: &[usize]) -> Result<()> {
    check_len("params", params.len(), "labels", labels.len())?;
    for (b, &y) in params.iter().zip(labels) {
        if y >= b.k() {
            return Err(Error::LabelOutOfRange { label: y, k: b.k() });
        }
    }
    Ok(())
}

/// Mean true-label inclusion, mean expected size and, when oracles are
/// given, mean expected conditional coverage.
pub fn summary_metrics(
    params: &[BernoulliParams],
    labels: &[usize],
    oracles: Option<&[ProbabilityVector]>,
) -> Result<SummaryMetrics> {
    check_labels(params, labels)?;
    if params.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    let n = params.len() as f64;
    let marginal = params.iter().zip(labels).map(|(b, &y)| b.get(y)).sum::<f64>() / n;
    let size = params.iter().map(BernoulliParams::expected_size).sum::<f64>() / n;
    let conditional = match oracles {
        Some(oracles) => {
            check_len("params", params.len(), "oracles", oracles.len())?;
            let mut total = 0.0;
            for (b, p) in params.iter().zip(oracles) {
                total += b.expected_coverage(p)?;
            }
            Some(total / n)
        }
        None => None,
    };
    Ok(SummaryMetrics {
        marginal_coverage: marginal,
        set_size: size,
        conditional_coverage: conditional,
        n: params.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStat {
    pub count: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCoverage {
    pub worst: f64,
    pub per_group: BTreeMap<usize, GroupStat>,
}

/// Per-group mean true-label inclusion and its minimum over groups.
pub fn groupwise_worst_coverage(
    params: &[BernoulliParams],
    labels: &[usize],
    group_ids: &[usize],
) -> Result<GroupCoverage> {
    check_labels(params, labels)?;
    check_len("params", params.len(), "group ids", group_ids.len())?;
    if params.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    let mut sums: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for ((b, &y), &g) in params.iter().zip(labels).zip(group_ids) {
        let entry = sums.entry(g).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += b.get(y);
    }
    let per_group: BTreeMap<usize, GroupStat> = sums
        .into_iter()
        .map(|(g, (count, total))| {
            (
                g,
                GroupStat {
                    count,
                    coverage: total / count as f64,
                },
            )
        })
        .collect();
    let worst = per_group.values().map(|s| s.coverage).fold(f64::INFINITY, f64::min);
    Ok(GroupCoverage { worst, per_group })
}

/// Size-stratified groups: expected set size rounded half-up.
pub fn ssc_groups(params: &[BernoulliParams]) -> Vec<usize> {
    params
        .iter()
        .map(|b| (b.expected_size() + 0.5).floor() as usize)
        .collect()
}

/// Equal-frequency bins over epistemic uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EuscBins {
    pub group_ids: Vec<usize>,
    pub n_bins: usize,
    /// Fewer records than requested bins; the bin count was reduced.
    pub collapsed: bool,
}

/// Ranks records by EU (ties by index) and cuts the ranking into `n_bins`
/// bins of (nearly) equal size.
pub fn eusc_groups(eu_values: &[f64], n_bins: usize) -> Result<EuscBins> {
    if n_bins == 0 {
        return Err(Error::OutOfRange {
            name: "bin count",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let n = eu_values.len();
    if n == 0 {
        return Err(Error::Empty("uncertainty list"));
    }
    let collapsed = n < n_bins;
    let bins = n_bins.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eu_values[a].total_cmp(&eu_values[b]));
    let mut group_ids = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        group_ids[i] = rank * bins / n;
    }
    Ok(EuscBins {
        group_ids,
        n_bins: bins,
        collapsed,
    })
}

/// How the uncertainty heatmap places its bin edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinRule {
    #[default]
    EqualWidth,
    EqualCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub au_bin: usize,
    pub eu_bin: usize,
    pub count: usize,
    /// `None` for empty cells.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub n_bins: usize,
    pub au_edges: Vec<f64>,
    pub eu_edges: Vec<f64>,
    /// Row-major over `(au_bin, eu_bin)`.
    pub cells: Vec<HeatmapCell>,
}

impl Heatmap {
    pub fn nonempty(&self) -> impl Iterator<Item = &HeatmapCell> {
        self.cells.iter().filter(|c| c.count > 0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("au_bin,eu_bin,au_lo,au_hi,eu_lo,eu_hi,count,coverage\n");
        for c in &self.cells {
            let cov = c.coverage.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.au_bin,
                c.eu_bin,
                self.au_edges[c.au_bin],
                self.au_edges[c.au_bin + 1],
                self.eu_edges[c.eu_bin],
                self.eu_edges[c.eu_bin + 1],
                c.count,
                cov
            ));
        }
        out
    }
}

fn bin_edges(values: &[f64], n_bins: usize, rule: BinRule) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match rule {
        BinRule::EqualWidth => (0..=n_bins)
            .map(|i| if i == n_bins { hi } else { lo + (hi - lo) * i as f64 / n_bins as f64 })
            .collect(),
        BinRule::EqualCount => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            (0..=n_bins)
                .map(|i| if i == n_bins { hi } else { sorted[i * n / n_bins] })
                .collect()
        }
    }
}

fn locate(edges: &[f64], value: f64) -> usize {
    let n_bins = edges.len() - 1;
    // last bin is closed on the right
    let pos = edges[1..n_bins].partition_point(|&e| e <= value);
    pos.min(n_bins - 1)
}

/// Two-dimensional histogram over (AU, EU) with per-cell mean true-label
/// inclusion.
pub fn au_eu_heatmap(
    triples: &[UncertaintyTriple],
    params: &[BernoulliParams],
    labels: &[usize],
    n_bins: usize,
    rule: BinRule,
) -> Result<Heatmap> {
    check_labels(params, labels)?;
    check_len("params", params.len(), "uncertainties", triples.len())?;
    if n_bins == 0 {
        return Err(Error::OutOfRange {
            name: "bin count",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    if triples.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    let au: Vec<f64> = triples.iter().map(|t| t.aleatoric).collect();
    let eu: Vec<f64> = triples.iter().map(|t| t.epistemic).collect();
    let au_edges = bin_edges(&au, n_bins, rule);
    let eu_edges = bin_edges(&eu, n_bins, rule);

    let mut counts = vec![(0usize, 0.0f64); n_bins * n_bins];
    for i in 0..triples.len() {
        let cell = locate(&au_edges, au[i]) * n_bins + locate(&eu_edges, eu[i]);
        counts[cell].0 += 1;
        counts[cell].1 += params[i].get(labels[i]);
    }
    let cells = counts
        .into_iter()
        .enumerate()
        .map(|(idx, (count, total))| HeatmapCell {
            au_bin: idx / n_bins,
            eu_bin: idx % n_bins,
            count,
            coverage: (count > 0).then(|| total / count as f64),
        })
        .collect();
    Ok(Heatmap {
        n_bins,
        au_edges,
        eu_edges,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::from_slice(v).unwrap()
    }

    fn b(v: &[f64]) -> BernoulliParams {
        BernoulliParams::new(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        for k in 2..12 {
            assert_eq!(entropy(&ProbabilityVector::uniform(k).unwrap()), 1.0);
            assert_eq!(entropy(&ProbabilityVector::one_hot(k, k - 1).unwrap()), 0.0);
        }
        let h = entropy(&pv(&[0.5, 0.5, 0.0]));
        assert!((h - 2f64.ln() / 3f64.ln()).abs() < 1e-15);
        assert!((h - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn decomposition_examples() {
        let pred = SecondOrderPrediction::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let u = uncertainty_decomposition(&pred);
        assert_eq!((u.total, u.aleatoric, u.epistemic), (1.0, 0.0, 1.0));

        let single = SecondOrderPrediction::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        let u = uncertainty_decomposition(&single);
        assert_eq!(u.epistemic, 0.0);
        assert_eq!(u.total, u.aleatoric);
    }

    #[test]
    fn summary_examples() {
        let params = vec![b(&[1.0, 0.0]), b(&[0.5, 0.5])];
        let s = summary_metrics(&params, &[0, 1], None).unwrap();
        assert!((s.marginal_coverage - 0.75).abs() < 1e-15);
        assert!((s.set_size - 1.0).abs() < 1e-15);
        assert!(s.conditional_coverage.is_none());

        let oracles = vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])];
        let s = summary_metrics(&params, &[0, 1], Some(&oracles)).unwrap();
        assert_eq!(s.conditional_coverage, Some(s.marginal_coverage));

        let full = vec![BernoulliParams::ones(3); 4];
        let s = summary_metrics(&full, &[0, 1, 2, 0], None).unwrap();
        assert_eq!((s.marginal_coverage, s.set_size), (1.0, 3.0));

        assert!(summary_metrics(&params, &[0], None).is_err());
        assert!(summary_metrics(&params, &[0, 5], None).is_err());
    }

    #[test]
    fn groupwise_examples() {
        let params = vec![b(&[1.0, 0.0]), b(&[1.0, 0.0]), b(&[0.5, 0.5]), b(&[0.5, 0.5])];
        let labels = [0, 0, 1, 1];
        let g = groupwise_worst_coverage(&params, &labels, &[0, 0, 1, 1]).unwrap();
        assert_eq!(g.worst, 0.5);
        assert_eq!(g.per_group[&0].coverage, 1.0);

        let one = groupwise_worst_coverage(&params, &labels, &[7; 4]).unwrap();
        let s = summary_metrics(&params, &labels, None).unwrap();
        assert_eq!(one.worst, s.marginal_coverage);
        assert!(groupwise_worst_coverage(&params, &labels, &[0]).is_err());
    }

    #[test]
    fn ssc_rounding() {
        let params = vec![b(&[1.0, 0.2, 0.0]), b(&[0.9, 0.0, 0.0]), b(&[1.0, 1.0, 0.6])];
        assert_eq!(ssc_groups(&params), vec![1, 1, 3]);
        assert_eq!(ssc_groups(&[b(&[1.0, 0.5])]), vec![2]);
        let singles = vec![b(&[1.0, 0.0]), b(&[0.0, 1.0])];
        assert_eq!(ssc_groups(&singles), vec![1, 1]);
    }

    #[test]
    fn eusc_binning() {
        let bins = eusc_groups(&[0.1, 0.2, 0.3, 0.4], 2).unwrap();
        assert_eq!(bins.group_ids, vec![0, 0, 1, 1]);
        assert!(!bins.collapsed);
        assert_eq!(eusc_groups(&[0.3, 0.1, 0.2], 1).unwrap().group_ids, vec![0, 0, 0]);
        assert_eq!(eusc_groups(&[0.5; 4], 2).unwrap().group_ids, vec![0, 0, 1, 1]);
        let few = eusc_groups(&[0.2, 0.1], 10).unwrap();
        assert!(few.collapsed);
        assert_eq!(few.n_bins, 2);
        assert_eq!(few.group_ids, vec![1, 0]);
    }

    #[test]
    fn heatmap_shapes() {
        let t = UncertaintyTriple {
            total: 0.5,
            aleatoric: 0.3,
            epistemic: 0.2,
        };
        let params = vec![b(&[1.0, 0.0]); 3];
        let h = au_eu_heatmap(&[t; 3], &params, &[0, 0, 1], 10, BinRule::EqualWidth).unwrap();
        assert_eq!(h.cells.len(), 100);
        let full: Vec<_> = h.nonempty().collect();
        assert_eq!(full.len(), 1);
        assert!((full[0].coverage.unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let spread: Vec<UncertaintyTriple> = (0..20)
            .map(|i| UncertaintyTriple {
                total: 0.0,
                aleatoric: i as f64 / 19.0,
                epistemic: (19 - i) as f64 / 19.0,
            })
            .collect();
        let params = vec![b(&[1.0, 0.0]); 20];
        let h = au_eu_heatmap(&spread, &params, &[0; 20], 4, BinRule::EqualCount).unwrap();
        assert_eq!(h.nonempty().map(|c| c.count).sum::<usize>(), 20);
        assert!(h.to_csv().lines().count() == 17);
    }
}
