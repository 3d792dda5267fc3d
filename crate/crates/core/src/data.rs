//! Prediction files, parameter files, splitting and synthetic generators.
//!
//! Prediction files are JSON lines. The first line is a header, every other
//! nonblank line is one record:
//!
//! ```text
//! {"k": 3, "meta": {"source": "tv", "seed": 0}}
//! {"id": "a", "preds": [[0.5, 0.2, 0.3], [0.6, 0.1, 0.3]], "label": 0, "oracle": [0.55, 0.15, 0.3]}
//! ```
//!
//! `label`, `oracle`, `group` (an integer stratum) and `x` (a feature vector)
//! are optional. Parameter files share the header and carry
//! `{"id": ..., "b": [...]}` lines, optionally with a sampled `"set"`.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::credal::{flat_dirichlet, sample_in_hull, tv_ball_vertices, TvBall};
use crate::dist::{BernoulliParams, LabelSet, ProbabilityVector, SecondOrderPrediction};
use crate::error::{Error, Result};

pub type Meta = BTreeMap<String, Value>;

/// One instance: its credal prediction and whatever ground truth is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(rename = "preds")]
    pub prediction: SecondOrderPrediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<ProbabilityVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    #[serde(default, rename = "x", skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl DatasetRecord {
    pub fn new(id: impl Into<String>, prediction: SecondOrderPrediction) -> Self {
        Self {
            id: id.into(),
            prediction,
            label: None,
            oracle: None,
            group: None,
            features: None,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.prediction.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.prediction.k(),
            });
        }
        if let Some(label) = self.label {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, k });
            }
        }
        if let Some(oracle) = &self.oracle {
            if oracle.k() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: oracle.k(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    k: usize,
    #[serde(default)]
    meta: Meta,
}

/// Records sharing one label count `k`, with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub meta: Meta,
    records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn new(k: usize, meta: Meta, records: Vec<DatasetRecord>) -> Result<Self> {
        if k < 2 {
            return Err(Error::DimensionTooSmall(k));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate(k)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { k, meta, records })
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All labels, failing on the first record without one.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| r.label.ok_or_else(|| Error::MissingLabel(r.id.clone())))
            .collect()
    }

    /// All oracles, or `None` if any record lacks one.
    pub fn oracles(&self) -> Option<Vec<ProbabilityVector>> {
        self.records.iter().map(|r| r.oracle.clone()).collect()
    }

    /// Replaces every prediction with the vertex mean.
    pub fn with_mean_predictions(&self) -> Dataset {
        let records = self
            .records
            .iter()
            .map(|r| DatasetRecord {
                prediction: SecondOrderPrediction::single(r.prediction.mean()),
                ..r.clone()
            })
            .collect();
        Dataset {
            k: self.k,
            meta: self.meta.clone(),
            records,
        }
    }
}

fn parse_error(line: usize, err: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: err.to_string(),
    }
}

/// Nonblank lines with their 1-based line numbers.
fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| line.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn read_header<I: Iterator<Item = Result<(usize, String)>>>(lines: &mut I) -> Result<Header> {
    let (line, text) = lines.next().ok_or_else(|| parse_error(1, "missing header line"))??;
    let header: Header = serde_json::from_str(&text).map_err(|e| parse_error(line, e))?;
    if header.k < 2 {
        return Err(parse_error(line, Error::DimensionTooSmall(header.k)));
    }
    Ok(header)
}

/// Reads a prediction file, validating every row as it streams in.
pub fn load_predictions<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = numbered_lines(reader);
    let header = read_header(&mut lines)?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for item in lines {
        let (line, text) = item?;
        let record: DatasetRecord = serde_json::from_str(&text).map_err(|e| parse_error(line, e))?;
        record.validate(header.k).map_err(|e| parse_error(line, e))?;
        if !seen.insert(record.id.clone()) {
            return Err(parse_error(line, Error::DuplicateId(record.id)));
        }
        records.push(record);
    }
    Ok(Dataset {
        k: header.k,
        meta: header.meta,
        records,
    })
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_predictions<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    write_line(
        &mut w,
        &Header {
            k: ds.k,
            meta: ds.meta.clone(),
        },
    )?;
    for r in &ds.records {
        write_line(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

/// One line of a parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRow {
    pub id: String,
    pub b: BernoulliParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<LabelSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsFile {
    pub k: usize,
    pub meta: Meta,
    pub rows: Vec<ParamsRow>,
}

pub fn write_params<W: Write>(mut w: W, file: &ParamsFile) -> Result<()> {
    write_line(
        &mut w,
        &Header {
            k: file.k,
            meta: file.meta.clone(),
        },
    )?;
    for row in &file.rows {
        write_line(&mut w, row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_params<R: BufRead>(reader: R) -> Result<ParamsFile> {
    let mut lines = numbered_lines(reader);
    let header = read_header(&mut lines)?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for item in lines {
        let (line, text) = item?;
        let row: ParamsRow = serde_json::from_str(&text).map_err(|e| parse_error(line, e))?;
        if row.b.k() != header.k {
            return Err(parse_error(
                line,
                Error::DimensionMismatch {
                    expected: header.k,
                    found: row.b.k(),
                },
            ));
        }
        if !seen.insert(row.id.clone()) {
            return Err(parse_error(line, Error::DuplicateId(row.id)));
        }
        rows.push(row);
    }
    Ok(ParamsFile {
        k: header.k,
        meta: header.meta,
        rows,
    })
}

/// Writes a flat metrics document as pretty-printed JSON.
pub fn write_metrics<W: Write>(mut w: W, metrics: &Meta) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, metrics).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Seeded shuffle followed by a contiguous partition with the given
/// fractions. Part boundaries are `round(n * cumulative fraction)`.
pub fn split(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if fractions.is_empty() {
        return Err(Error::Empty("fraction list"));
    }
    if let Some(&bad) = fractions.iter().find(|&&f| f.is_nan() || f <= 0.0) {
        return Err(Error::OutOfRange {
            name: "split fraction",
            value: bad,
            range: "(0, 1]",
        });
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized { sum: total, tol: 1e-9 });
    }

    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (idx, &f) in fractions.iter().enumerate() {
        cum += f;
        let end = if idx + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).clamp(start, n)
        };
        let records = order[start..end].iter().map(|&i| ds.records[i].clone()).collect();
        let mut meta = ds.meta.clone();
        meta.insert("split_part".into(), idx.into());
        meta.insert("split_seed".into(), seed.into());
        parts.push(Dataset {
            k: ds.k,
            meta,
            records,
        });
        start = end;
    }
    Ok(parts)
}

/// Synthetic credal data with valid credal sets: `n` Dirichlet(1) centers,
/// each surrounded by a TV ball of radius `d` whose corners form the
/// prediction. The oracle is a random point of the ball and the label is
/// drawn from the oracle.
///
/// Returns the credal dataset and a companion dataset whose predictions are
/// the centers alone.
pub fn gen_tv_synthetic(n: usize, k: usize, d: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if n == 0 {
        return Err(Error::Empty("requested dataset"));
    }
    if k < 2 {
        return Err(Error::DimensionTooSmall(k));
    }
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::OutOfRange {
            name: "radius",
            value: d,
            range: "(0, 1)",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut credal = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    for i in 0..n {
        let center = ProbabilityVector::new(&flat_dirichlet(k, &mut rng), 1e-9)?;
        let ball = TvBall::new(center.clone(), d)?;
        let vertices = tv_ball_vertices(&ball)?;
        let oracle = sample_in_hull(&vertices, &mut rng);
        let label = oracle.sample_label(&mut rng);
        let id = format!("tv-{i:06}");
        credal.push(DatasetRecord {
            label: Some(label),
            oracle: Some(oracle.clone()),
            ..DatasetRecord::new(id.clone(), vertices)
        });
        centers.push(DatasetRecord {
            label: Some(label),
            oracle: Some(oracle),
            ..DatasetRecord::new(id, SecondOrderPrediction::single(center))
        });
    }
    let mut meta = Meta::new();
    meta.insert("generator".into(), "tv".into());
    meta.insert("n".into(), n.into());
    meta.insert("k".into(), k.into());
    meta.insert("d".into(), d.into());
    meta.insert("seed".into(), seed.into());
    meta.insert("center_law".into(), "dirichlet(1)".into());
    meta.insert("oracle_law".into(), "dirichlet(1) weights over ball corners".into());
    let mut center_meta = meta.clone();
    center_meta.insert("predictions".into(), "centers".into());
    Ok((Dataset::new(k, meta, credal)?, Dataset::new(k, center_meta, centers)?))
}

/// Number of features in the stratified-logit generator.
pub const APS_SYNTH_FEATURES: usize = 10;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Stratified synthetic classification data: `x_1 = 1` with probability
/// 1/20 and `-8` otherwise, `x_2..x_10` standard normal, logits `z = beta^T x`
/// with a standard-normal `10 x k` matrix `beta` drawn once. The oracle is
/// `softmax(z)`; the raw ratio `z_j / sum z` is not a distribution for
/// negative logits.
///
/// Each record's prediction is its oracle; `group` is 1 for the rare stratum
/// `x_1 = 1`, and the features are kept in `x`.
pub fn gen_aps_synthetic(n: usize, k: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("requested dataset"));
    }
    if k < 2 {
        return Err(Error::DimensionTooSmall(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<Vec<f64>> = (0..APS_SYNTH_FEATURES)
        .map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let rare = rng.random::<f64>() < 1.0 / 20.0;
        let mut x = vec![if rare { 1.0 } else { -8.0 }];
        x.extend((1..APS_SYNTH_FEATURES).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let logits: Vec<f64> = (0..k)
            .map(|j| x.iter().zip(&beta).map(|(xf, row)| xf * row[j]).sum())
            .collect();
        let oracle = ProbabilityVector::new(&softmax(&logits), 1e-9)?;
        let label = oracle.sample_label(&mut rng);
        records.push(DatasetRecord {
            label: Some(label),
            oracle: Some(oracle.clone()),
            group: Some(usize::from(rare)),
            features: Some(x),
            ..DatasetRecord::new(format!("aps-{i:06}"), SecondOrderPrediction::single(oracle))
        });
    }
    let mut meta = Meta::new();
    meta.insert("generator".into(), "aps-synth".into());
    meta.insert("n".into(), n.into());
    meta.insert("k".into(), k.into());
    meta.insert("seed".into(), seed.into());
    meta.insert("normalization".into(), "softmax".into());
    meta.insert(
        "beta".into(),
        serde_json::to_value(&beta).map_err(std::io::Error::from)?,
    );
    Dataset::new(k, meta, records)
}

/// Replaces each prediction by `members` noisy copies of its oracle: log
/// probabilities plus independent `N(0, sigma^2)` noise, mapped back through
/// the softmax. Imitates an imperfect ensemble; records without an oracle
/// keep their prediction.
pub fn perturb_logits(ds: &Dataset, sigma: f64, members: usize, seed: u64) -> Result<Dataset> {
    if members == 0 {
        return Err(Error::Empty("ensemble"));
    }
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::OutOfRange {
            name: "sigma",
            value: sigma,
            range: "[0, inf)",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(ds.len());
    for r in ds.records() {
        let Some(oracle) = &r.oracle else {
            records.push(r.clone());
            continue;
        };
        let base: Vec<f64> = oracle.iter().map(|p| p.max(1e-300).ln()).collect();
        let vertices = (0..members)
            .map(|_| {
                let noisy: Vec<f64> = base
                    .iter()
                    .map(|z| z + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                ProbabilityVector::new(&softmax(&noisy), 1e-9)
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(DatasetRecord {
            prediction: SecondOrderPrediction::new(vertices)?,
            ..r.clone()
        });
    }
    let mut meta = ds.meta.clone();
    meta.insert("perturb_sigma".into(), sigma.into());
    meta.insert("perturb_members".into(), members.into());
    meta.insert("perturb_seed".into(), seed.into());
    Dataset::new(ds.k, meta, records)
}
