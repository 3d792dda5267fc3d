use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bernoulli_sets::calibrate::{calibrate_with, coverage_ceiling, CalibrationExample, CalibrationOptions};
use bernoulli_sets::credal::{
    estimate_tukey_depth, sample_in_hull, tv_ball_corners, tv_distance, TvBall, VertexRule,
};
use bernoulli_sets::data::{
    gen_aps_synthetic, gen_tv_synthetic, load_params, load_predictions, perturb_logits, write_params,
    write_predictions, Dataset, Meta, ParamsFile, ParamsRow,
};
use bernoulli_sets::metrics::{
    au_eu_heatmap, eusc_groups, groupwise_worst_coverage, ssc_groups, summary_metrics, uncertainty_decomposition,
    BinRule, GroupCoverage, Heatmap,
};
use bernoulli_sets::{method_params, BernoulliParams, ProbabilityVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, CliResult};

/// Conditional coverage below `target - CONDITIONAL_SLACK` counts as a
/// violation.
pub const CONDITIONAL_SLACK: f64 = 1e-9;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(CliError::io(path))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Loads a prediction file and returns it with the SHA-256 of its bytes.
pub fn load_dataset(path: &Path) -> CliResult<(Dataset, String)> {
    let bytes = read_bytes(path)?;
    let ds = load_predictions(bytes.as_slice()).map_err(CliError::core(display(path)))?;
    Ok((ds, sha256_hex(&bytes)))
}

/// Writes `bytes` to `out`, or to stdout when no path is given.
pub fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(CliError::io(path)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(CliError::io("<stdout>"))
        }
    }
}

/// `dir/stem.suffix` next to `path`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("documents serialize");
    out.push(b'\n');
    out
}

fn json_lines<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("rows serialize");
        out.push(b'\n');
    }
    out
}

fn diagnostic(diag: &mut dyn Write, message: std::fmt::Arguments) {
    // a closed diagnostics stream must not fail the run
    let _ = writeln!(diag, "{message}");
}

/// Persisted outcome of `calibrate`, consumed by `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDoc {
    pub mode: Mode,
    pub alpha: f64,
    pub k: usize,
    pub n: usize,
    pub t_star: f64,
    pub t_cp: f64,
    pub conservative: bool,
    pub saturated: bool,
    pub required: usize,
    pub tol: f64,
    pub iterations: usize,
    pub input_sha256: String,
    pub trace: Vec<(f64, f64)>,
}

impl CalibrationDoc {
    pub fn to_bytes(&self) -> Vec<u8> {
        pretty_json(self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = read_bytes(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Invalid(format!("{}: not a calibration document: {e}", path.display())))
    }

    /// Fails with the saturation exit status when `strict` is set.
    pub fn check_saturation(&self, strict: bool) -> CliResult<()> {
        if strict && self.saturated {
            return Err(CliError::Saturated {
                required: self.required,
                n: self.n,
            });
        }
        Ok(())
    }
}

pub fn cmd_calibrate(cfg: &RunConfig, input: &Path, diag: &mut dyn Write) -> CliResult<CalibrationDoc> {
    cfg.validate()?;
    let (ds, digest) = load_dataset(input)?;
    if ds.is_empty() {
        return Err(CliError::Invalid(format!("{}: no records", input.display())));
    }
    let mode = cfg.mode();
    let n = ds.len();
    if mode.is_nominal() {
        let t = cfg.nominal_target();
        return Ok(CalibrationDoc {
            mode,
            alpha: cfg.alpha,
            k: ds.k,
            n,
            t_star: t,
            t_cp: t,
            conservative: cfg.conservative,
            saturated: false,
            required: coverage_ceiling(n, cfg.alpha),
            tol: cfg.tol,
            iterations: 0,
            input_sha256: digest,
            trace: Vec::new(),
        });
    }

    let labels = ds.labels().map_err(CliError::core(display(input)))?;
    let examples = ds
        .records()
        .iter()
        .zip(labels)
        .map(|(r, y)| CalibrationExample::new(r.prediction.clone(), y))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::core(display(input)))?;
    let options = CalibrationOptions {
        tol: cfg.tol,
        method: mode.method(),
    };
    let mut result = cfg
        .in_pool(|| calibrate_with(&examples, cfg.alpha, options))?
        .map_err(CliError::core(display(input)))?;
    if cfg.conservative {
        result = result.with_conservative(cfg.alpha);
    }
    if result.saturated {
        diagnostic(
            diag,
            format_args!(
                "warning: calibration saturated ({} covered labels required, n = {}); t_star = 1 gives full-support sets",
                result.required, result.n
            ),
        );
    }
    Ok(CalibrationDoc {
        mode,
        alpha: cfg.alpha,
        k: ds.k,
        n,
        t_star: result.t_star,
        t_cp: result.t_cp,
        conservative: result.conservative,
        saturated: result.saturated,
        required: result.required,
        tol: cfg.tol,
        iterations: result.iterations,
        input_sha256: digest,
        trace: result.trace,
    })
}

/// Where `predict` takes its coverage target from.
#[derive(Debug, Clone, PartialEq)]
pub enum Threshold {
    Calibration(PathBuf),
    Target(f64),
    /// `1 - alpha`; only valid for the nominal modes.
    Nominal,
}

pub fn cmd_predict(
    cfg: &RunConfig,
    input: &Path,
    threshold: &Threshold,
    sample: bool,
) -> CliResult<ParamsFile> {
    cfg.validate()?;
    let (ds, digest) = load_dataset(input)?;
    let mut meta = Meta::new();
    let (t, mode) = match threshold {
        Threshold::Calibration(path) => {
            let doc = CalibrationDoc::load(path)?;
            if doc.k != ds.k {
                return Err(CliError::Invalid(format!(
                    "label count mismatch: calibration has k = {} but {} has k = {}",
                    doc.k,
                    input.display(),
                    ds.k
                )));
            }
            let mode = match cfg.mode {
                Some(m) if m != doc.mode => {
                    return Err(CliError::Invalid(format!(
                        "mode mismatch: calibration was run with {} but --mode is {}",
                        doc.mode.name(),
                        m.name()
                    )))
                }
                _ => doc.mode,
            };
            meta.insert("calibration_sha256".into(), sha256_hex(&read_bytes(path)?).into());
            (doc.t_star, mode)
        }
        Threshold::Target(t) => {
            if !(0.0..=1.0).contains(t) {
                return Err(CliError::Invalid(format!("--t must lie in [0, 1], got {t}")));
            }
            (*t, cfg.mode())
        }
        Threshold::Nominal => {
            let mode = cfg.mode();
            if !mode.is_nominal() {
                return Err(CliError::Invalid(format!(
                    "mode {} needs --calibration or --t",
                    mode.name()
                )));
            }
            (cfg.nominal_target(), mode)
        }
    };

    let method = mode.method();
    let params: Vec<BernoulliParams> = cfg
        .in_pool(|| {
            ds.records()
                .par_iter()
                .map(|r| method_params(&r.prediction, t, method))
                .collect::<Result<Vec<_>, _>>()
        })?
        .map_err(CliError::core(display(input)))?;

    let mut rng = sample.then(|| ChaCha8Rng::seed_from_u64(cfg.seed));
    let rows = ds
        .records()
        .iter()
        .zip(params)
        .map(|(r, b)| ParamsRow {
            id: r.id.clone(),
            set: rng.as_mut().map(|rng| b.sample(rng)),
            b,
        })
        .collect();

    meta.insert("mode".into(), mode.name().into());
    meta.insert("t".into(), t.into());
    meta.insert("input_sha256".into(), digest.into());
    if sample {
        meta.insert("sample_seed".into(), cfg.seed.into());
    }
    Ok(ParamsFile { k: ds.k, meta, rows })
}

pub fn params_bytes(file: &ParamsFile) -> Vec<u8> {
    let mut out = Vec::new();
    write_params(&mut out, file).expect("writing to memory");
    out
}

pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_predictions(&mut out, ds).expect("writing to memory");
    out
}

/// Heatmap bin placement as exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum HeatmapBins {
    #[default]
    EqualWidth,
    EqualCount,
}

impl From<HeatmapBins> for BinRule {
    fn from(b: HeatmapBins) -> Self {
        match b {
            HeatmapBins::EqualWidth => BinRule::EqualWidth,
            HeatmapBins::EqualCount => BinRule::EqualCount,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Meta,
    pub heatmap: Heatmap,
}

impl Evaluation {
    pub fn metrics_bytes(&self) -> Vec<u8> {
        pretty_json(&self.metrics)
    }
}

fn groups_value(groups: &GroupCoverage) -> Value {
    groups
        .per_group
        .iter()
        .map(|(g, s)| (g.to_string(), json!({ "count": s.count, "coverage": s.coverage })))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    params_path: &Path,
    truth_path: &Path,
    bins: HeatmapBins,
    diag: &mut dyn Write,
) -> CliResult<Evaluation> {
    cfg.validate()?;
    let params_raw = read_bytes(params_path)?;
    let params = load_params(params_raw.as_slice()).map_err(CliError::core(display(params_path)))?;
    let (truth, truth_digest) = load_dataset(truth_path)?;
    if params.k != truth.k {
        return Err(CliError::Invalid(format!(
            "label count mismatch: {} has k = {} but {} has k = {}",
            params_path.display(),
            params.k,
            truth_path.display(),
            truth.k
        )));
    }
    if params.rows.len() != truth.len() {
        return Err(CliError::Invalid(format!(
            "id mismatch: {} records in {} but {} in {}",
            params.rows.len(),
            params_path.display(),
            truth.len(),
            truth_path.display()
        )));
    }
    if params.rows.is_empty() {
        return Err(CliError::Invalid("nothing to evaluate".into()));
    }
    let index: HashMap<&str, usize> = truth.records().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut records = Vec::with_capacity(params.rows.len());
    for row in &params.rows {
        let i = index.get(row.id.as_str()).ok_or_else(|| {
            CliError::Invalid(format!("id mismatch: {} is not in {}", row.id, truth_path.display()))
        })?;
        records.push(&truth.records()[*i]);
    }
    let labels = records
        .iter()
        .map(|r| r.label.ok_or_else(|| CliError::Invalid(format!("record {} has no label", r.id))))
        .collect::<CliResult<Vec<_>>>()?;
    let b: Vec<BernoulliParams> = params.rows.iter().map(|r| r.b.clone()).collect();
    let oracles: Option<Vec<ProbabilityVector>> = records.iter().map(|r| r.oracle.clone()).collect();
    let core_err = || CliError::core(display(truth_path));

    let summary = summary_metrics(&b, &labels, oracles.as_deref()).map_err(core_err())?;
    let triples: Vec<_> = records.iter().map(|r| uncertainty_decomposition(&r.prediction)).collect();
    let ssc = groupwise_worst_coverage(&b, &labels, &ssc_groups(&b)).map_err(core_err())?;
    let eu: Vec<f64> = triples.iter().map(|t| t.epistemic).collect();
    let eusc_bins = eusc_groups(&eu, cfg.bins).map_err(core_err())?;
    if eusc_bins.collapsed {
        diagnostic(
            diag,
            format_args!(
                "warning: {} records for {} EUSC bins; using {} bins",
                eu.len(),
                cfg.bins,
                eusc_bins.n_bins
            ),
        );
    }
    let eusc = groupwise_worst_coverage(&b, &labels, &eusc_bins.group_ids).map_err(core_err())?;
    let heatmap = au_eu_heatmap(&triples, &b, &labels, cfg.bins, bins.into()).map_err(core_err())?;

    let n = b.len() as f64;
    let mut m = Meta::new();
    m.insert("n".into(), b.len().into());
    m.insert("k".into(), params.k.into());
    m.insert("marginal_coverage".into(), summary.marginal_coverage.into());
    m.insert("set_size".into(), summary.set_size.into());
    m.insert("conditional_coverage".into(), summary.conditional_coverage.into());
    let target = params.meta.get("t").and_then(Value::as_f64);
    if let Some(oracles) = &oracles {
        let per_point: Vec<f64> = b
            .iter()
            .zip(oracles)
            .map(|(b, p)| b.expected_coverage(p))
            .collect::<Result<_, _>>()
            .map_err(core_err())?;
        let min = per_point.iter().copied().fold(f64::INFINITY, f64::min);
        m.insert("conditional_min".into(), min.into());
        if let Some(t) = target {
            let below = per_point.iter().filter(|&&c| c < t - CONDITIONAL_SLACK).count();
            m.insert("conditional_violation_fraction".into(), (below as f64 / n).into());
        }
    }
    if let Some(t) = target {
        m.insert("target".into(), t.into());
    }
    if let Some(mode) = params.meta.get("mode") {
        m.insert("mode".into(), mode.clone());
    }
    m.insert("ssc_worst".into(), ssc.worst.into());
    m.insert("ssc_groups".into(), groups_value(&ssc));
    m.insert("eusc_worst".into(), eusc.worst.into());
    m.insert("eusc_bins".into(), eusc_bins.n_bins.into());
    m.insert("eusc_collapsed".into(), eusc_bins.collapsed.into());
    m.insert("eusc_groups".into(), groups_value(&eusc));
    m.insert(
        "aleatoric_mean".into(),
        (triples.iter().map(|t| t.aleatoric).sum::<f64>() / n).into(),
    );
    m.insert("epistemic_mean".into(), (eu.iter().sum::<f64>() / n).into());
    m.insert("heatmap_bins".into(), cfg.bins.into());
    m.insert(
        "heatmap_rule".into(),
        serde_json::to_value(BinRule::from(bins)).expect("enum serializes"),
    );
    m.insert("heatmap_nonempty".into(), heatmap.nonempty().count().into());
    m.insert("params_sha256".into(), sha256_hex(&params_raw).into());
    m.insert("truth_sha256".into(), truth_digest.into());
    Ok(Evaluation { metrics: m, heatmap })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Generator {
    /// Dirichlet centers with total-variation balls as credal sets.
    Tv,
    /// Stratified softmax-logit classification data.
    ApsSynth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub generator: Generator,
    pub n: Option<usize>,
    pub k: Option<usize>,
    /// TV radius for `tv`.
    pub d: f64,
    /// Logit noise for `aps-synth` predictions; 0 keeps the oracle.
    pub sigma: f64,
    /// Ensemble members per `aps-synth` prediction.
    pub members: usize,
}

impl Default for SynthArgs {
    fn default() -> Self {
        Self {
            generator: Generator::Tv,
            n: None,
            k: None,
            d: 0.1,
            sigma: 0.0,
            members: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Center-only predictions for `tv`.
    pub centers: Option<Dataset>,
}

pub fn cmd_synth(cfg: &RunConfig, args: &SynthArgs, diag: &mut dyn Write) -> CliResult<SynthOutput> {
    let ctx = "synth";
    match args.generator {
        Generator::Tv => {
            let (dataset, centers) = gen_tv_synthetic(args.n.unwrap_or(1000), args.k.unwrap_or(3), args.d, cfg.seed)
                .map_err(CliError::core(ctx))?;
            Ok(SynthOutput {
                dataset,
                centers: Some(centers),
            })
        }
        Generator::ApsSynth => {
            let mut dataset =
                gen_aps_synthetic(args.n.unwrap_or(4000), args.k.unwrap_or(10), cfg.seed).map_err(CliError::core(ctx))?;
            diagnostic(
                diag,
                format_args!("note: oracle probabilities use softmax(beta^T x) in place of z_j / sum z"),
            );
            if args.sigma > 0.0 || args.members > 1 {
                dataset = perturb_logits(&dataset, args.sigma, args.members, cfg.seed.wrapping_add(1))
                    .map_err(CliError::core(ctx))?;
            }
            Ok(SynthOutput {
                dataset,
                centers: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexRow {
    pub pair: Option<(usize, usize)>,
    pub vertex: ProbabilityVector,
    pub eta: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum CornerSet {
    /// The `K(K-1)` clipped corners.
    #[default]
    Clipped,
    /// Clipped corners plus the corners created by clipping.
    Exact,
}

pub fn cmd_vertices(p: &[f64], d: f64, corners: CornerSet) -> CliResult<Vec<VertexRow>> {
    if !(d > 0.0 && d < 1.0) {
        return Err(CliError::Invalid(format!("--d must lie in (0, 1), got {d}")));
    }
    let ctx = "vertices";
    let center = ProbabilityVector::from_slice(p).map_err(CliError::core(ctx))?;
    let ball = TvBall::new(center.clone(), d).map_err(CliError::core(ctx))?;
    let rule = match corners {
        CornerSet::Clipped => VertexRule::Clipped,
        CornerSet::Exact => VertexRule::Exact,
    };
    tv_ball_corners(&ball, rule)
        .map_err(CliError::core(ctx))?
        .into_iter()
        .map(|c| {
            let tv = tv_distance(&center, &c.point).map_err(CliError::core(ctx))?;
            Ok(VertexRow {
                pair: c.pair,
                vertex: c.point,
                eta: c.eta,
                tv,
            })
        })
        .collect()
}

pub fn vertices_bytes(rows: &[VertexRow]) -> Vec<u8> {
    json_lines(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthRow {
    pub id: String,
    pub depth: f64,
    pub samples: usize,
}

/// Tukey depth of each record's oracle among its vertices, or among
/// `hull_samples` random points of its credal set.
pub fn cmd_depth(
    cfg: &RunConfig,
    input: &Path,
    directions: usize,
    hull_samples: Option<usize>,
    diag: &mut dyn Write,
) -> CliResult<Vec<DepthRow>> {
    let (ds, _) = load_dataset(input)?;
    if hull_samples == Some(0) {
        return Err(CliError::Invalid("--hull-samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut skipped = 0;
    for r in ds.records() {
        let Some(oracle) = &r.oracle else {
            skipped += 1;
            continue;
        };
        let samples: Vec<ProbabilityVector> = match hull_samples {
            Some(s) => (0..s).map(|_| sample_in_hull(&r.prediction, &mut rng)).collect(),
            None => r.prediction.to_vec(),
        };
        let depth = estimate_tukey_depth(oracle, &samples, directions, &mut rng).map_err(CliError::core(display(input)))?;
        rows.push(DepthRow {
            id: r.id.clone(),
            depth,
            samples: samples.len(),
        });
    }
    if rows.is_empty() {
        return Err(CliError::Invalid(format!("{}: no record has an oracle", input.display())));
    }
    if skipped > 0 {
        diagnostic(diag, format_args!("warning: skipped {skipped} records without an oracle"));
    }
    Ok(rows)
}

pub fn depth_bytes(rows: &[DepthRow]) -> Vec<u8> {
    json_lines(rows)
}
