use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use bernoulli_sets::calibrate::DEFAULT_TOL;
use bernoulli_sets_cli::commands::{
    dataset_bytes, depth_bytes, params_bytes, sidecar_path, vertices_bytes, write_output,
};
use bernoulli_sets_cli::{
    cmd_calibrate, cmd_depth, cmd_evaluate, cmd_predict, cmd_synth, cmd_vertices, CliResult, CornerSet, Generator,
    HeatmapBins, Mode, RunConfig, SynthArgs, Threshold,
};
use clap::{Args, Parser, Subcommand};

/// Bernoulli prediction sets for credal predictions.
#[derive(Debug, Parser)]
#[command(name = "bps", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Miscoverage level.
    #[arg(long, global = true, default_value_t = 0.1)]
    alpha: f64,
    /// Set construction; `predict` defaults to the calibration's mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Never use a target below 1 - alpha.
    #[arg(long, global = true)]
    conservative: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Bisection tolerance on the coverage target.
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// EUSC bins and heatmap bins per axis.
    #[arg(long, global = true, default_value_t = 10)]
    bins: usize,
    /// Worker threads for per-record solves.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate the coverage target on labelled predictions.
    Calibrate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 5 when calibration saturates.
        #[arg(long)]
        fail_on_saturation: bool,
    },
    /// Compute inclusion probabilities for every record.
    Predict {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Calibration document written by `calibrate`.
        #[arg(long, conflicts_with = "t")]
        calibration: Option<PathBuf>,
        /// Fixed coverage target.
        #[arg(long)]
        t: Option<f64>,
        /// Also draw one realized set per record using --seed.
        #[arg(long)]
        sample: bool,
    },
    /// Score inclusion probabilities against labels and oracles.
    Evaluate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Heatmap CSV; defaults to `<out stem>.heatmap.csv` next to --out.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = HeatmapBins::EqualWidth)]
        bin_rule: HeatmapBins,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long, value_enum)]
        generator: Generator,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// TV radius (tv).
        #[arg(long, default_value_t = 0.1)]
        d: f64,
        /// Logit noise of the predictions (aps-synth).
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Ensemble members per prediction (aps-synth).
        #[arg(long, default_value_t = 1)]
        members: usize,
        #[arg(long)]
        out: PathBuf,
        /// Center-only predictions (tv); defaults to `<out stem>.centers.jsonl`.
        #[arg(long)]
        centers: Option<PathBuf>,
    },
    /// List the corners of a total-variation ball.
    Vertices {
        /// Center distribution, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long)]
        d: f64,
        #[arg(long, value_enum, default_value_t = CornerSet::Clipped)]
        corners: CornerSet,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo Tukey depth of each oracle within its credal set.
    Depth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        directions: usize,
        /// Use this many random hull points instead of the vertices.
        #[arg(long)]
        hull_samples: Option<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let c = cli.common;
    let cfg = RunConfig {
        alpha: c.alpha,
        mode: c.mode,
        conservative: c.conservative,
        seed: c.seed,
        tol: c.tol,
        bins: c.bins,
        jobs: c.jobs,
    };
    cfg.validate()?;
    let mut diag = io::stderr();
    match cli.command {
        Command::Calibrate {
            input,
            out,
            fail_on_saturation,
        } => {
            let doc = cmd_calibrate(&cfg, &input, &mut diag)?;
            write_output(out.as_deref(), &doc.to_bytes())?;
            doc.check_saturation(fail_on_saturation)
        }
        Command::Predict {
            input,
            out,
            calibration,
            t,
            sample,
        } => {
            let threshold = match (calibration, t) {
                (Some(path), _) => Threshold::Calibration(path),
                (None, Some(t)) => Threshold::Target(t),
                (None, None) => Threshold::Nominal,
            };
            let file = cmd_predict(&cfg, &input, &threshold, sample)?;
            write_output(out.as_deref(), &params_bytes(&file))
        }
        Command::Evaluate {
            params,
            truth,
            out,
            heatmap,
            bin_rule,
        } => {
            let eval = cmd_evaluate(&cfg, &params, &truth, bin_rule, &mut diag)?;
            write_output(out.as_deref(), &eval.metrics_bytes())?;
            match heatmap.or_else(|| out.as_deref().map(|o| sidecar_path(o, "heatmap.csv"))) {
                Some(path) => write_output(Some(&path), eval.heatmap.to_csv().as_bytes()),
                None => Ok(()),
            }
        }
        Command::Synth {
            generator,
            n,
            k,
            d,
            sigma,
            members,
            out,
            centers,
        } => {
            let args = SynthArgs {
                generator,
                n,
                k,
                d,
                sigma,
                members,
            };
            let output = cmd_synth(&cfg, &args, &mut diag)?;
            write_output(Some(&out), &dataset_bytes(&output.dataset))?;
            if let Some(ds) = &output.centers {
                let path = centers.unwrap_or_else(|| sidecar_path(&out, "centers.jsonl"));
                write_output(Some(&path), &dataset_bytes(ds))?;
            }
            Ok(())
        }
        Command::Vertices { p, d, corners, out } => {
            let rows = cmd_vertices(&p, d, corners)?;
            write_output(out.as_deref(), &vertices_bytes(&rows))
        }
        Command::Depth {
            input,
            out,
            directions,
            hull_samples,
        } => {
            let rows = cmd_depth(&cfg, &input, directions, hull_samples, &mut diag)?;
            write_output(out.as_deref(), &depth_bytes(&rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
