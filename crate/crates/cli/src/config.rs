use bernoulli_sets::calibrate::DEFAULT_TOL;
use bernoulli_sets::Method;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Set construction and how its target is chosen. The `-nom` variants skip
/// calibration and use the nominal target `1 - alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Bps,
    Aps,
    BpsNom,
    ApsNom,
}

impl Mode {
    pub fn method(self) -> Method {
        match self {
            Mode::Bps | Mode::BpsNom => Method::Bps,
            Mode::Aps | Mode::ApsNom => Method::Aps,
        }
    }

    pub fn is_nominal(self) -> bool {
        matches!(self, Mode::BpsNom | Mode::ApsNom)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Bps => "bps",
            Mode::Aps => "aps",
            Mode::BpsNom => "bps-nom",
            Mode::ApsNom => "aps-nom",
        }
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    /// `None` lets `predict` inherit the mode of its calibration document.
    pub mode: Option<Mode>,
    pub conservative: bool,
    pub seed: u64,
    pub tol: f64,
    pub bins: usize,
    /// Worker threads for per-record solves; `None` uses all cores.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            mode: None,
            conservative: false,
            seed: 0,
            tol: DEFAULT_TOL,
            bins: 10,
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Invalid(format!("--alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(CliError::Invalid(format!("--tol must be positive, got {}", self.tol)));
        }
        if self.bins == 0 {
            return Err(CliError::Invalid("--bins must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Invalid("--jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Bps)
    }

    pub fn nominal_target(&self) -> f64 {
        1.0 - self.alpha
    }

    /// Runs `f` on a rayon pool sized by `jobs`.
    pub(crate) fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> CliResult<T> {
        match self.jobs {
            None => Ok(f()),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|pool| pool.install(f))
                .map_err(|e| CliError::Invalid(format!("cannot start {n} worker threads: {e}"))),
        }
    }
}
