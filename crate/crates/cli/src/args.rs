//! Command-line flags and their resolution into run configurations.
//!
//! Settings start from the defaults (or from `--config FILE`, a JSON object
//! shaped like the echoed settings) and every flag given overrides them.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_methods, CalibSettings, CoverageConfig, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "repdiv",
    version,
    about = "Clonality and entropy intervals for immune repertoires"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the gamma-Poisson model and write fit.json.
    Fit(RunArgs),
    /// Fit, calibrate and write clonality and entropy intervals to report.json.
    Ci(RunArgs),
    /// Write the cumulative read fraction of the top clones to curve.tsv.
    Curve(RunArgs),
    /// Run a simulated coverage experiment and write coverage.tsv,
    /// records.tsv and intervals.tsv.
    Coverage(CoverageArgs),
}

/// Calibration flags shared by `ci` and `coverage`.
#[derive(Debug, Clone, Default, Args)]
pub struct CalibArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Posterior draws per interval.
    #[arg(long = "B", value_name = "N")]
    pub b_draws: Option<usize>,
    /// Calibration replicates.
    #[arg(long = "R", value_name = "N")]
    pub r_replicates: Option<usize>,
    #[arg(long, value_name = "STEP")]
    pub alpha_grid_step: Option<f64>,
    #[arg(long, value_name = "MAX")]
    pub alpha_grid_max: Option<f64>,
    /// Target coverage of the calibrated interval.
    #[arg(long, value_name = "LEVEL")]
    pub target: Option<f64>,
    /// Comma-separated subset of calibrated,uncalibrated,naive.
    #[arg(long)]
    pub methods: Option<String>,
    /// Draw a fresh hyperparameter pair for every clone instead of one per posterior draw.
    #[arg(long)]
    pub per_clone_hyper: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Count files: one count per line, or clone_id<TAB>count.
    pub inputs: Vec<PathBuf>,
    /// Sum replicate files by clone id and analyse the total.
    #[arg(long)]
    pub merge: bool,
    #[command(flatten)]
    pub calib: CalibArgs,
    /// JSON settings file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CoverageArgs {
    /// Preset scenario name, for example gamma_a0.086_b0.111.
    #[arg(long, value_name = "NAME")]
    pub scenario: Option<String>,
    #[arg(long, value_name = "N")]
    pub n_sims: Option<usize>,
    /// True number of clones per simulated repertoire.
    #[arg(long, value_name = "N")]
    pub c0: Option<usize>,
    #[command(flatten)]
    pub calib: CalibArgs,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

fn read_settings<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl CalibArgs {
    fn apply(&self, seed: &mut u64, calib: &mut CalibSettings) {
        if let Some(s) = self.seed {
            *seed = s;
        }
        if let Some(b) = self.b_draws {
            calib.b_draws = b;
        }
        if let Some(r) = self.r_replicates {
            calib.r_replicates = r;
        }
        if let Some(step) = self.alpha_grid_step {
            calib.alpha_grid_step = step;
        }
        if let Some(max) = self.alpha_grid_max {
            calib.alpha_grid_max = max;
        }
        if let Some(t) = self.target {
            calib.target_coverage = t;
        }
        if self.per_clone_hyper {
            calib.per_clone_hyper = true;
        }
    }

    fn methods(&self) -> CliResult<Option<Vec<repdiv_core::Method>>> {
        self.methods.as_deref().map(parse_methods).transpose()
    }
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_settings(path)?,
            None => RunConfig::default(),
        };
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs.clone();
        }
        if self.merge {
            cfg.merge_replicates = true;
        }
        self.calib.apply(&mut cfg.seed, &mut cfg.calib);
        if let Some(m) = self.calib.methods()? {
            cfg.methods = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl CoverageArgs {
    pub fn resolve(&self) -> CliResult<CoverageConfig> {
        let mut cfg = match (&self.config, &self.scenario) {
            (Some(path), _) => read_settings::<CoverageConfig>(path)?,
            (None, Some(name)) => CoverageConfig::from_preset(name, self.calib.seed.unwrap_or(1))?,
            (None, None) => {
                return Err(CliError::Usage(
                    "coverage needs --scenario NAME or --config FILE".into(),
                ))
            }
        };
        if let (Some(_), Some(name)) = (&self.config, &self.scenario) {
            let preset = CoverageConfig::from_preset(name, cfg.seed)?;
            cfg.scenario = preset.scenario;
            cfg.intensity_model = preset.intensity_model;
        }
        if let Some(n) = self.n_sims {
            cfg.n_sims = n;
        }
        if let Some(c0) = self.c0 {
            cfg.c0 = c0;
        }
        self.calib.apply(&mut cfg.seed, &mut cfg.calib);
        if let Some(m) = self.calib.methods()? {
            cfg.methods = m;
        }
        cfg.to_scenario()?;
        Ok(cfg)
    }
}
