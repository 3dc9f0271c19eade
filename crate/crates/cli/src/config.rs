//! Run configuration and the config echo written into every output file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use repdiv_core::calibration::alpha_grid;
use repdiv_core::sim::{preset_scenario, IntensityModel, Scenario};
use repdiv_core::{CalibConfig, FitConfig, Method};

use crate::error::{CliError, CliResult};

/// Calibration settings in the form they are given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSettings {
    pub r_replicates: usize,
    pub b_draws: usize,
    pub target_coverage: f64,
    pub alpha_grid_step: f64,
    pub alpha_grid_max: f64,
    pub per_clone_hyper: bool,
}

impl Default for CalibSettings {
    fn default() -> Self {
        let c = CalibConfig::default();
        Self {
            r_replicates: c.r_replicates,
            b_draws: c.b_draws,
            target_coverage: c.target_coverage,
            alpha_grid_step: 0.002,
            alpha_grid_max: 0.5,
            per_clone_hyper: c.per_clone_hyper,
        }
    }
}

impl CalibSettings {
    pub fn to_calib_config(&self) -> CliResult<CalibConfig> {
        if !(self.alpha_grid_step > 0.0 && self.alpha_grid_step < 1.0) {
            return Err(CliError::Usage(format!(
                "alpha grid step must lie in (0, 1), got {}",
                self.alpha_grid_step
            )));
        }
        if !(self.alpha_grid_max >= self.alpha_grid_step && self.alpha_grid_max < 1.0) {
            return Err(CliError::Usage(format!(
                "alpha grid maximum must lie in [step, 1), got {}",
                self.alpha_grid_max
            )));
        }
        let cfg = CalibConfig {
            r_replicates: self.r_replicates,
            b_draws: self.b_draws,
            target_coverage: self.target_coverage,
            alpha_grid: alpha_grid(self.alpha_grid_step, self.alpha_grid_max),
            per_clone_hyper: self.per_clone_hyper,
            ..CalibConfig::default()
        };
        cfg.validate().map_err(CliError::config)?;
        Ok(cfg)
    }
}

/// Settings of `fit`, `ci` and `curve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub fit: FitConfig,
    pub calib: CalibSettings,
    pub methods: Vec<Method>,
    pub merge_replicates: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            seed: 1,
            fit: FitConfig::default(),
            calib: CalibSettings::default(),
            methods: Method::ALL.to_vec(),
            merge_replicates: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.inputs.is_empty() {
            return Err(CliError::Usage("at least one input file is required".into()));
        }
        if self.inputs.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(CliError::Usage("input paths must be non-empty".into()));
        }
        validate_methods(&self.methods)?;
        self.fit.validate().map_err(CliError::config)?;
        self.calib.to_calib_config().map(|_| ())
    }
}

/// Settings of `coverage`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub scenario: String,
    pub intensity_model: IntensityModel,
    pub c0: usize,
    pub n_sims: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub calib: CalibSettings,
    pub methods: Vec<Method>,
}

impl CoverageConfig {
    /// Starts from a preset scenario at desk scale.
    pub fn from_preset(name: &str, seed: u64) -> CliResult<Self> {
        let preset = preset_scenario(name, seed).ok_or_else(|| {
            let names: Vec<String> = repdiv_core::sim::preset_scenarios(seed)
                .into_iter()
                .map(|s| s.name)
                .collect();
            CliError::Usage(format!(
                "unknown scenario '{name}'; known scenarios: {}",
                names.join(", ")
            ))
        })?;
        Ok(Self {
            scenario: preset.name,
            intensity_model: preset.intensity_model,
            c0: preset.c0,
            n_sims: preset.n_sims,
            seed,
            fit: preset.fit,
            calib: CalibSettings {
                r_replicates: preset.calib.r_replicates,
                b_draws: preset.calib.b_draws,
                ..CalibSettings::default()
            },
            methods: Method::ALL.to_vec(),
        })
    }

    pub fn to_scenario(&self) -> CliResult<Scenario> {
        validate_methods(&self.methods)?;
        let scenario = Scenario {
            name: self.scenario.clone(),
            intensity_model: self.intensity_model,
            c0: self.c0,
            n_sims: self.n_sims,
            calib: self.calib.to_calib_config()?,
            fit: self.fit.clone(),
            seed: self.seed,
        };
        scenario.validate().map_err(CliError::config)?;
        Ok(scenario)
    }
}

fn validate_methods(methods: &[Method]) -> CliResult<()> {
    if methods.is_empty() {
        return Err(CliError::Usage("at least one method is required".into()));
    }
    let mut sorted = methods.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != methods.len() {
        return Err(CliError::Usage("methods must not repeat".into()));
    }
    Ok(())
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> CliResult<Vec<Method>> {
    list.split(',')
        .map(|m| m.trim().parse::<Method>().map_err(CliError::config))
        .collect()
}

/// The `# config:` line: the command name and its settings as compact JSON.
pub fn config_line<T: Serialize>(command: &str, settings: &T) -> String {
    #[derive(Serialize)]
    struct Echo<'a, T> {
        command: &'a str,
        version: &'a str,
        settings: &'a T,
    }
    let json = serde_json::to_string(&Echo {
        command,
        version: env!("CARGO_PKG_VERSION"),
        settings,
    })
    .expect("settings serialize");
    format!("# config: {json}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_once_inputs_are_given() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.inputs.push("a.tsv".into());
        cfg.validate().unwrap();
        assert_eq!(cfg.calib.to_calib_config().unwrap(), CalibConfig::default());
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut cfg = RunConfig {
            inputs: vec!["a".into()],
            ..RunConfig::default()
        };
        cfg.calib.target_coverage = 1.5;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.calib.target_coverage = 0.95;
        cfg.calib.alpha_grid_step = 0.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.calib.alpha_grid_step = 0.002;
        cfg.methods = vec![Method::Naive, Method::Naive];
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn methods_parse() {
        assert_eq!(
            parse_methods("naive, calibrated").unwrap(),
            vec![Method::Naive, Method::Calibrated]
        );
        assert!(parse_methods("bayes").is_err());
    }

    #[test]
    fn presets_resolve() {
        let cfg = CoverageConfig::from_preset("gamma_a0.086_b0.111", 3).unwrap();
        let s = cfg.to_scenario().unwrap();
        assert_eq!(
            (s.c0, s.n_sims, s.calib.r_replicates, s.calib.b_draws),
            (2000, 100, 100, 200)
        );
        assert_eq!(CoverageConfig::from_preset("nope", 3).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn config_line_is_one_json_comment() {
        let line = config_line("ci", &RunConfig::default());
        assert!(line.starts_with("# config: {"));
        assert!(!line.contains('\n'));
        let json: serde_json::Value = serde_json::from_str(&line["# config: ".len()..]).unwrap();
        assert_eq!(json["command"], "ci");
    }
}
