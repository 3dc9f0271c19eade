//! The four subcommands. Each validates its configuration, does the work and
//! writes its files under the output directory.

use std::path::{Path, PathBuf};

use repdiv_core::model::cumulative_proportions;
use repdiv_core::numerics::RngStream;
use repdiv_core::sim::run_scenario;
use repdiv_core::{em, hyper_covariance, run_pipeline_stream, CloneCounts, Functional};

use crate::config::{config_line, CoverageConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::input::{merge_replicates, read_count_table};
use crate::report::{
    coverage_table, curve_table, gallery_table, records_table, write_json, write_output, AnalysisReport, FitReport,
    FitSummary, NamedFit, SampleAnalysis, SignedInterval,
};

pub const FIT_FILE: &str = "fit.json";
pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "curve.tsv";
pub const COVERAGE_FILE: &str = "coverage.tsv";
pub const RECORDS_FILE: &str = "records.tsv";
pub const GALLERY_FILE: &str = "intervals.tsv";

/// Label of the merged sample.
pub const MERGED_LABEL: &str = "merged";

/// The samples to analyse: one per input, or one merged sample.
pub fn load_samples(cfg: &RunConfig) -> CliResult<Vec<(String, CloneCounts)>> {
    let tables = cfg
        .inputs
        .iter()
        .map(|p| read_count_table(p))
        .collect::<CliResult<Vec<_>>>()?;
    if cfg.merge_replicates {
        let merged = merge_replicates(&tables)?;
        return Ok(vec![(MERGED_LABEL.to_string(), merged.to_clone_counts()?)]);
    }
    cfg.inputs
        .iter()
        .zip(&tables)
        .map(|(p, t)| Ok((p.display().to_string(), t.to_clone_counts()?)))
        .collect()
}

fn prepare_dir(out_dir: &Path) -> CliResult<()> {
    if out_dir.as_os_str().is_empty() {
        return Err(CliError::Usage("output directory must be non-empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Output(format!("{}: {e}", out_dir.display())))
}

pub fn fit_report(cfg: &RunConfig) -> CliResult<FitReport> {
    cfg.validate()?;
    let fits = load_samples(cfg)?
        .into_iter()
        .map(|(input, counts)| {
            let fit = em::fit(&counts, &cfg.fit)?;
            let covariance = hyper_covariance(&counts, &fit).ok();
            Ok(NamedFit {
                input,
                fit: FitSummary::new(&fit, covariance.as_ref()),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(FitReport {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        fits,
    })
}

pub fn cmd_fit(cfg: &RunConfig, out_dir: &Path) -> CliResult<PathBuf> {
    let report = fit_report(cfg)?;
    prepare_dir(out_dir)?;
    let path = out_dir.join(FIT_FILE);
    write_json(&path, &report)?;
    Ok(path)
}

/// Runs the interval pipeline on every sample. Sample `i` draws from stream
/// `(seed, i)`.
pub fn analysis_report(cfg: &RunConfig) -> CliResult<AnalysisReport> {
    cfg.validate()?;
    let calib = cfg.calib.to_calib_config()?;
    let mut analyses = Vec::new();
    for (i, (input, counts)) in load_samples(cfg)?.into_iter().enumerate() {
        let result = run_pipeline_stream(&counts, &cfg.fit, &calib, RngStream::new(cfg.seed, i as u64))?;
        let intervals: Vec<_> = result
            .reports
            .iter()
            .filter(|r| cfg.methods.contains(&r.method))
            .copied()
            .collect();
        let neg_entropy = intervals
            .iter()
            .filter(|r| r.functional == Functional::Entropy)
            .map(SignedInterval::negated)
            .collect();
        analyses.push(SampleAnalysis {
            input,
            fit: FitSummary::new(&result.fit, Some(&result.covariance)),
            alpha0_clonality: result.calibration.clonality.chosen_alpha0,
            alpha0_entropy: result.calibration.entropy.chosen_alpha0,
            failed_replicates: result.calibration.failed_replicates,
            intervals,
            neg_entropy,
        });
    }
    Ok(AnalysisReport {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        analyses,
    })
}

pub fn cmd_ci(cfg: &RunConfig, out_dir: &Path) -> CliResult<PathBuf> {
    let report = analysis_report(cfg)?;
    prepare_dir(out_dir)?;
    let path = out_dir.join(REPORT_FILE);
    write_json(&path, &report)?;
    Ok(path)
}

pub fn cmd_curve(cfg: &RunConfig, out_dir: &Path) -> CliResult<PathBuf> {
    cfg.validate()?;
    let series: Vec<_> = load_samples(cfg)?
        .into_iter()
        .map(|(input, counts)| (input, cumulative_proportions(&counts)))
        .collect();
    prepare_dir(out_dir)?;
    let path = out_dir.join(CURVE_FILE);
    write_output(&path, &config_line("curve", cfg), &curve_table(&series))?;
    Ok(path)
}

/// Writes the coverage table, the per-simulation records and the interval
/// gallery.
pub fn cmd_coverage(cfg: &CoverageConfig, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let scenario = cfg.to_scenario()?;
    let report = run_scenario(&scenario)?;
    prepare_dir(out_dir)?;
    let echo = config_line("coverage", cfg);
    let files = [
        (COVERAGE_FILE, coverage_table(&report, &cfg.methods)),
        (RECORDS_FILE, records_table(&report, &cfg.methods)),
        (GALLERY_FILE, gallery_table(&report)),
    ];
    let mut paths = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        write_output(&path, &echo, &body)?;
        paths.push(path);
    }
    Ok(paths)
}
