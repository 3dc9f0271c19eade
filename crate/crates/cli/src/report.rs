//! Report types and their file formats.
//!
//! JSON reports carry the settings that produced them in a `config` field.
//! Tables start with the `# config:` line, then a header and tab-separated
//! rows.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use repdiv_core::sim::{gallery_from_report, CoverageReport};
use repdiv_core::{FitResult, Functional, HyperCovariance, IntervalReport, Method};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Estimates of one fit, with standard errors when the information is usable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub shape_hat: f64,
    pub rate_hat: f64,
    pub c_hat: u64,
    pub n0_hat: f64,
    pub observed_c: u64,
    pub loglik: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub shape_at_bound: bool,
    pub rate_at_bound: bool,
    pub n0_capped: bool,
    pub shape_se: Option<f64>,
    pub rate_se: Option<f64>,
}

impl FitSummary {
    pub fn new(fit: &FitResult, covariance: Option<&HyperCovariance>) -> Self {
        let se = |v: f64| (v >= 0.0 && v.is_finite()).then(|| v.sqrt());
        Self {
            shape_hat: fit.prior.shape,
            rate_hat: fit.prior.rate,
            c_hat: fit.c_hat,
            n0_hat: fit.n0_hat,
            observed_c: fit.observed_c,
            loglik: fit.loglik(),
            outer_iterations: fit.loglik_trace.len(),
            converged: fit.converged,
            shape_at_bound: fit.shape_at_bound,
            rate_at_bound: fit.rate_at_bound,
            n0_capped: fit.n0_capped,
            shape_se: covariance.and_then(|c| se(c.j_hat.xx)),
            rate_se: covariance.and_then(|c| se(c.j_hat.yy)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub input: String,
    pub fit: FitSummary,
}

/// Output of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub software_version: String,
    pub config: RunConfig,
    pub fits: Vec<NamedFit>,
}

/// An entropy interval on the negative scale, `-G_E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedInterval {
    pub method: Method,
    pub point_estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl SignedInterval {
    pub fn negated(report: &IntervalReport) -> Self {
        Self {
            method: report.method,
            point_estimate: -report.point_estimate,
            lower: -report.upper,
            upper: -report.lower,
        }
    }
}

/// Intervals of one input (or of the merged replicates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAnalysis {
    pub input: String,
    pub fit: FitSummary,
    pub alpha0_clonality: f64,
    pub alpha0_entropy: f64,
    pub failed_replicates: usize,
    pub intervals: Vec<IntervalReport>,
    pub neg_entropy: Vec<SignedInterval>,
}

impl SampleAnalysis {
    pub fn interval(&self, functional: Functional, method: Method) -> Option<&IntervalReport> {
        self.intervals
            .iter()
            .find(|r| r.functional == functional && r.method == method)
    }
}

/// Output of `ci`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub software_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub analyses: Vec<SampleAnalysis>,
}

/// Writes `config_line`, then `body`, to `path`.
pub fn write_output(path: &Path, config_line: &str, body: &str) -> CliResult<()> {
    let mut text = String::with_capacity(config_line.len() + body.len() + 2);
    text.push_str(config_line);
    text.push('\n');
    text.push_str(body);
    if !body.ends_with('\n') {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Writes `value` as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Reads a JSON report written by [`write_json`].
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Rows `input, rank_fraction, cumulative_read_fraction`.
pub fn curve_table(series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::from("input\trank_fraction\tcumulative_read_fraction\n");
    for (input, points) in series {
        for (x, y) in points {
            writeln!(out, "{input}\t{x}\t{y}").expect("writing to a string");
        }
    }
    out
}

pub fn coverage_table(report: &CoverageReport, methods: &[Method]) -> String {
    let mut out = format!("# failed_simulations: {}\n", report.failed_sims);
    out.push_str("scenario\tfunctional\tmethod\tcoverage\tstd_error\tmean_width\tn\n");
    for cell in report.cells.iter().filter(|c| methods.contains(&c.method)) {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            report.scenario,
            cell.functional.name(),
            cell.method.name(),
            cell.coverage,
            cell.std_error,
            cell.mean_width,
            cell.n
        )
        .expect("writing to a string");
    }
    out
}

pub fn records_table(report: &CoverageReport, methods: &[Method]) -> String {
    let mut out = String::from(
        "sim_index\tobserved_c\tc_hat\tshape_hat\trate_hat\tfunctional\ttruth\tmethod\tlower\tupper\talpha0\tcovered\n",
    );
    for rec in &report.records {
        for iv in rec.intervals.iter().filter(|iv| methods.contains(&iv.method)) {
            let truth = rec.truth(iv.functional);
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                rec.sim_index,
                rec.observed_c,
                rec.c_hat,
                rec.shape_hat,
                rec.rate_hat,
                iv.functional.name(),
                truth,
                iv.method.name(),
                iv.lower,
                iv.upper,
                iv.alpha0,
                u8::from(iv.contains(truth))
            )
            .expect("writing to a string");
        }
    }
    out
}

/// Calibrated clonality intervals ordered by truth.
pub fn gallery_table(report: &CoverageReport) -> String {
    let mut out = String::from("rank\ttruth\tlower\tupper\tcovered\n");
    for (i, e) in gallery_from_report(report).iter().enumerate() {
        let covered = e.lower <= e.truth && e.truth <= e.upper;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            i + 1,
            e.truth,
            e.lower,
            e.upper,
            u8::from(covered)
        )
        .expect("writing to a string");
    }
    out
}
