//! Coverage experiments: repeated data generation from a known intensity
//! model, the full interval pipeline on each dataset, and tabulation of how
//! often each method's interval covers the truth.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{run_pipeline_stream, CalibConfig, IntervalReport, Method};
use crate::em::FitConfig;
use crate::error::{Error, Result};
use crate::model::{functionals_unchecked, CloneCounts, Functional};
use crate::numerics::{poisson_unchecked, standard_gamma, standard_normal, RngStream};
use crate::par;

const MIN_POSITIVE_COUNTS: usize = 10;
const MAX_FAILED_FRACTION: f64 = 0.05;

/// Law of the true clone intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum IntensityModel {
    Gamma {
        shape: f64,
        rate: f64,
    },
    /// `exp(N(mu, sigma_sq))`.
    LogNormal {
        mu: f64,
        sigma_sq: f64,
    },
}

impl IntensityModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            IntensityModel::Gamma { shape, rate } => shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite(),
            IntensityModel::LogNormal { mu, sigma_sq } => mu.is_finite() && sigma_sq > 0.0 && sigma_sq.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid intensity model {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = match *self {
            IntensityModel::Gamma { shape, rate } => standard_gamma(shape, rng) / rate,
            IntensityModel::LogNormal { mu, sigma_sq } => (mu + sigma_sq.sqrt() * standard_normal(rng)).exp(),
        };
        x.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub intensity_model: IntensityModel,
    pub c0: usize,
    pub n_sims: usize,
    pub calib: CalibConfig,
    #[serde(default)]
    pub fit: FitConfig,
    pub seed: u64,
}

impl Scenario {
    /// Desk-scale settings: `C0 = 2000`, 100 simulations, `R = 100`, `B = 200`.
    pub fn desk(name: impl Into<String>, intensity_model: IntensityModel, seed: u64) -> Self {
        Self {
            name: name.into(),
            intensity_model,
            c0: 2000,
            n_sims: 100,
            calib: CalibConfig {
                r_replicates: 100,
                b_draws: 200,
                ..CalibConfig::default()
            },
            fit: FitConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intensity_model.validate()?;
        if self.c0 < 2 {
            return Err(Error::domain("c0 must be at least 2"));
        }
        if self.n_sims < 10 {
            return Err(Error::domain(format!(
                "a scenario needs at least 10 simulations, got {}",
                self.n_sims
            )));
        }
        self.calib.validate()?;
        self.fit.validate()
    }

    fn sim_stream(&self, sim_index: u64) -> RngStream {
        RngStream::new(self.seed, 0).child(sim_index)
    }
}

/// The built-in scenarios: eight Gamma-true and four log-normal designs at desk scale.
pub fn preset_scenarios(seed: u64) -> Vec<Scenario> {
    const GAMMA: [(f64, f64); 8] = [
        (0.732, 0.882),
        (0.414, 0.335),
        (0.596, 0.960),
        (0.551, 0.775),
        (0.171, 0.301),
        (0.126, 0.132),
        (0.0860, 0.111),
        (0.113, 0.142),
    ];
    const LOGNORMAL: [(f64, f64); 4] = [(-1.38, 1.64), (-1.27, 1.72), (-1.22, 1.50), (-1.02, 1.62)];
    let gamma = GAMMA.iter().map(|&(shape, rate)| {
        Scenario::desk(
            format!("gamma_a{shape}_b{rate}"),
            IntensityModel::Gamma { shape, rate },
            seed,
        )
    });
    let lognormal = LOGNORMAL.iter().map(|&(mu, sd)| {
        Scenario::desk(
            format!("lognormal_mu{mu}_sd{sd}"),
            IntensityModel::LogNormal { mu, sigma_sq: sd * sd },
            seed,
        )
    });
    gamma.chain(lognormal).collect()
}

pub fn preset_scenario(name: &str, seed: u64) -> Option<Scenario> {
    preset_scenarios(seed).into_iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub truth_clonality: f64,
    pub truth_entropy: f64,
    pub counts: CloneCounts,
}

/// Dataset `sim_index` of the scenario; regenerated once if it has fewer
/// than ten observed clones.
pub fn generate_dataset(scenario: &Scenario, sim_index: u64) -> Result<SimulatedDataset> {
    scenario.intensity_model.validate()?;
    let stream = scenario.sim_stream(sim_index).child(0);
    let mut lam = Vec::with_capacity(scenario.c0);
    for attempt in 0..2 {
        let mut rng = stream.child(attempt).rng();
        lam.clear();
        lam.extend((0..scenario.c0).map(|_| scenario.intensity_model.sample(&mut rng)));
        let counts: Vec<u64> = lam
            .iter()
            .map(|&l| poisson_unchecked(l, &mut rng))
            .filter(|&z| z > 0)
            .collect();
        if counts.len() >= MIN_POSITIVE_COUNTS {
            let (truth_clonality, truth_entropy) = functionals_unchecked(&lam);
            return Ok(SimulatedDataset {
                truth_clonality,
                truth_entropy,
                counts: CloneCounts::new(counts)?,
            });
        }
    }
    Err(Error::DegenerateReplicate(format!(
        "simulation {sim_index} of '{}' produced fewer than {MIN_POSITIVE_COUNTS} observed clones twice",
        scenario.name
    )))
}

/// One simulation's truths and the six intervals built for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub sim_index: u64,
    pub truth_clonality: f64,
    pub truth_entropy: f64,
    pub observed_c: u64,
    pub c_hat: u64,
    pub shape_hat: f64,
    pub rate_hat: f64,
    pub intervals: Vec<IntervalReport>,
}

impl SimRecord {
    pub fn truth(&self, functional: Functional) -> f64 {
        match functional {
            Functional::Clonality => self.truth_clonality,
            Functional::Entropy => self.truth_entropy,
        }
    }

    pub fn interval(&self, functional: Functional, method: Method) -> Option<&IntervalReport> {
        self.intervals
            .iter()
            .find(|r| r.functional == functional && r.method == method)
    }

    pub fn covered(&self, functional: Functional, method: Method) -> Option<bool> {
        self.interval(functional, method)
            .map(|r| r.contains(self.truth(functional)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub functional: Functional,
    pub method: Method,
    pub coverage: f64,
    /// Binomial standard error `sqrt(p (1 - p) / n)`.
    pub std_error: f64,
    pub mean_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub scenario: String,
    pub cells: Vec<CoverageCell>,
    pub records: Vec<SimRecord>,
    pub failed_sims: usize,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl CoverageReport {
    pub fn cell(&self, functional: Functional, method: Method) -> &CoverageCell {
        self.cells
            .iter()
            .find(|c| c.functional == functional && c.method == method)
            .expect("every functional/method pair is tabulated")
    }

    /// Rebuilds the table from the per-simulation records.
    pub fn tabulate(records: &[SimRecord]) -> Vec<CoverageCell> {
        let mut cells = Vec::with_capacity(6);
        for functional in Functional::ALL {
            for method in Method::ALL {
                let mut hits = 0usize;
                let mut width = 0.0;
                let mut n = 0usize;
                for rec in records {
                    if let Some(iv) = rec.interval(functional, method) {
                        n += 1;
                        width += iv.width();
                        hits += usize::from(iv.contains(rec.truth(functional)));
                    }
                }
                let p = if n > 0 { hits as f64 / n as f64 } else { f64::NAN };
                cells.push(CoverageCell {
                    functional,
                    method,
                    coverage: p,
                    std_error: (p * (1.0 - p) / n as f64).sqrt(),
                    mean_width: width / n as f64,
                    n,
                });
            }
        }
        cells
    }
}

pub fn run_simulation(scenario: &Scenario, sim_index: u64) -> Result<SimRecord> {
    let data = generate_dataset(scenario, sim_index)?;
    let result = run_pipeline_stream(
        &data.counts,
        &scenario.fit,
        &scenario.calib,
        scenario.sim_stream(sim_index).child(1),
    )?;
    Ok(SimRecord {
        sim_index,
        truth_clonality: data.truth_clonality,
        truth_entropy: data.truth_entropy,
        observed_c: result.fit.observed_c,
        c_hat: result.fit.c_hat,
        shape_hat: result.fit.prior.shape,
        rate_hat: result.fit.prior.rate,
        intervals: result.reports,
    })
}

/// Runs all simulations; fails if more than 5% of them error.
pub fn run_scenario(scenario: &Scenario) -> Result<CoverageReport> {
    scenario.validate()?;
    let start = Instant::now();
    let outcomes = par::map_indexed(scenario.n_sims, |i| run_simulation(scenario, i as u64));
    let total = outcomes.len();
    let mut records = Vec::with_capacity(total);
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let failed = total - records.len();
    if failed as f64 > MAX_FAILED_FRACTION * total as f64 || records.is_empty() {
        return Err(Error::ScenarioFailed {
            failed,
            total,
            first_error: first_error.map(|e| e.to_string()).unwrap_or_default(),
        });
    }
    Ok(CoverageReport {
        scenario: scenario.name.clone(),
        cells: CoverageReport::tabulate(&records),
        records,
        failed_sims: failed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub truth: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Calibrated clonality intervals paired with their truths, ascending by truth.
pub fn gallery_from_report(report: &CoverageReport) -> Vec<GalleryEntry> {
    let mut out: Vec<GalleryEntry> = report
        .records
        .iter()
        .filter_map(|rec| {
            rec.interval(Functional::Clonality, Method::Calibrated)
                .map(|iv| GalleryEntry {
                    truth: rec.truth_clonality,
                    lower: iv.lower,
                    upper: iv.upper,
                })
        })
        .collect();
    out.sort_by(|x, y| x.truth.total_cmp(&y.truth));
    out
}

pub fn interval_gallery(scenario: &Scenario) -> Result<Vec<GalleryEntry>> {
    Ok(gallery_from_report(&run_scenario(scenario)?))
}
