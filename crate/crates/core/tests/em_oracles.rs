//! EM fitting and observed information against brute-force oracles.

use repdiv_core::em::{fit, inner_em, loglik_derivatives, nb_log_pmf, truncated_loglik, CountGroups, FitConfig};
use repdiv_core::numerics::{sample_gamma, sample_poisson, RngStream};
use repdiv_core::sim::{generate_dataset, preset_scenario};
use repdiv_core::uncertainty::observed_information;
use repdiv_core::{hyper_covariance, CloneCounts, GammaPrior};

fn simulate(a: f64, b: f64, c0: usize, seed: u64) -> CloneCounts {
    let mut rng = RngStream::new(seed, 0).rng();
    let counts: Vec<u64> = (0..c0)
        .map(|_| {
            let l = sample_gamma(a, b, &mut rng).unwrap();
            sample_poisson(l, &mut rng).unwrap()
        })
        .filter(|&z| z > 0)
        .collect();
    CloneCounts::new(counts).unwrap()
}

fn prior(a: f64, b: f64) -> GammaPrior {
    GammaPrior::new(a, b).unwrap()
}

/// `sum ln p(z_i) + n0 ln p(0)`, the objective of the inner EM.
fn padded_loglik(counts: &CloneCounts, n0: f64, p: &GammaPrior) -> f64 {
    counts.counts().iter().map(|&z| nb_log_pmf(z, p)).sum::<f64>() + n0 * nb_log_pmf(0, p)
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

#[test]
fn inner_em_reaches_the_profile_maximum() {
    let counts = simulate(0.6, 0.8, 3000, 11);
    let groups = CountGroups::from_counts(&counts);
    let n0 = 1200.0;
    let em = inner_em(&groups, n0, prior(1.0, 1.0), 1e-12, 100_000, (1e-6, 1e6));
    assert!(em.converged);
    // nested golden-section search over (ln a, ln b)
    let profile = |ln_a: f64| {
        golden_max(
            |ln_b| padded_loglik(&counts, n0, &prior(ln_a.exp(), ln_b.exp())),
            -8.0,
            8.0,
        )
        .1
    };
    let (ln_a, best) = golden_max(profile, -8.0, 5.0);
    let (ln_b, _) = golden_max(
        |ln_b| padded_loglik(&counts, n0, &prior(ln_a.exp(), ln_b.exp())),
        -8.0,
        8.0,
    );
    let at_em = padded_loglik(&counts, n0, &em.prior);
    assert!(at_em >= best - 1e-7 * best.abs(), "EM {at_em} oracle {best}");
    assert!(
        (em.prior.shape / ln_a.exp() - 1.0).abs() < 1e-4,
        "{:?} vs {}",
        em.prior,
        ln_a.exp()
    );
    assert!((em.prior.rate / ln_b.exp() - 1.0).abs() < 1e-4);
}

#[test]
fn observed_information_matches_finite_differences() {
    for (seed, (a0, b0)) in [(1u64, (0.732, 0.882)), (2, (0.171, 0.301)), (3, (2.0, 0.5))] {
        let counts = simulate(a0, b0, 4000, seed);
        for (a, b) in [(a0, b0), (0.5 * a0, 2.0 * b0), (2.0 * a0, 0.7 * b0)] {
            let info = observed_information(&counts, &prior(a, b)).unwrap();
            let l = |x: f64, y: f64| truncated_loglik(&counts, &prior(x, y)).unwrap();
            let (ha, hb) = (1e-4 * a, 1e-4 * b);
            let fd_aa = -(l(a + ha, b) - 2.0 * l(a, b) + l(a - ha, b)) / (ha * ha);
            let fd_bb = -(l(a, b + hb) - 2.0 * l(a, b) + l(a, b - hb)) / (hb * hb);
            let fd_ab =
                -(l(a + ha, b + hb) - l(a + ha, b - hb) - l(a - ha, b + hb) + l(a - ha, b - hb)) / (4.0 * ha * hb);
            for (analytic, fd) in [(info.xx, fd_aa), (info.yy, fd_bb), (info.xy, fd_ab)] {
                let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
                assert!(rel < 1e-4, "seed {seed} at ({a}, {b}): {analytic} vs {fd}");
            }
        }
    }
}

#[test]
fn fit_recovers_the_generating_law() {
    let (a0, b0, c0) = (0.5, 0.3, 20_000);
    let counts = simulate(a0, b0, c0, 5);
    let f = fit(&counts, &FitConfig::default()).unwrap();
    assert!(f.converged);
    assert!(f.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    let d = loglik_derivatives(&CountGroups::from_counts(&counts), &f.prior).unwrap();
    let l = f.loglik();
    assert!(d.grad[0].hypot(d.grad[1]) < 1e-4 * (1.0 + l.abs()));
    assert!((f.prior.shape / a0 - 1.0).abs() < 0.15, "{:?}", f.prior);
    assert!((f.prior.rate / b0 - 1.0).abs() < 0.15, "{:?}", f.prior);
    assert!((f.c_hat as f64 / c0 as f64 - 1.0).abs() < 0.15, "{}", f.c_hat);
}

#[test]
fn heavy_tailed_counts_put_the_shape_on_its_bound() {
    // log-normal intensities give counts whose truncated likelihood keeps
    // rising as the shape goes to zero
    let s = preset_scenario("lognormal_mu-1.38_sd1.64", 1).unwrap();
    let data = generate_dataset(&s, 0).unwrap();
    let f = fit(&data.counts, &FitConfig::default()).unwrap();
    assert!(f.shape_at_bound && !f.rate_at_bound, "{f:?}");
    assert_eq!(f.prior.shape, FitConfig::default().param_bounds.0);
    assert!(f.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    let cov = hyper_covariance(&data.counts, &f).unwrap();
    assert_eq!(cov.j_hat.xx, 0.0);
    assert_eq!(cov.j_hat.xy, 0.0);
    assert!(cov.j_hat.yy > 0.0);
    // the free coordinate is still stationary
    let d = loglik_derivatives(&CountGroups::from_counts(&data.counts), &f.prior).unwrap();
    assert!(d.grad[1].abs() < 1e-4 * (1.0 + f.loglik().abs()));
    assert!(d.grad[0] <= 0.0, "the likelihood must push the shape down at its bound");
}
