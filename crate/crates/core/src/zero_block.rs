//! Power sums over a very large block of zero-count clones.
//!
//! Clonality and entropy of an intensity vector only need `T = sum l`,
//! `sum l^2` and `sum l ln l`. A block of `n` clones with `l ~ Gamma(a, r)`
//! is summarised as follows: the clones whose standardized intensity
//! `x = r l` exceeds a threshold `t` are drawn exactly from the truncated
//! law, and the remaining bulk is added as a trivariate normal with the
//! exact mean and covariance of `(x, x^2, x ln x)` below `t`. The threshold
//! is set so that about [`TAIL_TARGET`] clones land above it, which keeps
//! the cost per draw independent of `n`. Shapes of [`CLT_SHAPE`] and above
//! skip the split, because the gamma law is then close to normal.
//!
//! When the hyperparameters vary from clone to clone, their log-normal law
//! is replaced by a tensor Gauss-Hermite rule and the clones are allocated
//! to the nodes multinomially.

use std::num::NonZero;

use gauss_quad::{GaussHermite, GaussLegendre};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use statrs::function::gamma::gamma_ur;

use crate::numerics::{
    digamma_unchecked, ln_gamma_unchecked, standard_gamma, standard_normal, trigamma_unchecked, CompensatedSum,
    SymMatrix2,
};

/// Zero padding from which the aggregated representation is used.
pub(crate) const AGGREGATE_MIN_ZEROS: u64 = 20_000;
/// Blocks up to this size are always drawn clone by clone.
const DIRECT_LIMIT: u64 = 2048;
const TAIL_TARGET: f64 = 1024.0;
const MIN_TAIL: f64 = 64.0;
const CLT_SHAPE: f64 = 50.0;
const HERMITE_NODES: usize = 12;
const MIN_NODE_WEIGHT: f64 = 1e-12;

/// Running `(sum l, sum l^2, sum l ln l)`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PowerSums {
    s1: CompensatedSum,
    s2: CompensatedSum,
    s3: CompensatedSum,
}

impl PowerSums {
    #[inline]
    pub(crate) fn push(&mut self, l: f64) {
        if l > 0.0 {
            self.s1.add(l);
            self.s2.add(l * l);
            self.s3.add(l * l.ln());
        }
    }

    /// Adds standardized sums `(sum x, sum x^2, sum x ln x)` of a block with rate `r`.
    fn add_scaled(&mut self, x: [f64; 3], rate: f64, ln_rate: f64) {
        self.s1.add(x[0] / rate);
        self.s2.add(x[1] / (rate * rate));
        self.s3.add((x[2] - x[0] * ln_rate) / rate);
    }

    /// `(clonality, entropy)`.
    pub(crate) fn functionals(&self) -> (f64, f64) {
        let t = self.s1.value();
        let clonality = self.s2.value() / (t * t);
        let entropy = t.ln() - self.s3.value() / t;
        (clonality, entropy.max(0.0))
    }
}

/// Mean and covariance of `(x, x^2, x ln x)` for one clone.
#[derive(Debug, Clone, Copy)]
struct CloneMoments {
    mean: [f64; 3],
    chol: [[f64; 3]; 3],
}

impl CloneMoments {
    /// From the raw moments
    /// `[E x, E x^2, E x ln x, E x^3, E x^4, E x^2 ln x, E x^3 ln x, E x^2 ln^2 x]`.
    fn from_raw(m: [f64; 8]) -> Self {
        let mean = [m[0], m[1], m[2]];
        let cov = [
            [m[1] - m[0] * m[0], m[3] - m[0] * m[1], m[5] - m[0] * m[2]],
            [0.0, m[4] - m[1] * m[1], m[6] - m[1] * m[2]],
            [0.0, 0.0, m[7] - m[2] * m[2]],
        ];
        Self {
            mean,
            chol: cholesky3(cov),
        }
    }

    /// Sum over `count` independent clones, drawn from the normal approximation.
    fn sample_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> [f64; 3] {
        let n = count as f64;
        let sd = n.sqrt();
        let z = [standard_normal(rng), standard_normal(rng), standard_normal(rng)];
        let mut out: [f64; 3] = std::array::from_fn(|i| {
            let noise: f64 = (0..=i).map(|j| self.chol[i][j] * z[j]).sum();
            n * self.mean[i] + sd * noise
        });
        out[0] = out[0].max(0.0);
        out[1] = out[1].max(0.0);
        out
    }
}

/// Lower Cholesky factor of the symmetric matrix whose upper triangle is
/// given; pivots lost to rounding are treated as zero.
fn cholesky3(c: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let sym = |i: usize, j: usize| if i <= j { c[i][j] } else { c[j][i] };
    let mut l = [[0.0; 3]; 3];
    for j in 0..3 {
        let d = sym(j, j) - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        let scale = 1e-12 * sym(j, j).abs();
        if !(d > scale) {
            continue;
        }
        let root = d.sqrt();
        l[j][j] = root;
        for i in j + 1..3 {
            l[i][j] = (sym(i, j) - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>()) / root;
        }
    }
    l
}

/// Untruncated raw moments of `x ~ Gamma(a, 1)`.
fn gamma_raw_moments(a: f64) -> [f64; 8] {
    let (r2, r3, r4) = (
        a * (a + 1.0),
        a * (a + 1.0) * (a + 2.0),
        a * (a + 1.0) * (a + 2.0) * (a + 3.0),
    );
    let psi2 = digamma_unchecked(a + 2.0);
    [
        a,
        r2,
        a * digamma_unchecked(a + 1.0),
        r3,
        r4,
        r2 * psi2,
        r3 * digamma_unchecked(a + 3.0),
        r2 * (psi2 * psi2 + trigamma_unchecked(a + 2.0)),
    ]
}

/// Raw moments of `x ~ Gamma(a, 1)` restricted to `x < t`, divided by
/// `P(x < t) = lower`. Integrated in `v = ln x`, where every integrand
/// carries at least one factor of `x` and decays like `exp((a + 1) v)`.
fn truncated_raw_moments(a: f64, t: f64, lower: f64) -> [f64; 8] {
    let hi = t.ln();
    let lo = hi.min((a + 4.0).ln()) - 60.0;
    let panels = ((hi - lo) / 0.25).ceil().max(1.0) as usize;
    let width = (hi - lo) / panels as f64;
    let rule = GaussLegendre::new(NonZero::new(10).expect("nonzero"));
    let log_norm = ln_gamma_unchecked(a) + lower.ln();
    let mut acc = [CompensatedSum::new(); 8];
    for p in 0..panels {
        let (start, end) = (lo + p as f64 * width, lo + (p + 1) as f64 * width);
        for (node, weight) in rule.iter() {
            let v = 0.5 * (start + end) + 0.5 * width * node;
            let x = v.exp();
            let base = 0.5 * width * weight * (a * v - x - log_norm).exp();
            let (x2, x3) = (x * x, x * x * x);
            let terms = [x, x2, x * v, x3, x3 * x, x2 * v, x3 * v, x2 * v * v];
            for (s, h) in acc.iter_mut().zip(terms) {
                s.add(base * h);
            }
        }
    }
    acc.map(|s| s.value())
}

/// `Q(a, t) = P(x > t)` for `x ~ Gamma(a, 1)`.
fn upper_tail(a: f64, t: f64) -> f64 {
    gamma_ur(a, t)
}

/// Threshold `t` with `Q(a, t) ~= target` by bisection in `ln t`.
fn threshold_for(a: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (-700.0f64, (a + 50.0 * (a.sqrt() + 1.0)).ln() + 2.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if upper_tail(a, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Exact draws of `x ~ Gamma(a, 1)` conditioned on `x > t`.
#[derive(Debug, Clone, Copy)]
enum TailSampler {
    /// Plain rejection from the full law; used when the tail is not rare.
    Rejection,
    /// `a <= 1`, `t < 1`: envelope `x^(a-1)` on `(t, 1)` and `exp(-x)` beyond 1.
    SmallShape { d: f64, mass_left: f64 },
    /// `a <= 1`, `t >= 1`: shifted exponential proposal.
    ShiftedExp,
    /// `a > 1` beyond the mode: shifted exponential with the optimal rate.
    OptimalExp { rate: f64, peak: f64 },
}

impl TailSampler {
    fn new(a: f64, t: f64, q: f64) -> Self {
        if q >= 0.25 {
            TailSampler::Rejection
        } else if a <= 1.0 && t < 1.0 {
            let d = -(a * t.ln()).exp_m1();
            TailSampler::SmallShape { d, mass_left: d / a }
        } else if a <= 1.0 {
            TailSampler::ShiftedExp
        } else {
            let rate = (t - a + ((t - a).powi(2) + 4.0 * t).sqrt()) / (2.0 * t);
            TailSampler::OptimalExp {
                rate,
                peak: t.max((a - 1.0) / (1.0 - rate)),
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, a: f64, t: f64, rng: &mut R) -> f64 {
        match *self {
            TailSampler::Rejection => loop {
                let x = standard_gamma(a, rng);
                if x > t {
                    return x;
                }
            },
            TailSampler::SmallShape { d, mass_left } => {
                let total = mass_left + (-1.0f64).exp();
                loop {
                    if rng.random::<f64>() * total < mass_left {
                        let u: f64 = rng.random();
                        let x = ((-(1.0 - u) * d).ln_1p() / a).exp().max(t);
                        if rng.random::<f64>() < (-x).exp() {
                            return x;
                        }
                    } else {
                        let e: f64 = rng.sample(Exp1);
                        let x = 1.0 + e;
                        if rng.random::<f64>() < x.powf(a - 1.0) {
                            return x;
                        }
                    }
                }
            }
            TailSampler::ShiftedExp => loop {
                let e: f64 = rng.sample(Exp1);
                let x = t + e;
                if rng.random::<f64>() < (x / t).powf(a - 1.0) {
                    return x;
                }
            },
            TailSampler::OptimalExp { rate, peak } => loop {
                let e: f64 = rng.sample(Exp1);
                let x = t + e / rate;
                let log_acc = (a - 1.0) * (x / peak).ln() - (1.0 - rate) * (x - peak);
                if rng.random::<f64>().ln() < log_acc {
                    return x;
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Plan {
    Direct,
    Normal(CloneMoments),
    Split {
        t: f64,
        q: f64,
        tail: TailSampler,
        bulk: CloneMoments,
    },
}

/// Zero-count clones sharing one `Gamma(shape, rate)` law.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Atom {
    shape: f64,
    rate: f64,
    ln_rate: f64,
    plan: Plan,
}

impl Atom {
    /// Prepares a block expected to hold about `expected` clones, aiming for
    /// about `tail_target` exact tail draws.
    pub(crate) fn new(shape: f64, rate: f64, expected: f64, tail_target: f64) -> Self {
        let plan = if expected <= DIRECT_LIMIT as f64 {
            Plan::Direct
        } else if shape >= CLT_SHAPE {
            Plan::Normal(CloneMoments::from_raw(gamma_raw_moments(shape)))
        } else {
            let t = threshold_for(shape, tail_target / expected);
            let q = upper_tail(shape, t);
            let lower = 1.0 - q;
            if !(lower > 0.0) || !(q > 0.0) {
                Plan::Direct
            } else {
                Plan::Split {
                    t,
                    q,
                    tail: TailSampler::new(shape, t, q),
                    bulk: CloneMoments::from_raw(truncated_raw_moments(shape, t, lower)),
                }
            }
        };
        Self {
            shape,
            rate,
            ln_rate: rate.ln(),
            plan,
        }
    }

    pub(crate) fn add<R: Rng + ?Sized>(&self, count: u64, sums: &mut PowerSums, rng: &mut R) {
        if count == 0 {
            return;
        }
        match self.plan {
            _ if count <= DIRECT_LIMIT => self.add_direct(count, sums, rng),
            Plan::Direct => self.add_direct(count, sums, rng),
            Plan::Normal(m) => {
                let x = m.sample_sum(count, rng);
                sums.add_scaled(x, self.rate, self.ln_rate);
            }
            Plan::Split { t, q, tail, bulk } => {
                let k = Binomial::new(count, q).map(|b| b.sample(rng)).unwrap_or(0);
                for _ in 0..k {
                    sums.push((tail.sample(self.shape, t, rng) / self.rate).max(f64::MIN_POSITIVE));
                }
                let x = bulk.sample_sum(count - k, rng);
                sums.add_scaled(x, self.rate, self.ln_rate);
            }
        }
    }

    fn add_direct<R: Rng + ?Sized>(&self, count: u64, sums: &mut PowerSums, rng: &mut R) {
        for _ in 0..count {
            sums.push((standard_gamma(self.shape, rng) / self.rate).max(f64::MIN_POSITIVE));
        }
    }
}

/// The zero block under clone-specific hyperparameters: Gauss-Hermite nodes
/// of the log-normal hyperparameter law, each node an [`Atom`].
#[derive(Debug, Clone)]
pub(crate) struct AtomMixture {
    atoms: Vec<Atom>,
    weights: Vec<f64>,
}

impl AtomMixture {
    /// Nodes of `exp(N(mean, cov))`, clamped into `bounds`, for `n` zero clones.
    pub(crate) fn new(mean: (f64, f64), cov: &SymMatrix2, bounds: (f64, f64), n: u64) -> Self {
        let rule = GaussHermite::new(NonZero::new(HERMITE_NODES).expect("nonzero"));
        let (vals, vecs) = cov.eigen();
        let scale = vals[1].max(0.0);
        // one-dimensional offsets along each principal axis
        let axis = |val: f64| -> Vec<(f64, f64)> {
            if val > 1e-14 * scale.max(f64::MIN_POSITIVE) && val > 0.0 {
                let sd = val.sqrt();
                rule.iter()
                    .map(|(x, w)| (std::f64::consts::SQRT_2 * x * sd, w / std::f64::consts::PI.sqrt()))
                    .collect()
            } else {
                vec![(0.0, 1.0)]
            }
        };
        let (first, second) = (axis(vals[0]), axis(vals[1]));
        let mut nodes = Vec::new();
        for &(o1, w1) in &first {
            for &(o2, w2) in &second {
                let w = w1 * w2;
                if w < MIN_NODE_WEIGHT {
                    continue;
                }
                let u = mean.0 + o1 * vecs[0][0] + o2 * vecs[1][0];
                let v = mean.1 + o1 * vecs[0][1] + o2 * vecs[1][1];
                nodes.push((u.exp().clamp(bounds.0, bounds.1), v.exp().clamp(bounds.0, bounds.1), w));
            }
        }
        let total: f64 = nodes.iter().map(|n| n.2).sum();
        let n = n as f64;
        let atoms = nodes
            .iter()
            .map(|&(a, b, w)| {
                let p = w / total;
                Atom::new(a, b + 1.0, n * p, (TAIL_TARGET * p).max(MIN_TAIL))
            })
            .collect();
        let weights = nodes.iter().map(|n| n.2 / total).collect();
        Self { atoms, weights }
    }

    /// Allocates `n` clones to the nodes and adds every node's block.
    pub(crate) fn add<R: Rng + ?Sized>(&self, n: u64, sums: &mut PowerSums, rng: &mut R) {
        let mut left = n;
        let mut mass_left = 1.0;
        let last = self.atoms.len() - 1;
        for (i, (atom, &w)) in self.atoms.iter().zip(&self.weights).enumerate() {
            let count = if i == last {
                left
            } else {
                let p = (w / mass_left).clamp(0.0, 1.0);
                Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(0)
            };
            atom.add(count, sums, rng);
            left -= count;
            mass_left -= w;
            if left == 0 {
                break;
            }
        }
    }
}

/// A single atom prepared for `n` clones with the default tail target.
pub(crate) fn single_atom(shape: f64, rate: f64, n: u64) -> Atom {
    Atom::new(shape, rate, n as f64, TAIL_TARGET)
}

/// A repertoire of `c` clones with `l ~ Gamma(a, b)` and `z ~ Poisson(l)`,
/// generated by composition: the zero count is binomial, the positive counts
/// follow the zero-truncated negative binomial, and each intensity is drawn
/// from `Gamma(a + z, b + 1)` given its count. The zero clones enter through
/// an aggregated block. Returns the power sums of all `c` intensities and
/// the positive counts.
pub(crate) fn composed_repertoire<R: Rng + ?Sized>(a: f64, b: f64, c: u64, rng: &mut R) -> (PowerSums, Vec<u64>) {
    let ln_p0 = -a * (1.0 / b).ln_1p();
    let p0 = ln_p0.exp();
    let positive_mass = -ln_p0.exp_m1();
    let n0 = Binomial::new(c, p0).map(|d| d.sample(rng)).unwrap_or(c);
    let q = 1.0 / (b + 1.0);
    let first = a * p0 * q / positive_mass;
    let mut sums = PowerSums::default();
    let mut counts = Vec::with_capacity((c - n0) as usize);
    for _ in 0..c - n0 {
        let z = truncated_nb_count(a, q, first, rng);
        counts.push(z);
        sums.push((standard_gamma(a + z as f64, rng) * q).max(f64::MIN_POSITIVE));
    }
    single_atom(a, b + 1.0, n0).add(n0, &mut sums, rng);
    (sums, counts)
}

/// Inverse-CDF draw from the zero-truncated negative binomial whose
/// normalized mass at one is `first`.
fn truncated_nb_count<R: Rng + ?Sized>(a: f64, q: f64, first: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut z = 1u64;
    let mut term = first;
    let mut cum = first;
    while cum < u && term > 0.0 {
        term *= (a + z as f64) / (z as f64 + 1.0) * q;
        z += 1;
        cum += term;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn direct_sums(shape: f64, rate: f64, n: u64, rng: &mut impl Rng) -> PowerSums {
        let mut s = PowerSums::default();
        for _ in 0..n {
            s.push((standard_gamma(shape, rng) / rate).max(f64::MIN_POSITIVE));
        }
        s
    }

    #[test]
    fn truncated_moments_match_closed_form_without_truncation() {
        for a in [1e-6, 0.05, 0.7, 3.0, 20.0] {
            let raw = gamma_raw_moments(a);
            let quad = truncated_raw_moments(a, 1e4 + 100.0 * a, 1.0);
            for (k, (x, y)) in raw.iter().zip(quad).enumerate() {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300), "a={a} k={k} {x} {y}");
            }
        }
    }

    #[test]
    fn threshold_hits_target_tail_mass() {
        for a in [1e-6, 0.01, 0.3, 2.0, 30.0] {
            for target in [1e-6, 1e-3, 0.2] {
                if upper_tail(a, (-700.0f64).exp()) < target {
                    // the whole law above the smallest threshold is rarer than the target
                    continue;
                }
                let t = threshold_for(a, target);
                let q = upper_tail(a, t);
                assert!((q / target - 1.0).abs() < 1e-6, "a={a} target={target} q={q}");
            }
        }
    }

    #[test]
    fn tail_draws_follow_truncated_law() {
        // compare the conditional mean E[x | x > t] with quadrature
        let mut rng = RngStream::new(11, 0).rng();
        for (a, target) in [
            (1e-4, 1e-5),
            (0.4, 1e-3),
            (0.9, 0.5),
            (0.5, 1e-8),
            (5.0, 1e-4),
            (30.0, 1e-3),
        ] {
            let t = threshold_for(a, target);
            let q = upper_tail(a, t);
            let sampler = TailSampler::new(a, t, q);
            let n = 40_000;
            let xs: Vec<f64> = (0..n).map(|_| sampler.sample(a, t, &mut rng)).collect();
            assert!(xs.iter().all(|&x| x >= t));
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            // E[x; x > t] = a Q(a + 1, t)
            let exact = a * upper_tail(a + 1.0, t) / q;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - exact).abs() < 5.0 * se,
                "a={a} t={t} {mean} vs {exact} (se {se})"
            );
        }
    }

    #[test]
    fn aggregated_block_matches_direct_draws() {
        // moderate block where both representations are cheap enough to compare
        for (shape, rate) in [(0.02, 1.1), (0.3, 1.5), (2.0, 1.2), (80.0, 2.0)] {
            let n = 200_000u64;
            let atom = single_atom(shape, rate, n);
            assert!(!matches!(atom.plan, Plan::Direct));
            let reps = 300;
            let (mut agg, mut dir) = (Vec::new(), Vec::new());
            let mut rng = RngStream::new(3, 0).rng();
            for _ in 0..reps {
                let mut s = PowerSums::default();
                atom.add(n, &mut s, &mut rng);
                agg.push(s.functionals());
                dir.push(direct_sums(shape, rate, n, &mut rng).functionals());
            }
            for idx in 0..2 {
                let pick =
                    |v: &Vec<(f64, f64)>| -> Vec<f64> { v.iter().map(|p| if idx == 0 { p.0 } else { p.1 }).collect() };
                let (x, y) = (pick(&agg), pick(&dir));
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let var = |v: &[f64]| {
                    let m = mean(v);
                    v.iter().map(|z| (z - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
                };
                let se = ((var(&x) + var(&y)) / reps as f64).sqrt();
                assert!(
                    (mean(&x) - mean(&y)).abs() < 4.0 * se + 1e-12 * mean(&y).abs(),
                    "shape {shape} functional {idx}: {} vs {} (se {se})",
                    mean(&x),
                    mean(&y)
                );
                let ratio = (var(&x) / var(&y)).sqrt();
                assert!(
                    (0.8..1.25).contains(&ratio),
                    "shape {shape} functional {idx}: sd ratio {ratio}"
                );
            }
        }
    }

    #[test]
    fn cholesky_of_rank_deficient_matrix() {
        let l = cholesky3([[4.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 9.0]]);
        assert_eq!(l[0][0], 2.0);
        assert_eq!(l[1][0], 1.0);
        assert_eq!(l[1][1], 0.0);
        assert_eq!(l[2][2], 3.0);
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let m = AtomMixture::new(
            (0.1f64.ln(), 0.2f64.ln()),
            &SymMatrix2::new(0.3, 0.1, 0.05),
            (1e-6, 1e6),
            1_000_000,
        );
        let total: f64 = m.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let flat = AtomMixture::new((0.0, 0.0), &SymMatrix2::diag(0.0, 0.04), (1e-6, 1e6), 1_000_000);
        assert_eq!(flat.atoms.len(), HERMITE_NODES);
        assert!(flat.atoms.iter().all(|a| (a.shape - 1.0).abs() < 1e-12));
    }
}
