//! Data-generating processes for the simulation studies.
//!
//! Each dataset is drawn from a single `ChaCha8Rng` stream seeded with the
//! replication seed. Draws are taken subject by subject in a fixed order,
//! listed on each generator.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson, Uniform};

use crate::data::Dataset;
use crate::model::kernel::logistic;
use crate::model::{round_to_grid, Family, HeapingSpec};

/// True log causal mean ratio of the partners design.
pub const PARTNERS_LOG_CMR: f64 = 0.5;
/// NB dispersion of the partners design.
pub const PARTNERS_THETA: f64 = 0.5;
/// True log causal mean ratio of the heaping design.
pub const HEAPING_LOG_CMR: f64 = 0.25;
/// Heaping mechanism of the heaping design.
pub const HEAPING_SPEC: HeapingSpec = HeapingSpec { eta: 10, pi: 0.4 };

/// A simulated dataset with its potential outcomes.
#[derive(Debug, Clone)]
pub struct SimData {
    /// Observed data; for the heaping design the outcome is the heaped report.
    pub data: Dataset,
    pub y0: Vec<u64>,
    pub y1: Vec<u64>,
    /// Realized true count `A·Y¹ + (1−A)·Y⁰`.
    pub y_true: Vec<u64>,
    /// Exact-report indicators (heaping design only).
    pub exact: Option<Vec<u8>>,
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    Bernoulli::new(p.clamp(0.0, 1.0)).expect("probability in [0, 1]").sample(rng) as u8
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as u64
}

/// One count draw: optional gamma frailty (NB families), always a
/// susceptibility uniform, then the Poisson count.
fn count_draw(rng: &mut ChaCha8Rng, family: Family, mu: f64, nu: f64, theta: f64) -> u64 {
    let rate = if family.has_dispersion() {
        mu * Gamma::new(1.0 / theta, theta).expect("positive gamma parameters").sample(rng)
    } else {
        mu
    };
    let structural_zero = rng.random::<f64>() < if family.is_zero_inflated() { nu } else { 0.0 };
    let y = poisson(rng, rate);
    if structural_zero {
        0
    } else {
        y
    }
}

/// Partners design: covariates L1, L2, L3, confounded exposure and a count
/// outcome from `family` with log mean ratio 0.5.
///
/// Per-subject draw order: L1, ε1, L2, ε2, L3, A, then the count draws for
/// a = 0 and a = 1.
pub fn gen_partners(n: usize, family: Family, seed: u64) -> SimData {
    gen_partners_with(n, family, seed, false)
}

pub(crate) fn gen_partners_with(n: usize, family: Family, seed: u64, no_zero_inflation: bool) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l1_dist = Uniform::new(20.0, 40.0).expect("valid range");
    let e1_dist = Uniform::new(-1.0, 1.0).expect("valid range");
    let e2_dist = Uniform::new(-0.5, 0.5).expect("valid range");
    let (mut l1v, mut l2v, mut l3v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut a_v, mut y0, mut y1, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let l1: f64 = l1_dist.sample(&mut rng);
        let e1: f64 = e1_dist.sample(&mut rng);
        let l2 = bernoulli(&mut rng, logistic(-(l1 - 0.5) / 100.0 + e1)) as f64;
        let e2: f64 = e2_dist.sample(&mut rng);
        let l3 = bernoulli(&mut rng, logistic(-3.0 - (l1 - 0.5) / 100.0 + 1.2 * l2 + e2)) as f64;
        let a = bernoulli(&mut rng, logistic(-0.5 - l1 / 100.0 + 0.5 * l2 + 0.5 * l3));
        let nu = if no_zero_inflation {
            0.0
        } else {
            logistic(-2.5 + l1 / 100.0 - 0.3 * l2 - 2.0 * l3)
        };
        let base = -1.0 - 0.005 * l1 + 0.7 * l2 + 3.5 * l3;
        let c0 = count_draw(&mut rng, family, base.exp(), nu, PARTNERS_THETA);
        let c1 = count_draw(&mut rng, family, (base + PARTNERS_LOG_CMR).exp(), nu, PARTNERS_THETA);
        l1v.push(l1);
        l2v.push(l2);
        l3v.push(l3);
        a_v.push(a);
        y0.push(c0);
        y1.push(c1);
        y.push(if a == 1 { c1 } else { c0 });
    }
    let data = Dataset::new(a_v, y.clone())
        .and_then(|d| d.with_column("L1", l1v))
        .and_then(|d| d.with_column("L2", l2v))
        .and_then(|d| d.with_column("L3", l3v))
        .expect("generated columns are consistent");
    SimData {
        data,
        y0,
        y1,
        y_true: y,
        exact: None,
    }
}

/// Heaping design: covariate L4 with `exp(L4) ~ Gamma(5, scale 2)`,
/// Poisson potential outcomes with log mean ratio 0.25, proxy covariate L5,
/// and reports rounded to multiples of 10 with probability 0.6.
///
/// Per-subject draw order: exp(L4), A, Y⁰, Y¹, ε3, Δ.
pub fn gen_heaping(n: usize, seed: u64) -> SimData {
    gen_heaping_with(n, seed, &HEAPING_SPEC)
}

/// Heaping design with a custom heaping mechanism.
pub fn gen_heaping_with(n: usize, seed: u64, heap: &HeapingSpec) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_dist = Gamma::<f64>::new(5.0, 2.0).expect("valid gamma");
    let z_dist = Normal::new(0.0, 1.0).expect("valid normal");
    let (mut l4v, mut l5v, mut a_v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut y0, mut y1, mut y, mut yh, mut exact) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let l4 = g_dist.sample(&mut rng).ln();
        let a = bernoulli(&mut rng, 1.0 - logistic(-0.8 + 0.65 * l4));
        let base = -0.9 + l4;
        let c0 = poisson(&mut rng, base.exp());
        let c1 = poisson(&mut rng, (base + HEAPING_LOG_CMR).exp());
        let e3: f64 = z_dist.sample(&mut rng);
        let l5 = logistic(-3.0 + l4 + 2.0 * e3);
        let delta = bernoulli(&mut rng, heap.pi);
        let yi = if a == 1 { c1 } else { c0 };
        l4v.push(l4);
        l5v.push(l5);
        a_v.push(a);
        y0.push(c0);
        y1.push(c1);
        y.push(yi);
        yh.push(if delta == 1 { yi } else { round_to_grid(yi, heap.eta) });
        exact.push(delta);
    }
    let data = Dataset::new(a_v, yh)
        .and_then(|d| d.with_column("L4", l4v))
        .and_then(|d| d.with_column("L5", l5v))
        .expect("generated columns are consistent");
    SimData {
        data,
        y0,
        y1,
        y_true: y,
        exact: Some(exact),
    }
}
