//! Log-mass evaluation with gradients in linear-predictor coordinates.
//!
//! Every outcome model in the crate is parameterized through at most four
//! per-observation scalars: the log mean of the count part, the logit of the
//! non-susceptibility probability, the log dispersion and the logit of the
//! exact-report probability. Likelihood gradients with respect to regression
//! coefficients follow from these by the chain rule.

use statrs::function::gamma::{digamma, ln_gamma};

use super::Family;

pub(crate) const LOG_MU: usize = 0;
pub(crate) const ZETA: usize = 1;
pub(crate) const LOG_THETA: usize = 2;
pub(crate) const LOGIT_PI: usize = 3;
pub(crate) const N_LOCAL: usize = 4;

/// Below this log dispersion the negative binomial kernel is evaluated as
/// Poisson; the two differ by O(theta).
const POISSON_LIMIT_LOG_THETA: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Local {
    pub log_mu: f64,
    pub zeta: f64,
    pub log_theta: f64,
}

/// Exact-report mixing weights on the log scale.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeapWeights {
    pub eta: u64,
    pub pi: f64,
    pub log_pi: f64,
    pub log_1m_pi: f64,
}

impl HeapWeights {
    pub fn from_pi(eta: u64, pi: f64) -> Self {
        Self {
            eta,
            pi,
            log_pi: pi.ln(),
            log_1m_pi: (-pi).ln_1p(),
        }
    }

    pub fn from_logit(eta: u64, logit_pi: f64) -> Self {
        Self {
            eta,
            pi: logistic(logit_pi),
            log_pi: -softplus(-logit_pi),
            log_1m_pi: -softplus(logit_pi),
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Online log-sum-exp that also accumulates the softmax-weighted gradient.
struct LseAccumulator {
    max: f64,
    sum: f64,
    grad: [f64; N_LOCAL],
}

impl LseAccumulator {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            grad: [0.0; N_LOCAL],
        }
    }

    fn push(&mut self, value: f64, grad: &[f64; N_LOCAL]) {
        if value == f64::NEG_INFINITY || value.is_nan() {
            return;
        }
        if value > self.max {
            let scale = (self.max - value).exp();
            self.sum *= scale;
            for g in self.grad.iter_mut() {
                *g *= scale;
            }
            self.max = value;
        }
        let w = (value - self.max).exp();
        self.sum += w;
        for (acc, g) in self.grad.iter_mut().zip(grad) {
            *acc += w * g;
        }
    }

    fn finish(self) -> (f64, [f64; N_LOCAL]) {
        if self.sum == 0.0 {
            return (f64::NEG_INFINITY, [0.0; N_LOCAL]);
        }
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g /= self.sum;
        }
        (self.max + self.sum.ln(), grad)
    }
}

/// Calls `visit(y, log f, dlogf/dlog_mu, dlogf/dlog_theta)` for every count
/// in `lo..=hi` under the Poisson (`negbin == false`) or negative binomial
/// kernel, using recurrences across consecutive counts.
fn base_terms(
    negbin: bool,
    lo: u64,
    hi: u64,
    log_mu: f64,
    log_theta: f64,
    mut visit: impl FnMut(u64, f64, f64, f64),
) {
    let mu = log_mu.exp();
    let mut ln_fact = ln_gamma(lo as f64 + 1.0);
    if !negbin || log_theta < POISSON_LIMIT_LOG_THETA {
        for y in lo..=hi {
            if y > lo {
                ln_fact += (y as f64).ln();
            }
            let yf = y as f64;
            visit(y, yf * log_mu - mu - ln_fact, yf - mu, 0.0);
        }
        return;
    }

    let r = (-log_theta).exp();
    let r_plus_mu = r + mu;
    let ln_r_plus_mu = r_plus_mu.ln();
    let log1p_mu_r = (mu / r).ln_1p();
    // c = lnΓ(y+r) − lnΓ(r), d = ψ(y+r) − ψ(r)
    let (mut c, mut d) = if lo == 0 {
        (0.0, 0.0)
    } else if lo <= 64 || r > 1e5 {
        (0..lo).fold((0.0, 0.0), |(c, d), j| {
            let t = r + j as f64;
            (c + t.ln(), d + 1.0 / t)
        })
    } else {
        let lf = lo as f64;
        (ln_gamma(lf + r) - ln_gamma(r), digamma(lf + r) - digamma(r))
    };
    for y in lo..=hi {
        let yf = y as f64;
        if y > lo {
            let t = r + (y - 1) as f64;
            c += t.ln();
            d += 1.0 / t;
            ln_fact += yf.ln();
        }
        let log_f = c - ln_fact - r * log1p_mu_r + yf * (log_mu - ln_r_plus_mu);
        let d_log_mu = yf - (yf + r) * mu / r_plus_mu;
        let d_r = d - log1p_mu_r + (mu - yf) / r_plus_mu;
        visit(y, log_f, d_log_mu, -r * d_r);
    }
}

/// Visits `(y, log f(y), gradient)` for the full (possibly zero-inflated)
/// family over `lo..=hi`. Gradient slots follow the `LOG_MU`/`ZETA`/
/// `LOG_THETA` layout; the `LOGIT_PI` slot is left at zero.
fn family_terms(
    family: Family,
    lo: u64,
    hi: u64,
    loc: &Local,
    mut visit: impl FnMut(u64, f64, [f64; N_LOCAL]),
) {
    let negbin = family.has_dispersion();
    if !family.is_zero_inflated() {
        base_terms(negbin, lo, hi, loc.log_mu, loc.log_theta, |y, lf, gm, gt| {
            visit(y, lf, [gm, 0.0, gt, 0.0]);
        });
        return;
    }
    let nu = logistic(loc.zeta);
    let log_nu = -softplus(-loc.zeta);
    let log_1m_nu = -softplus(loc.zeta);
    base_terms(negbin, lo, hi, loc.log_mu, loc.log_theta, |y, lf, gm, gt| {
        if y > 0 {
            visit(y, log_1m_nu + lf, [gm, -nu, gt, 0.0]);
        } else {
            let a = log_nu;
            let b = log_1m_nu + lf;
            let top = a.max(b);
            let total = top + ((a - top).exp() + (b - top).exp()).ln();
            let wa = (a - total).exp();
            let wb = (b - total).exp();
            visit(
                0,
                total,
                [gm * wb, wa * (1.0 - nu) - wb * nu, gt * wb, 0.0],
            );
        }
    });
}

/// Log mass and local gradient of a single exact count.
pub(crate) fn log_pmf_grad(family: Family, y: u64, loc: &Local) -> (f64, [f64; N_LOCAL]) {
    let mut out = (f64::NEG_INFINITY, [0.0; N_LOCAL]);
    family_terms(family, y, y, loc, |_, lf, g| out = (lf, g));
    out
}

/// Inclusive preimage of a reported value under rounding to the grid, or
/// `None` when the value is not a grid multiple.
pub(crate) fn preimage_bounds(y_h: u64, eta: u64) -> Option<(u64, u64)> {
    if y_h % eta != 0 {
        return None;
    }
    let half_down = eta / 2;
    let half_up = eta - half_down; // ceil(eta / 2)
    Some((y_h.saturating_sub(half_down), y_h + half_up - 1))
}

/// Log of `π f(y_h) + (1 − π) Σ_{y: h(y) = y_h} f(y)` and its local gradient,
/// including the `LOGIT_PI` slot.
pub(crate) fn heaped_log_mass_grad(
    family: Family,
    y_h: u64,
    loc: &Local,
    heap: &HeapWeights,
) -> (f64, [f64; N_LOCAL]) {
    let mut acc = LseAccumulator::new();
    let exact_dpi = 1.0 - heap.pi;
    let rounded_dpi = -heap.pi;
    if heap.log_pi > f64::NEG_INFINITY {
        let (lf, mut g) = log_pmf_grad(family, y_h, loc);
        g[LOGIT_PI] = exact_dpi;
        acc.push(heap.log_pi + lf, &g);
    }
    if heap.log_1m_pi > f64::NEG_INFINITY {
        if let Some((lo, hi)) = preimage_bounds(y_h, heap.eta) {
            family_terms(family, lo, hi, loc, |_, lf, mut g| {
                g[LOGIT_PI] = rounded_dpi;
                acc.push(heap.log_1m_pi + lf, &g);
            });
        }
    }
    acc.finish()
}
