//! Constituent predictive models and the censored AR-ARCH data generator.
//!
//! Two one-lag constituents ship: a Gaussian AR(1) and a constant-mean
//! Gaussian ARCH(1). The simulator produces the censored AR(1)-ARCH(1)
//! process together with its latent state, from which the exact
//! one-step-ahead predictive (a censored Gaussian with atoms at the clamp
//! bounds) can be rebuilt at every step.

use crate::error::{Error, Result};
use crate::normal;
use crate::series::ObservedSeries;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Gaussian AR(1): y_t = alpha0 + alpha1 y_{t-1} + sigma z_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub alpha0: f64,
    pub alpha1: f64,
    pub sigma: f64,
}

impl Ar1Params {
    pub fn new(alpha0: f64, alpha1: f64, sigma: f64) -> Result<Self> {
        let p = Self { alpha0, alpha1, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("ar1 sigma={} must be > 0", self.sigma)));
        }
        if !(self.alpha1.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ar1 alpha1={} outside (-1, 1)",
                self.alpha1
            )));
        }
        if !self.alpha0.is_finite() {
            return Err(Error::InvalidParameter("ar1 alpha0 not finite".into()));
        }
        Ok(())
    }
}

/// Constant-mean Gaussian ARCH(1): y_t = mu + v_t z_t,
/// v_t^2 = beta0 + beta1 (y_{t-1} - mu)^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arch1Params {
    pub mu: f64,
    pub beta0: f64,
    pub beta1: f64,
}

impl Arch1Params {
    pub fn new(mu: f64, beta0: f64, beta1: f64) -> Result<Self> {
        let p = Self { mu, beta0, beta1 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::InvalidParameter(format!("arch beta0={} must be > 0", self.beta0)));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::InvalidParameter(format!(
                "arch beta1={} outside [0, 1)",
                self.beta1
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter("arch mu not finite".into()));
        }
        Ok(())
    }
}

/// Censored AR-ARCH data generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub ar: f64,
    pub arch_const: f64,
    pub arch_coef: f64,
    pub censor_bound: f64,
    pub burn_in: usize,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self { ar: 0.5, arch_const: 0.2, arch_coef: 0.75, censor_bound: 5.0, burn_in: 1000 }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.censor_bound > 0.0) {
            return Err(Error::InvalidParameter("dgp censor_bound must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.arch_coef) {
            return Err(Error::InvalidParameter("dgp arch_coef outside [0, 1)".into()));
        }
        if !(self.arch_const > 0.0) {
            return Err(Error::InvalidParameter("dgp arch_const must be > 0".into()));
        }
        Ok(())
    }

    /// Unconditional latent innovation variance beta0 / (1 - beta1).
    fn stationary_arch_var(&self) -> f64 {
        self.arch_const / (1.0 - self.arch_coef)
    }
}

/// One-step-ahead conditional distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictiveDistribution {
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// Two-component Gaussian mixture; `weight` is the mass on the first
    /// component.
    Mixture2 {
        weight: f64,
        mean1: f64,
        sd1: f64,
        mean2: f64,
        sd2: f64,
    },
    /// Gaussian clamped to [lower, upper] with point masses at the bounds.
    CensoredGaussian {
        mean: f64,
        sd: f64,
        lower: f64,
        upper: f64,
    },
}

impl PredictiveDistribution {
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => normal::cdf(y, mean, sd),
            Self::Mixture2 { weight, mean1, sd1, mean2, sd2 } => {
                weight * normal::cdf(y, mean1, sd1) + (1.0 - weight) * normal::cdf(y, mean2, sd2)
            }
            Self::CensoredGaussian { mean, sd, lower, upper } => {
                if y < lower {
                    0.0
                } else if y >= upper {
                    1.0
                } else {
                    normal::cdf(y, mean, sd)
                }
            }
        }
    }

    /// Upper tail mass P(Y > y), computed without 1 - CDF subtraction.
    pub fn sf(&self, y: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => normal::sf(y, mean, sd),
            Self::Mixture2 { weight, mean1, sd1, mean2, sd2 } => {
                weight * normal::sf(y, mean1, sd1) + (1.0 - weight) * normal::sf(y, mean2, sd2)
            }
            Self::CensoredGaussian { mean, sd, lower, upper } => {
                if y < lower {
                    1.0
                } else if y >= upper {
                    0.0
                } else {
                    normal::sf(y, mean, sd)
                }
            }
        }
    }

    /// log of the upper tail mass; stable far into the tail.
    pub fn ln_sf(&self, y: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => normal::ln_sf(y, mean, sd),
            Self::Mixture2 { weight, mean1, sd1, mean2, sd2 } => normal::log_sum_exp(
                weight.ln() + normal::ln_sf(y, mean1, sd1),
                (1.0 - weight).ln() + normal::ln_sf(y, mean2, sd2),
            ),
            Self::CensoredGaussian { mean, sd, lower, upper } => {
                if y < lower {
                    0.0
                } else if y >= upper {
                    f64::NEG_INFINITY
                } else {
                    normal::ln_sf(y, mean, sd)
                }
            }
        }
    }

    /// Draw one realization.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match *self {
            Self::Gaussian { mean, sd } => mean + sd * z,
            Self::Mixture2 { weight, mean1, sd1, mean2, sd2 } => {
                if rng.random::<f64>() < weight {
                    mean1 + sd1 * z
                } else {
                    mean2 + sd2 * z
                }
            }
            Self::CensoredGaussian { mean, sd, lower, upper } => (mean + sd * z).clamp(lower, upper),
        }
    }

    /// log generalized density: ordinary log pdf at continuity points, log
    /// point mass at atoms, -inf off the support.
    pub fn ln_density(&self, y: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => normal::ln_pdf(y, mean, sd),
            Self::Mixture2 { weight, mean1, sd1, mean2, sd2 } => normal::log_sum_exp(
                weight.ln() + normal::ln_pdf(y, mean1, sd1),
                (1.0 - weight).ln() + normal::ln_pdf(y, mean2, sd2),
            ),
            Self::CensoredGaussian { mean, sd, lower, upper } => {
                if y == lower {
                    normal::ln_cdf(lower, mean, sd)
                } else if y == upper {
                    normal::ln_sf(upper, mean, sd)
                } else if y > lower && y < upper {
                    normal::ln_pdf(y, mean, sd)
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Predictive conditioned on one lag of the observed series.
pub trait OneLagModel {
    fn predictive(&self, y_prev: f64) -> PredictiveDistribution;
}

/// AR(1) one-step predictive: N(alpha0 + alpha1 y_prev, sigma^2).
pub fn ar1_predictive(params: &Ar1Params, y_prev: f64) -> PredictiveDistribution {
    PredictiveDistribution::Gaussian {
        mean: params.alpha0 + params.alpha1 * y_prev,
        sd: params.sigma,
    }
}

/// ARCH(1) one-step predictive: N(mu, beta0 + beta1 (y_prev - mu)^2).
pub fn arch1_predictive(params: &Arch1Params, y_prev: f64) -> PredictiveDistribution {
    let d = y_prev - params.mu;
    PredictiveDistribution::Gaussian {
        mean: params.mu,
        sd: (params.beta0 + params.beta1 * d * d).sqrt(),
    }
}

impl OneLagModel for Ar1Params {
    fn predictive(&self, y_prev: f64) -> PredictiveDistribution {
        ar1_predictive(self, y_prev)
    }
}

impl OneLagModel for Arch1Params {
    fn predictive(&self, y_prev: f64) -> PredictiveDistribution {
        arch1_predictive(self, y_prev)
    }
}

/// True one-step-ahead predictive of the censored DGP given the latent state
/// (x_{t-1}, v_{t-1}^2, z_{t-1}).
pub fn dgp_predictive(
    params: &DgpParams,
    x_prev: f64,
    v_prev_sq: f64,
    z_prev: f64,
) -> PredictiveDistribution {
    debug_assert!(v_prev_sq > 0.0);
    let var = params.arch_const + params.arch_coef * v_prev_sq * z_prev * z_prev;
    PredictiveDistribution::CensoredGaussian {
        mean: params.ar * x_prev,
        sd: var.sqrt(),
        lower: -params.censor_bound,
        upper: params.censor_bound,
    }
}

/// A simulated path with, per retained step, the exact one-step predictive
/// that generated it.
#[derive(Debug, Clone)]
pub struct DgpPath {
    pub y: Vec<f64>,
    pub pred_mean: Vec<f64>,
    pub pred_sd: Vec<f64>,
    pub censor_bound: f64,
}

impl DgpPath {
    pub fn predictive_at(&self, t: usize) -> PredictiveDistribution {
        PredictiveDistribution::CensoredGaussian {
            mean: self.pred_mean[t],
            sd: self.pred_sd[t],
            lower: -self.censor_bound,
            upper: self.censor_bound,
        }
    }
}

/// Simulate `n` observations, discarding `params.burn_in` initial draws.
///
/// Initialization: x_0 = 0, v_0^2 at its stationary value, z_0 drawn.
/// Bit-reproducible for a fixed stream.
pub fn simulate_dgp_path(params: &DgpParams, n: usize, rng: &mut ChaCha8Rng) -> DgpPath {
    params.validate().expect("invalid DGP parameters");
    let b = params.censor_bound;
    let mut x = 0.0_f64;
    let mut v_sq = params.stationary_arch_var();
    let mut z: f64 = rng.sample(StandardNormal);

    let mut path = DgpPath {
        y: Vec::with_capacity(n),
        pred_mean: Vec::with_capacity(n),
        pred_sd: Vec::with_capacity(n),
        censor_bound: b,
    };
    for step in 0..params.burn_in + n {
        let v_next_sq = params.arch_const + params.arch_coef * v_sq * z * z;
        let z_next: f64 = rng.sample(StandardNormal);
        let mean = params.ar * x;
        let x_next = mean + v_next_sq.sqrt() * z_next;
        if step >= params.burn_in {
            path.pred_mean.push(mean);
            path.pred_sd.push(v_next_sq.sqrt());
            path.y.push(x_next.clamp(-b, b));
        }
        x = x_next;
        v_sq = v_next_sq;
        z = z_next;
    }
    path
}

/// Simulate observations only (the latent state is dropped).
pub fn simulate_dgp(params: &DgpParams, n: usize, rng: &mut ChaCha8Rng) -> ObservedSeries {
    ObservedSeries::from_values(simulate_dgp_path(params, n, rng).y)
        .expect("simulated path invalid")
}

/// Simulate a path from any one-lag model by chaining its own predictives;
/// the workhorse of parametric-bootstrap checks.
pub fn simulate_one_lag<M: OneLagModel>(
    model: &M,
    y0: f64,
    n: usize,
    burn_in: usize,
    rng: &mut ChaCha8Rng,
) -> ObservedSeries {
    let mut y_prev = y0;
    let mut out = Vec::with_capacity(n);
    for step in 0..burn_in + n {
        let y = model.predictive(y_prev).sample(rng);
        if step >= burn_in {
            out.push(y);
        }
        y_prev = y;
    }
    ObservedSeries::from_values(out).expect("simulated path invalid")
}

/// Empirical p-quantile of the stationary distribution from `n_draws`
/// simulated observations.
pub fn stationary_quantile(
    params: &DgpParams,
    p: f64,
    n_draws: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0,1)");
    assert!(n_draws >= 100_000, "need at least 1e5 draws, got {n_draws}");
    let mut draws = simulate_dgp_path(params, n_draws, rng).y;
    draws.sort_by(f64::total_cmp);
    let rank = (p * n_draws as f64).ceil().max(1.0) as usize;
    draws[rank - 1]
}

/// Persistable record of a stationary-quantile computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileArtifact {
    pub p: f64,
    pub n_draws: usize,
    pub seed: u64,
    pub value: f64,
}
