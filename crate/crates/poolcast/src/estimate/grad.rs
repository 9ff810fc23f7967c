//! Per-observation scores and their analytic gradients in natural
//! coordinates.
//!
//! These kernels are the hot path shared by the optimizers and the moment
//! machinery. Gradient layout for the pool is [eta, gamma_1 (3), gamma_2 (3)]
//! following the pool's constituent order; constituent kernels return the
//! own-block 3-vector. Everything is validated against central finite
//! differences in the tests.

use crate::models::OneLagModel;
use crate::normal;
use crate::pool::{ConstituentParams, LinearPool};
use crate::scoring::ScoringRule;

/// Conditional Gaussian (m, s) with d m/d gamma and d s/d gamma.
struct GaussianSensitivity {
    m: f64,
    s: f64,
    dm: [f64; 3],
    ds: [f64; 3],
}

fn sensitivity(c: &ConstituentParams, y_prev: f64) -> GaussianSensitivity {
    match c {
        ConstituentParams::Ar1(p) => GaussianSensitivity {
            m: p.alpha0 + p.alpha1 * y_prev,
            s: p.sigma,
            dm: [1.0, y_prev, 0.0],
            ds: [0.0, 0.0, 1.0],
        },
        ConstituentParams::Arch1(p) => {
            let d = y_prev - p.mu;
            let s = (p.beta0 + p.beta1 * d * d).sqrt();
            GaussianSensitivity {
                m: p.mu,
                s,
                dm: [1.0, 0.0, 0.0],
                ds: [-p.beta1 * d / s, 0.5 / s, 0.5 * d * d / s],
            }
        }
    }
}

/// ln phi((y-m)/s) / s and its (d/dm, d/ds).
#[inline]
fn ln_pdf_parts(y: f64, m: f64, s: f64) -> (f64, f64, f64) {
    let z = (y - m) / s;
    let val = -0.5 * z * z - s.ln() - 0.5 * normal::LN_2PI;
    (val, z / s, (z * z - 1.0) / s)
}

/// ln Phi-bar((b-m)/s) and its (d/dm, d/ds).
#[inline]
fn ln_sf_parts(b: f64, m: f64, s: f64) -> (f64, f64, f64) {
    let zb = (b - m) / s;
    let val = normal::std_ln_sf(zb);
    let hazard = normal::std_hazard(zb);
    (val, hazard / s, hazard * zb / s)
}

/// Score of one constituent at one observation.
pub fn constituent_score(c: &ConstituentParams, rule: ScoringRule, y_prev: f64, y: f64) -> f64 {
    let g = sensitivity(c, y_prev);
    match rule {
        ScoringRule::LogScore => ln_pdf_parts(y, g.m, g.s).0,
        ScoringRule::Censored { threshold } => {
            if y <= threshold {
                ln_pdf_parts(y, g.m, g.s).0
            } else {
                ln_sf_parts(threshold, g.m, g.s).0
            }
        }
    }
}

/// Score and own-block gradient of one constituent at one observation.
pub fn constituent_score_grad(
    c: &ConstituentParams,
    rule: ScoringRule,
    y_prev: f64,
    y: f64,
) -> (f64, [f64; 3]) {
    let g = sensitivity(c, y_prev);
    let (val, dv_dm, dv_ds) = match rule {
        ScoringRule::LogScore => ln_pdf_parts(y, g.m, g.s),
        ScoringRule::Censored { threshold } => {
            if y <= threshold {
                ln_pdf_parts(y, g.m, g.s)
            } else {
                ln_sf_parts(threshold, g.m, g.s)
            }
        }
    };
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = dv_dm * g.dm[k] + dv_ds * g.ds[k];
    }
    (val, out)
}

/// Pool score at one observation.
pub fn pool_score(pool: &LinearPool, rule: ScoringRule, y_prev: f64, y: f64) -> f64 {
    let f = pool.predictive(y_prev);
    crate::scoring::score(rule, &f, y)
}

/// Pool score and full-theta gradient [eta, gamma_1, gamma_2] at one
/// observation.
pub fn pool_score_grad(
    pool: &LinearPool,
    rule: ScoringRule,
    y_prev: f64,
    y: f64,
) -> (f64, [f64; 7]) {
    let eta = pool.weights.eta();
    let g1 = sensitivity(&pool.constituents[0], y_prev);
    let g2 = sensitivity(&pool.constituents[1], y_prev);

    let in_region = match rule {
        ScoringRule::LogScore => true,
        ScoringRule::Censored { threshold } => y <= threshold,
    };

    let (l1, d1_dm, d1_ds, l2, d2_dm, d2_ds) = if in_region {
        let (l1, a, b) = ln_pdf_parts(y, g1.m, g1.s);
        let (l2, c, d) = ln_pdf_parts(y, g2.m, g2.s);
        (l1, a, b, l2, c, d)
    } else {
        let ScoringRule::Censored { threshold } = rule else { unreachable!() };
        let (l1, a, b) = ln_sf_parts(threshold, g1.m, g1.s);
        let (l2, c, d) = ln_sf_parts(threshold, g2.m, g2.s);
        (l1, a, b, l2, c, d)
    };

    // val = ln(eta e^{l1} + (1-eta) e^{l2}), stabilized.
    let a1 = eta.ln() + l1;
    let a2 = (1.0 - eta).ln() + l2;
    let val = normal::log_sum_exp(a1, a2);
    let p1 = (a1 - val).exp(); // posterior mass on constituent 1
    let p2 = (a2 - val).exp();

    let mut out = [0.0; 7];
    // d val / d eta = (e^{l1} - e^{l2}) / mix
    out[0] = (l1 - val).exp() - (l2 - val).exp();
    for k in 0..3 {
        out[1 + k] = p1 * (d1_dm * g1.dm[k] + d1_ds * g1.ds[k]);
        out[4 + k] = p2 * (d2_dm * g2.dm[k] + d2_ds * g2.ds[k]);
    }
    (val, out)
}
