//! GMM representation of the estimators: per-observation moment
//! contributions, numerical Jacobians, quadratic-spectral long-run variance,
//! and the sandwich covariances with their two-stage block structure.
//!
//! One-stage moments are the full score gradient q_t = dS(pool)/d theta.
//! Two-stage moments stack the pool's weight partial g_t with each
//! constituent's own-score gradient m_{j,t}; the Jacobian of that stack is
//! upper block triangular because m never depends on the weight.

use crate::error::{Error, Result};
use crate::estimate::{grad, transform, EstimationMode, ParameterVector};
use crate::par;
use crate::scoring::ScoringRule;
use crate::series::ObservedSeries;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Which estimator's moment system to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    OneStage,
    TwoStage,
}

impl MomentMode {
    pub fn of(mode: EstimationMode) -> Self {
        match mode {
            EstimationMode::OneStage => MomentMode::OneStage,
            EstimationMode::TwoStage | EstimationMode::TwoStageFixedWeight => MomentMode::TwoStage,
        }
    }
}

/// Condition-number ceiling beyond which M is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Refuse asymptotics at (or next to) the parameter boundary.
pub fn require_interior(theta: &ParameterVector) -> Result<()> {
    let layout = transform::ParamLayout::pool(&theta.layout());
    let u = layout.to_unconstrained(&theta.flatten());
    let names = ParameterVector::coord_names(&theta.layout());
    for (ui, name) in u.iter().zip(&names) {
        if !ui.is_finite() || ui.abs() > transform::BOUNDARY_LOGIT {
            return Err(Error::BoundaryEstimate(name.clone()));
        }
    }
    Ok(())
}

/// Per-observation moment contributions at `theta`: an (n-1) x d matrix
/// whose column means vanish at the estimate.
pub fn moment_contributions(
    mode: MomentMode,
    theta: &ParameterVector,
    series: &ObservedSeries,
    rule: ScoringRule,
) -> Result<DMatrix<f64>> {
    require_interior(theta)?;
    let values = series.values();
    let n = values.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { len: n, min: 2 });
    }
    let pool = theta.pool()?;
    let d = theta.dim();
    let rows: Vec<[f64; 7]> = match mode {
        MomentMode::OneStage => par::map_indices(n - 1, |i| {
            let t = i + 1;
            grad::pool_score_grad(&pool, rule, values[t - 1], values[t]).1
        }),
        MomentMode::TwoStage => {
            let c0 = pool.constituents[0];
            let c1 = pool.constituents[1];
            par::map_indices(n - 1, |i| {
                let t = i + 1;
                let g_eta = grad::pool_score_grad(&pool, rule, values[t - 1], values[t]).1[0];
                let m0 = grad::constituent_score_grad(&c0, rule, values[t - 1], values[t]).1;
                let m1 = grad::constituent_score_grad(&c1, rule, values[t - 1], values[t]).1;
                [g_eta, m0[0], m0[1], m0[2], m1[0], m1[1], m1[2]]
            })
        }
    };
    let mut out = DMatrix::zeros(n - 1, d);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..d {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}

fn moment_mean(
    mode: MomentMode,
    theta: &ParameterVector,
    series: &ObservedSeries,
    rule: ScoringRule,
) -> Result<DVector<f64>> {
    let contribs = moment_contributions(mode, theta, series, rule)?;
    Ok(column_means(&contribs))
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.iter().sum::<f64>() / n))
}

/// FD step caps keeping each natural coordinate inside its constraint set.
fn constraint_caps(theta: &ParameterVector) -> Vec<f64> {
    let flat = theta.flatten();
    let names = ParameterVector::coord_names(&theta.layout());
    names
        .iter()
        .zip(&flat)
        .map(|(name, &v)| {
            if name.contains("eta") || name.contains("beta1") {
                (v.min(1.0 - v) / 2.0).max(1e-12)
            } else if name.contains("alpha1") {
                ((1.0 - v.abs()) / 2.0).max(1e-12)
            } else if name.contains("sigma") || name.contains("beta0") {
                (v / 2.0).max(1e-12)
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Jacobian of the sample moment mean with respect to natural theta,
/// plus the two-stage blocks when applicable.
pub struct JacobianParts {
    pub m: DMatrix<f64>,
    /// (G_eta, G_gamma, M_gamma) for the two-stage system.
    pub blocks: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
}

pub fn jacobian(
    mode: MomentMode,
    theta: &ParameterVector,
    series: &ObservedSeries,
    rule: ScoringRule,
) -> Result<JacobianParts> {
    require_interior(theta)?;
    let layout = theta.layout();
    let flat = theta.flatten();
    let d = flat.len();
    let caps = constraint_caps(theta);
    let base_step = f64::EPSILON.cbrt();

    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = (base_step * flat[j].abs().max(1.0)).min(caps[j]);
        let mut up = flat.clone();
        up[j] += h;
        let mut dn = flat.clone();
        dn[j] -= h;
        let theta_up = ParameterVector::unflatten(&layout, &up)?;
        let theta_dn = ParameterVector::unflatten(&layout, &dn)?;
        let mu_up = moment_mean(mode, &theta_up, series, rule)?;
        let mu_dn = moment_mean(mode, &theta_dn, series, rule)?;
        for i in 0..d {
            m[(i, j)] = (mu_up[i] - mu_dn[i]) / (2.0 * h);
        }
    }

    let blocks = match mode {
        MomentMode::OneStage => None,
        MomentMode::TwoStage => {
            let d_eta = theta.weights.len() - 1;
            // m_{j,t} never reads the weight, so the lower-left block is zero
            // by construction; enforce it exactly.
            for i in d_eta..d {
                for j in 0..d_eta {
                    m[(i, j)] = 0.0;
                }
            }
            let g_eta = m.view((0, 0), (d_eta, d_eta)).into_owned();
            let g_gamma = m.view((0, d_eta), (d_eta, d - d_eta)).into_owned();
            let m_gamma = m.view((d_eta, d_eta), (d - d_eta, d - d_eta)).into_owned();
            Some((g_eta, g_gamma, m_gamma))
        }
    };
    Ok(JacobianParts { m, blocks })
}

/// Quadratic-spectral kernel weight.
fn qs_weight(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let d = 6.0 * std::f64::consts::PI * x / 5.0;
    25.0 / (12.0 * std::f64::consts::PI.powi(2) * x * x) * (d.sin() / d - d.cos())
}

/// Andrews AR(1) plug-in bandwidth for the QS kernel.
fn andrews_bandwidth(centered: &DMatrix<f64>) -> f64 {
    let n = centered.nrows();
    let mut num = 0.0;
    let mut den = 0.0;
    for col in centered.column_iter() {
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for t in 1..n {
            sxx += col[t - 1] * col[t - 1];
            sxy += col[t] * col[t - 1];
        }
        if sxx <= 1e-300 {
            continue; // constant column carries no information
        }
        let rho = (sxy / sxx).clamp(-0.97, 0.97);
        let mut rss = 0.0;
        for t in 1..n {
            let e = col[t] - rho * col[t - 1];
            rss += e * e;
        }
        let sig2 = rss / (n - 1) as f64;
        let one_minus = 1.0 - rho;
        num += 4.0 * rho * rho * sig2 * sig2 / one_minus.powi(8);
        den += sig2 * sig2 / one_minus.powi(4);
    }
    let alpha2 = if den > 0.0 { num / den } else { 0.0 };
    let st = 1.3221 * (alpha2 * n as f64).powf(0.2);
    st.max(1e-6)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrvInfo {
    pub bandwidth: f64,
    /// Magnitude of the eigenvalue floor applied to restore PSD-ness.
    pub psd_repair: f64,
}

/// HAC long-run covariance of the moment contributions: QS kernel, Andrews
/// automatic bandwidth, eigenvalue-floored to PSD.
pub fn long_run_variance(contributions: &DMatrix<f64>) -> Result<(DMatrix<f64>, LrvInfo)> {
    let n = contributions.nrows();
    let d = contributions.ncols();
    if n < 50 {
        return Err(Error::SeriesTooShort { len: n, min: 50 });
    }
    let means = column_means(contributions);
    let mut c = contributions.clone();
    for j in 0..d {
        for i in 0..n {
            c[(i, j)] -= means[j];
        }
    }
    let st = andrews_bandwidth(&c);

    let gamma = |lag: usize| -> DMatrix<f64> {
        let mut g = DMatrix::zeros(d, d);
        for t in lag..n {
            for a in 0..d {
                let ca = c[(t, a)];
                if ca == 0.0 {
                    continue;
                }
                for b in 0..d {
                    g[(a, b)] += ca * c[(t - lag, b)];
                }
            }
        }
        g / n as f64
    };

    let mut v = gamma(0);
    for lag in 1..n {
        let w = qs_weight(lag as f64 / st);
        if w.abs() < 1e-14 {
            continue;
        }
        let g = gamma(lag);
        v += (&g + g.transpose()) * w;
    }
    // Symmetrize, then floor eigenvalues at zero.
    let v_sym = (&v + v.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(v_sym.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let (v_out, repair) = if min_eig < 0.0 {
        let floored = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(0.0)));
        let q = &eig.eigenvectors;
        let rebuilt = q * DMatrix::from_diagonal(&floored) * q.transpose();
        ((&rebuilt + rebuilt.transpose()) * 0.5, -min_eig)
    } else {
        (v_sym, 0.0)
    };
    Ok((v_out, LrvInfo { bandwidth: st, psd_repair: repair }))
}

/// Full sandwich covariance (M, V, W) with two-stage block extras.
#[derive(Debug, Clone)]
pub struct SandwichCovariance {
    pub mode: MomentMode,
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub m_condition: f64,
    pub lrv: LrvInfo,
    pub two_stage: Option<TwoStageBlocks>,
}

#[derive(Debug, Clone)]
pub struct TwoStageBlocks {
    pub g_eta: DMatrix<f64>,
    pub g_gamma: DMatrix<f64>,
    pub m_gamma: DMatrix<f64>,
    /// Weight-block marginal from the block formula
    /// G_eta^{-1} [I, -G_gamma M_gamma^{-1}] V [..]' G_eta^{-1}'.
    pub eta_marginal: DMatrix<f64>,
    /// gamma-gamma block of W, the piece driving two-stage score variance.
    pub w_gamma_gamma: DMatrix<f64>,
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn sandwich(
    mode: MomentMode,
    theta: &ParameterVector,
    series: &ObservedSeries,
    rule: ScoringRule,
) -> Result<SandwichCovariance> {
    let contribs = moment_contributions(mode, theta, series, rule)?;
    let (v, lrv) = long_run_variance(&contribs)?;
    let parts = jacobian(mode, theta, series, rule)?;
    let m = parts.m;
    let cond = condition_number(&m);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::SingularJacobian { cond });
    }
    let m_inv = m.clone().try_inverse().ok_or(Error::SingularJacobian { cond })?;
    let w_raw = &m_inv * &v * m_inv.transpose();
    let w = (&w_raw + w_raw.transpose()) * 0.5;

    let two_stage = parts.blocks.map(|(g_eta, g_gamma, m_gamma)| {
        let d_eta = g_eta.nrows();
        let d = m.nrows();
        let g_eta_inv = g_eta.clone().try_inverse().expect("G_eta invertible when M is");
        let m_gamma_inv = m_gamma.clone().try_inverse().expect("M_gamma invertible when M is");
        // L = [I, -G_gamma M_gamma^{-1}]
        let mut l = DMatrix::zeros(d_eta, d);
        for i in 0..d_eta {
            l[(i, i)] = 1.0;
        }
        let right = -&g_gamma * &m_gamma_inv;
        l.view_mut((0, d_eta), (d_eta, d - d_eta)).copy_from(&right);
        let v_eta = &l * &v * l.transpose();
        let eta_marginal = &g_eta_inv * v_eta * g_eta_inv.transpose();
        let w_gamma_gamma = w.view((d_eta, d_eta), (d - d_eta, d - d_eta)).into_owned();
        TwoStageBlocks { g_eta, g_gamma, m_gamma, eta_marginal, w_gamma_gamma }
    });

    Ok(SandwichCovariance { mode, m, v, w, m_condition: cond, lrv, two_stage })
}

/// G_gamma and its norm: zero means first-stage estimation can be ignored
/// for second-stage inference.
pub fn first_stage_irrelevance_gap(cov: &SandwichCovariance) -> Result<(DMatrix<f64>, f64)> {
    let blocks = cov
        .two_stage
        .as_ref()
        .ok_or_else(|| Error::Config("first-stage gap needs a two-stage system".into()))?;
    let norm = blocks.g_gamma.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((blocks.g_gamma.clone(), norm))
}

/// Serialization mirror: matrices row-major with dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixArtifact {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixArtifact {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixArtifact {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichArtifact {
    pub mode: MomentMode,
    pub dim: usize,
    pub m: MatrixArtifact,
    pub v: MatrixArtifact,
    pub w: MatrixArtifact,
    pub m_condition: f64,
    pub hac_bandwidth: f64,
    pub psd_repair: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_marginal: Option<MatrixArtifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_gamma_gamma: Option<MatrixArtifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_gamma: Option<MatrixArtifact>,
}

impl From<&SandwichCovariance> for SandwichArtifact {
    fn from(s: &SandwichCovariance) -> Self {
        Self {
            mode: s.mode,
            dim: s.m.nrows(),
            m: (&s.m).into(),
            v: (&s.v).into(),
            w: (&s.w).into(),
            m_condition: s.m_condition,
            hac_bandwidth: s.lrv.bandwidth,
            psd_repair: s.lrv.psd_repair,
            eta_marginal: s.two_stage.as_ref().map(|b| (&b.eta_marginal).into()),
            w_gamma_gamma: s.two_stage.as_ref().map(|b| (&b.w_gamma_gamma).into()),
            g_gamma: s.two_stage.as_ref().map(|b| (&b.g_gamma).into()),
        }
    }
}

#[cfg(test)]
mod tests;
