//! Score-maximizing estimation of pool and constituent parameters.
//!
//! All optimization runs in an unconstrained space (logit for the weight and
//! the bounded coefficients, log for the scale parameters); the mapping back
//! to natural parameters is a smooth bijection onto the interior of the
//! parameter space. Multi-start covers multimodality; starts are a moment
//! start plus a transformed-space Latin hypercube around it, and the
//! one-stage estimator additionally warm-starts from the two-stage solution.

use crate::error::{Error, Result};
use crate::models::{Ar1Params, Arch1Params, OneLagModel};

use crate::optim::{self, BfgsOptions, Objective};
use crate::pool::{ConstituentParams, LinearPool, ModelId, WeightVector};
use crate::rng;
use crate::scoring::{average_score, ScoringRule};
use crate::series::ObservedSeries;
use serde::{Deserialize, Serialize};

pub mod grad;
pub mod transform;

use transform::ParamLayout;

/// Stacked pool parameters theta = [eta' gamma']'.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub weights: WeightVector,
    pub constituents: Vec<ConstituentParams>,
}

impl ParameterVector {
    pub fn new(weights: WeightVector, constituents: Vec<ConstituentParams>) -> Result<Self> {
        if weights.len() != constituents.len() {
            return Err(Error::InvalidParameter("weights/constituents length mismatch".into()));
        }
        for c in &constituents {
            c.validate()?;
        }
        Ok(Self { weights, constituents })
    }

    /// Total natural dimension: K-1 free weights plus constituent blocks.
    pub fn dim(&self) -> usize {
        self.weights.len() - 1 + self.constituents.iter().map(|c| c.dim()).sum::<usize>()
    }

    /// Natural coordinates [eta, gamma_1..., gamma_2...].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.weights.weights()[..self.weights.len() - 1]);
        for c in &self.constituents {
            match c {
                ConstituentParams::Ar1(p) => out.extend_from_slice(&[p.alpha0, p.alpha1, p.sigma]),
                ConstituentParams::Arch1(p) => out.extend_from_slice(&[p.mu, p.beta0, p.beta1]),
            }
        }
        out
    }

    /// Rebuild from natural coordinates; inverse of [`Self::flatten`].
    pub fn unflatten(layout: &[ModelId], flat: &[f64]) -> Result<Self> {
        let k = layout.len();
        let expected = k - 1 + 3 * k;
        if flat.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "flat length {} != expected {expected}",
                flat.len()
            )));
        }
        let mut weights: Vec<f64> = flat[..k - 1].to_vec();
        let free_sum: f64 = weights.iter().sum();
        weights.push(1.0 - free_sum);
        let mut constituents = Vec::with_capacity(k);
        let mut at = k - 1;
        for id in layout {
            let block = &flat[at..at + 3];
            at += 3;
            constituents.push(match id {
                ModelId::Ar1 => ConstituentParams::Ar1(Ar1Params::new(block[0], block[1], block[2])?),
                ModelId::Arch1 => {
                    ConstituentParams::Arch1(Arch1Params::new(block[0], block[1], block[2])?)
                }
            });
        }
        Self::new(WeightVector::new(weights)?, constituents)
    }

    pub fn layout(&self) -> Vec<ModelId> {
        self.constituents.iter().map(|c| c.id()).collect()
    }

    pub fn pool(&self) -> Result<LinearPool> {
        LinearPool::new(self.weights.clone(), self.constituents.clone())
    }

    /// Names of natural coordinates, aligned with [`Self::flatten`].
    pub fn coord_names(layout: &[ModelId]) -> Vec<String> {
        let mut names = vec!["eta".to_string(); layout.len() - 1];
        if layout.len() > 2 {
            for (i, n) in names.iter_mut().enumerate() {
                *n = format!("eta{i}");
            }
        }
        for id in layout {
            match id {
                ModelId::Ar1 => names.extend(
                    ["ar1.alpha0", "ar1.alpha1", "ar1.sigma"].map(str::to_string),
                ),
                ModelId::Arch1 => names.extend(
                    ["arch1.mu", "arch1.beta0", "arch1.beta1"].map(str::to_string),
                ),
            }
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    OneStage,
    TwoStage,
    TwoStageFixedWeight,
}

impl EstimationMode {
    pub fn id(&self) -> &'static str {
        match self {
            EstimationMode::OneStage => "one_stage",
            EstimationMode::TwoStage => "two_stage",
            EstimationMode::TwoStageFixedWeight => "two_stage_fixed_weight",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Number of multi-starts (moment start plus Latin hypercube).
    pub starts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Stream seed for start generation.
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { starts: 5, max_iter: 500, grad_tol: 1e-8, seed: 0 }
    }
}

impl EstimateOptions {
    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions { max_iter: self.max_iter, grad_tol: self.grad_tol }
    }
}

/// Outcome of a full pool estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub estimate: ParameterVector,
    pub achieved_score: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub starts_used: usize,
    pub mode: EstimationMode,
    /// Natural coordinates pinned to (or next to) their boundary, if any.
    pub boundary_flags: Vec<String>,
}

/// Outcome of a single-constituent fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstituentFit {
    pub params: ConstituentParams,
    pub achieved_score: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub starts_used: usize,
    pub boundary_flags: Vec<String>,
}

/// A persisted large-sample optimum (theta* from two-stage, theta^0 from
/// one-stage).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub theta: ParameterVector,
    pub mode: EstimationMode,
    pub source_sample_size: usize,
    pub rule_id: String,
    pub seed: u64,
    pub achieved_score: f64,
}

const MIN_SERIES_LEN: usize = 30;

fn check_series(series: &ObservedSeries) -> Result<()> {
    if series.len() < MIN_SERIES_LEN {
        return Err(Error::SeriesTooShort { len: series.len(), min: MIN_SERIES_LEN });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// objectives in unconstrained space

struct ConstituentObjective<'a> {
    id: ModelId,
    values: &'a [f64],
    rule: ScoringRule,
    layout: ParamLayout,
}

impl<'a> ConstituentObjective<'a> {
    fn new(id: ModelId, values: &'a [f64], rule: ScoringRule) -> Self {
        Self { id, values, rule, layout: ParamLayout::constituent(id) }
    }

    fn params_of(&self, u: &[f64]) -> ConstituentParams {
        let nat = self.layout.to_natural(u);
        match self.id {
            ModelId::Ar1 => ConstituentParams::Ar1(Ar1Params {
                alpha0: nat[0],
                alpha1: nat[1],
                sigma: nat[2],
            }),
            ModelId::Arch1 => ConstituentParams::Arch1(Arch1Params {
                mu: nat[0],
                beta0: nat[1],
                beta1: nat[2],
            }),
        }
    }
}

impl Objective for ConstituentObjective<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let params = self.params_of(u);
        let n = self.values.len();
        let sums = crate::par::map_indices(n - 1, |i| {
            let t = i + 1;
            grad::constituent_score(&params, self.rule, self.values[t - 1], self.values[t])
        });
        crate::par::sum(&sums) / (n - 1) as f64
    }

    fn value_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let params = self.params_of(u);
        let n = self.values.len();
        let rows = crate::par::map_indices(n - 1, |i| {
            let t = i + 1;
            grad::constituent_score_grad(&params, self.rule, self.values[t - 1], self.values[t])
        });
        let mut score_acc = Vec::with_capacity(rows.len());
        let mut gsum = [0.0f64; 3];
        for (s, g) in &rows {
            score_acc.push(*s);
            for k in 0..3 {
                gsum[k] += g[k];
            }
        }
        let inv = 1.0 / (n - 1) as f64;
        let value = crate::par::sum(&score_acc) * inv;
        let nat = self.layout.to_natural(u);
        let scale = self.layout.dnatural_du_from_natural(&nat);
        let grad_u: Vec<f64> = (0..3).map(|k| gsum[k] * inv * scale[k]).collect();
        (value, grad_u)
    }
}

struct PoolObjective<'a> {
    layout_ids: Vec<ModelId>,
    values: &'a [f64],
    rule: ScoringRule,
    layout: ParamLayout,
}

impl<'a> PoolObjective<'a> {
    fn new(layout_ids: Vec<ModelId>, values: &'a [f64], rule: ScoringRule) -> Self {
        let layout = ParamLayout::pool(&layout_ids);
        Self { layout_ids, values, rule, layout }
    }

    fn pool_of(&self, u: &[f64]) -> LinearPool {
        let nat = self.layout.to_natural(u);
        ParameterVector::unflatten(&self.layout_ids, &nat)
            .expect("interior transform produced invalid parameters")
            .pool()
            .expect("pool construction")
    }
}

impl Objective for PoolObjective<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let pool = self.pool_of(u);
        let n = self.values.len();
        let sums = crate::par::map_indices(n - 1, |i| {
            let t = i + 1;
            grad::pool_score(&pool, self.rule, self.values[t - 1], self.values[t])
        });
        crate::par::sum(&sums) / (n - 1) as f64
    }

    fn value_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let pool = self.pool_of(u);
        let n = self.values.len();
        let d = 7;
        let rows = crate::par::map_indices(n - 1, |i| {
            let t = i + 1;
            grad::pool_score_grad(&pool, self.rule, self.values[t - 1], self.values[t])
        });
        let mut score_acc = Vec::with_capacity(rows.len());
        let mut gsum = vec![0.0f64; d];
        for (s, g) in &rows {
            score_acc.push(*s);
            for k in 0..d {
                gsum[k] += g[k];
            }
        }
        let inv = 1.0 / (n - 1) as f64;
        let value = crate::par::sum(&score_acc) * inv;
        let nat = self.layout.to_natural(u);
        let scale = self.layout.dnatural_du_from_natural(&nat);
        let grad_u: Vec<f64> = (0..d).map(|k| gsum[k] * inv * scale[k]).collect();
        (value, grad_u)
    }
}

struct EtaObjective<'a> {
    constituents: Vec<ConstituentParams>,
    values: &'a [f64],
    rule: ScoringRule,
}

impl EtaObjective<'_> {
    fn pool_of(&self, u: &[f64]) -> LinearPool {
        let eta = transform::sigmoid(u[0]);
        LinearPool::new(
            WeightVector::new(vec![eta, 1.0 - eta]).expect("sigmoid keeps the simplex"),
            self.constituents.clone(),
        )
        .expect("pool construction")
    }
}

impl Objective for EtaObjective<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let pool = self.pool_of(u);
        let n = self.values.len();
        let sums = crate::par::map_indices(n - 1, |i| {
            let t = i + 1;
            grad::pool_score(&pool, self.rule, self.values[t - 1], self.values[t])
        });
        crate::par::sum(&sums) / (n - 1) as f64
    }

    fn value_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let pool = self.pool_of(u);
        let eta = pool.weights.eta();
        let n = self.values.len();
        let rows = crate::par::map_indices(n - 1, |i| {
            let t = i + 1;
            grad::pool_score_grad(&pool, self.rule, self.values[t - 1], self.values[t])
        });
        let mut score_acc = Vec::with_capacity(rows.len());
        let mut g_eta = 0.0;
        for (s, g) in &rows {
            score_acc.push(*s);
            g_eta += g[0];
        }
        let inv = 1.0 / (n - 1) as f64;
        let value = crate::par::sum(&score_acc) * inv;
        (value, vec![g_eta * inv * eta * (1.0 - eta)])
    }
}

// ---------------------------------------------------------------------------
// multi-start driver

struct StartOutcome {
    report: optim::BfgsReport,
    natural: Vec<f64>,
}

fn run_starts<O: Objective>(
    objective: &O,
    layout: &ParamLayout,
    starts: &[Vec<f64>],
    opts: &EstimateOptions,
) -> Result<StartOutcome> {
    if starts.is_empty() {
        return Err(Error::OptimizationFailed("no starts supplied".into()));
    }
    let reports: Vec<optim::BfgsReport> =
        starts.iter().map(|s| optim::maximize(objective, s, &opts.bfgs())).collect();
    // Best by value; ties broken by lexicographically smallest natural vector
    // for determinism.
    let mut best: Option<StartOutcome> = None;
    for report in reports {
        if !report.value.is_finite() {
            continue;
        }
        let natural = layout.to_natural(&report.x);
        let better = match &best {
            None => true,
            Some(b) => {
                report.value > b.report.value
                    || (report.value == b.report.value && lex_less(&natural, &b.natural))
            }
        };
        if better {
            best = Some(StartOutcome { report, natural });
        }
    }
    best.ok_or_else(|| {
        Error::OptimizationFailed(format!(
            "all {} starts produced non-finite objective values",
            starts.len()
        ))
    })
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

// ---------------------------------------------------------------------------
// starts

fn lag1_autocorr(values: &[f64]) -> f64 {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..n {
        let d = values[t] - mean;
        den += d * d;
        if t > 0 {
            num += d * (values[t - 1] - mean);
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn sample_var(values: &[f64]) -> f64 {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

fn moment_start_constituent(id: ModelId, values: &[f64]) -> ConstituentParams {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = sample_var(values).max(1e-12);
    match id {
        ModelId::Ar1 => {
            let rho = lag1_autocorr(values).clamp(-0.9, 0.9);
            let sigma = (var * (1.0 - rho * rho)).sqrt().max(1e-4);
            ConstituentParams::Ar1(Ar1Params { alpha0: mean * (1.0 - rho), alpha1: rho, sigma })
        }
        ModelId::Arch1 => {
            let demeaned_sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            let b1 = lag1_autocorr(&demeaned_sq).clamp(0.05, 0.9);
            let b0 = (var * (1.0 - b1)).max(1e-6);
            ConstituentParams::Arch1(Arch1Params { mu: mean, beta0: b0, beta1: b1 })
        }
    }
}

fn moment_start_pool(layout: &[ModelId], values: &[f64]) -> ParameterVector {
    let constituents = layout.iter().map(|id| moment_start_constituent(*id, values)).collect();
    let k = layout.len();
    ParameterVector::new(
        WeightVector::new(vec![1.0 / k as f64; k]).expect("uniform weights"),
        constituents,
    )
    .expect("moment start valid")
}

/// Moment start in u-space followed by an LHS cloud around it.
fn build_starts(
    center_u: Vec<f64>,
    half_widths: &[f64],
    count: usize,
    seed: u64,
    label: &str,
) -> Vec<Vec<f64>> {
    let mut starts = vec![center_u.clone()];
    if count > 1 {
        let bounds: Vec<(f64, f64)> = center_u
            .iter()
            .zip(half_widths)
            .map(|(c, w)| (c - w, c + w))
            .collect();
        let mut rng = rng::stream(seed, label, 0);
        starts.extend(optim::latin_hypercube(&bounds, count - 1, &mut rng));
    }
    starts
}

fn constituent_half_widths(id: ModelId) -> [f64; 3] {
    match id {
        // [alpha0, atanh-scale alpha1, ln sigma]
        ModelId::Ar1 => [0.75, 1.2, 0.8],
        // [mu, ln beta0, logit beta1]
        ModelId::Arch1 => [0.75, 1.0, 1.5],
    }
}

// ---------------------------------------------------------------------------
// public estimators

/// Fit a single constituent by maximizing its in-sample average score.
pub fn estimate_constituent(
    id: ModelId,
    series: &ObservedSeries,
    rule: ScoringRule,
    opts: &EstimateOptions,
) -> Result<(ConstituentParams, ConstituentFit)> {
    check_series(series)?;
    let values = series.values();
    let layout = ParamLayout::constituent(id);
    let objective = ConstituentObjective::new(id, values, rule);

    let start = moment_start_constituent(id, values);
    let center_u = layout.to_unconstrained(&constituent_flat(&start));
    let starts = build_starts(
        center_u,
        &constituent_half_widths(id),
        opts.starts,
        opts.seed,
        "constituent_starts",
    );
    let outcome = run_starts(&objective, &layout, &starts, opts)?;
    let (natural, flags) = layout.snap_boundaries(&outcome.report.x, &constituent_names(id));
    let params = constituent_from_flat(id, &natural)?;

    let achieved = average_score(rule, &AsModel(&params), series, 1..values.len())?;
    Ok((
        params,
        ConstituentFit {
            params,
            achieved_score: achieved,
            converged: outcome.report.converged,
            iterations: outcome.report.iterations,
            gradient_norm: outcome.report.grad_norm,
            starts_used: starts.len(),
            boundary_flags: flags,
        },
    ))
}

fn constituent_flat(c: &ConstituentParams) -> [f64; 3] {
    match c {
        ConstituentParams::Ar1(p) => [p.alpha0, p.alpha1, p.sigma],
        ConstituentParams::Arch1(p) => [p.mu, p.beta0, p.beta1],
    }
}

fn constituent_from_flat(id: ModelId, flat: &[f64]) -> Result<ConstituentParams> {
    Ok(match id {
        ModelId::Ar1 => ConstituentParams::Ar1(Ar1Params::new(flat[0], flat[1], flat[2])?),
        ModelId::Arch1 => ConstituentParams::Arch1(Arch1Params::new(flat[0], flat[1], flat[2])?),
    })
}

fn constituent_names(id: ModelId) -> Vec<String> {
    match id {
        ModelId::Ar1 => ["ar1.alpha0", "ar1.alpha1", "ar1.sigma"].map(str::to_string).to_vec(),
        ModelId::Arch1 => ["arch1.mu", "arch1.beta0", "arch1.beta1"].map(str::to_string).to_vec(),
    }
}

struct AsModel<'a>(&'a ConstituentParams);

impl OneLagModel for AsModel<'_> {
    fn predictive(&self, y_prev: f64) -> crate::models::PredictiveDistribution {
        self.0.predictive(y_prev)
    }
}

/// Two-stage estimation: constituents first, then the weight with the
/// constituent parameters frozen.
pub fn estimate_two_stage(
    layout: &[ModelId],
    series: &ObservedSeries,
    rule: ScoringRule,
    opts: &EstimateOptions,
) -> Result<EstimationResult> {
    let stage1 = stage_one(layout, series, rule, opts)?;
    stage_two(series, rule, opts, stage1, None)
}

/// Two-stage with the weight pinned to `eta_star` instead of optimized.
pub fn estimate_two_stage_fixed_weight(
    layout: &[ModelId],
    series: &ObservedSeries,
    rule: ScoringRule,
    eta_star: &WeightVector,
    opts: &EstimateOptions,
) -> Result<EstimationResult> {
    let stage1 = stage_one(layout, series, rule, opts)?;
    stage_two(series, rule, opts, stage1, Some(eta_star.clone()))
}

/// Shared first stage, reusable across two-stage variants so the gamma block
/// is bit-identical between them.
pub fn stage_one(
    layout: &[ModelId],
    series: &ObservedSeries,
    rule: ScoringRule,
    opts: &EstimateOptions,
) -> Result<Vec<ConstituentFit>> {
    layout
        .iter()
        .map(|id| {
            estimate_constituent(*id, series, rule, opts)
                .map(|(_, fit)| fit)
                .map_err(|e| Error::OptimizationFailed(format!("stage 1 ({id:?}): {e}")))
        })
        .collect()
}

/// Shared second stage on top of frozen constituent fits.
pub fn stage_two(
    series: &ObservedSeries,
    rule: ScoringRule,
    opts: &EstimateOptions,
    stage1: Vec<ConstituentFit>,
    fixed_weight: Option<WeightVector>,
) -> Result<EstimationResult> {
    let values = series.values();
    let constituents: Vec<ConstituentParams> = stage1.iter().map(|f| f.params).collect();
    let mut flags: Vec<String> =
        stage1.iter().flat_map(|f| f.boundary_flags.iter().cloned()).collect();
    let stage1_converged = stage1.iter().all(|f| f.converged);
    let stage1_iterations: usize = stage1.iter().map(|f| f.iterations).sum();

    let (weights, mode, report) = match fixed_weight {
        Some(w) => {
            if w.len() != constituents.len() {
                return Err(Error::InvalidParameter("fixed weight length mismatch".into()));
            }
            (w, EstimationMode::TwoStageFixedWeight, None)
        }
        None => {
            let objective =
                EtaObjective { constituents: constituents.clone(), values, rule };
            // The pool score is concave in eta, so a few fixed starts suffice.
            let starts: Vec<Vec<f64>> = vec![vec![0.0], vec![-2.0], vec![2.0]];
            let eta_layout = ParamLayout::eta_only();
            let outcome = run_starts(&objective, &eta_layout, &starts, opts)
                .map_err(|e| Error::OptimizationFailed(format!("stage 2: {e}")))?;
            let (nat, eta_flags) =
                eta_layout.snap_boundaries(&outcome.report.x, &["eta".to_string()]);
            flags.extend(eta_flags);
            (
                WeightVector::new(vec![nat[0], 1.0 - nat[0]])?,
                EstimationMode::TwoStage,
                Some(outcome.report),
            )
        }
    };

    let estimate = ParameterVector::new(weights, constituents)?;
    let achieved = average_score(rule, &estimate.pool()?, series, 1..values.len())?;
    let (iterations, gradient_norm, converged) = match &report {
        Some(r) => (stage1_iterations + r.iterations, r.grad_norm, stage1_converged && r.converged),
        None => {
            let worst = stage1.iter().map(|f| f.gradient_norm).fold(0.0, f64::max);
            (stage1_iterations, worst, stage1_converged)
        }
    };
    Ok(EstimationResult {
        estimate,
        achieved_score: achieved,
        converged,
        iterations,
        gradient_norm,
        starts_used: stage1.iter().map(|f| f.starts_used).sum::<usize>() + 3,
        mode,
        boundary_flags: flags,
    })
}

/// One-stage (joint) estimation over all pool parameters.
///
/// `init`, when given, joins the start list; the harness passes the
/// two-stage solution so the joint optimum can never fall below it.
pub fn estimate_one_stage(
    layout: &[ModelId],
    series: &ObservedSeries,
    rule: ScoringRule,
    init: Option<&ParameterVector>,
    opts: &EstimateOptions,
) -> Result<EstimationResult> {
    check_series(series)?;
    let values = series.values();
    let param_layout = ParamLayout::pool(layout);
    let objective = PoolObjective::new(layout.to_vec(), values, rule);

    let center = moment_start_pool(layout, values);
    let center_u = param_layout.to_unconstrained(&center.flatten());
    let mut half_widths = vec![2.0]; // eta logit
    for id in layout {
        half_widths.extend_from_slice(&constituent_half_widths(*id));
    }
    let mut starts =
        build_starts(center_u, &half_widths, opts.starts, opts.seed, "one_stage_starts");

    let warm = match init {
        Some(theta) => Some(theta.clone()),
        None => Some(estimate_two_stage(layout, series, rule, opts)?.estimate),
    };
    if let Some(theta) = warm {
        starts.push(param_layout.to_unconstrained(&theta.flatten()));
    }

    let outcome = run_starts(&objective, &param_layout, &starts, opts)?;
    let names = ParameterVector::coord_names(layout);
    let (natural, flags) = param_layout.snap_boundaries(&outcome.report.x, &names);
    let estimate = ParameterVector::unflatten(layout, &natural)?;
    let achieved = average_score(rule, &estimate.pool()?, series, 1..values.len())?;

    Ok(EstimationResult {
        estimate,
        achieved_score: achieved,
        converged: outcome.report.converged,
        iterations: outcome.report.iterations,
        gradient_norm: outcome.report.grad_norm,
        starts_used: starts.len(),
        mode: EstimationMode::OneStage,
        boundary_flags: flags,
    })
}

/// One long-realization run of both estimators, for use as error-free limit
/// optima (theta* and theta^0).
pub fn compute_reference_optima(
    layout: &[ModelId],
    rule: ScoringRule,
    rule_id: &str,
    dgp: &crate::models::DgpParams,
    n_large: usize,
    seed: u64,
    opts: &EstimateOptions,
) -> Result<(ReferenceOptimum, ReferenceOptimum)> {
    if n_large < 100_000 {
        return Err(Error::Config(format!("reference sample {n_large} below 1e5 floor")));
    }
    let mut rng = rng::stream(seed, "reference_path", 0);
    let series = crate::models::simulate_dgp(dgp, n_large, &mut rng);
    let two = estimate_two_stage(layout, &series, rule, opts)?;
    let one = estimate_one_stage(layout, &series, rule, Some(&two.estimate), opts)?;
    let wrap = |res: &EstimationResult, mode: EstimationMode| ReferenceOptimum {
        theta: res.estimate.clone(),
        mode,
        source_sample_size: n_large,
        rule_id: rule_id.to_string(),
        seed,
        achieved_score: res.achieved_score,
    };
    Ok((wrap(&two, EstimationMode::TwoStage), wrap(&one, EstimationMode::OneStage)))
}

#[cfg(test)]
mod tests;
