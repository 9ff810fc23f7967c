//! Out-of-sample performance and its sampling variability: the replication
//! harness (simulate, re-estimate, score on a long holdout) and the
//! parameter-draw harness (Gaussian draws from the sandwich, scored on a
//! fixed holdout), plus summary moments, percentile intervals, and KDEs.

use crate::asymptotics::SandwichCovariance;
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_one_stage, stage_one, stage_two, EstimateOptions, EstimationMode, EstimationResult,
    ParameterVector,
};
use crate::models::{simulate_dgp_path, DgpParams, OneLagModel};
use crate::par;
use crate::pool::{ModelId, WeightVector};
use crate::rng;
use crate::scoring::{score, ScoringRule};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const Z_975: f64 = 1.959_963_984_540_054;

/// Conditioning context for scoring a holdout stretch: the value immediately
/// before the first holdout point, then the holdout itself.
#[derive(Debug, Clone, Copy)]
pub struct HoldoutContext<'a> {
    pub prev: f64,
    pub values: &'a [f64],
}

impl<'a> HoldoutContext<'a> {
    /// The last `len` values of `path`, conditioned on the value before them.
    pub fn tail_of(path: &'a [f64], len: usize) -> Result<Self> {
        if len == 0 || len + 1 > path.len() {
            return Err(Error::Config(format!(
                "holdout of {len} does not fit a path of {}",
                path.len()
            )));
        }
        let start = path.len() - len;
        Ok(Self { prev: path[start - 1], values: &path[start..] })
    }
}

/// Average `eval_rule` score of `model` over the holdout.
pub fn out_of_sample_score<M: OneLagModel + Sync>(
    model: &M,
    ctx: HoldoutContext<'_>,
    eval_rule: ScoringRule,
) -> Result<f64> {
    let tau = ctx.values.len();
    if tau == 0 {
        return Err(Error::EmptyScoreRange);
    }
    let scores = par::map_indices(tau, |i| {
        let y_prev = if i == 0 { ctx.prev } else { ctx.values[i - 1] };
        score(eval_rule, &model.predictive(y_prev), ctx.values[i])
    });
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::DivergentScore { index: bad });
    }
    Ok(par::sum(&scores) / tau as f64)
}

/// Average score of the true one-step predictives along one long simulated
/// path; the benchmark the combinations are measured against.
pub fn s_dgp(
    dgp: &DgpParams,
    eval_rule: ScoringRule,
    n_eval: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    assert!(n_eval >= 100_000, "need at least 1e5 evaluation draws");
    let path = simulate_dgp_path(dgp, n_eval, rng);
    let scores = par::map_indices(n_eval, |t| score(eval_rule, &path.predictive_at(t), path.y[t]));
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::DivergentScore { index: bad });
    }
    Ok(par::sum(&scores) / n_eval as f64)
}

/// Where a set of score draws came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawSource {
    MonteCarloReplication,
    ParameterGaussian,
}

/// Draws of an out-of-sample average score for one estimator cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSampleSet {
    pub draws: Vec<f64>,
    pub source: DrawSource,
    pub mode: EstimationMode,
    pub in_rule: String,
    pub eval_rule: String,
    pub n: usize,
    /// Score at the point estimate itself (parameter-draw harness only).
    pub point_estimate: Option<f64>,
}

impl ScoreSampleSet {
    pub fn validate(&self) -> Result<()> {
        if self.draws.len() < 2 {
            return Err(Error::DegenerateSample("need at least 2 draws".into()));
        }
        if self.draws.iter().any(|d| !d.is_finite()) {
            return Err(Error::DegenerateSample("non-finite draw".into()));
        }
        Ok(())
    }
}

/// First two moments of a draw set with normal-asymptotic CIs, benchmarked
/// against the DGP's attainable score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub mean: f64,
    pub variance: f64,
    pub scaled_variance: f64,
    /// Present with 30 or more draws.
    pub ci_mean: Option<(f64, f64)>,
    pub ci_variance: Option<(f64, f64)>,
    pub s_dgp: f64,
    pub expected_divergence: f64,
}

/// Sample moments (population divisor) and 95% CIs; the variance CI uses the
/// fourth-central-moment standard error. CIs are omitted below 30 draws.
pub fn summarize(set: &ScoreSampleSet, s_dgp: f64) -> Result<DivergenceSummary> {
    set.validate()?;
    let m = set.draws.len();
    let mf = m as f64;
    let mean = set.draws.iter().sum::<f64>() / mf;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for d in &set.draws {
        let c = d - mean;
        m2 += c * c;
        m4 += c * c * c * c;
    }
    m2 /= mf;
    m4 /= mf;
    let (ci_mean, ci_variance) = if m >= 30 {
        let se_mean = (m2 / mf).sqrt();
        let se_var = ((m4 - m2 * m2).max(0.0) / mf).sqrt();
        (
            Some((mean - Z_975 * se_mean, mean + Z_975 * se_mean)),
            Some((m2 - Z_975 * se_var, m2 + Z_975 * se_var)),
        )
    } else {
        (None, None)
    };
    Ok(DivergenceSummary {
        mean,
        variance: m2,
        scaled_variance: set.n as f64 * m2,
        ci_mean,
        ci_variance,
        s_dgp,
        expected_divergence: s_dgp - mean,
    })
}

/// Order-statistic interval at ranks ceil(a/2 N) and ceil((1-a/2) N).
pub fn percentile_ci(set: &ScoreSampleSet, level: f64) -> Result<(f64, f64)> {
    set.validate()?;
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Config(format!("CI level {level} outside [0,1]")));
    }
    let n = set.draws.len();
    let alpha = 1.0 - level;
    if level < 1.0 && alpha / 2.0 * (n as f64) < 1.0 {
        return Err(Error::DegenerateSample(format!("{n} draws too few for level {level}")));
    }
    let mut sorted = set.draws.clone();
    sorted.sort_by(f64::total_cmp);
    // ceil with protection against FP fuzz (0.025 * 20000 must be rank 500,
    // not 501).
    let ceil_rank = |x: f64| {
        let r = x.round();
        if (x - r).abs() < 1e-9 * x.abs().max(1.0) {
            r as usize
        } else {
            x.ceil() as usize
        }
    };
    let lo_rank = ceil_rank(alpha / 2.0 * n as f64).max(1);
    let hi_rank = ceil_rank((1.0 - alpha / 2.0) * n as f64).clamp(lo_rank, n);
    Ok((sorted[lo_rank - 1], sorted[hi_rank - 1]))
}

/// Gaussian-kernel density estimate with Silverman's bandwidth, evaluated on
/// `grid`.
pub fn kde(set: &ScoreSampleSet, grid: &[f64]) -> Result<Vec<f64>> {
    set.validate()?;
    if set.draws.len() < 10 {
        return Err(Error::DegenerateSample("KDE needs at least 10 draws".into()));
    }
    let h = silverman_bandwidth(&set.draws)?;
    let n = set.draws.len() as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let draws = &set.draws;
    Ok(par::map_indices(grid.len(), |g| {
        let x = grid[g];
        let mut acc = 0.0;
        for d in draws {
            let z = (x - d) / h;
            acc += (-0.5 * z * z).exp();
        }
        acc * norm
    }))
}

pub fn silverman_bandwidth(draws: &[f64]) -> Result<f64> {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * n).ceil() as usize).clamp(1, sorted.len()) - 1];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if !(h > 0.0) {
        return Err(Error::DegenerateSample("zero-variance draws give a degenerate spike".into()));
    }
    Ok(h)
}

/// A default plot grid spanning the draws with 3 bandwidths of margin.
pub fn kde_grid(set: &ScoreSampleSet, points: usize) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(&set.draws)?;
    let lo = set.draws.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = set.draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    Ok((0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect())
}

// ---------------------------------------------------------------------------
// parameter-draw harness

/// Result of the Gaussian parameter-draw harness for one estimator.
#[derive(Debug, Clone)]
pub struct ParameterDrawOutput {
    pub sets: Vec<ScoreSampleSet>,
    pub rejections: usize,
}

fn psd_sqrt(w: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (w + w.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let d = w.nrows();
    let roots = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

fn theta_is_valid(layout: &[ModelId], flat: &[f64]) -> bool {
    ParameterVector::unflatten(layout, flat).is_ok()
}

/// Draw i.i.d. parameter vectors from N(theta_hat, W/n) and score each on
/// the fixed holdout, per evaluation rule.
///
/// Draws violating the parameter constraints are rejected and redrawn (the
/// count is reported); more than 10% rejections aborts.
#[allow(clippy::too_many_arguments)]
pub fn parameter_sampling_distribution(
    theta_hat: &ParameterVector,
    cov: &SandwichCovariance,
    n: usize,
    ctx: HoldoutContext<'_>,
    eval_rules: &[(String, ScoringRule)],
    in_rule: &str,
    mode: EstimationMode,
    n_draws: usize,
    master_seed: u64,
) -> Result<ParameterDrawOutput> {
    if n_draws < 100 {
        return Err(Error::Config(format!("{n_draws} parameter draws < 100 floor")));
    }
    let layout = theta_hat.layout();
    let center = DVector::from_vec(theta_hat.flatten());
    let d = center.len();
    let scaled = &cov.w / n as f64;
    let root = psd_sqrt(&scaled);

    const MAX_ATTEMPTS: usize = 1000;
    let per_draw: Vec<Result<(Vec<f64>, usize)>> = par::map_indices(n_draws, |i| {
        let mut rng = rng::stream(master_seed, "param_draw", i as u64);
        for attempt in 0..MAX_ATTEMPTS {
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let flat: Vec<f64> = (&center + &root * z).iter().cloned().collect();
            if theta_is_valid(&layout, &flat) {
                let theta = ParameterVector::unflatten(&layout, &flat).expect("validated");
                let pool = theta.pool().expect("validated");
                let mut scores = Vec::with_capacity(eval_rules.len());
                for (_, rule) in eval_rules {
                    scores.push(out_of_sample_score(&pool, ctx, *rule)?);
                }
                return Ok((scores, attempt));
            }
        }
        Err(Error::TooManyInvalidDraws { invalid: MAX_ATTEMPTS, requested: 1 })
    });

    let mut rejections = 0usize;
    let mut per_rule: Vec<Vec<f64>> = vec![Vec::with_capacity(n_draws); eval_rules.len()];
    for item in per_draw {
        let (scores, attempts) = item?;
        rejections += attempts;
        for (r, s) in scores.into_iter().enumerate() {
            per_rule[r].push(s);
        }
    }
    if rejections * 10 > n_draws {
        return Err(Error::TooManyInvalidDraws { invalid: rejections, requested: n_draws });
    }

    let pool_hat = theta_hat.pool()?;
    let mut sets = Vec::with_capacity(eval_rules.len());
    for ((rule_id, rule), draws) in eval_rules.iter().zip(per_rule) {
        let point = out_of_sample_score(&pool_hat, ctx, *rule)?;
        let set = ScoreSampleSet {
            draws,
            source: DrawSource::ParameterGaussian,
            mode,
            in_rule: in_rule.to_string(),
            eval_rule: rule_id.clone(),
            n,
            point_estimate: Some(point),
        };
        set.validate()?;
        sets.push(set);
    }
    Ok(ParameterDrawOutput { sets, rejections })
}

// ---------------------------------------------------------------------------
// replication harness

/// Holdout sizing for the replication harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoldoutLen {
    /// Same evaluation window for every n.
    Fixed { len: usize },
    /// Window of `factor * n`, the paper-scale choice.
    Proportional { factor: usize },
}

impl HoldoutLen {
    pub fn resolve(&self, n: usize) -> usize {
        match self {
            HoldoutLen::Fixed { len } => *len,
            HoldoutLen::Proportional { factor } => factor * n,
        }
    }
}

/// Full specification of one replication experiment.
#[derive(Debug, Clone)]
pub struct HarnessSpec {
    pub dgp: DgpParams,
    pub layout: Vec<ModelId>,
    pub modes: Vec<EstimationMode>,
    pub in_rules: Vec<(String, ScoringRule)>,
    pub eval_rules: Vec<(String, ScoringRule)>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    /// Total simulated path length per replication; the evaluation window is
    /// its tail.
    pub path_len: usize,
    pub holdout: HoldoutLen,
    pub estimate: EstimateOptions,
    pub master_seed: u64,
    /// Limit weights per in-sample rule id, required by the fixed-weight mode.
    pub eta_star: BTreeMap<String, WeightVector>,
    /// Abort when more than this fraction of replications fail.
    pub max_failure_fraction: f64,
}

impl HarnessSpec {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications == 0 || self.sample_sizes.is_empty() {
            return Err(Error::Config("empty replication plan".into()));
        }
        for &n in &self.sample_sizes {
            let h = self.holdout.resolve(n);
            if n + h > self.path_len {
                return Err(Error::Config(format!(
                    "path_len {} cannot host n={n} plus holdout {h}",
                    self.path_len
                )));
            }
        }
        if self.modes.contains(&EstimationMode::TwoStageFixedWeight) {
            for (id, _) in &self.in_rules {
                if !self.eta_star.contains_key(id) {
                    return Err(Error::Config(format!(
                        "fixed-weight mode needs a reference weight for rule {id}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Output of [`replicate_simulation`], keyed in fixed configuration order.
#[derive(Debug, Clone)]
pub struct HarnessOutput {
    pub sets: Vec<ScoreSampleSet>,
    /// (replication index, error text) of excluded replications.
    pub failures: Vec<(usize, String)>,
}

impl HarnessOutput {
    pub fn get(
        &self,
        mode: EstimationMode,
        in_rule: &str,
        eval_rule: &str,
        n: usize,
    ) -> Option<&ScoreSampleSet> {
        self.sets.iter().find(|s| {
            s.mode == mode && s.in_rule == in_rule && s.eval_rule == eval_rule && s.n == n
        })
    }
}

type RepScores = Vec<((usize, usize, usize, usize), f64)>; // (mode, in_rule, eval_rule, n) -> score

fn run_one_replication(spec: &HarnessSpec, rep_id: u64) -> Result<RepScores> {
    let mut rng = rng::stream(spec.master_seed, "replication", rep_id);
    let path = simulate_dgp_path(&spec.dgp, spec.path_len, &mut rng);
    let est_seed = rng::stream(spec.master_seed, "estimate_seed", rep_id).random::<u64>();

    let mut out = Vec::new();
    for (ni, &n) in spec.sample_sizes.iter().enumerate() {
        let in_sample = crate::series::ObservedSeries::from_values(path.y[..n].to_vec())?;
        let holdout = HoldoutContext::tail_of(&path.y, spec.holdout.resolve(n))?;
        for (ri, (in_rule_id, in_rule)) in spec.in_rules.iter().enumerate() {
            let opts = EstimateOptions { seed: est_seed, ..spec.estimate };

            // Shared first stage: the two-stage and fixed-weight estimators
            // use the same constituent fits bit-for-bit.
            let stage1 = stage_one(&spec.layout, &in_sample, *in_rule, &opts)?;
            let mut fitted: Vec<(usize, EstimationResult)> = Vec::new();
            let mut two_stage_result: Option<EstimationResult> = None;
            for (mi, mode) in spec.modes.iter().enumerate() {
                let result = match mode {
                    EstimationMode::TwoStage => {
                        let r = stage_two(&in_sample, *in_rule, &opts, stage1.clone(), None)?;
                        two_stage_result = Some(r.clone());
                        r
                    }
                    EstimationMode::TwoStageFixedWeight => {
                        let eta = spec.eta_star.get(in_rule_id).ok_or_else(|| {
                            Error::Config(format!("missing reference weight for {in_rule_id}"))
                        })?;
                        stage_two(&in_sample, *in_rule, &opts, stage1.clone(), Some(eta.clone()))?
                    }
                    EstimationMode::OneStage => {
                        let warm = match &two_stage_result {
                            Some(r) => r.estimate.clone(),
                            None => {
                                stage_two(&in_sample, *in_rule, &opts, stage1.clone(), None)?
                                    .estimate
                            }
                        };
                        estimate_one_stage(&spec.layout, &in_sample, *in_rule, Some(&warm), &opts)?
                    }
                };
                fitted.push((mi, result));
            }
            for (mi, result) in &fitted {
                let pool = result.estimate.pool()?;
                for (ei, (_, eval_rule)) in spec.eval_rules.iter().enumerate() {
                    let s = out_of_sample_score(&pool, holdout, *eval_rule)?;
                    out.push(((*mi, ri, ei, ni), s));
                }
            }
        }
    }
    Ok(out)
}

/// Run the replication harness: for each replication, simulate a fresh path,
/// estimate every (mode, in-rule) at every n, and score each fit on the
/// path's tail under every evaluation rule.
///
/// `rep_ids` addresses the per-replication RNG streams (defaults to 0..M);
/// permuting it permutes draws without changing their values.
pub fn replicate_simulation(spec: &HarnessSpec, rep_ids: Option<&[u64]>) -> Result<HarnessOutput> {
    spec.validate()?;
    let m = spec.replications;
    let default_ids: Vec<u64>;
    let ids: &[u64] = match rep_ids {
        Some(ids) => {
            if ids.len() != m {
                return Err(Error::Config("rep_ids length != replications".into()));
            }
            ids
        }
        None => {
            default_ids = (0..m as u64).collect();
            &default_ids
        }
    };

    let per_rep: Vec<std::result::Result<RepScores, String>> =
        par::map_indices(m, |i| run_one_replication(spec, ids[i]).map_err(|e| e.to_string()));

    let mut failures = Vec::new();
    let mut draws: BTreeMap<(usize, usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for (rep, item) in per_rep.into_iter().enumerate() {
        match item {
            Ok(scores) => {
                for (key, s) in scores {
                    draws.entry(key).or_default().push(s);
                }
            }
            Err(msg) => failures.push((rep, msg)),
        }
    }
    let limit = (spec.max_failure_fraction * m as f64).floor() as usize;
    if failures.len() > limit {
        return Err(Error::TooManyReplicationFailures { failed: failures.len(), total: m, limit });
    }

    let mut sets = Vec::new();
    for (mi, mode) in spec.modes.iter().enumerate() {
        for (ri, (in_rule_id, _)) in spec.in_rules.iter().enumerate() {
            for (ei, (eval_rule_id, _)) in spec.eval_rules.iter().enumerate() {
                for (ni, &n) in spec.sample_sizes.iter().enumerate() {
                    let key = (mi, ri, ei, ni);
                    let set = ScoreSampleSet {
                        draws: draws.remove(&key).unwrap_or_default(),
                        source: DrawSource::MonteCarloReplication,
                        mode: *mode,
                        in_rule: in_rule_id.clone(),
                        eval_rule: eval_rule_id.clone(),
                        n,
                        point_estimate: None,
                    };
                    set.validate()?;
                    sets.push(set);
                }
            }
        }
    }
    Ok(HarnessOutput { sets, failures })
}
