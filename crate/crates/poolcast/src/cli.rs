//! Batch pipelines behind the `poolcast` binary: config parsing, the
//! replicate / empirical / reference / score commands, and result emission.
//!
//! Every run is driven by a TOML config plus flag overrides, all randomness
//! derives from the single configured seed, and each run emits a config echo
//! sufficient to reproduce it byte-for-byte.

use crate::error::{Error, Result};
use crate::estimate::{
    compute_reference_optima, estimate_one_stage, stage_one, stage_two, EstimateOptions,
    EstimationMode, EstimationResult, ReferenceOptimum,
};
use crate::evaluate::{
    self, kde, kde_grid, parameter_sampling_distribution, percentile_ci, replicate_simulation,
    summarize, HarnessSpec, HoldoutContext, HoldoutLen, ScoreSampleSet,
};
use crate::models::{DgpParams, QuantileArtifact};
use crate::pool::ModelId;
use crate::rng;
use crate::scoring::{RuleSpec, ScoringRule};
use crate::series::{load_csv, split, ObservedSeries, SampleSplit};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable supplying the default output directory.
pub const OUT_DIR_ENV: &str = "POOLCAST_OUT";

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub run: RunSection,
    #[serde(default)]
    pub dgp: DgpParams,
    pub rules: RulesSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub replicate: Option<ReplicateSection>,
    #[serde(default)]
    pub empirical: Option<EmpiricalSection>,
    #[serde(default)]
    pub reference: Option<ReferenceSection>,
    #[serde(default)]
    pub score: Option<ScoreSection>,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    /// Master seed; every subsystem stream derives from it. No wall-clock
    /// fallback by design.
    pub seed: u64,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RulesSection {
    pub in_sample: Vec<RuleSpec>,
    pub eval: Vec<RuleSpec>,
    #[serde(default = "default_quantile_draws")]
    pub quantile_draws: usize,
}

fn default_quantile_draws() -> usize {
    10_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSection {
    #[serde(default = "default_modes")]
    pub modes: Vec<EstimationMode>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            modes: default_modes(),
            starts: default_starts(),
            max_iter: default_max_iter(),
            grad_tol: default_grad_tol(),
        }
    }
}

fn default_modes() -> Vec<EstimationMode> {
    vec![EstimationMode::OneStage, EstimationMode::TwoStage]
}
fn default_starts() -> usize {
    5
}
fn default_max_iter() -> usize {
    500
}
fn default_grad_tol() -> f64 {
    1e-8
}

/// Sample sizes as an explicit list or an inclusive range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSizes {
    List(Vec<usize>),
    Range { start: usize, end: usize, #[serde(default = "default_step")] step: usize },
}

fn default_step() -> usize {
    1
}

impl SampleSizes {
    pub fn resolve(&self) -> Vec<usize> {
        match self {
            SampleSizes::List(v) => v.clone(),
            SampleSizes::Range { start, end, step } => {
                (*start..=*end).step_by((*step).max(1)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateSection {
    pub replications: usize,
    pub sample_sizes: SampleSizes,
    pub path_len: usize,
    pub holdout: HoldoutLen,
    #[serde(default = "default_reference_n")]
    pub reference_n: usize,
    #[serde(default = "default_reference_n")]
    pub sdgp_n: usize,
    #[serde(default = "default_max_failure_fraction")]
    pub max_failure_fraction: f64,
}

fn default_reference_n() -> usize {
    1_000_000
}
fn default_max_failure_fraction() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalSection {
    pub input: PathBuf,
    pub in_sample_len: usize,
    pub holdout_len: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn default_draws() -> usize {
    20_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSection {
    #[serde(default = "default_reference_n")]
    pub n_large: usize,
    #[serde(default = "default_reference_n")]
    pub sdgp_n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSection {
    pub input: PathBuf,
    pub in_sample_len: usize,
    pub holdout_len: usize,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.dgp.validate()?;
        if self.rules.in_sample.is_empty() || self.rules.eval.is_empty() {
            return Err(Error::Config("need at least one in-sample and one eval rule".into()));
        }
        for r in self.rules.in_sample.iter().chain(&self.rules.eval) {
            r.validate()?;
        }
        if self.estimator.modes.is_empty() {
            return Err(Error::Config("need at least one estimator mode".into()));
        }
        Ok(())
    }

    fn estimate_options(&self, seed: u64) -> EstimateOptions {
        EstimateOptions {
            starts: self.estimator.starts,
            max_iter: self.estimator.max_iter,
            grad_tol: self.estimator.grad_tol,
            seed,
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.run
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

/// The pool layout every pipeline uses.
pub fn default_layout() -> Vec<ModelId> {
    vec![ModelId::Ar1, ModelId::Arch1]
}

// ---------------------------------------------------------------------------
// rule resolution and reference caching

/// A rule spec resolved to a concrete threshold, echoed in run metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedRule {
    pub id: String,
    pub spec: RuleSpec,
    /// Censor threshold, when the rule is censored.
    pub threshold: Option<f64>,
    /// Where the threshold came from ("stationary_quantile" / "in_sample_quantile").
    pub threshold_source: Option<String>,
}

impl ResolvedRule {
    pub fn rule(&self) -> ScoringRule {
        match self.threshold {
            None => ScoringRule::LogScore,
            Some(b) => ScoringRule::Censored { threshold: b },
        }
    }
}

/// Resolve rules against the simulation DGP's stationary quantiles
/// (estimated once per level and cached under `out/quantiles/`).
fn resolve_rules_stationary(
    specs: &[RuleSpec],
    dgp: &DgpParams,
    n_draws: usize,
    seed: u64,
    cache_dir: &Path,
) -> Result<Vec<ResolvedRule>> {
    specs
        .iter()
        .map(|spec| {
            let resolved = match spec {
                RuleSpec::Ls => ResolvedRule {
                    id: spec.id(),
                    spec: *spec,
                    threshold: None,
                    threshold_source: None,
                },
                RuleSpec::Cs { p } => {
                    let key_src = serde_json::to_vec(&(p, dgp, n_draws, seed))?;
                    let key = rng::content_key(&key_src);
                    let path = cache_dir.join(format!("quantile_{}_{key}.json", spec.id()));
                    let artifact: QuantileArtifact = if path.exists() {
                        serde_json::from_reader(std::fs::File::open(&path)?)?
                    } else {
                        let value = crate::models::stationary_quantile(
                            dgp,
                            *p,
                            n_draws,
                            &mut rng::stream(seed, "stationary_quantile", 0),
                        );
                        let artifact = QuantileArtifact { p: *p, n_draws, seed, value };
                        write_json(&path, &artifact)?;
                        artifact
                    };
                    ResolvedRule {
                        id: spec.id(),
                        spec: *spec,
                        threshold: Some(artifact.value),
                        threshold_source: Some("stationary_quantile".into()),
                    }
                }
            };
            Ok(resolved)
        })
        .collect()
}

/// Resolve rules against frozen in-sample empirical quantiles.
fn resolve_rules_in_sample(specs: &[RuleSpec], in_sample: &ObservedSeries) -> Vec<ResolvedRule> {
    specs
        .iter()
        .map(|spec| match spec {
            RuleSpec::Ls => ResolvedRule {
                id: spec.id(),
                spec: *spec,
                threshold: None,
                threshold_source: None,
            },
            RuleSpec::Cs { p } => ResolvedRule {
                id: spec.id(),
                spec: *spec,
                threshold: Some(in_sample.empirical_quantile(*p)),
                threshold_source: Some("in_sample_quantile".into()),
            },
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceArtifact {
    pub rule: ResolvedRule,
    pub theta_star: ReferenceOptimum,
    pub theta_zero: ReferenceOptimum,
}

/// Compute (or load) the large-sample reference optima for one rule.
fn reference_for_rule(
    cfg: &RunConfig,
    rule: &ResolvedRule,
    n_large: usize,
    out_dir: &Path,
) -> Result<(ReferenceArtifact, bool)> {
    let key_src = serde_json::to_vec(&(&rule.id, rule.threshold, &cfg.dgp, n_large, cfg.run.seed))?;
    let key = rng::content_key(&key_src);
    let path = out_dir.join("reference").join(format!("reference_{}_{key}.json", rule.id));
    if path.exists() {
        let artifact: ReferenceArtifact = serde_json::from_reader(std::fs::File::open(&path)?)?;
        return Ok((artifact, true));
    }
    let opts = cfg.estimate_options(rng::stream(cfg.run.seed, "reference_est", 0).random());
    let (star, zero) = compute_reference_optima(
        &default_layout(),
        rule.rule(),
        &rule.id,
        &cfg.dgp,
        n_large,
        cfg.run.seed,
        &opts,
    )?;
    let artifact = ReferenceArtifact { rule: rule.clone(), theta_star: star, theta_zero: zero };
    write_json(&path, &artifact)?;
    Ok((artifact, false))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdgpArtifact {
    pub rule: ResolvedRule,
    pub n_eval: usize,
    pub seed: u64,
    pub value: f64,
}

fn sdgp_for_rule(
    cfg: &RunConfig,
    rule: &ResolvedRule,
    n_eval: usize,
    out_dir: &Path,
) -> Result<(SdgpArtifact, bool)> {
    let key_src = serde_json::to_vec(&(&rule.id, rule.threshold, &cfg.dgp, n_eval, cfg.run.seed))?;
    let key = rng::content_key(&key_src);
    let path = out_dir.join("reference").join(format!("sdgp_{}_{key}.json", rule.id));
    if path.exists() {
        let artifact: SdgpArtifact = serde_json::from_reader(std::fs::File::open(&path)?)?;
        return Ok((artifact, true));
    }
    let value = evaluate::s_dgp(
        &cfg.dgp,
        rule.rule(),
        n_eval,
        &mut rng::stream(cfg.run.seed, "sdgp_path", 0),
    )?;
    let artifact = SdgpArtifact { rule: rule.clone(), n_eval, seed: cfg.run.seed, value };
    write_json(&path, &artifact)?;
    Ok((artifact, false))
}

// ---------------------------------------------------------------------------
// output helpers

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

fn create_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Run metadata: resolved thresholds, caching, failures, timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub resolved_in_rules: Vec<ResolvedRule>,
    pub resolved_eval_rules: Vec<ResolvedRule>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub failures: Vec<String>,
}

fn echo_config(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("config_echo.json"), cfg)
}

// ---------------------------------------------------------------------------
// commands

/// The replication pipeline: reference optima and the DGP benchmark first
/// (cached), then the Monte Carlo harness, summaries, and KDE curves.
pub fn cmd_replicate(cfg: &RunConfig, dry_run: bool) -> Result<PathBuf> {
    let section = cfg
        .replicate
        .clone()
        .ok_or_else(|| Error::Config("missing [replicate] section".into()))?;
    let out_dir = cfg.out_dir();
    let quantile_dir = out_dir.join("quantiles");

    let sample_sizes = section.sample_sizes.resolve();
    if dry_run {
        let fits = section.replications
            * sample_sizes.len()
            * cfg.rules.in_sample.len()
            * cfg.estimator.modes.len();
        println!(
            "dry-run: {} replications x {} sample sizes x {} in-rules x {} modes = {} fits; \
             path length {} per replication; reference n={}, s_dgp n={}",
            section.replications,
            sample_sizes.len(),
            cfg.rules.in_sample.len(),
            cfg.estimator.modes.len(),
            fits,
            section.path_len,
            section.reference_n,
            section.sdgp_n,
        );
        return Ok(out_dir);
    }

    let in_rules = resolve_rules_stationary(
        &cfg.rules.in_sample,
        &cfg.dgp,
        cfg.rules.quantile_draws,
        cfg.run.seed,
        &quantile_dir,
    )?;
    let eval_rules = resolve_rules_stationary(
        &cfg.rules.eval,
        &cfg.dgp,
        cfg.rules.quantile_draws,
        cfg.run.seed,
        &quantile_dir,
    )?;

    // Step 1-2: reference optima per in-sample rule (needed by the
    // fixed-weight mode); Step 3: the DGP benchmark per eval rule.
    let mut eta_star = BTreeMap::new();
    let needs_reference =
        cfg.estimator.modes.contains(&EstimationMode::TwoStageFixedWeight);
    if needs_reference {
        for rule in &in_rules {
            let (artifact, hit) = reference_for_rule(cfg, rule, section.reference_n, &out_dir)?;
            println!(
                "reference {} ({}): eta* = {:.6}",
                rule.id,
                if hit { "cache hit" } else { "computed" },
                artifact.theta_star.theta.weights.eta()
            );
            eta_star.insert(rule.id.clone(), artifact.theta_star.theta.weights.clone());
        }
    }
    let mut sdgp_by_rule = BTreeMap::new();
    for rule in &eval_rules {
        let (artifact, hit) = sdgp_for_rule(cfg, rule, section.sdgp_n, &out_dir)?;
        println!(
            "s_dgp {} ({}): {:.6}",
            rule.id,
            if hit { "cache hit" } else { "computed" },
            artifact.value
        );
        sdgp_by_rule.insert(rule.id.clone(), artifact.value);
    }

    let spec = HarnessSpec {
        dgp: cfg.dgp,
        layout: default_layout(),
        modes: cfg.estimator.modes.clone(),
        in_rules: in_rules.iter().map(|r| (r.id.clone(), r.rule())).collect(),
        eval_rules: eval_rules.iter().map(|r| (r.id.clone(), r.rule())).collect(),
        sample_sizes,
        replications: section.replications,
        path_len: section.path_len,
        holdout: section.holdout,
        estimate: cfg.estimate_options(0),
        master_seed: cfg.run.seed,
        eta_star,
        max_failure_fraction: section.max_failure_fraction,
    };
    let output = replicate_simulation(&spec, None)?;

    // draws.csv
    let mut draws = create_writer(&out_dir.join("draws.csv"))?;
    writeln!(draws, "mode,in_rule,eval_rule,n,replication,score")?;
    for set in &output.sets {
        for (i, score) in set.draws.iter().enumerate() {
            writeln!(
                draws,
                "{},{},{},{},{},{}",
                set.mode.id(),
                set.in_rule,
                set.eval_rule,
                set.n,
                i,
                score
            )?;
        }
    }
    draws.flush()?;

    // summaries.csv
    let mut summaries = create_writer(&out_dir.join("summaries.csv"))?;
    writeln!(
        summaries,
        "mode,in_rule,eval_rule,n,draws,mean,ci_mean_lo,ci_mean_hi,variance,ci_var_lo,ci_var_hi,\
         scaled_variance,s_dgp,expected_divergence,div_ci_lo,div_ci_hi"
    )?;
    for set in &output.sets {
        let s_dgp = sdgp_by_rule[&set.eval_rule];
        let s = summarize(set, s_dgp)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            summaries,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            set.mode.id(),
            set.in_rule,
            set.eval_rule,
            set.n,
            set.draws.len(),
            s.mean,
            opt(s.ci_mean.map(|c| c.0)),
            opt(s.ci_mean.map(|c| c.1)),
            s.variance,
            opt(s.ci_variance.map(|c| c.0)),
            opt(s.ci_variance.map(|c| c.1)),
            s.scaled_variance,
            s.s_dgp,
            s.expected_divergence,
            opt(s.ci_mean.map(|c| s.s_dgp - c.1)),
            opt(s.ci_mean.map(|c| s.s_dgp - c.0)),
        )?;
    }
    summaries.flush()?;

    write_kde_csv(&out_dir.join("kde.csv"), &output.sets)?;

    echo_config(cfg, &out_dir)?;
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        command: "replicate".into(),
        seed: cfg.run.seed,
        resolved_in_rules: in_rules,
        resolved_eval_rules: eval_rules,
        notes: vec![format!(
            "holdout windows overlap across sample sizes within a replication by design \
             (same path tail); {} replications",
            section.replications
        )],
        failures: output
            .failures
            .iter()
            .map(|(rep, msg)| format!("replication {rep}: {msg}"))
            .collect(),
    };
    write_json(&out_dir.join("run_meta.json"), &meta)?;
    Ok(out_dir)
}

fn write_kde_csv(path: &Path, sets: &[ScoreSampleSet]) -> Result<()> {
    let mut out = create_writer(path)?;
    writeln!(out, "mode,in_rule,eval_rule,n,grid,density")?;
    for set in sets {
        if set.draws.len() < 10 {
            continue;
        }
        let grid = kde_grid(set, 512)?;
        let dens = kde(set, &grid)?;
        for (g, d) in grid.iter().zip(&dens) {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                set.mode.id(),
                set.in_rule,
                set.eval_rule,
                set.n,
                g,
                d
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row of the empirical summary table.
#[derive(Debug, Clone, Serialize)]
struct EmpiricalRow {
    in_rule: String,
    mode: &'static str,
    eval_rule: String,
    point: f64,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    draws: usize,
    rejections: usize,
    boundary: bool,
}

/// Fixed-window empirical pipeline: estimate each (rule, mode), build the
/// sandwich, push Gaussian parameter draws through the fixed holdout, and
/// emit a Table-1-shaped summary.
pub fn cmd_empirical(cfg: &RunConfig, dry_run: bool) -> Result<PathBuf> {
    let section = cfg
        .empirical
        .clone()
        .ok_or_else(|| Error::Config("missing [empirical] section".into()))?;
    if cfg.estimator.modes.contains(&EstimationMode::TwoStageFixedWeight) {
        return Err(Error::Config(
            "fixed-weight mode needs a simulation reference weight; drop it from \
             [estimator].modes for empirical runs"
                .into(),
        ));
    }
    let out_dir = cfg.out_dir();

    let series = load_csv(&section.input)?;
    let split_spec = SampleSplit::new(section.in_sample_len, section.holdout_len)?;
    let (in_sample, holdout) = split(&series, split_spec)?;

    if dry_run {
        println!(
            "dry-run: {} rows -> n={} tau={}; {} in-rules x {} modes, {} Gaussian draws each, \
             {} eval rules",
            series.len(),
            section.in_sample_len,
            section.holdout_len,
            cfg.rules.in_sample.len(),
            cfg.estimator.modes.len(),
            section.draws,
            cfg.rules.eval.len(),
        );
        return Ok(out_dir);
    }

    // Thresholds frozen on the in-sample window before anything out-of-sample.
    let in_rules = resolve_rules_in_sample(&cfg.rules.in_sample, &in_sample);
    let eval_rules = resolve_rules_in_sample(&cfg.rules.eval, &in_sample);
    let eval_pairs: Vec<(String, ScoringRule)> =
        eval_rules.iter().map(|r| (r.id.clone(), r.rule())).collect();

    let ctx = HoldoutContext {
        prev: in_sample.values()[in_sample.len() - 1],
        values: holdout.values(),
    };
    let layout = default_layout();
    let n = in_sample.len();

    let mut rows: Vec<EmpiricalRow> = Vec::new();
    let mut kde_sets: Vec<ScoreSampleSet> = Vec::new();
    let mut notes = Vec::new();
    let mut draw_rows: Vec<(String, &'static str, String, usize, f64)> = Vec::new();

    for (ri, in_rule) in in_rules.iter().enumerate() {
        let est_seed = rng::stream(cfg.run.seed, "empirical_est", ri as u64).random();
        let opts = cfg.estimate_options(est_seed);
        let stage1 = stage_one(&layout, &in_sample, in_rule.rule(), &opts)?;
        let mut two_stage_cache: Option<EstimationResult> = None;

        for mode in &cfg.estimator.modes {
            let result = match mode {
                EstimationMode::TwoStage => {
                    let r = stage_two(&in_sample, in_rule.rule(), &opts, stage1.clone(), None)?;
                    two_stage_cache = Some(r.clone());
                    r
                }
                EstimationMode::OneStage => {
                    let warm = match &two_stage_cache {
                        Some(r) => r.estimate.clone(),
                        None => {
                            let r =
                                stage_two(&in_sample, in_rule.rule(), &opts, stage1.clone(), None)?;
                            let est = r.estimate.clone();
                            two_stage_cache = Some(r);
                            est
                        }
                    };
                    estimate_one_stage(&layout, &in_sample, in_rule.rule(), Some(&warm), &opts)?
                }
                EstimationMode::TwoStageFixedWeight => unreachable!("rejected above"),
            };
            let mode_id = mode.id();
            write_json(
                &out_dir.join("estimates").join(format!("{}_{mode_id}.json", in_rule.id)),
                &result,
            )?;

            let pool = result.estimate.pool()?;
            let boundary = !result.boundary_flags.is_empty();
            if boundary {
                notes.push(format!(
                    "{} {}: boundary estimate ({:?}); Gaussian-draw stage disabled",
                    in_rule.id, mode_id, result.boundary_flags
                ));
            }

            if boundary {
                for (eval_id, eval_rule) in &eval_pairs {
                    let point = evaluate::out_of_sample_score(&pool, ctx, *eval_rule)?;
                    rows.push(EmpiricalRow {
                        in_rule: in_rule.id.clone(),
                        mode: mode_id,
                        eval_rule: eval_id.clone(),
                        point,
                        ci_lo: None,
                        ci_hi: None,
                        draws: 0,
                        rejections: 0,
                        boundary: true,
                    });
                }
                continue;
            }

            let cov = crate::asymptotics::sandwich(
                crate::asymptotics::MomentMode::of(*mode),
                &result.estimate,
                &in_sample,
                in_rule.rule(),
            )?;
            write_json(
                &out_dir.join("sandwich").join(format!("{}_{mode_id}.json", in_rule.id)),
                &crate::asymptotics::SandwichArtifact::from(&cov),
            )?;

            let draw_seed = rng::stream(cfg.run.seed, "empirical_draws", ri as u64).random();
            let output = parameter_sampling_distribution(
                &result.estimate,
                &cov,
                n,
                ctx,
                &eval_pairs,
                &in_rule.id,
                *mode,
                section.draws,
                draw_seed,
            )?;
            for set in output.sets {
                let (lo, hi) = percentile_ci(&set, 0.95)?;
                rows.push(EmpiricalRow {
                    in_rule: in_rule.id.clone(),
                    mode: mode_id,
                    eval_rule: set.eval_rule.clone(),
                    point: set.point_estimate.expect("parameter harness sets the point"),
                    ci_lo: Some(lo),
                    ci_hi: Some(hi),
                    draws: set.draws.len(),
                    rejections: output.rejections,
                    boundary: false,
                });
                for (i, d) in set.draws.iter().enumerate() {
                    draw_rows.push((
                        set.in_rule.clone(),
                        mode_id,
                        set.eval_rule.clone(),
                        i,
                        *d,
                    ));
                }
                kde_sets.push(set);
            }
        }
    }

    let mut table = create_writer(&out_dir.join("empirical_summary.csv"))?;
    writeln!(
        table,
        "in_rule,mode,eval_rule,point,ci_lo,ci_hi,draws,rejections,boundary"
    )?;
    for r in &rows {
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{}",
            r.in_rule,
            r.mode,
            r.eval_rule,
            r.point,
            r.ci_lo.map(|v| v.to_string()).unwrap_or_default(),
            r.ci_hi.map(|v| v.to_string()).unwrap_or_default(),
            r.draws,
            r.rejections,
            r.boundary,
        )?;
    }
    table.flush()?;

    let mut draws_csv = create_writer(&out_dir.join("draws.csv"))?;
    writeln!(draws_csv, "in_rule,mode,eval_rule,draw,score")?;
    for (in_rule, mode, eval_rule, i, d) in &draw_rows {
        writeln!(draws_csv, "{in_rule},{mode},{eval_rule},{i},{d}")?;
    }
    draws_csv.flush()?;

    write_kde_csv(&out_dir.join("kde.csv"), &kde_sets)?;

    echo_config(cfg, &out_dir)?;
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        command: "empirical".into(),
        seed: cfg.run.seed,
        resolved_in_rules: in_rules,
        resolved_eval_rules: eval_rules,
        notes,
        failures: vec![],
    };
    write_json(&out_dir.join("run_meta.json"), &meta)?;
    Ok(out_dir)
}

/// Compute and cache reference optima plus the DGP benchmark per rule.
pub fn cmd_reference(cfg: &RunConfig, dry_run: bool) -> Result<PathBuf> {
    let section = cfg.reference.clone().unwrap_or(ReferenceSection {
        n_large: default_reference_n(),
        sdgp_n: default_reference_n(),
    });
    let out_dir = cfg.out_dir();
    if dry_run {
        println!(
            "dry-run: reference optima for {} rules at n={}, s_dgp for {} rules at n={}",
            cfg.rules.in_sample.len(),
            section.n_large,
            cfg.rules.eval.len(),
            section.sdgp_n
        );
        return Ok(out_dir);
    }
    let quantile_dir = out_dir.join("quantiles");
    let in_rules = resolve_rules_stationary(
        &cfg.rules.in_sample,
        &cfg.dgp,
        cfg.rules.quantile_draws,
        cfg.run.seed,
        &quantile_dir,
    )?;
    let eval_rules = resolve_rules_stationary(
        &cfg.rules.eval,
        &cfg.dgp,
        cfg.rules.quantile_draws,
        cfg.run.seed,
        &quantile_dir,
    )?;
    for rule in &in_rules {
        let start = std::time::Instant::now();
        let (artifact, hit) = reference_for_rule(cfg, rule, section.n_large, &out_dir)?;
        println!(
            "reference {} ({}, {:.1}s): eta* {:.6}, eta0 {:.6}",
            rule.id,
            if hit { "cache hit" } else { "computed" },
            start.elapsed().as_secs_f64(),
            artifact.theta_star.theta.weights.eta(),
            artifact.theta_zero.theta.weights.eta(),
        );
    }
    for rule in &eval_rules {
        let start = std::time::Instant::now();
        let (artifact, hit) = sdgp_for_rule(cfg, rule, section.sdgp_n, &out_dir)?;
        println!(
            "s_dgp {} ({}, {:.1}s): {:.6}",
            rule.id,
            if hit { "cache hit" } else { "computed" },
            start.elapsed().as_secs_f64(),
            artifact.value
        );
    }
    echo_config(cfg, &out_dir)?;
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        command: "reference".into(),
        seed: cfg.run.seed,
        resolved_in_rules: in_rules,
        resolved_eval_rules: eval_rules,
        notes: vec![],
        failures: vec![],
    };
    write_json(&out_dir.join("run_meta.json"), &meta)?;
    Ok(out_dir)
}

/// Fixed-window estimation plus in/out-of-sample score table, no
/// parameter-uncertainty stage.
pub fn cmd_score(cfg: &RunConfig, dry_run: bool) -> Result<PathBuf> {
    let section =
        cfg.score.clone().ok_or_else(|| Error::Config("missing [score] section".into()))?;
    if cfg.estimator.modes.contains(&EstimationMode::TwoStageFixedWeight) {
        return Err(Error::Config(
            "fixed-weight mode needs a simulation reference weight; drop it from \
             [estimator].modes for score runs"
                .into(),
        ));
    }
    let out_dir = cfg.out_dir();
    let series = load_csv(&section.input)?;
    let split_spec = SampleSplit::new(section.in_sample_len, section.holdout_len)?;
    let (in_sample, holdout) = split(&series, split_spec)?;
    if dry_run {
        println!(
            "dry-run: score {} rows -> n={} tau={}, {} in-rules x {} modes",
            series.len(),
            section.in_sample_len,
            section.holdout_len,
            cfg.rules.in_sample.len(),
            cfg.estimator.modes.len()
        );
        return Ok(out_dir);
    }
    let in_rules = resolve_rules_in_sample(&cfg.rules.in_sample, &in_sample);
    let eval_rules = resolve_rules_in_sample(&cfg.rules.eval, &in_sample);
    let ctx = HoldoutContext {
        prev: in_sample.values()[in_sample.len() - 1],
        values: holdout.values(),
    };
    let layout = default_layout();

    let mut out = create_writer(&out_dir.join("scores.csv"))?;
    writeln!(out, "in_rule,mode,eval_rule,in_sample_score,out_of_sample_score,boundary")?;
    for (ri, in_rule) in in_rules.iter().enumerate() {
        let est_seed = rng::stream(cfg.run.seed, "score_est", ri as u64).random();
        let opts = cfg.estimate_options(est_seed);
        let stage1 = stage_one(&layout, &in_sample, in_rule.rule(), &opts)?;
        let mut two_stage_cache: Option<EstimationResult> = None;
        for mode in &cfg.estimator.modes {
            let result = match mode {
                EstimationMode::TwoStage => {
                    let r = stage_two(&in_sample, in_rule.rule(), &opts, stage1.clone(), None)?;
                    two_stage_cache = Some(r.clone());
                    r
                }
                EstimationMode::OneStage => {
                    let warm = match &two_stage_cache {
                        Some(r) => r.estimate.clone(),
                        None => {
                            let r =
                                stage_two(&in_sample, in_rule.rule(), &opts, stage1.clone(), None)?;
                            let est = r.estimate.clone();
                            two_stage_cache = Some(r);
                            est
                        }
                    };
                    estimate_one_stage(&layout, &in_sample, in_rule.rule(), Some(&warm), &opts)?
                }
                EstimationMode::TwoStageFixedWeight => unreachable!("rejected above"),
            };
            write_json(
                &out_dir.join("estimates").join(format!("{}_{}.json", in_rule.id, mode.id())),
                &result,
            )?;
            let pool = result.estimate.pool()?;
            for eval_rule in &eval_rules {
                let oos = evaluate::out_of_sample_score(&pool, ctx, eval_rule.rule())?;
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    in_rule.id,
                    mode.id(),
                    eval_rule.id,
                    result.achieved_score,
                    oos,
                    !result.boundary_flags.is_empty(),
                )?;
            }
        }
    }
    out.flush()?;
    echo_config(cfg, &out_dir)?;
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        command: "score".into(),
        seed: cfg.run.seed,
        resolved_in_rules: in_rules,
        resolved_eval_rules: eval_rules,
        notes: vec![],
        failures: vec![],
    };
    write_json(&out_dir.join("run_meta.json"), &meta)?;
    Ok(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        schema_version = 1
        [run]
        seed = 7
        [rules]
        in_sample = [{ type = "ls" }, { type = "cs", p = 0.2 }]
        eval = [{ type = "ls" }]
        [replicate]
        replications = 3
        sample_sizes = [500]
        path_len = 2500
        holdout = { kind = "fixed", len = 1500 }
    "#;

    #[test]
    fn parses_minimal_config() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.rules.in_sample.len(), 2);
        assert_eq!(cfg.rules.quantile_draws, 10_000_000);
        assert_eq!(cfg.estimator.starts, 5);
        let rep = cfg.replicate.unwrap();
        assert_eq!(rep.holdout, HoldoutLen::Fixed { len: 1500 });
        assert_eq!(rep.reference_n, 1_000_000);
    }

    #[test]
    fn rejects_bad_schema_version() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 99");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_missing_seed() {
        let text = MINIMAL.replace("seed = 7", "threads = 2");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn rejects_bad_censor_level() {
        let text = MINIMAL.replace("p = 0.2", "p = 1.5");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
