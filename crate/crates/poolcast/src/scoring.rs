//! Proper scoring rules: log score and region-censored log score.
//!
//! Rules are positively oriented (higher is better). The censored rule
//! rewards density inside the region B = (-inf, b] and total tail mass
//! outside it; the tail term is always taken from a complementary-CDF
//! primitive so deep thresholds do not cancel catastrophically.

use crate::error::{Error, Result};
use crate::models::{DgpParams, OneLagModel, PredictiveDistribution};
use crate::par;
use crate::series::ObservedSeries;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A scoring rule; `Censored` carries the resolved region threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoringRule {
    LogScore,
    /// Censored log score with region B = (-inf, threshold].
    Censored { threshold: f64 },
}

impl ScoringRule {
    pub fn censored(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidParameter("censor threshold must be finite".into()));
        }
        Ok(Self::Censored { threshold })
    }
}

/// Serializable rule request; the threshold for `Cs` is resolved against a
/// quantile source at run time and echoed in run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RuleSpec {
    Ls,
    Cs { p: f64 },
}

impl RuleSpec {
    pub fn id(&self) -> String {
        match self {
            RuleSpec::Ls => "ls".to_string(),
            RuleSpec::Cs { p } => format!("cs{p}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RuleSpec::Cs { p } = self {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::InvalidParameter(format!("censor level p={p} outside (0,1)")));
            }
        }
        Ok(())
    }
}

/// Where the censoring threshold comes from.
pub enum QuantileSource<'a> {
    /// Stationary quantile of the simulation DGP, estimated from `n_draws`.
    Stationary { dgp: &'a DgpParams, n_draws: usize, rng: &'a mut ChaCha8Rng },
    /// Empirical in-sample quantile, frozen before any out-of-sample use.
    InSample(&'a ObservedSeries),
}

/// Resolve a rule spec into a concrete rule.
pub fn censor_region_from_quantile(p: f64, source: QuantileSource<'_>) -> Result<ScoringRule> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("censor level p={p} outside (0,1)")));
    }
    let b = match source {
        QuantileSource::Stationary { dgp, n_draws, rng } => {
            crate::models::stationary_quantile(dgp, p, n_draws, rng)
        }
        QuantileSource::InSample(series) => series.empirical_quantile(p),
    };
    ScoringRule::censored(b)
}

/// Score one predictive at one realization. May return `-inf` when the
/// generalized density (or censored tail mass) is zero; averaging helpers
/// turn that sentinel into an error rather than folding it in.
pub fn score(rule: ScoringRule, f: &PredictiveDistribution, y: f64) -> f64 {
    match rule {
        ScoringRule::LogScore => f.ln_density(y),
        ScoringRule::Censored { threshold } => {
            if y <= threshold {
                f.ln_density(y)
            } else {
                f.ln_sf(threshold)
            }
        }
    }
}

/// Average score of a one-lag model over `range` (0-based indices into
/// `series`; every scored index conditions on the previous value, so the
/// range must start at 1 or later).
///
/// The divisor is the number of scored points. A `-inf` score aborts with
/// the offending index.
pub fn average_score<M: OneLagModel + Sync>(
    rule: ScoringRule,
    model: &M,
    series: &ObservedSeries,
    range: std::ops::Range<usize>,
) -> Result<f64> {
    scored_mean(rule, model, series.values(), range)
}

/// Same contract as [`average_score`] on a raw value slice.
pub(crate) fn scored_mean<M: OneLagModel + Sync>(
    rule: ScoringRule,
    model: &M,
    values: &[f64],
    range: std::ops::Range<usize>,
) -> Result<f64> {
    if range.is_empty() {
        return Err(Error::EmptyScoreRange);
    }
    assert!(range.start >= 1, "scored index must condition on one lag");
    assert!(range.end <= values.len(), "score range beyond series");
    let count = range.len();
    let start = range.start;
    let scores = par::map_indices(count, |i| {
        let t = start + i;
        score(rule, &model.predictive(values[t - 1]), values[t])
    });
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::DivergentScore { index: start + bad });
    }
    Ok(par::sum(&scores) / count as f64)
}
