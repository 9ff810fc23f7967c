//! Linear opinion pool over constituent predictives.
//!
//! The pool CDF is the convex combination of the constituent CDFs; its
//! density is the same combination of densities. Weights live on the
//! simplex; with K constituents the free coordinates are the first K-1
//! weights. Only K=2 ships (AR(1) + ARCH(1)), matching the experiments, but
//! the weight and constituent containers are order-generic.

use crate::error::{Error, Result};
use crate::models::{
    ar1_predictive, arch1_predictive, Ar1Params, Arch1Params, OneLagModel, PredictiveDistribution,
};

use serde::{Deserialize, Serialize};

/// Simplex weights for the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidParameter("need at least two weights".into()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidParameter(format!("weights {weights:?} off the simplex")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Two-component weights (eta, 1 - eta).
    pub fn from_eta(eta: f64) -> Result<Self> {
        Self::new(vec![eta, 1.0 - eta])
    }

    /// Weight on the first constituent.
    pub fn eta(&self) -> f64 {
        self.0[0]
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Constituent identifiers, in pool order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Ar1,
    Arch1,
}

/// Parameters of one constituent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ConstituentParams {
    Ar1(Ar1Params),
    Arch1(Arch1Params),
}

impl ConstituentParams {
    pub fn id(&self) -> ModelId {
        match self {
            ConstituentParams::Ar1(_) => ModelId::Ar1,
            ConstituentParams::Arch1(_) => ModelId::Arch1,
        }
    }

    pub fn dim(&self) -> usize {
        3
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConstituentParams::Ar1(p) => p.validate(),
            ConstituentParams::Arch1(p) => p.validate(),
        }
    }

    pub fn predictive(&self, y_prev: f64) -> PredictiveDistribution {
        match self {
            ConstituentParams::Ar1(p) => ar1_predictive(p, y_prev),
            ConstituentParams::Arch1(p) => arch1_predictive(p, y_prev),
        }
    }
}

/// Pool layout: ordered constituents plus simplex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationSpec {
    pub constituents: Vec<ModelId>,
    pub weights: WeightVector,
}

impl CombinationSpec {
    pub fn new(constituents: Vec<ModelId>, weights: WeightVector) -> Result<Self> {
        if constituents.len() < 2 {
            return Err(Error::InvalidParameter("need at least two constituents".into()));
        }
        if constituents.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} constituents vs {} weights",
                constituents.len(),
                weights.len()
            )));
        }
        Ok(Self { constituents, weights })
    }

    /// The paper's instance: AR(1) with weight eta, then ARCH(1).
    pub fn ar1_arch1(eta: f64) -> Result<Self> {
        Self::new(vec![ModelId::Ar1, ModelId::Arch1], WeightVector::from_eta(eta)?)
    }
}

/// A fully parameterized two-constituent pool.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPool {
    pub weights: WeightVector,
    pub constituents: Vec<ConstituentParams>,
}

impl LinearPool {
    pub fn new(weights: WeightVector, constituents: Vec<ConstituentParams>) -> Result<Self> {
        if weights.len() != constituents.len() {
            return Err(Error::InvalidParameter("weight/constituent length mismatch".into()));
        }
        if constituents.len() != 2 {
            return Err(Error::InvalidParameter("only two-constituent pools ship".into()));
        }
        for c in &constituents {
            c.validate()?;
        }
        Ok(Self { weights, constituents })
    }
}

impl OneLagModel for LinearPool {
    fn predictive(&self, y_prev: f64) -> PredictiveDistribution {
        let (m1, s1) = gaussian_parts(self.constituents[0].predictive(y_prev));
        let (m2, s2) = gaussian_parts(self.constituents[1].predictive(y_prev));
        PredictiveDistribution::Mixture2 {
            weight: self.weights.eta(),
            mean1: m1,
            sd1: s1,
            mean2: m2,
            sd2: s2,
        }
    }
}

fn gaussian_parts(f: PredictiveDistribution) -> (f64, f64) {
    match f {
        PredictiveDistribution::Gaussian { mean, sd } => (mean, sd),
        _ => unreachable!("constituent predictives are Gaussian"),
    }
}

/// Pool one-step predictive: mixture of the constituent predictives under
/// `spec`'s weights.
pub fn pool_predictive(
    spec: &CombinationSpec,
    constituent_params: &[ConstituentParams],
    y_prev: f64,
) -> Result<PredictiveDistribution> {
    let pool = pool_from_spec(spec, constituent_params)?;
    Ok(pool.predictive(y_prev))
}

/// Log mixture density at `y`, log-sum-exp stabilized.
pub fn pool_log_density(
    spec: &CombinationSpec,
    constituent_params: &[ConstituentParams],
    y_prev: f64,
    y: f64,
) -> Result<f64> {
    Ok(pool_predictive(spec, constituent_params, y_prev)?.ln_density(y))
}

fn pool_from_spec(
    spec: &CombinationSpec,
    constituent_params: &[ConstituentParams],
) -> Result<LinearPool> {
    if spec.constituents.len() != constituent_params.len() {
        return Err(Error::InvalidParameter("spec/param length mismatch".into()));
    }
    for (id, p) in spec.constituents.iter().zip(constituent_params) {
        if *id != p.id() {
            return Err(Error::InvalidParameter("constituent order mismatch".into()));
        }
    }
    LinearPool::new(spec.weights.clone(), constituent_params.to_vec())
}
