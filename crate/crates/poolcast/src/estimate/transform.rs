//! Smooth bijections between natural parameters and the unconstrained
//! optimization space.
//!
//! Coordinate map: identity for locations, log for scales (sigma, beta0),
//! logit for [0,1] coordinates (eta, beta1), and a (-1,1)-rescaled logit for
//! alpha1. `|u| > BOUNDARY_LOGIT` on a (scaled) logit coordinate is treated
//! as a boundary hit: the natural value is snapped and flagged.

use crate::pool::ModelId;

/// Logit magnitude beyond which a bounded coordinate counts as boundary.
pub const BOUNDARY_LOGIT: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    Identity,
    Log,
    /// (0,1) via sigmoid.
    Logit,
    /// (-1,1) via 2*sigmoid - 1.
    ScaledLogit,
    /// Like `Logit` but snapping to the closed endpoints is allowed
    /// (the simplex weight lives on [0,1]).
    LogitClosed,
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl CoordKind {
    fn to_u(self, nat: f64) -> f64 {
        match self {
            CoordKind::Identity => nat,
            CoordKind::Log => nat.ln(),
            CoordKind::Logit | CoordKind::LogitClosed => logit(nat.clamp(1e-15, 1.0 - 1e-15)),
            CoordKind::ScaledLogit => logit(((nat + 1.0) / 2.0).clamp(1e-15, 1.0 - 1e-15)),
        }
    }

    fn to_natural(self, u: f64) -> f64 {
        // Clamps keep absurd line-search trial points evaluable: the natural
        // value stays strictly inside its constraint set and finite.
        match self {
            CoordKind::Identity => u,
            CoordKind::Log => u.clamp(-300.0, 300.0).exp(),
            CoordKind::Logit | CoordKind::LogitClosed => sigmoid(u.clamp(-36.0, 36.0)),
            CoordKind::ScaledLogit => 2.0 * sigmoid(u.clamp(-36.0, 36.0)) - 1.0,
        }
    }

    /// d(natural)/d(u), expressed through the natural value.
    fn dnatural_du(self, nat: f64) -> f64 {
        match self {
            CoordKind::Identity => 1.0,
            CoordKind::Log => nat,
            CoordKind::Logit | CoordKind::LogitClosed => nat * (1.0 - nat),
            CoordKind::ScaledLogit => (1.0 - nat * nat) / 2.0,
        }
    }
}

/// Ordered coordinate kinds for one optimization target.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    kinds: Vec<CoordKind>,
}

fn constituent_kinds(id: ModelId) -> [CoordKind; 3] {
    match id {
        ModelId::Ar1 => [CoordKind::Identity, CoordKind::ScaledLogit, CoordKind::Log],
        ModelId::Arch1 => [CoordKind::Identity, CoordKind::Log, CoordKind::Logit],
    }
}

impl ParamLayout {
    pub fn constituent(id: ModelId) -> Self {
        Self { kinds: constituent_kinds(id).to_vec() }
    }

    pub fn pool(layout: &[ModelId]) -> Self {
        let mut kinds = vec![CoordKind::LogitClosed; layout.len() - 1];
        for id in layout {
            kinds.extend_from_slice(&constituent_kinds(*id));
        }
        Self { kinds }
    }

    pub fn eta_only() -> Self {
        Self { kinds: vec![CoordKind::LogitClosed] }
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn to_unconstrained(&self, natural: &[f64]) -> Vec<f64> {
        self.kinds.iter().zip(natural).map(|(k, &v)| k.to_u(v)).collect()
    }

    pub fn to_natural(&self, u: &[f64]) -> Vec<f64> {
        self.kinds.iter().zip(u).map(|(k, &v)| k.to_natural(v)).collect()
    }

    pub fn dnatural_du_from_natural(&self, natural: &[f64]) -> Vec<f64> {
        self.kinds.iter().zip(natural).map(|(k, &v)| k.dnatural_du(v)).collect()
    }

    /// Natural values from `u`, snapping runaway bounded coordinates and
    /// naming the snapped ones.
    pub fn snap_boundaries(&self, u: &[f64], names: &[String]) -> (Vec<f64>, Vec<String>) {
        let mut natural = Vec::with_capacity(u.len());
        let mut flags = Vec::new();
        for ((kind, &ui), name) in self.kinds.iter().zip(u).zip(names) {
            let mut nat = kind.to_natural(ui);
            match kind {
                CoordKind::LogitClosed if ui > BOUNDARY_LOGIT => {
                    nat = 1.0;
                    flags.push(format!("{name}=1 (upper boundary)"));
                }
                CoordKind::LogitClosed if ui < -BOUNDARY_LOGIT => {
                    nat = 0.0;
                    flags.push(format!("{name}=0 (lower boundary)"));
                }
                CoordKind::Logit if ui < -BOUNDARY_LOGIT => {
                    // beta1's interval is closed at 0.
                    nat = 0.0;
                    flags.push(format!("{name}=0 (lower boundary)"));
                }
                CoordKind::Logit if ui > BOUNDARY_LOGIT => {
                    // The upper end is open; keep the interior value, flag it.
                    nat = sigmoid(BOUNDARY_LOGIT);
                    flags.push(format!("{name} pinned near 1 (open upper boundary)"));
                }
                CoordKind::ScaledLogit if ui.abs() > BOUNDARY_LOGIT => {
                    nat = (2.0 * sigmoid(BOUNDARY_LOGIT.copysign(ui)) - 1.0).clamp(-1.0, 1.0);
                    flags.push(format!("{name} pinned near {} (open boundary)", nat.signum()));
                }
                _ => {}
            }
            natural.push(nat);
        }
        (natural, flags)
    }
}
