//! Rate-like constraint budgets and finite-time convergence horizons.
//!
//! The budgets bound the step-to-step variation of optimized trajectories so
//! the shifted plan from the previous solve stays feasible:
//!
//! * ε_ṽ: admissible per-index variation of the interconnection trajectory,
//!   sized so the N-step outer prediction moves less than the λG1 -> G1
//!   margin Δ1;
//! * ε_xf: admissible x_f variation, the inner analogue against Δ2, capped
//!   by a split fraction of ε_ṽ/‖C‖ so the u-budget below stays positive;
//! * δ_u: per-index u-trajectory variation that keeps ṽ variation within
//!   ε_ṽ through the actuator impulse response;
//! * δ_vdes: per-index v_des variation that keeps x_f variation within ε_xf
//!   through the reference-model impulse response.
//!
//! The horizons N1*, N2* are the step counts after which the decaying rate
//! radius β^k shrinks the prediction-vs-reality gap below the set margins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::model::{AugmentedOuterModel, CascadeModel};
use crate::sets::{distance_to_complement, SetPairCertificate};

#[derive(Debug, Error)]
pub enum RateError {
    #[error("horizon must be at least 2, got {0}")]
    HorizonTooShort(usize),
    #[error("beta must lie in (0,1), got {0}")]
    BetaOutOfRange(f64),
    #[error("split fraction must lie in (0,1), got {0}")]
    SplitOutOfRange(f64),
    #[error("degenerate geometry: budget {name} = {value} is not positive (contraction too weak)")]
    DegenerateBudget { name: &'static str, value: f64 },
}

/// The four trajectory-variation budgets plus the decay data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBudget {
    pub eps_vtilde_max: f64,
    pub eps_xf_max: f64,
    pub delta_u_max: f64,
    pub delta_vdes_max: f64,
    pub beta: f64,
    pub horizon: usize,
    pub n1_star: usize,
    pub n2_star: usize,
}

impl RateBudget {
    /// Outer rate-ball radius at step k: δ_vdes · β^min(k, N1*).
    pub fn outer_radius(&self, k: usize) -> f64 {
        self.delta_vdes_max * self.beta.powi(k.min(self.n1_star) as i32)
    }

    /// Inner rate-ball radius at step k: δ_u · β^min(k, N2*).
    pub fn inner_radius(&self, k: usize) -> f64 {
        self.delta_u_max * self.beta.powi(k.min(self.n2_star) as i32)
    }
}

/// Derives all four budgets from the set margins and the impulse-response
/// norm sums, with the split fraction guarding positivity of δ_u.
/// The returned budget carries zero horizons; see [`convergence_horizons`].
pub fn derive_budgets(
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
    sets: &SetPairCertificate,
    horizon: usize,
    beta: f64,
    split: f64,
) -> Result<RateBudget, RateError> {
    if horizon < 2 {
        return Err(RateError::HorizonTooShort(horizon));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(RateError::BetaOutOfRange(beta));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(RateError::SplitOutOfRange(split));
    }
    let delta1 = distance_to_complement(&sets.g1, sets.g1.lambda);
    let delta2 = distance_to_complement(&sets.g2, sets.g2.lambda);
    let sum_outer = linalg::power_impulse_norm_sum(&aug.a1aug, &aug.b1aug, horizon);
    let sum_inner = linalg::power_impulse_norm_sum(&m.a2, &m.b2, horizon);
    let sum_ref = linalg::power_impulse_norm_sum(&m.af, &m.bf, horizon);
    let c_norm = linalg::spectral_norm(&m.c);

    let eps_vtilde_max = delta1 / sum_outer;
    let eps_xf_max = delta2.min(split * eps_vtilde_max / c_norm);
    let delta_u_max = (eps_vtilde_max - c_norm * eps_xf_max) / (c_norm * sum_inner);
    let delta_vdes_max = eps_xf_max / sum_ref;

    for (name, value) in [
        ("eps_vtilde_max", eps_vtilde_max),
        ("eps_xf_max", eps_xf_max),
        ("delta_u_max", delta_u_max),
        ("delta_vdes_max", delta_vdes_max),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(RateError::DegenerateBudget { name, value });
        }
    }
    Ok(RateBudget {
        eps_vtilde_max,
        eps_xf_max,
        delta_u_max,
        delta_vdes_max,
        beta,
        horizon,
        n1_star: 0,
        n2_star: 0,
    })
}

/// Lumped prediction-gap constants and the resulting horizons:
///
/// ```text
/// Q_lump = Σ‖A1augʲ B1aug‖ ε_ṽ + Σ‖A1augʲ Bfaug‖ δ_vdes
/// P_lump = Σ‖A2ʲ B2‖ δ_u + ε_xf
/// Ni*    = max(0, ceil( ln(Δi / (lump_i N)) / ln β ))
/// ```
///
/// The outer lump routes the v_des-variation channel through Bfaug. When
/// the margin already exceeds the worst-case gap the horizon is zero.
pub fn convergence_horizons(
    budget: &RateBudget,
    sets: &SetPairCertificate,
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
) -> Result<(usize, usize), RateError> {
    if !(budget.beta > 0.0 && budget.beta < 1.0) {
        return Err(RateError::BetaOutOfRange(budget.beta));
    }
    let n = budget.horizon;
    let q_lump = linalg::power_impulse_norm_sum(&aug.a1aug, &aug.b1aug, n) * budget.eps_vtilde_max
        + linalg::power_impulse_norm_sum(&aug.a1aug, &aug.bfaug, n) * budget.delta_vdes_max;
    let p_lump =
        linalg::power_impulse_norm_sum(&m.a2, &m.b2, n) * budget.delta_u_max + budget.eps_xf_max;
    let horizon_for = |delta: f64, lump: f64| -> usize {
        let arg = delta / (lump * n as f64);
        if arg >= 1.0 {
            return 0;
        }
        (arg.ln() / budget.beta.ln()).ceil().max(0.0) as usize
    };
    Ok((
        horizon_for(sets.g1.margin(), q_lump),
        horizon_for(sets.g2.margin(), p_lump),
    ))
}

/// Fills the horizon fields of a budget in place.
pub fn with_horizons(
    mut budget: RateBudget,
    sets: &SetPairCertificate,
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
) -> Result<RateBudget, RateError> {
    let (n1, n2) = convergence_horizons(&budget, sets, m, aug)?;
    budget.n1_star = n1;
    budget.n2_star = n2;
    Ok(budget)
}
