//! λ-contractive ellipsoidal terminal sets.
//!
//! Both sets are closed Lyapunov sublevel sets `{x : xᵀ M x <= V*}`. The
//! level values come from the saturation caps (so the terminal laws stay in
//! the input box) and from the interconnection bounds; in the exact-matching
//! case the inner level is a plain minimum, in the inexact case the two
//! levels solve a coupled pair of min-equations whose solvability is gated
//! by the product inequality on (α, λ_min, γ̄) data.
//!
//! Contraction convention: `V(x+) <= λ* V*` and `λ = sqrt(λ*)`, so the
//! scaled set `λG = {x : xᵀMx <= λ² V*}` is exactly the reachable sublevel
//! set after one terminal-law step from G.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::DissipationCertificate;
use crate::linalg;
use crate::model::CascadeModel;
use crate::synthesis::{MatchingMode, TerminalGainSet};

#[derive(Debug, Error)]
pub enum SetsError {
    #[error("input set has no interior around the origin (inscribed radius {radius})")]
    NoInteriorRadius { radius: f64 },
    #[error("margin epsilon = {epsilon} must lie strictly inside (0, alpha = {alpha})")]
    MarginOutOfRange { epsilon: f64, alpha: f64 },
    #[error("saturation caps are unbounded; no finite level value exists")]
    UnboundedCaps,
    #[error("certificate is missing channel {0}")]
    MissingChannel(&'static str),
    #[error(
        "level equations unsolvable: need eps1*eps2*lmin(P)*lmin(Q) >= gbar1*‖C‖²*(gbar21*‖K1‖²+gbar22), got lhs = {lhs}, rhs = {rhs}"
    )]
    Unsolvable { lhs: f64, rhs: f64 },
    #[error("level fixed point did not settle: last iterates {v1} and {v2}")]
    FixedPointDiverged { v1: f64, v2: f64 },
}

/// Which argument of a level min-equation is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinBranch {
    /// The saturation cap term.
    SaturationCap,
    /// The interconnection-bound term.
    CouplingBound,
}

/// Closed ellipsoidal sublevel set with its contraction data.
#[derive(Debug, Clone)]
pub struct ContractiveSet {
    pub matrix: DMatrix<f64>,
    pub level: f64,
    pub lambda: f64,
    pub lambda_star: f64,
    pub epsilon: f64,
}

impl ContractiveSet {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.matrix * x)[(0, 0)]
    }

    /// Membership in the closed set, with a small relative slack.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.value(x) <= self.level * (1.0 + 1e-12)
    }

    /// Membership in the scaled set λG = {x : xᵀMx <= λ²·level}.
    pub fn contains_scaled(&self, x: &DVector<f64>, lambda: f64) -> bool {
        self.value(x) <= lambda * lambda * self.level * (1.0 + 1e-12)
    }

    /// Certified 2-norm distance from λG to the complement of G:
    /// Δ = (1-λ)·sqrt(level/λ_max(M)), by the triangle inequality in the
    /// M-metric.
    pub fn margin_from_scaled(&self, lambda: f64) -> f64 {
        let (_, lmax) = linalg::symmetric_eig_bounds(&self.matrix);
        (1.0 - lambda) * (self.level / lmax).sqrt()
    }

    /// Margin at the set's own contraction factor.
    pub fn margin(&self) -> f64 {
        self.margin_from_scaled(self.lambda)
    }
}

/// Distance margin between a scaled copy of a set and the complement of the
/// full set.
pub fn distance_to_complement(set: &ContractiveSet, lambda: f64) -> f64 {
    set.margin_from_scaled(lambda)
}

/// The terminal set pair with the caps and solvability data used to build it.
#[derive(Debug, Clone)]
pub struct SetPairCertificate {
    pub g1: ContractiveSet,
    pub g2: ContractiveSet,
    pub x1_max: f64,
    pub xtilde_max: f64,
    pub mode: MatchingMode,
    /// Truth of the solvability inequality; only inexact construction
    /// evaluates it.
    pub solvability_ok: Option<bool>,
    /// Active branch of the outer level equation.
    pub v1_branch: MinBranch,
    /// Active branch of the inner level equation.
    pub v2_branch: MinBranch,
}

impl SetPairCertificate {
    /// Both memberships that gate the terminal control laws.
    pub fn in_terminal_region(&self, x1aug: &DVector<f64>, xtilde: &DVector<f64>) -> bool {
        self.g1.contains(x1aug) && self.g2.contains(xtilde)
    }
}

/// Norm caps keeping the terminal law inside the input box: with r the
/// inscribed radius of the box, the bound
/// ‖u_t‖ <= (‖K21 K1‖ + ‖K22‖)‖x1aug‖ + ‖K22‖‖x̃‖ splits r equally across
/// the two terms. A zero denominator yields an infinite cap.
pub fn saturation_caps(m: &CascadeModel, gains: &TerminalGainSet) -> Result<(f64, f64), SetsError> {
    let r = m.input_box.inscribed_radius();
    if r <= 0.0 {
        return Err(SetsError::NoInteriorRadius { radius: r });
    }
    let outer_coeff =
        linalg::spectral_norm(&(&gains.k21 * &gains.k1)) + linalg::spectral_norm(&gains.k22);
    let inner_coeff = linalg::spectral_norm(&gains.k22);
    let x1_max = if outer_coeff > 0.0 {
        (r / 2.0) / outer_coeff
    } else {
        f64::INFINITY
    };
    let xtilde_max = if inner_coeff > 0.0 {
        (r / 2.0) / inner_coeff
    } else {
        f64::INFINITY
    };
    Ok((x1_max, xtilde_max))
}

/// Exact-matching construction: V1* saturates the outer cap, and
///
/// ```text
/// V2* = min{ x̃max² λmin(P),  ε1 V1* λmin(Q) λmin(P) / (γ̄1 ‖C‖²) }
/// ```
///
/// keeps both the input box and the bound ‖ṽ‖² <= ε1 V1*/γ̄1 valid on G2.
/// λ1* = 1 - α1 + ε1 and λ2* = 1 - α2.
pub fn build_exact_sets(
    outer: &DissipationCertificate,
    inner: &DissipationCertificate,
    caps: (f64, f64),
    c: &DMatrix<f64>,
    eps1: f64,
) -> Result<SetPairCertificate, SetsError> {
    let (x1_max, xtilde_max) = caps;
    if !(x1_max.is_finite() && xtilde_max.is_finite()) {
        return Err(SetsError::UnboundedCaps);
    }
    if !(eps1 > 0.0 && eps1 < outer.alpha) {
        return Err(SetsError::MarginOutOfRange {
            epsilon: eps1,
            alpha: outer.alpha,
        });
    }
    let gbar1 = outer
        .gamma_bar("vtilde")
        .ok_or(SetsError::MissingChannel("vtilde"))?;
    let c_norm = linalg::spectral_norm(c);
    let v1_star = outer.lambda_min * x1_max * x1_max;
    let cap_term = xtilde_max * xtilde_max * inner.lambda_min;
    let coupling_term = if gbar1 > 0.0 && c_norm > 0.0 {
        eps1 * v1_star * inner.lambda_min / (gbar1 * c_norm * c_norm)
    } else {
        f64::INFINITY
    };
    let (v2_star, v2_branch) = if cap_term <= coupling_term {
        (cap_term, MinBranch::SaturationCap)
    } else {
        (coupling_term, MinBranch::CouplingBound)
    };
    let lambda1_star = 1.0 - outer.alpha + eps1;
    let lambda2_star = 1.0 - inner.alpha;
    Ok(SetPairCertificate {
        g1: ContractiveSet {
            matrix: outer.m.clone(),
            level: v1_star,
            lambda: lambda1_star.sqrt(),
            lambda_star: lambda1_star,
            epsilon: eps1,
        },
        g2: ContractiveSet {
            matrix: inner.m.clone(),
            level: v2_star,
            lambda: lambda2_star.sqrt(),
            lambda_star: lambda2_star,
            epsilon: 0.0,
        },
        x1_max,
        xtilde_max,
        mode: MatchingMode::Exact,
        solvability_ok: None,
        v1_branch: MinBranch::SaturationCap,
        v2_branch,
    })
}

/// Inexact construction: gates on the solvability inequality (in its strict
/// ε-form), then solves the coupled level equations
///
/// ```text
/// V1* = min{ x1max² λmin(Q),  ε2 V2* λmin(Q) / (‖K1‖² γ̄21 + γ̄22) }
/// V2* = min{ x̃max² λmin(P),  ε1 V1* λmin(P) / (‖C‖² γ̄1) }
/// ```
///
/// by fixed-point iteration from the saturation cap; back-substitution must
/// reproduce the pair to 1e-12.
pub fn build_inexact_sets(
    outer: &DissipationCertificate,
    inner: &DissipationCertificate,
    caps: (f64, f64),
    k1: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eps1: f64,
    eps2: f64,
) -> Result<SetPairCertificate, SetsError> {
    let (x1_max, xtilde_max) = caps;
    if !(x1_max.is_finite() && xtilde_max.is_finite()) {
        return Err(SetsError::UnboundedCaps);
    }
    if !(eps1 > 0.0 && eps1 < outer.alpha) {
        return Err(SetsError::MarginOutOfRange {
            epsilon: eps1,
            alpha: outer.alpha,
        });
    }
    if !(eps2 > 0.0 && eps2 < inner.alpha) {
        return Err(SetsError::MarginOutOfRange {
            epsilon: eps2,
            alpha: inner.alpha,
        });
    }
    let gbar1 = outer
        .gamma_bar("vtilde")
        .ok_or(SetsError::MissingChannel("vtilde"))?;
    let gbar21 = inner
        .gamma_bar("v_des")
        .ok_or(SetsError::MissingChannel("v_des"))?;
    let gbar22 = inner
        .gamma_bar("x_f")
        .ok_or(SetsError::MissingChannel("x_f"))?;
    let k1_norm = linalg::spectral_norm(k1);
    let c_norm = linalg::spectral_norm(c);

    // strict-margin form of the solvability inequality, cross-multiplied so
    // zero gains stay meaningful
    let lhs = eps1 * eps2 * inner.lambda_min * outer.lambda_min;
    let rhs = gbar1 * c_norm * c_norm * (gbar21 * k1_norm * k1_norm + gbar22);
    if lhs < rhs {
        return Err(SetsError::Unsolvable { lhs, rhs });
    }

    let v1_cap = x1_max * x1_max * outer.lambda_min;
    let v2_cap = xtilde_max * xtilde_max * inner.lambda_min;
    let coupl_denom = k1_norm * k1_norm * gbar21 + gbar22;
    let v2_of_v1 = |v1: f64| -> (f64, MinBranch) {
        let coupling = if gbar1 > 0.0 && c_norm > 0.0 {
            eps1 * v1 * inner.lambda_min / (c_norm * c_norm * gbar1)
        } else {
            f64::INFINITY
        };
        if v2_cap <= coupling {
            (v2_cap, MinBranch::SaturationCap)
        } else {
            (coupling, MinBranch::CouplingBound)
        }
    };
    let v1_of_v2 = |v2: f64| -> (f64, MinBranch) {
        let coupling = if coupl_denom > 0.0 {
            eps2 * v2 * outer.lambda_min / coupl_denom
        } else {
            f64::INFINITY
        };
        if v1_cap <= coupling {
            (v1_cap, MinBranch::SaturationCap)
        } else {
            (coupling, MinBranch::CouplingBound)
        }
    };

    // monotone nonincreasing piecewise-linear map: settles a few sweeps after
    // the first branch switch whenever the solvability inequality holds
    let mut v1 = v1_cap;
    let mut v2 = 0.0;
    let mut v1_branch = MinBranch::SaturationCap;
    let mut v2_branch = MinBranch::SaturationCap;
    let mut settled = false;
    for _ in 0..128 {
        let (nv2, b2) = v2_of_v1(v1);
        let (nv1, b1) = v1_of_v2(nv2);
        v2 = nv2;
        v2_branch = b2;
        v1_branch = b1;
        if (nv1 - v1).abs() <= 1e-15 * v1.max(1e-300) {
            v1 = nv1;
            settled = true;
            break;
        }
        v1 = nv1;
        if !(v1 > 0.0 && v1.is_finite()) {
            break;
        }
    }
    if !settled || v1 <= 0.0 || v2 <= 0.0 {
        return Err(SetsError::FixedPointDiverged { v1, v2 });
    }
    // back-substitution residual check
    let (rv2, _) = v2_of_v1(v1);
    let (rv1, _) = v1_of_v2(rv2);
    if (rv1 - v1).abs() > 1e-12 * v1.max(1e-300) || (rv2 - v2).abs() > 1e-12 * v2.max(1e-300) {
        return Err(SetsError::FixedPointDiverged { v1, v2 });
    }

    let lambda1_star = 1.0 - outer.alpha + eps1;
    let lambda2_star = 1.0 - inner.alpha + eps2;
    Ok(SetPairCertificate {
        g1: ContractiveSet {
            matrix: outer.m.clone(),
            level: v1,
            lambda: lambda1_star.sqrt(),
            lambda_star: lambda1_star,
            epsilon: eps1,
        },
        g2: ContractiveSet {
            matrix: inner.m.clone(),
            level: v2,
            lambda: lambda2_star.sqrt(),
            lambda_star: lambda2_star,
            epsilon: eps2,
        },
        x1_max,
        xtilde_max,
        mode: MatchingMode::Inexact,
        solvability_ok: Some(true),
        v1_branch,
        v2_branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{compute_dissipation, solve_discrete_lyapunov, GainEstimate};
    use crate::model::{augment, double_integrator_cascade};
    use crate::synthesis::{build_exact_gain_set, GainSpec};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn zero_gain(name: (&str, &str)) -> GainEstimate {
        GainEstimate {
            gamma: 0.0,
            channel: (name.0.into(), name.1.into()),
            certified: true,
            witness: None,
        }
    }

    fn sample_pipeline() -> (
        crate::model::CascadeModel,
        crate::model::AugmentedOuterModel,
        TerminalGainSet,
        DissipationCertificate,
        DissipationCertificate,
    ) {
        let m = double_integrator_cascade();
        let aug = augment(&m);
        let gains = build_exact_gain_set(&m, &aug, &GainSpec::identity_lqr(4, 1), 1e-6).unwrap();
        let acl_out = gains.closed_outer(&aug);
        let q = solve_discrete_lyapunov(&acl_out, &DMatrix::identity(4, 4)).unwrap();
        let outer = compute_dissipation(
            &acl_out,
            &[("vtilde".to_string(), aug.b1aug.clone())],
            &q,
            0.5,
        )
        .unwrap();
        let acl_in = gains.closed_inner(&m);
        let p = solve_discrete_lyapunov(&acl_in, &DMatrix::identity(2, 2)).unwrap();
        let inner = compute_dissipation(
            &acl_in,
            &[
                ("v_des".to_string(), gains.vdes_channel(&m)),
                ("x_f".to_string(), gains.xf_channel(&m)),
            ],
            &p,
            0.5,
        )
        .unwrap();
        (m, aug, gains, outer, inner)
    }

    #[test]
    fn caps_split_rule_arithmetic() {
        // r = 2, ‖K21K1‖ + ‖K22‖ = 1, ‖K22‖ = 0.5 -> caps (1, 2)
        let m = double_integrator_cascade();
        let gains = TerminalGainSet {
            k1: DMatrix::from_row_slice(1, 4, &[0.5, 0.0, 0.0, 0.0]),
            k21: DMatrix::from_row_slice(1, 1, &[1.0]),
            k22: DMatrix::from_row_slice(1, 2, &[0.5, 0.0]),
            mode: MatchingMode::Exact,
            gamma1: zero_gain(("a", "b")),
            gamma2: zero_gain(("a", "b")),
        };
        let (x1_max, xt_max) = saturation_caps(&m, &gains).unwrap();
        assert_relative_eq!(x1_max, 1.0, epsilon = 1e-12);
        assert_relative_eq!(xt_max, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_gains_give_unbounded_caps() {
        let m = double_integrator_cascade();
        let gains = TerminalGainSet {
            k1: DMatrix::zeros(1, 4),
            k21: DMatrix::zeros(1, 1),
            k22: DMatrix::zeros(1, 2),
            mode: MatchingMode::Exact,
            gamma1: zero_gain(("a", "b")),
            gamma2: zero_gain(("a", "b")),
        };
        let (x1_max, xt_max) = saturation_caps(&m, &gains).unwrap();
        assert!(x1_max.is_infinite() && xt_max.is_infinite());
    }

    #[test]
    fn caps_keep_terminal_law_in_box() {
        let (m, _, gains, _outer, _inner) = sample_pipeline();
        let caps = saturation_caps(&m, &gains).unwrap();
        let mut rng = crate::verification::seeded_rng(0xC0FFEE);
        for _ in 0..10_000 {
            let xa = crate::verification::sample_sphere(4, caps.0, &mut rng);
            let xt = crate::verification::sample_sphere(2, caps.1, &mut rng);
            let xf = xa.rows(2, 2).into_owned();
            let x2 = &xt + &xf;
            let v_des = gains.terminal_vdes(&xa);
            let u = gains.terminal_input(&v_des, &x2);
            assert!(m.input_box.contains(&u, 1e-9), "u = {u:?} outside box");
        }
    }

    #[test]
    fn exact_levels_are_positive_with_contractive_lambdas() {
        let (m, _, gains, outer, inner) = sample_pipeline();
        let caps = saturation_caps(&m, &gains).unwrap();
        let pair = build_exact_sets(&outer, &inner, caps, &m.c, outer.alpha / 2.0).unwrap();
        assert!(pair.g1.level > 0.0 && pair.g2.level > 0.0);
        assert!(pair.g1.lambda < 1.0 && pair.g2.lambda < 1.0);
        assert!(pair.g1.lambda >= 0.0 && pair.g2.lambda >= 0.0);
        assert_relative_eq!(
            pair.g1.lambda * pair.g1.lambda,
            pair.g1.lambda_star,
            epsilon = 1e-15
        );
        // interconnection bound holds on all of G2
        let gbar1 = outer.gamma_bar("vtilde").unwrap();
        let c_norm = linalg::spectral_norm(&m.c);
        assert!(
            c_norm * c_norm * pair.g2.level / inner.lambda_min
                <= pair.g1.epsilon * pair.g1.level / gbar1 * (1.0 + 1e-12)
        );
    }

    #[test]
    fn margin_on_spheres() {
        let set = ContractiveSet {
            matrix: DMatrix::identity(3, 3),
            level: 1.0,
            lambda: 0.5,
            lambda_star: 0.25,
            epsilon: 0.0,
        };
        assert_relative_eq!(set.margin(), 0.5, epsilon = 1e-12);
        // origin is a member of every scaling
        assert!(set.contains_scaled(&DVector::zeros(3), 0.01));
    }

    #[test]
    fn margin_perturbations_stay_inside() {
        let (m, _, gains, outer, inner) = sample_pipeline();
        let caps = saturation_caps(&m, &gains).unwrap();
        let pair = build_exact_sets(&outer, &inner, caps, &m.c, outer.alpha / 2.0).unwrap();
        let delta = pair.g1.margin();
        assert!(delta > 0.0);
        let mut rng = crate::verification::seeded_rng(7);
        for _ in 0..10_000 {
            let on_scaled = crate::verification::sample_ellipsoid_boundary(
                &pair.g1.matrix,
                pair.g1.level,
                &mut rng,
            ) * pair.g1.lambda;
            let bump = crate::verification::sample_sphere(4, delta * 0.999, &mut rng);
            let x = &on_scaled + &bump;
            assert!(
                pair.g1.contains(&x),
                "margin violated: V = {}",
                pair.g1.value(&x)
            );
        }
    }

    #[test]
    fn zero_coupling_takes_cap_branch() {
        let (m, _, gains, outer, inner) = sample_pipeline();
        let caps = saturation_caps(&m, &gains).unwrap();
        let mut outer0 = outer.clone();
        for g in outer0.gains.iter_mut() {
            g.gamma_bar = 0.0;
        }
        let pair = build_exact_sets(&outer0, &inner, caps, &m.c, outer0.alpha / 2.0).unwrap();
        assert_eq!(pair.v2_branch, MinBranch::SaturationCap);
        assert_relative_eq!(
            pair.g2.level,
            caps.1 * caps.1 * inner.lambda_min,
            epsilon = 1e-12
        );
    }

    #[test]
    fn inexact_degenerate_case_reduces_to_exact_levels() {
        let (m, _, gains, outer, inner) = sample_pipeline();
        // exact matching means both inner channels are zero
        assert!(inner.gains.iter().all(|g| g.gamma_bar == 0.0));
        let caps = saturation_caps(&m, &gains).unwrap();
        let exact = build_exact_sets(&outer, &inner, caps, &m.c, outer.alpha / 2.0).unwrap();
        let inexact = build_inexact_sets(
            &outer,
            &inner,
            caps,
            &gains.k1,
            &m.c,
            outer.alpha / 2.0,
            inner.alpha / 2.0,
        )
        .unwrap();
        assert_relative_eq!(inexact.g1.level, exact.g1.level, epsilon = 1e-12);
        assert_relative_eq!(inexact.g2.level, exact.g2.level, epsilon = 1e-12);
        assert_eq!(inexact.v1_branch, MinBranch::SaturationCap);
    }

    #[test]
    fn inflated_gamma_fails_solvability() {
        let (m, _, gains, outer, mut inner) = sample_pipeline();
        for g in inner.gains.iter_mut() {
            g.gamma_bar += 1e6;
        }
        let caps = saturation_caps(&m, &gains).unwrap();
        let err = build_inexact_sets(
            &outer,
            &inner,
            caps,
            &gains.k1,
            &m.c,
            outer.alpha / 2.0,
            inner.alpha / 2.0,
        )
        .unwrap_err();
        match err {
            SetsError::Unsolvable { lhs, rhs } => assert!(lhs < rhs),
            other => panic!("expected unsolvable, got {other:?}"),
        }
    }

    #[test]
    fn scaled_sets_nest_inside_the_full_set() {
        let (m, _, gains, outer, inner) = sample_pipeline();
        let caps = saturation_caps(&m, &gains).unwrap();
        let pair = build_exact_sets(&outer, &inner, caps, &m.c, outer.alpha / 2.0).unwrap();
        let mut rng = crate::verification::seeded_rng(3);
        for _ in 0..2000 {
            let lambda: f64 = rand::Rng::random_range(&mut rng, 0.0..1.0);
            let x = crate::verification::sample_ellipsoid_boundary(
                &pair.g1.matrix,
                pair.g1.level,
                &mut rng,
            ) * lambda;
            assert!(pair.g1.contains(&x));
            assert!(pair.g1.contains_scaled(&x, lambda));
        }
    }

    #[test]
    fn level_monotonicity_in_input_box() {
        let (m, _, gains, outer, inner) = sample_pipeline();
        let caps_wide = saturation_caps(&m, &gains).unwrap();
        let mut m_small = m.clone();
        m_small.input_box = crate::model::InputBox::symmetric(1, 1.0);
        let caps_small = saturation_caps(&m_small, &gains).unwrap();
        let wide = build_exact_sets(&outer, &inner, caps_wide, &m.c, outer.alpha / 2.0).unwrap();
        let small = build_exact_sets(&outer, &inner, caps_small, &m.c, outer.alpha / 2.0).unwrap();
        assert!(small.g1.level <= wide.g1.level + 1e-15);
        assert!(small.g2.level <= wide.g2.level + 1e-15);
    }
}
