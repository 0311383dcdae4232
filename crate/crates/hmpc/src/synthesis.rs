//! Terminal control-law synthesis: the outer gain on the augmented loop and
//! the inner gain pair for exact or inexact reference-model matching.
//!
//! The terminal laws are `v_des = -K1 x1aug` and `u = K21 v_des - K22 x2`.
//! Exact matching solves `B2 K21 = Bf`, `B2 K22 = A2 - Af` row-wise on the
//! full rows of the block canonical form, collapsing the error dynamics to
//! `x̃+ = Af x̃`. Inexact matching stabilizes the inner loop by feedback and
//! takes the least-squares feedforward, then certifies the interconnection
//! by the small-gain product γ1·γ2 < 1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{l2_gain, small_gain_check, CertificateError, GainEstimate};
use crate::linalg;
use crate::model::{zero_row_tolerance, AugmentedOuterModel, CascadeModel};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("channel pair is not stabilizable (reference-model zero against an unstable plant pole, or structural loss); PBH failed at eigenvalue {re}{im:+}i")]
    NotStabilizable { re: f64, im: f64 },
    #[error("Riccati iteration did not reach a fixed point after {iterations} iterations")]
    RiccatiStalled { iterations: usize },
    #[error("pole placement needs a single-input channel, got {inputs} inputs")]
    PolePlacementMultiInput { inputs: usize },
    #[error("pole placement needs {expected} poles, got {got}")]
    PoleCount { expected: usize, got: usize },
    #[error("pole placement requires a controllable pair")]
    PolePlacementUncontrollable,
    #[error("matching rows are structurally incompatible at row {row}")]
    RowMismatch { row: usize },
    #[error("matching residual {residual} exceeds 1e-10 on the full rows")]
    MatchingResidual { residual: f64 },
    #[error(
        "small-gain condition failed: gamma1 = {gamma1}, gamma2 = {gamma2}, product = {product}"
    )]
    SmallGainFailure {
        gamma1: f64,
        gamma2: f64,
        product: f64,
    },
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

/// How a stabilizing gain is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSpec {
    /// Discrete LQR with the given weights; the default design.
    Lqr {
        state_weight: DMatrix<f64>,
        input_weight: DMatrix<f64>,
    },
    /// Single-input eigenvalue placement (Ackermann). Deadbeat = all zeros.
    PolePlacement { poles: Vec<f64> },
}

impl GainSpec {
    /// Identity-weight LQR for an n-state, m-input channel.
    pub fn identity_lqr(n: usize, m: usize) -> Self {
        GainSpec::Lqr {
            state_weight: DMatrix::identity(n, n),
            input_weight: DMatrix::identity(m, m),
        }
    }

    pub fn deadbeat(n: usize) -> Self {
        GainSpec::PolePlacement {
            poles: vec![0.0; n],
        }
    }
}

/// Fixed-point Riccati iteration for the discrete LQR gain, to a 1e-12
/// relative fixed-point residual.
pub(crate) fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    wx: &DMatrix<f64>,
    wu: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthesisError> {
    let mut p = wx.clone();
    let max_iter = 200_000;
    for _ in 0..max_iter {
        let btp = b.transpose() * &p;
        let gram = wu + &btp * b;
        let k = gram
            .clone()
            .lu()
            .solve(&(&btp * a))
            .ok_or(SynthesisError::RiccatiStalled {
                iterations: max_iter,
            })?;
        let next = wx + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let next = linalg::symmetrize(&next);
        let diff = linalg::spectral_norm(&(&next - &p));
        if diff <= 1e-12 * linalg::spectral_norm(&next).max(1.0) {
            let btp = b.transpose() * &next;
            let gram = wu + &btp * b;
            return gram
                .lu()
                .solve(&(&btp * a))
                .ok_or(SynthesisError::RiccatiStalled {
                    iterations: max_iter,
                });
        }
        p = next;
    }
    Err(SynthesisError::RiccatiStalled {
        iterations: max_iter,
    })
}

/// Ackermann's formula for single-input pole placement.
fn ackermann(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    poles: &[f64],
) -> Result<DMatrix<f64>, SynthesisError> {
    let n = a.nrows();
    if b.ncols() != 1 {
        return Err(SynthesisError::PolePlacementMultiInput { inputs: b.ncols() });
    }
    if poles.len() != n {
        return Err(SynthesisError::PoleCount {
            expected: n,
            got: poles.len(),
        });
    }
    let ctrb = linalg::controllability_matrix(a, b);
    let inv = ctrb
        .lu()
        .try_inverse()
        .ok_or(SynthesisError::PolePlacementUncontrollable)?;
    // phi(A) for phi(z) = prod (z - p_i)
    let mut phi = DMatrix::<f64>::identity(n, n);
    for &p in poles {
        phi *= a - DMatrix::<f64>::identity(n, n) * p;
    }
    let mut last = DMatrix::<f64>::zeros(1, n);
    last[(0, n - 1)] = 1.0;
    Ok(last * inv * phi)
}

/// Designs the outer terminal gain on the v_des channel of the augmented
/// loop, i.e. a K1 with ρ(A1aug - Bfaug K1) < 1.
///
/// Stabilizability of the channel is checked first by PBH; a failure is the
/// reference-model-zero diagnostic, since a zero of the reference model at
/// an unstable plant pole is exactly what blocks this channel.
pub fn design_outer_gain(
    aug: &AugmentedOuterModel,
    spec: &GainSpec,
) -> Result<DMatrix<f64>, SynthesisError> {
    for l in aug.a1aug.complex_eigenvalues().iter() {
        if l.norm() >= 1.0 - 1e-12 && !linalg::pbh_full_rank(&aug.a1aug, &aug.bfaug, *l) {
            return Err(SynthesisError::NotStabilizable { re: l.re, im: l.im });
        }
    }
    let k1 = match spec {
        GainSpec::Lqr {
            state_weight,
            input_weight,
        } => lqr_gain(&aug.a1aug, &aug.bfaug, state_weight, input_weight)?,
        GainSpec::PolePlacement { poles } => ackermann(&aug.a1aug, &aug.bfaug, poles)?,
    };
    Ok(k1)
}

/// Matching mode of a terminal gain set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMode {
    Exact,
    Inexact,
}

/// Full set of terminal gains with the certified interconnection gains.
#[derive(Debug, Clone)]
pub struct TerminalGainSet {
    pub k1: DMatrix<f64>,
    pub k21: DMatrix<f64>,
    pub k22: DMatrix<f64>,
    pub mode: MatchingMode,
    pub gamma1: GainEstimate,
    pub gamma2: GainEstimate,
}

impl TerminalGainSet {
    /// Closed outer loop A1aug - Bfaug K1 (the v_des channel closed).
    pub fn closed_outer(&self, aug: &AugmentedOuterModel) -> DMatrix<f64> {
        &aug.a1aug - &aug.bfaug * &self.k1
    }

    /// Closed inner error loop A2 - B2 K22 (equals Af under exact matching).
    pub fn closed_inner(&self, m: &CascadeModel) -> DMatrix<f64> {
        &m.a2 - &m.b2 * &self.k22
    }

    /// Residual input channel (B2 K21 - Bf) v_des of the error dynamics.
    pub fn vdes_channel(&self, m: &CascadeModel) -> DMatrix<f64> {
        &m.b2 * &self.k21 - &m.bf
    }

    /// Residual coupling channel (A2 - Af - B2 K22) x_f of the error dynamics.
    pub fn xf_channel(&self, m: &CascadeModel) -> DMatrix<f64> {
        &m.a2 - &m.af - &m.b2 * &self.k22
    }

    /// Terminal control `u_t = K21 v_des - K22 x2`.
    pub fn terminal_input(
        &self,
        v_des: &nalgebra::DVector<f64>,
        x2: &nalgebra::DVector<f64>,
    ) -> nalgebra::DVector<f64> {
        &self.k21 * v_des - &self.k22 * x2
    }

    /// Outer terminal law `v_des = -K1 x1aug`.
    pub fn terminal_vdes(&self, x1aug: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        -(&self.k1 * x1aug)
    }
}

/// Solves the exact-matching equations B2 K21 = Bf and B2 K22 = A2 - Af on
/// the full rows of the canonical form; shift rows must match structurally.
pub fn design_exact_matching(
    m: &CascadeModel,
) -> Result<(DMatrix<f64>, DMatrix<f64>), SynthesisError> {
    let full = m.full_rows_b2();
    let n2 = m.n2();
    let tol_bf = zero_row_tolerance(&m.bf);
    let gap = &m.a2 - &m.af;
    let tol_gap = zero_row_tolerance(&gap);
    for i in 0..n2 {
        if full.contains(&i) {
            continue;
        }
        // shift rows carry no input authority: both targets must vanish there
        let bf_zero = m.bf.row(i).iter().all(|&v| v.abs() < tol_bf);
        let gap_zero = gap.row(i).iter().all(|&v| v.abs() < tol_gap);
        if !bf_zero || !gap_zero {
            return Err(SynthesisError::RowMismatch { row: i });
        }
    }
    let r = full.len();
    let p = m.p();
    let q = m.q();
    let mut b2_full = DMatrix::<f64>::zeros(r, p);
    let mut bf_full = DMatrix::<f64>::zeros(r, q);
    let mut gap_full = DMatrix::<f64>::zeros(r, n2);
    for (idx, &row) in full.iter().enumerate() {
        b2_full.row_mut(idx).copy_from(&m.b2.row(row));
        bf_full.row_mut(idx).copy_from(&m.bf.row(row));
        gap_full.row_mut(idx).copy_from(&gap.row(row));
    }
    // minimum-norm row-space solve: K = B2ᵀ (B2 B2ᵀ)⁻¹ RHS
    let gram = &b2_full * b2_full.transpose();
    let gram_inv = gram
        .lu()
        .try_inverse()
        .ok_or(SynthesisError::MatchingResidual {
            residual: f64::INFINITY,
        })?;
    let k21 = b2_full.transpose() * &gram_inv * bf_full;
    let k22 = b2_full.transpose() * &gram_inv * gap_full;
    let res = linalg::spectral_norm(&(&m.b2 * &k21 - &m.bf))
        .max(linalg::spectral_norm(&(&m.b2 * &k22 - &gap)));
    if res > 1e-10 {
        return Err(SynthesisError::MatchingResidual { residual: res });
    }
    Ok((k21, k22))
}

/// Outcome of an inexact design attempt: the gains plus the small-gain data.
#[derive(Debug, Clone)]
pub struct InexactDesign {
    pub k21: DMatrix<f64>,
    pub k22: DMatrix<f64>,
    pub gamma1: GainEstimate,
    pub gamma2: GainEstimate,
    pub small_gain_ok: bool,
    /// Frobenius residual of the least-squares feedforward fit.
    pub feedforward_residual: f64,
}

/// Inexact matching: K22 stabilizes the inner loop (default LQR), K21 is the
/// least-squares feedforward minimizing ‖B2 K21 - Bf‖_F, and the
/// interconnection gains are certified on
///
/// * γ1: ṽ -> v_des through the closed outer loop, and
/// * γ2: v_des -> ṽ through the closed inner error loop composed with the
///   reference-model state dynamics (both residual channels included).
pub fn design_inexact_matching(
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
    k1: &DMatrix<f64>,
    spec: &GainSpec,
    gain_tol: f64,
) -> Result<InexactDesign, SynthesisError> {
    let k22 = match spec {
        GainSpec::Lqr {
            state_weight,
            input_weight,
        } => lqr_gain(&m.a2, &m.b2, state_weight, input_weight)?,
        GainSpec::PolePlacement { poles } => ackermann(&m.a2, &m.b2, poles)?,
    };
    let k21 =
        m.b2.clone()
            .svd(true, true)
            .solve(&m.bf, 1e-12)
            .map_err(|_| SynthesisError::MatchingResidual {
                residual: f64::INFINITY,
            })?;
    let feedforward_residual = (&m.b2 * &k21 - &m.bf).norm();

    let acl_out = aug.a1aug.clone() - &aug.bfaug * k1;
    let gamma1 = l2_gain(&acl_out, &aug.b1aug, &(-k1.clone()), gain_tol)?.named("vtilde", "v_des");

    // composite inner system: state [x̃; x_f], input v_des, output ṽ
    let n2 = m.n2();
    let acl_in = &m.a2 - &m.b2 * &k22;
    let e_xf = &m.a2 - &m.af - &m.b2 * &k22;
    let e_vdes = &m.b2 * &k21 - &m.bf;
    let mut a_comp = DMatrix::<f64>::zeros(2 * n2, 2 * n2);
    a_comp.view_mut((0, 0), (n2, n2)).copy_from(&acl_in);
    a_comp.view_mut((0, n2), (n2, n2)).copy_from(&e_xf);
    a_comp.view_mut((n2, n2), (n2, n2)).copy_from(&m.af);
    let mut b_comp = DMatrix::<f64>::zeros(2 * n2, m.q());
    b_comp.view_mut((0, 0), (n2, m.q())).copy_from(&e_vdes);
    b_comp.view_mut((n2, 0), (n2, m.q())).copy_from(&m.bf);
    let mut c_comp = DMatrix::<f64>::zeros(m.q(), 2 * n2);
    c_comp.view_mut((0, 0), (m.q(), n2)).copy_from(&m.c);
    let gamma2 = l2_gain(&a_comp, &b_comp, &c_comp, gain_tol)?.named("v_des", "vtilde");

    let small_gain_ok = small_gain_check(&gamma1, &gamma2);
    if !small_gain_ok {
        return Err(SynthesisError::SmallGainFailure {
            gamma1: gamma1.gamma,
            gamma2: gamma2.gamma,
            product: gamma1.gamma * gamma2.gamma,
        });
    }
    Ok(InexactDesign {
        k21,
        k22,
        gamma1,
        gamma2,
        small_gain_ok,
        feedforward_residual,
    })
}

/// Convenience assembly of a full exact-matching terminal gain set.
pub fn build_exact_gain_set(
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
    outer_spec: &GainSpec,
    gain_tol: f64,
) -> Result<TerminalGainSet, SynthesisError> {
    let k1 = design_outer_gain(aug, outer_spec)?;
    let (k21, k22) = design_exact_matching(m)?;
    let acl_out = &aug.a1aug - &aug.bfaug * &k1;
    let gamma1 = l2_gain(&acl_out, &aug.b1aug, &(-k1.clone()), gain_tol)?.named("vtilde", "v_des");
    // exact matching zeroes the v_des -> ṽ channel
    let gamma2 = GainEstimate {
        gamma: 0.0,
        channel: ("v_des".into(), "vtilde".into()),
        certified: true,
        witness: None,
    };
    Ok(TerminalGainSet {
        k1,
        k21,
        k22,
        mode: MatchingMode::Exact,
        gamma1,
        gamma2,
    })
}

/// Convenience assembly of a full inexact-matching terminal gain set.
pub fn build_inexact_gain_set(
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
    outer_spec: &GainSpec,
    inner_spec: &GainSpec,
    gain_tol: f64,
) -> Result<TerminalGainSet, SynthesisError> {
    let k1 = design_outer_gain(aug, outer_spec)?;
    let design = design_inexact_matching(m, aug, &k1, inner_spec, gain_tol)?;
    Ok(TerminalGainSet {
        k1,
        k21: design.k21,
        k22: design.k22,
        mode: MatchingMode::Inexact,
        gamma1: design.gamma1,
        gamma2: design.gamma2,
    })
}
