//! Re-checkable stability certificates: discrete Lyapunov solutions,
//! dissipation inequalities with per-channel gain constants, and certified
//! l2 gains from the discrete bounded-real test.
//!
//! A dissipation certificate for a closed loop `x+ = Acl x + Σ E_i w_i`
//! stores (M, α, γ̄_i) witnessing
//!
//! ```text
//! V(x+) - V(x) <= -α V(x) + Σ γ̄_i ‖w_i‖²,   V(x) = xᵀ M x,
//! ```
//!
//! for all states and disturbances; [`verify_dissipation`] reduces that
//! quantified statement to a single positive-semidefiniteness test.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;

/// Uniform slack for every semidefiniteness check in the crate.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("closed loop is not Schur stable: |eigenvalue| = {modulus} at {re}{im:+}i")]
    Unstable { modulus: f64, re: f64, im: f64 },
    #[error("Lyapunov residual {residual} exceeds bound {bound}")]
    LyapunovResidual { residual: f64, bound: f64 },
    #[error("dissipation certificate failed after {doublings} gain doublings")]
    GainEnlargementExhausted { doublings: usize },
    #[error("bounded-real fixed point did not classify after {iterations} iterations")]
    FixedPointStalled { iterations: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

fn require_stable(acl: &DMatrix<f64>) -> Result<(), CertificateError> {
    let dom = linalg::dominant_eigenvalue(acl);
    if dom.norm() >= 1.0 {
        return Err(CertificateError::Unstable {
            modulus: dom.norm(),
            re: dom.re,
            im: dom.im,
        });
    }
    Ok(())
}

/// Solves Aᵀ M A - M = -S for symmetric positive definite S by squared-power
/// accumulation of the series Σ (Aᵀ)ᵏ S Aᵏ; quadratically convergent.
///
/// The result is symmetrized and checked against the residual bound
/// ‖AᵀMA - M + S‖ <= 1e-9 ‖S‖.
pub fn solve_discrete_lyapunov(
    acl: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>, CertificateError> {
    if acl.nrows() != acl.ncols() || s.nrows() != s.ncols() || acl.nrows() != s.nrows() {
        return Err(CertificateError::Dimension(format!(
            "Acl is {}x{}, S is {}x{}",
            acl.nrows(),
            acl.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    require_stable(acl)?;
    let mut m = s.clone();
    let mut e = acl.clone();
    for _ in 0..128 {
        let term = e.transpose() * &m * &e;
        let tnorm = linalg::spectral_norm(&term);
        m += term;
        e = &e * &e;
        if tnorm <= 1e-300 || tnorm <= f64::EPSILON * linalg::spectral_norm(&m) {
            break;
        }
    }
    let m = linalg::symmetrize(&m);
    let residual = linalg::spectral_norm(&(acl.transpose() * &m * acl - &m + s));
    let bound = 1e-9 * linalg::spectral_norm(s);
    if residual > bound {
        return Err(CertificateError::LyapunovResidual { residual, bound });
    }
    Ok(m)
}

/// One disturbance channel of a dissipation certificate.
#[derive(Debug, Clone)]
pub struct ChannelGain {
    pub name: String,
    pub gamma_bar: f64,
}

/// Quadratic Lyapunov certificate with decay rate and channel gains.
#[derive(Debug, Clone)]
pub struct DissipationCertificate {
    pub m: DMatrix<f64>,
    pub alpha: f64,
    pub gains: Vec<ChannelGain>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl DissipationCertificate {
    pub fn lyapunov_value(&self, x: &nalgebra::DVector<f64>) -> f64 {
        (x.transpose() * &self.m * x)[(0, 0)]
    }

    pub fn gamma_bar(&self, name: &str) -> Option<f64> {
        self.gains
            .iter()
            .find(|g| g.name == name)
            .map(|g| g.gamma_bar)
    }
}

/// Assembles the block PSD witness for the stored constants and checks it
/// down to `-PSD_TOL`. Channels with zero gain and zero input matrix are
/// legitimate (undisturbed loops).
pub fn verify_dissipation(
    cert: &DissipationCertificate,
    acl: &DMatrix<f64>,
    channels: &[(String, DMatrix<f64>)],
) -> bool {
    verify_constants(
        &cert.m,
        cert.alpha,
        acl,
        channels,
        &cert.gains.iter().map(|g| g.gamma_bar).collect::<Vec<_>>(),
    )
}

fn verify_constants(
    m: &DMatrix<f64>,
    alpha: f64,
    acl: &DMatrix<f64>,
    channels: &[(String, DMatrix<f64>)],
    gammas: &[f64],
) -> bool {
    let n = acl.nrows();
    let decay = m * (1.0 - alpha) - acl.transpose() * m * acl;
    if channels.is_empty() {
        return linalg::is_psd_within(&decay, PSD_TOL);
    }
    let total_w: usize = channels.iter().map(|(_, e)| e.ncols()).sum();
    let mut block = DMatrix::<f64>::zeros(n + total_w, n + total_w);
    block.view_mut((0, 0), (n, n)).copy_from(&decay);
    let mut stacked = DMatrix::<f64>::zeros(n, total_w);
    let mut col = 0;
    for (_, e) in channels {
        stacked.view_mut((0, col), (n, e.ncols())).copy_from(e);
        col += e.ncols();
    }
    let cross = -(acl.transpose() * m * &stacked);
    block.view_mut((0, n), (n, total_w)).copy_from(&cross);
    block
        .view_mut((n, 0), (total_w, n))
        .copy_from(&cross.transpose());
    let mut gamma_block = -(stacked.transpose() * m * &stacked);
    let mut off = 0;
    for ((_, e), &g) in channels.iter().zip(gammas) {
        for i in 0..e.ncols() {
            gamma_block[(off + i, off + i)] += g;
        }
        off += e.ncols();
    }
    block
        .view_mut((n, n), (total_w, total_w))
        .copy_from(&gamma_block);
    linalg::is_psd_within(&block, PSD_TOL)
}

/// Builds a dissipation certificate from a Lyapunov matrix `m` for the loop
/// `x+ = Acl x + Σ E_i w_i`.
///
/// The decay rate splits the certified Lyapunov decrease: with
/// S_eff = M - AclᵀMAcl, α = θ λ_min(S_eff)/λ_max(M); the remaining
/// (1-θ) share absorbs the disturbance cross terms. Channel gains start at
/// the completion-of-squares seed and double until the block PSD test
/// passes (cap 60 doublings). Channels whose input matrix is exactly zero
/// get γ̄ = 0.
pub fn compute_dissipation(
    acl: &DMatrix<f64>,
    channels: &[(String, DMatrix<f64>)],
    m: &DMatrix<f64>,
    theta: f64,
) -> Result<DissipationCertificate, CertificateError> {
    assert!(theta > 0.0 && theta < 1.0, "theta must lie in (0,1)");
    let s_eff = linalg::symmetrize(&(m - acl.transpose() * m * acl));
    let (lmin_s, _) = linalg::symmetric_eig_bounds(&s_eff);
    let (lambda_min, lambda_max) = linalg::symmetric_eig_bounds(m);
    if lmin_s <= 0.0 || lambda_min <= 0.0 {
        return Err(CertificateError::Dimension(
            "m must certify a strict Lyapunov decrease for Acl".into(),
        ));
    }
    let alpha = theta * lmin_s / lambda_max;
    let mut gammas: Vec<f64> = channels
        .iter()
        .map(|(_, e)| {
            if linalg::spectral_norm(e) == 0.0 {
                0.0
            } else {
                linalg::spectral_norm(&(e.transpose() * m * e))
                    + linalg::spectral_norm(&(acl.transpose() * m * e)).powi(2)
                        / ((1.0 - theta) * lmin_s)
            }
        })
        .collect();
    let mut doublings = 0;
    loop {
        if verify_constants(m, alpha, acl, channels, &gammas) {
            break;
        }
        if doublings >= 60 {
            return Err(CertificateError::GainEnlargementExhausted { doublings });
        }
        for g in gammas.iter_mut() {
            if *g > 0.0 {
                *g *= 2.0;
            }
        }
        doublings += 1;
    }
    Ok(DissipationCertificate {
        m: m.clone(),
        alpha,
        gains: channels
            .iter()
            .zip(&gammas)
            .map(|((name, _), &gamma_bar)| ChannelGain {
                name: name.clone(),
                gamma_bar,
            })
            .collect(),
        lambda_min,
        lambda_max,
    })
}

/// Certified l2 gain upper bound for one LTI channel.
#[derive(Debug, Clone)]
pub struct GainEstimate {
    pub gamma: f64,
    pub channel: (String, String),
    pub certified: bool,
    /// Bounded-real Riccati witness at `gamma` (absent for a zero output map).
    pub witness: Option<DMatrix<f64>>,
}

impl GainEstimate {
    pub fn named(mut self, input: &str, output: &str) -> Self {
        self.channel = (input.into(), output.into());
        self
    }

    /// Re-checks the bounded-real PSD condition at the stored gamma.
    pub fn recheck(&self, acl: &DMatrix<f64>, bin: &DMatrix<f64>, cout: &DMatrix<f64>) -> bool {
        let Some(m) = &self.witness else {
            return linalg::spectral_norm(cout) == 0.0;
        };
        let n = acl.nrows();
        let w = bin.ncols();
        let mut block = DMatrix::<f64>::zeros(n + w, n + w);
        let tl = acl.transpose() * m * acl - m + cout.transpose() * cout;
        let tr = acl.transpose() * m * bin;
        let mut br = bin.transpose() * m * bin;
        for i in 0..w {
            br[(i, i)] -= self.gamma * self.gamma;
        }
        block.view_mut((0, 0), (n, n)).copy_from(&tl);
        block.view_mut((0, n), (n, w)).copy_from(&tr);
        block.view_mut((n, 0), (w, n)).copy_from(&tr.transpose());
        block.view_mut((n, n), (w, w)).copy_from(&br);
        // block must be negative semidefinite
        linalg::is_psd_within(&(-block), PSD_TOL)
    }
}

enum Feasibility {
    Feasible(DMatrix<f64>),
    Infeasible,
    Stalled,
}

/// Riccati-style fixed point for the bounded-real test at a fixed gamma:
/// iterate M <- AᵀMA + CᵀC + AᵀMB (γ²I - BᵀMB)⁻¹ BᵀMA from M = 0.
/// Divergence (loss of positivity of γ²I - BᵀMB, or norm blowup) certifies
/// infeasibility of this gamma.
fn bounded_real_feasible(
    acl: &DMatrix<f64>,
    bin: &DMatrix<f64>,
    cout: &DMatrix<f64>,
    gamma: f64,
) -> Feasibility {
    let n = acl.nrows();
    let w = bin.ncols();
    let ctc = cout.transpose() * cout;
    let mut m = DMatrix::<f64>::zeros(n, n);
    let blowup = 1e14 * (1.0 + linalg::spectral_norm(&ctc));
    for _ in 0..10_000 {
        let mut t = DMatrix::<f64>::identity(w, w) * (gamma * gamma);
        t -= bin.transpose() * &m * bin;
        let t = linalg::symmetrize(&t);
        if linalg::symmetric_eig_bounds(&t).0 <= 0.0 {
            return Feasibility::Infeasible;
        }
        let Some(t_inv) = t.clone().try_inverse() else {
            return Feasibility::Infeasible;
        };
        let cross = acl.transpose() * &m * bin;
        let next = linalg::symmetrize(
            &(acl.transpose() * &m * acl + &ctc + &cross * t_inv * cross.transpose()),
        );
        let diff = linalg::spectral_norm(&(&next - &m));
        if diff <= 1e-12 * linalg::spectral_norm(&next).max(1.0) {
            return Feasibility::Feasible(next);
        }
        if linalg::spectral_norm(&next) > blowup {
            return Feasibility::Infeasible;
        }
        m = next;
    }
    Feasibility::Stalled
}

/// Certified l2 gain of the channel w -> y for `x+ = Acl x + Bin w`,
/// `y = Cout x`, via bisection over the bounded-real fixed point. The
/// returned gamma is within `tol` of the smallest value this certification
/// procedure accepts.
pub fn l2_gain(
    acl: &DMatrix<f64>,
    bin: &DMatrix<f64>,
    cout: &DMatrix<f64>,
    tol: f64,
) -> Result<GainEstimate, CertificateError> {
    require_stable(acl)?;
    if linalg::spectral_norm(cout) == 0.0 {
        return Ok(GainEstimate {
            gamma: 0.0,
            channel: ("input".into(), "output".into()),
            certified: true,
            witness: None,
        });
    }
    let mut hi = 1.0;
    let mut hi_witness = None;
    for i in 0..200 {
        match bounded_real_feasible(acl, bin, cout, hi) {
            Feasibility::Feasible(m) => {
                hi_witness = Some(m);
                break;
            }
            _ => hi *= 2.0,
        }
        if i == 199 {
            return Err(CertificateError::FixedPointStalled { iterations: 10_000 });
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match bounded_real_feasible(acl, bin, cout, mid) {
            Feasibility::Feasible(m) => {
                hi = mid;
                hi_witness = Some(m);
            }
            // a stalled midpoint is conservatively treated as infeasible
            Feasibility::Infeasible | Feasibility::Stalled => lo = mid,
        }
    }
    Ok(GainEstimate {
        gamma: hi,
        channel: ("input".into(), "output".into()),
        certified: true,
        witness: hi_witness,
    })
}

/// The small-gain condition over an interconnection of two certified gains:
/// strict product below one.
pub fn small_gain_check(g1: &GainEstimate, g2: &GainEstimate) -> bool {
    debug_assert!(g1.certified && g2.certified);
    g1.gamma * g2.gamma < 1.0
}
