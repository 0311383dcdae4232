//! Monte Carlo shadow checks for the constructed certificates: terminal-set
//! contraction, margin soundness, and the trajectory-perturbation chains
//! behind the rate budgets. These are the sampling counterparts of the
//! deterministic constructions, used by `hmpc certify` and the acceptance
//! suite.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::{AugmentedOuterModel, CascadeModel};
use crate::rate::RateBudget;
use crate::sets::SetPairCertificate;
use crate::synthesis::TerminalGainSet;

/// Default sampling seed for every randomized check.
pub const DEFAULT_SEED: u64 = 0xC0FFEE;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform direction scaled to `radius`.
pub fn sample_sphere(dim: usize, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-12 {
            return g * (radius / n);
        }
    }
}

fn ellipsoid_axes(m: &DMatrix<f64>, level: f64) -> DMatrix<f64> {
    // map from the unit sphere to the boundary of {x : xᵀMx = level}
    let eig = linalg::symmetrize(m).symmetric_eigen();
    let mut scale = eig.eigenvectors.clone();
    for j in 0..m.ncols() {
        let s = (level / eig.eigenvalues[j].max(1e-300)).sqrt();
        for i in 0..m.nrows() {
            scale[(i, j)] *= s;
        }
    }
    scale * eig.eigenvectors.transpose()
}

/// Point on the boundary of the ellipsoid {x : xᵀMx = level}.
pub fn sample_ellipsoid_boundary(
    m: &DMatrix<f64>,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let dir = sample_sphere(m.nrows(), 1.0, rng);
    ellipsoid_axes(m, level) * dir
}

/// Point uniformly distributed inside the ellipsoid {x : xᵀMx <= level}.
pub fn sample_ellipsoid_interior(
    m: &DMatrix<f64>,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let n = m.nrows();
    let dir = sample_sphere(n, 1.0, rng);
    let r: f64 = rng.random::<f64>().powf(1.0 / n as f64);
    ellipsoid_axes(m, level) * (dir * r)
}

/// A failed sample with enough context to replay it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub detail: String,
    pub witness: Vec<f64>,
}

/// Per-check sample counts and violations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub samples_run: usize,
    pub violations: Vec<Violation>,
    /// Set when the report ran with zero samples.
    pub vacuous: bool,
    /// Seed the sampling ran under, for replay.
    pub seed: u64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn merge(&mut self, other: VerificationReport) {
        self.samples_run += other.samples_run;
        self.violations.extend(other.violations);
    }
}

/// One terminal-law step of the true cascade restricted to the quantities
/// the contraction statement tracks.
fn terminal_step(
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
    gains: &TerminalGainSet,
    x1aug: &DVector<f64>,
    xtilde: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n1 = m.n1();
    let xf = x1aug.rows(n1, m.n2()).into_owned();
    let x2 = xtilde + &xf;
    let v_des = gains.terminal_vdes(x1aug);
    let u = gains.terminal_input(&v_des, &x2);
    let vtilde = &m.c * xtilde;
    let x1aug_next = &aug.a1aug * x1aug + &aug.b1aug * &vtilde + &aug.bfaug * &v_des;
    let xtilde_next = &m.a2 * xtilde + (&m.a2 - &m.af) * &xf + &m.b2 * &u - &m.bf * &v_des;
    (x1aug_next, xtilde_next, u)
}

/// Contraction shadow: sampled states of G1 x G2 (boundary and interior)
/// must map into λ1 G1 x λ2 G2 under the terminal laws with u in the box.
pub fn check_contraction(
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
    gains: &TerminalGainSet,
    sets: &SetPairCertificate,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> VerificationReport {
    let mut report = VerificationReport {
        samples_run: samples,
        ..Default::default()
    };
    if samples == 0 {
        report.vacuous = true;
        return report;
    }
    for i in 0..samples {
        // half on the boundaries, half inside
        let (xa, xt) = if i % 2 == 0 {
            (
                sample_ellipsoid_boundary(&sets.g1.matrix, sets.g1.level, rng),
                sample_ellipsoid_boundary(&sets.g2.matrix, sets.g2.level, rng),
            )
        } else {
            (
                sample_ellipsoid_interior(&sets.g1.matrix, sets.g1.level, rng),
                sample_ellipsoid_interior(&sets.g2.matrix, sets.g2.level, rng),
            )
        };
        let (xa_next, xt_next, u) = terminal_step(m, aug, gains, &xa, &xt);
        let mut witness: Vec<f64> = xa.iter().chain(xt.iter()).copied().collect();
        if !m.input_box.contains(&u, 1e-9) {
            witness.extend(u.iter());
            report.violations.push(Violation {
                check: "terminal_input_in_box".into(),
                detail: format!("u = {u:?} leaves the input box"),
                witness,
            });
            continue;
        }
        if !sets.g1.contains_scaled(&xa_next, sets.g1.lambda) {
            report.violations.push(Violation {
                check: "outer_contraction".into(),
                detail: format!(
                    "V1(x+) = {} > λ1²V1* = {}",
                    sets.g1.value(&xa_next),
                    sets.g1.lambda_star * sets.g1.level
                ),
                witness,
            });
            continue;
        }
        if !sets.g2.contains_scaled(&xt_next, sets.g2.lambda) {
            report.violations.push(Violation {
                check: "inner_contraction".into(),
                detail: format!(
                    "V2(x̃+) = {} > λ2²V2* = {}",
                    sets.g2.value(&xt_next),
                    sets.g2.lambda_star * sets.g2.level
                ),
                witness,
            });
        }
    }
    report
}

/// Margin shadow: points of λG plus any bump below Δ stay inside G.
pub fn check_margins(
    sets: &SetPairCertificate,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> VerificationReport {
    let mut report = VerificationReport {
        samples_run: samples,
        ..Default::default()
    };
    if samples == 0 {
        report.vacuous = true;
        return report;
    }
    for (set, name) in [(&sets.g1, "g1"), (&sets.g2, "g2")] {
        let delta = set.margin();
        for _ in 0..samples / 2 {
            let base = sample_ellipsoid_boundary(&set.matrix, set.level, rng) * set.lambda;
            let bump = sample_sphere(set.matrix.nrows(), delta * 0.999_999, rng);
            let x = &base + &bump;
            if !set.contains(&x) {
                report.violations.push(Violation {
                    check: format!("margin_{name}"),
                    detail: format!("V = {} > level {}", set.value(&x), set.level),
                    witness: x.iter().copied().collect(),
                });
            }
        }
    }
    report
}

/// Robustness of the N-step outer prediction to interconnection variation:
/// per-index ṽ perturbations below ε_ṽ move the terminal prediction by at
/// most Δ1.
pub fn check_outer_perturbation(
    aug: &AugmentedOuterModel,
    sets: &SetPairCertificate,
    budget: &RateBudget,
    sweeps: usize,
    rng: &mut ChaCha8Rng,
) -> VerificationReport {
    let mut report = VerificationReport {
        samples_run: sweeps,
        ..Default::default()
    };
    if sweeps == 0 {
        report.vacuous = true;
        return report;
    }
    let n = budget.horizon;
    let nx = aug.a1aug.nrows();
    let q = aug.b1aug.ncols();
    let delta1 = sets.g1.margin();
    for _ in 0..sweeps {
        let x0 = sample_sphere(nx, rng.random::<f64>() * 2.0, rng);
        let vdes: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_sphere(q, rng.random::<f64>(), rng))
            .collect();
        let vt_nom: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_sphere(q, rng.random::<f64>(), rng))
            .collect();
        let vt_pert: Vec<DVector<f64>> = vt_nom
            .iter()
            .map(|v| v + sample_sphere(q, rng.random::<f64>() * budget.eps_vtilde_max, rng))
            .collect();
        let roll = |vt: &[DVector<f64>]| -> DVector<f64> {
            let mut x = x0.clone();
            for i in 0..n {
                x = &aug.a1aug * &x + &aug.b1aug * &vt[i] + &aug.bfaug * &vdes[i];
            }
            x
        };
        let gap = (roll(&vt_pert) - roll(&vt_nom)).norm();
        if gap > delta1 * (1.0 + 1e-9) {
            report.violations.push(Violation {
                check: "outer_prediction_gap".into(),
                detail: format!("gap {gap} exceeds margin {delta1}"),
                witness: x0.iter().copied().collect(),
            });
        }
    }
    report
}

/// Prop-7-style chain: u-trajectory variation below δ_u plus x_f variation
/// below ε_xf keeps the ṽ-trajectory variation below ε_ṽ at every index.
pub fn check_input_chain(
    m: &CascadeModel,
    budget: &RateBudget,
    sweeps: usize,
    rng: &mut ChaCha8Rng,
) -> VerificationReport {
    let mut report = VerificationReport {
        samples_run: sweeps,
        ..Default::default()
    };
    if sweeps == 0 {
        report.vacuous = true;
        return report;
    }
    let n = budget.horizon;
    let (n2, p) = (m.n2(), m.p());
    for _ in 0..sweeps {
        let x2_0 = sample_sphere(n2, rng.random::<f64>(), rng);
        let u_nom: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_sphere(p, rng.random::<f64>(), rng))
            .collect();
        let u_pert: Vec<DVector<f64>> = u_nom
            .iter()
            .map(|u| u + sample_sphere(p, rng.random::<f64>() * budget.delta_u_max, rng))
            .collect();
        let xf_nom: Vec<DVector<f64>> = (0..=n)
            .map(|_| sample_sphere(n2, rng.random::<f64>(), rng))
            .collect();
        let xf_pert: Vec<DVector<f64>> = xf_nom
            .iter()
            .map(|x| x + sample_sphere(n2, rng.random::<f64>() * budget.eps_xf_max, rng))
            .collect();
        let mut x2_a = x2_0.clone();
        let mut x2_b = x2_0.clone();
        for i in 0..n {
            let vt_a = &m.c * (&x2_a - &xf_nom[i]);
            let vt_b = &m.c * (&x2_b - &xf_pert[i]);
            let gap = (vt_b - vt_a).norm();
            if gap > budget.eps_vtilde_max * (1.0 + 1e-9) {
                report.violations.push(Violation {
                    check: "vtilde_chain".into(),
                    detail: format!("index {i}: ṽ gap {gap} exceeds {}", budget.eps_vtilde_max),
                    witness: x2_0.iter().copied().collect(),
                });
                break;
            }
            x2_a = &m.a2 * &x2_a + &m.b2 * &u_nom[i];
            x2_b = &m.a2 * &x2_b + &m.b2 * &u_pert[i];
        }
    }
    report
}

/// Prop-8-style chain: v_des variation below δ_vdes keeps the x_f terminal
/// variation below ε_xf.
pub fn check_reference_chain(
    m: &CascadeModel,
    budget: &RateBudget,
    sweeps: usize,
    rng: &mut ChaCha8Rng,
) -> VerificationReport {
    let mut report = VerificationReport {
        samples_run: sweeps,
        ..Default::default()
    };
    if sweeps == 0 {
        report.vacuous = true;
        return report;
    }
    let n = budget.horizon;
    let (n2, q) = (m.n2(), m.q());
    for _ in 0..sweeps {
        let xf_0 = sample_sphere(n2, rng.random::<f64>(), rng);
        let v_nom: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_sphere(q, rng.random::<f64>(), rng))
            .collect();
        let v_pert: Vec<DVector<f64>> = v_nom
            .iter()
            .map(|v| v + sample_sphere(q, rng.random::<f64>() * budget.delta_vdes_max, rng))
            .collect();
        let mut xf_a = xf_0.clone();
        let mut xf_b = xf_0.clone();
        for i in 0..n {
            xf_a = &m.af * &xf_a + &m.bf * &v_nom[i];
            xf_b = &m.af * &xf_b + &m.bf * &v_pert[i];
        }
        let gap = (xf_b - xf_a).norm();
        if gap > budget.eps_xf_max * (1.0 + 1e-9) {
            report.violations.push(Violation {
                check: "xf_chain".into(),
                detail: format!("terminal x_f gap {gap} exceeds {}", budget.eps_xf_max),
                witness: xf_0.iter().copied().collect(),
            });
        }
    }
    report
}

/// The full sampling suite behind `hmpc certify`.
pub fn run_all(
    m: &CascadeModel,
    aug: &AugmentedOuterModel,
    gains: &TerminalGainSet,
    sets: &SetPairCertificate,
    budget: &RateBudget,
    samples: usize,
    seed: u64,
) -> VerificationReport {
    let mut rng = seeded_rng(seed);
    let mut report = VerificationReport {
        vacuous: samples == 0,
        ..Default::default()
    };
    report.merge(check_contraction(m, aug, gains, sets, samples, &mut rng));
    report.merge(check_margins(sets, samples, &mut rng));
    let sweeps = samples.min(2000);
    report.merge(check_outer_perturbation(
        aug, sets, budget, sweeps, &mut rng,
    ));
    report.merge(check_input_chain(m, budget, sweeps, &mut rng));
    report.merge(check_reference_chain(m, budget, sweeps, &mut rng));
    report
}
