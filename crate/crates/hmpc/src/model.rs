//! Discrete-time actuator/plant cascade, reference model, error system, and
//! the augmented outer loop, together with the structural assumption checks
//! every downstream design step relies on.
//!
//! The cascade is
//!
//! ```text
//! x1(k+1) = A1 x1(k) + B1 v(k)          v(k) = C x2(k)
//! x2(k+1) = A2 x2(k) + B2 u(k)          u(k) ∈ U
//! xf(k+1) = Af xf(k) + Bf v_des(k)      (reference model)
//! ```
//!
//! with error state `x̃ = x2 − xf` and interconnection signal `ṽ = C x̃`.
//! The augmented outer state stacks the plant and reference-model states,
//! `x1aug = [x1; xf]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Scale-aware zero-row cutoff: an entry below `1e-12 * max(1, max |entry|)`
/// counts as zero for structural classification.
pub(crate) fn zero_row_tolerance(m: &DMatrix<f64>) -> f64 {
    let peak = m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    1e-12 * peak.max(1.0)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("matrix {name} has shape {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    Dimension {
        name: &'static str,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("input bound vectors must have length p = {p}, got lower {lo}, upper {hi}")]
    BoundLength { p: usize, lo: usize, hi: usize },
    #[error("actuator count p = {p} must be at least the virtual control count q = {q}")]
    InputDeficit { p: usize, q: usize },
}

/// Axis-aligned box of admissible actuator inputs.
///
/// Whether the origin is strictly interior is the business of the
/// assumption checks, not construction, so fault fixtures stay expressible.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl InputBox {
    /// Symmetric box |u_i| <= bound.
    pub fn symmetric(p: usize, bound: f64) -> Self {
        Self {
            lower: DVector::from_element(p, -bound),
            upper: DVector::from_element(p, bound),
        }
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(&ui, (&lo, &hi))| ui >= lo - tol && ui <= hi + tol)
    }

    /// Largest 2-norm ball around the origin inscribed in the box.
    pub fn inscribed_radius(&self) -> f64 {
        self.lower
            .iter()
            .zip(self.upper.iter())
            .map(|(&lo, &hi)| (-lo).min(hi))
            .fold(f64::INFINITY, f64::min)
    }
}

/// The cascade data: plant, actuator, reference model, and input set.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub a1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub af: DMatrix<f64>,
    pub bf: DMatrix<f64>,
    pub input_box: InputBox,
}

impl CascadeModel {
    /// Validates mutual dimension consistency; all other structure is the
    /// business of [`validate_assumptions`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a1: DMatrix<f64>,
        b1: DMatrix<f64>,
        a2: DMatrix<f64>,
        b2: DMatrix<f64>,
        c: DMatrix<f64>,
        af: DMatrix<f64>,
        bf: DMatrix<f64>,
        input_box: InputBox,
    ) -> Result<Self, ModelError> {
        let n1 = a1.nrows();
        let n2 = a2.nrows();
        let q = c.nrows();
        let p = b2.ncols();
        let expect = |name: &'static str, m: &DMatrix<f64>, r: usize, cdim: usize| {
            if m.nrows() != r || m.ncols() != cdim {
                Err(ModelError::Dimension {
                    name,
                    got_rows: m.nrows(),
                    got_cols: m.ncols(),
                    want_rows: r,
                    want_cols: cdim,
                })
            } else {
                Ok(())
            }
        };
        expect("A1", &a1, n1, n1)?;
        expect("B1", &b1, n1, q)?;
        expect("A2", &a2, n2, n2)?;
        expect("B2", &b2, n2, p)?;
        expect("C", &c, q, n2)?;
        expect("Af", &af, n2, n2)?;
        expect("Bf", &bf, n2, q)?;
        if p < q {
            return Err(ModelError::InputDeficit { p, q });
        }
        if input_box.lower.len() != p || input_box.upper.len() != p {
            return Err(ModelError::BoundLength {
                p,
                lo: input_box.lower.len(),
                hi: input_box.upper.len(),
            });
        }
        Ok(Self {
            a1,
            b1,
            a2,
            b2,
            c,
            af,
            bf,
            input_box,
        })
    }

    pub fn n1(&self) -> usize {
        self.a1.nrows()
    }
    pub fn n2(&self) -> usize {
        self.a2.nrows()
    }
    pub fn p(&self) -> usize {
        self.b2.ncols()
    }
    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    /// Row indices of B2 carrying nonzero entries (the "full" rows of the
    /// block controllable canonical form).
    pub fn full_rows_b2(&self) -> Vec<usize> {
        nonzero_rows(&self.b2)
    }
}

fn nonzero_rows(m: &DMatrix<f64>) -> Vec<usize> {
    let tol = zero_row_tolerance(m);
    (0..m.nrows())
        .filter(|&i| m.row(i).iter().any(|&v| v.abs() >= tol))
        .collect()
}

/// Augmented outer-loop matrices: state [x1; xf], disturbance channel ṽ,
/// control channel v_des.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedOuterModel {
    pub a1aug: DMatrix<f64>,
    pub b1aug: DMatrix<f64>,
    pub bfaug: DMatrix<f64>,
}

/// Block placement: A1aug = [[A1, B1 C], [0, Af]], B1aug = [B1; 0],
/// Bfaug = [0; Bf], all paddings exactly zero.
pub fn augment(m: &CascadeModel) -> AugmentedOuterModel {
    let (n1, n2, q) = (m.n1(), m.n2(), m.q());
    let n = n1 + n2;
    let mut a1aug = DMatrix::<f64>::zeros(n, n);
    a1aug.view_mut((0, 0), (n1, n1)).copy_from(&m.a1);
    a1aug.view_mut((0, n1), (n1, n2)).copy_from(&(&m.b1 * &m.c));
    a1aug.view_mut((n1, n1), (n2, n2)).copy_from(&m.af);
    let mut b1aug = DMatrix::<f64>::zeros(n, q);
    b1aug.view_mut((0, 0), (n1, q)).copy_from(&m.b1);
    let mut bfaug = DMatrix::<f64>::zeros(n, q);
    bfaug.view_mut((n1, 0), (n2, q)).copy_from(&m.bf);
    AugmentedOuterModel {
        a1aug,
        b1aug,
        bfaug,
    }
}

/// A full cascade state. The error quantities are always derived, never
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBundle {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub xf: DVector<f64>,
}

impl StateBundle {
    pub fn zeros(m: &CascadeModel) -> Self {
        Self {
            x1: DVector::zeros(m.n1()),
            x2: DVector::zeros(m.n2()),
            xf: DVector::zeros(m.n2()),
        }
    }

    /// Stacked outer state [x1; xf].
    pub fn x1aug(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x1.len() + self.xf.len());
        v.rows_mut(0, self.x1.len()).copy_from(&self.x1);
        v.rows_mut(self.x1.len(), self.xf.len()).copy_from(&self.xf);
        v
    }

    /// Error state x2 - xf.
    pub fn xtilde(&self) -> DVector<f64> {
        &self.x2 - &self.xf
    }

    pub fn v(&self, m: &CascadeModel) -> DVector<f64> {
        &m.c * &self.x2
    }

    pub fn vtilde(&self, m: &CascadeModel) -> DVector<f64> {
        &m.c * self.xtilde()
    }
}

/// One true-system step. Saturation is deliberately not enforced here; input
/// admissibility is the controller's contract.
pub fn step_true(
    m: &CascadeModel,
    s: &StateBundle,
    u: &DVector<f64>,
    v_des: &DVector<f64>,
) -> StateBundle {
    let v = s.v(m);
    StateBundle {
        x1: &m.a1 * &s.x1 + &m.b1 * v,
        x2: &m.a2 * &s.x2 + &m.b2 * u,
        xf: &m.af * &s.xf + &m.bf * v_des,
    }
}

/// Error-system step per the x̃ dynamics, used as the algebraic counterpart
/// of [`step_true`] in consistency checks.
pub fn step_error(
    m: &CascadeModel,
    xtilde: &DVector<f64>,
    xf: &DVector<f64>,
    u: &DVector<f64>,
    v_des: &DVector<f64>,
) -> DVector<f64> {
    &m.a2 * xtilde + (&m.a2 - &m.af) * xf + &m.b2 * u - &m.bf * v_des
}

/// The eight structural assumptions, in paper order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    /// 1: (A1, B1) stabilizable.
    PlantStabilizable,
    /// 2: (A2, B2) controllable.
    ActuatorControllable,
    /// 3: (A2, B2) in block controllable canonical form.
    ActuatorBlockCcf,
    /// 4: reference model Schur stable.
    ReferenceModelStable,
    /// 5: no reference-model zero coincides with an unstable plant pole.
    NoZeroPoleClash,
    /// 6: Af shares the shift-row structure of A2.
    ReferenceModelBlockCcf,
    /// 7: nonzero rows of Bf are nonzero rows of B2.
    InputRowInclusion,
    /// 8: u = 0 interior to the input set.
    OriginInInputSet,
}

/// What failed, pinned to an eigenvalue, row, or coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Witness {
    Eigenvalue {
        re: f64,
        im: f64,
    },
    Row(usize),
    Coordinate(usize),
    ZeroPolePair {
        zero_re: f64,
        zero_im: f64,
        pole_re: f64,
        pole_im: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub passed: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, a: Assumption) -> &AssumptionCheck {
        self.checks
            .iter()
            .find(|c| c.assumption == a)
            .expect("report covers all assumptions")
    }

    /// Assumptions required for exact reference-model matching (1-7).
    pub fn exact_matching_ok(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| c.assumption != Assumption::OriginInInputSet)
            .all(|c| c.passed)
    }

    /// Assumptions required for inexact matching (1-5).
    pub fn inexact_matching_ok(&self) -> bool {
        use Assumption::*;
        self.checks
            .iter()
            .filter(|c| {
                !matches!(
                    c.assumption,
                    ReferenceModelBlockCcf | InputRowInclusion | OriginInInputSet
                )
            })
            .all(|c| c.passed)
    }
}

/// Runs all eight structural checks and reports pass/fail with witnesses.
/// Pure: identical input produces an identical report.
pub fn validate_assumptions(m: &CascadeModel) -> AssumptionReport {
    let mut checks = Vec::with_capacity(8);

    // 1: PBH on every plant eigenvalue with modulus >= 1
    let eig1 = m.a1.complex_eigenvalues();
    let mut stab_witness = None;
    for l in eig1.iter() {
        if l.norm() >= 1.0 - 1e-12 && !linalg::pbh_full_rank(&m.a1, &m.b1, *l) {
            stab_witness = Some(Witness::Eigenvalue { re: l.re, im: l.im });
            break;
        }
    }
    checks.push(AssumptionCheck {
        assumption: Assumption::PlantStabilizable,
        passed: stab_witness.is_none(),
        witness: stab_witness,
    });

    // 2: controllability-matrix rank
    let ctrb = linalg::controllability_matrix(&m.a2, &m.b2);
    let ctrb_ok = linalg::rank(&ctrb, 1e-9) == m.n2();
    checks.push(AssumptionCheck {
        assumption: Assumption::ActuatorControllable,
        passed: ctrb_ok,
        witness: None,
    });

    // 3: every zero row of B2 must be a unit superdiagonal shift row of A2
    let ccf = block_ccf_witness(&m.a2, &m.b2);
    checks.push(AssumptionCheck {
        assumption: Assumption::ActuatorBlockCcf,
        passed: ccf.is_none(),
        witness: ccf,
    });

    // 4: spectral radius of Af
    let dominant = linalg::dominant_eigenvalue(&m.af);
    let af_stable = dominant.norm() < 1.0;
    checks.push(AssumptionCheck {
        assumption: Assumption::ReferenceModelStable,
        passed: af_stable,
        witness: if af_stable {
            None
        } else {
            Some(Witness::Eigenvalue {
                re: dominant.re,
                im: dominant.im,
            })
        },
    });

    // 5: reference-model zeros vs unstable plant poles, clash below 1e-9
    let zeros = linalg::transmission_zeros(&m.af, &m.bf, &m.c).unwrap_or_default();
    let mut clash = None;
    'outer: for z in &zeros {
        for l in eig1.iter() {
            if l.norm() >= 1.0 - 1e-12 && (z - l).norm() < 1e-9 {
                clash = Some(Witness::ZeroPolePair {
                    zero_re: z.re,
                    zero_im: z.im,
                    pole_re: l.re,
                    pole_im: l.im,
                });
                break 'outer;
            }
        }
    }
    checks.push(AssumptionCheck {
        assumption: Assumption::NoZeroPoleClash,
        passed: clash.is_none(),
        witness: clash,
    });

    // 6: Af repeats A2's shift rows (rows where B2 is zero)
    let tol_a = zero_row_tolerance(&m.a2).max(zero_row_tolerance(&m.af));
    let full = m.full_rows_b2();
    let mut af_witness = None;
    for i in 0..m.n2() {
        if full.contains(&i) {
            continue;
        }
        let diff = (m.af.row(i) - m.a2.row(i))
            .iter()
            .fold(0.0_f64, |a, &v| a.max(v.abs()));
        if diff > tol_a {
            af_witness = Some(Witness::Row(i));
            break;
        }
    }
    checks.push(AssumptionCheck {
        assumption: Assumption::ReferenceModelBlockCcf,
        passed: af_witness.is_none(),
        witness: af_witness,
    });

    // 7: R_f ⊆ R_2
    let bf_rows = nonzero_rows(&m.bf);
    let missing = bf_rows.iter().find(|i| !full.contains(i)).copied();
    checks.push(AssumptionCheck {
        assumption: Assumption::InputRowInclusion,
        passed: missing.is_none(),
        witness: missing.map(Witness::Row),
    });

    // 8: strict interior
    let mut origin_witness = None;
    for i in 0..m.p() {
        if !(m.input_box.lower[i] < 0.0 && m.input_box.upper[i] > 0.0) {
            origin_witness = Some(Witness::Coordinate(i));
            break;
        }
    }
    checks.push(AssumptionCheck {
        assumption: Assumption::OriginInInputSet,
        passed: origin_witness.is_none(),
        witness: origin_witness,
    });

    AssumptionReport { checks }
}

/// Zero rows of B must be unit shift rows of A: a single 1 on the
/// superdiagonal and zeros elsewhere. Returns the first offending row.
fn block_ccf_witness(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<Witness> {
    let tol_b = zero_row_tolerance(b);
    let tol_a = zero_row_tolerance(a);
    let n = a.nrows();
    for i in 0..n {
        let b_zero = b.row(i).iter().all(|&v| v.abs() < tol_b);
        if !b_zero {
            continue;
        }
        if i + 1 >= n {
            return Some(Witness::Row(i)); // no superdiagonal slot on the last row
        }
        for j in 0..n {
            let want = if j == i + 1 { 1.0 } else { 0.0 };
            if (a[(i, j)] - want).abs() > tol_a {
                return Some(Witness::Row(i));
            }
        }
    }
    None
}

/// Desk-scale sample cascade: a sampled double integrator driven through a
/// second-order companion-form actuator with a critically damped reference
/// model of unit DC gain, |u| <= 2.
pub fn double_integrator_cascade() -> CascadeModel {
    CascadeModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.08, 0.6]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.01, 0.2]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.81]),
        InputBox::symmetric(1, 2.0),
    )
    .expect("sample cascade is dimensionally consistent")
}
