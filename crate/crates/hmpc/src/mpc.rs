//! Receding-horizon problem builders for the two loops.
//!
//! Each builder condenses the loop dynamics into an affine predictor
//! (state_i = offset_i + Γ_i z over the stacked input trajectory z) and
//! assembles a [`QcqpProblem`] with quadratic stage cost, the terminal
//! ellipsoid constraints, decaying rate balls around the previous plan, and
//! (inner loop) the input box. The counterpart loop's interconnection
//! trajectory enters the offsets as a known exogenous sequence.
//!
//! Rate balls cover indices 0..N-2 only; the final input index is free so
//! the shifted previous plan plus a terminal-law tail is always a feasible
//! candidate once the budgets hold.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{AugmentedOuterModel, CascadeModel};
use crate::qcqp::{Constraint, QcqpProblem, QcqpSolution};
use crate::rate::RateBudget;
use crate::sets::SetPairCertificate;
use crate::synthesis::TerminalGainSet;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("step {k} needs the previous plan for its rate constraints")]
    MissingPreviousPlan { k: usize },
    #[error("interconnection trajectory has {got} entries, need {want}")]
    InterconnectionLength { got: usize, want: usize },
    #[error("previous plan has horizon {got}, need {want}")]
    PlanLength { got: usize, want: usize },
}

/// An optimized input sequence with its predicted states.
#[derive(Debug, Clone)]
pub struct TrajectoryPlan {
    /// N inputs.
    pub inputs: Vec<DVector<f64>>,
    /// N+1 predicted states.
    pub states: Vec<DVector<f64>>,
    /// Solve time index k.
    pub stamp: usize,
}

impl TrajectoryPlan {
    /// Dynamics-consistency residual against `x+ = A x + B u + d_i`.
    pub fn consistency_residual(
        &self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        offsets: &[DVector<f64>],
    ) -> f64 {
        let mut worst = 0.0_f64;
        for (i, input) in self.inputs.iter().enumerate() {
            let pred = a * &self.states[i] + b * input + &offsets[i];
            worst = worst.max((&self.states[i + 1] - pred).amax());
        }
        worst
    }
}

/// Stage-cost weights for one loop.
#[derive(Debug, Clone)]
pub struct StageWeights {
    pub state: DMatrix<f64>,
    pub input: DMatrix<f64>,
}

impl StageWeights {
    pub fn identity(nx: usize, nu: usize) -> Self {
        Self {
            state: DMatrix::identity(nx, nx),
            input: DMatrix::identity(nu, nu),
        }
    }

    pub fn scaled(nx: usize, nu: usize, state: f64, input: f64) -> Self {
        Self {
            state: DMatrix::identity(nx, nx) * state,
            input: DMatrix::identity(nu, nu) * input,
        }
    }
}

/// A built problem plus the affine predictor needed to read states back out
/// of a solution.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qcqp: QcqpProblem,
    offsets: Vec<DVector<f64>>,
    input_maps: Vec<DMatrix<f64>>,
    nu: usize,
    horizon: usize,
    stamp: usize,
}

impl MpcProblem {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Predicted states for a stacked input vector.
    pub fn predict_states(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..=self.horizon)
            .map(|i| &self.offsets[i] + &self.input_maps[i] * z)
            .collect()
    }

    /// Splits a stacked input vector into per-index inputs.
    pub fn split_inputs(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.horizon)
            .map(|i| z.rows(i * self.nu, self.nu).into_owned())
            .collect()
    }

    /// Assembles the plan from a solver result.
    pub fn extract_plan(&self, sol: &QcqpSolution) -> TrajectoryPlan {
        TrajectoryPlan {
            inputs: self.split_inputs(&sol.inputs),
            states: self.predict_states(&sol.inputs),
            stamp: self.stamp,
        }
    }

    /// Direct feasibility evaluation of a candidate input vector, without
    /// solving: worst violation over all constraints.
    pub fn candidate_violation(&self, z: &DVector<f64>) -> f64 {
        self.qcqp.max_violation(z)
    }

    /// Stacks per-index inputs into a decision vector.
    pub fn stack(&self, inputs: &[DVector<f64>]) -> DVector<f64> {
        let mut z = DVector::zeros(self.horizon * self.nu);
        for (i, u) in inputs.iter().enumerate() {
            z.rows_mut(i * self.nu, self.nu).copy_from(u);
        }
        z
    }
}

struct PredictorParts {
    offsets: Vec<DVector<f64>>,
    input_maps: Vec<DMatrix<f64>>,
}

/// Rolls the affine predictor for x+ = A x + B u_i + d_i.
fn build_predictor(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x0: &DVector<f64>,
    forcing: &[DVector<f64>],
    horizon: usize,
) -> PredictorParts {
    let nx = a.nrows();
    let nu = b.ncols();
    let nz = horizon * nu;
    let mut offsets = Vec::with_capacity(horizon + 1);
    let mut input_maps = Vec::with_capacity(horizon + 1);
    offsets.push(x0.clone());
    input_maps.push(DMatrix::zeros(nx, nz));
    for i in 0..horizon {
        let mut next_map = a * &input_maps[i];
        next_map.view_mut((0, i * nu), (nx, nu)).copy_from(b);
        input_maps.push(next_map);
        offsets.push(a * &offsets[i] + &forcing[i]);
    }
    PredictorParts {
        offsets,
        input_maps,
    }
}

/// Quadratic stage cost over predicted states 0..N-1 and inputs 0..N-1,
/// in the solver's ½ zᵀHz + fᵀz + c form.
fn stage_cost(
    parts: &PredictorParts,
    weights: &StageWeights,
    horizon: usize,
    nu: usize,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let nz = horizon * nu;
    let mut h = DMatrix::<f64>::zeros(nz, nz);
    let mut f = DVector::<f64>::zeros(nz);
    let mut c0 = 0.0;
    for i in 0..horizon {
        let gamma = &parts.input_maps[i];
        let offset = &parts.offsets[i];
        h += gamma.transpose() * &weights.state * gamma * 2.0;
        f += gamma.transpose() * &weights.state * offset * 2.0;
        c0 += (offset.transpose() * &weights.state * offset)[(0, 0)];
        let mut sel = DMatrix::<f64>::zeros(nu, nz);
        sel.view_mut((0, i * nu), (nu, nu))
            .copy_from(&DMatrix::identity(nu, nu));
        h += sel.transpose() * &weights.input * sel * 2.0;
    }
    (h, f, c0)
}

/// Outer problem at step k: decision variables are the v_des trajectory,
/// the previous inner plan's interconnection sequence `vtilde_prev`
/// (entries for absolute times k..k+N-1) is injected into the dynamics,
/// terminal ellipsoids G1 at N-1 and λ1G1 at N, and (for k >= 1) rate balls
/// of radius δ_vdes β^min(k,N1*) around the shifted previous plan.
#[allow(clippy::too_many_arguments)]
pub fn build_outer_problem(
    aug: &AugmentedOuterModel,
    sets: &SetPairCertificate,
    budget: &RateBudget,
    k: usize,
    x1aug_k: &DVector<f64>,
    vtilde_prev: &[DVector<f64>],
    vdes_prev: Option<&TrajectoryPlan>,
    weights: &StageWeights,
) -> Result<MpcProblem, MpcError> {
    let n = budget.horizon;
    let q = aug.bfaug.ncols();
    if vtilde_prev.len() != n {
        return Err(MpcError::InterconnectionLength {
            got: vtilde_prev.len(),
            want: n,
        });
    }
    let forcing: Vec<DVector<f64>> = vtilde_prev.iter().map(|w| &aug.b1aug * w).collect();
    let parts = build_predictor(&aug.a1aug, &aug.bfaug, x1aug_k, &forcing, n);
    let (h, f, c0) = stage_cost(&parts, weights, n, q);
    let mut constraints = vec![
        Constraint::ellipsoid(
            parts.input_maps[n - 1].clone(),
            parts.offsets[n - 1].clone(),
            sets.g1.matrix.clone(),
            sets.g1.level,
        ),
        Constraint::ellipsoid(
            parts.input_maps[n].clone(),
            parts.offsets[n].clone(),
            sets.g1.matrix.clone(),
            sets.g1.lambda_star * sets.g1.level,
        ),
    ];
    if k >= 1 {
        let prev = vdes_prev.ok_or(MpcError::MissingPreviousPlan { k })?;
        if prev.inputs.len() != n {
            return Err(MpcError::PlanLength {
                got: prev.inputs.len(),
                want: n,
            });
        }
        let radius = budget.outer_radius(k);
        for i in 0..n - 1 {
            constraints.push(Constraint::Ball {
                start: i * q,
                center: prev.inputs[i + 1].clone(),
                radius,
            });
        }
    }
    Ok(MpcProblem {
        qcqp: QcqpProblem {
            hessian: h,
            linear: f,
            constant: c0,
            constraints,
        },
        offsets: parts.offsets,
        input_maps: parts.input_maps,
        nu: q,
        horizon: n,
        stamp: k,
    })
}

/// Inner problem at step k: decision variables are the u trajectory, the
/// fresh outer plan supplies x_f(.|k) and v_des(.|k) as known sequences,
/// terminal ellipsoid λ2G2 at N, the input box at every index, rate balls
/// for k >= 1, and optionally (k = 0) interconnection-consistency balls
/// ‖C x̃(i|0) - target_i‖ <= radius for i = 1..N.
#[allow(clippy::too_many_arguments)]
pub fn build_inner_problem(
    m: &CascadeModel,
    sets: &SetPairCertificate,
    budget: &RateBudget,
    k: usize,
    xtilde_k: &DVector<f64>,
    xf_traj: &[DVector<f64>],
    vdes_traj: &[DVector<f64>],
    u_prev: Option<&TrajectoryPlan>,
    weights: &StageWeights,
    consistency: Option<(&[DVector<f64>], f64)>,
) -> Result<MpcProblem, MpcError> {
    let n = budget.horizon;
    let p = m.p();
    if xf_traj.len() < n || vdes_traj.len() != n {
        return Err(MpcError::InterconnectionLength {
            got: xf_traj.len().min(vdes_traj.len()),
            want: n,
        });
    }
    let gap = &m.a2 - &m.af;
    let forcing: Vec<DVector<f64>> = (0..n)
        .map(|i| &gap * &xf_traj[i] - &m.bf * &vdes_traj[i])
        .collect();
    let parts = build_predictor(&m.a2, &m.b2, xtilde_k, &forcing, n);
    let (h, f, c0) = stage_cost(&parts, weights, n, p);
    let mut constraints = vec![Constraint::ellipsoid(
        parts.input_maps[n].clone(),
        parts.offsets[n].clone(),
        sets.g2.matrix.clone(),
        sets.g2.lambda_star * sets.g2.level,
    )];
    for i in 0..n {
        constraints.push(Constraint::Box {
            start: i * p,
            lower: m.input_box.lower.clone(),
            upper: m.input_box.upper.clone(),
        });
    }
    if k >= 1 {
        let prev = u_prev.ok_or(MpcError::MissingPreviousPlan { k })?;
        if prev.inputs.len() != n {
            return Err(MpcError::PlanLength {
                got: prev.inputs.len(),
                want: n,
            });
        }
        let radius = budget.inner_radius(k);
        for i in 0..n - 1 {
            constraints.push(Constraint::Ball {
                start: i * p,
                center: prev.inputs[i + 1].clone(),
                radius,
            });
        }
    }
    if let Some((targets, radius)) = consistency {
        // ‖C x̃_i - t_i‖² <= r² as a unit-shape ellipsoid on the affine image
        #[allow(clippy::needless_range_loop)]
        for i in 1..=n.min(targets.len().saturating_sub(1)) {
            let map = &m.c * &parts.input_maps[i];
            let offset = &m.c * &parts.offsets[i] - &targets[i];
            constraints.push(Constraint::ellipsoid(
                map,
                offset,
                DMatrix::identity(m.q(), m.q()),
                radius * radius,
            ));
        }
    }
    Ok(MpcProblem {
        qcqp: QcqpProblem {
            hessian: h,
            linear: f,
            constant: c0,
            constraints,
        },
        offsets: parts.offsets,
        input_maps: parts.input_maps,
        nu: p,
        horizon: n,
        stamp: k,
    })
}

/// Shift-and-tail candidate for the outer problem: previous plan entries
/// 1..N-1 followed by the terminal law at the predicted state N-1.
pub fn outer_shift_candidate(
    problem: &MpcProblem,
    prev: &TrajectoryPlan,
    gains: &TerminalGainSet,
) -> DVector<f64> {
    let n = problem.horizon;
    let mut inputs: Vec<DVector<f64>> = (0..n - 1).map(|i| prev.inputs[i + 1].clone()).collect();
    inputs.push(DVector::zeros(problem.nu));
    let z = problem.stack(&inputs);
    // last input sees only states up to N-1, which do not depend on it
    let states = problem.predict_states(&z);
    let tail = gains.terminal_vdes(&states[n - 1]);
    inputs[n - 1] = tail;
    problem.stack(&inputs)
}

/// Shift-and-tail candidate for the inner problem: previous plan entries
/// 1..N-1 followed by u = K21 v_des - K22 (x̃ + x_f) at index N-1.
pub fn inner_shift_candidate(
    problem: &MpcProblem,
    prev: &TrajectoryPlan,
    gains: &TerminalGainSet,
    xf_traj: &[DVector<f64>],
    vdes_traj: &[DVector<f64>],
) -> DVector<f64> {
    let n = problem.horizon;
    let mut inputs: Vec<DVector<f64>> = (0..n - 1).map(|i| prev.inputs[i + 1].clone()).collect();
    inputs.push(DVector::zeros(problem.nu));
    let z = problem.stack(&inputs);
    let states = problem.predict_states(&z);
    let x2_pred = &states[n - 1] + &xf_traj[n - 1];
    let tail = gains.terminal_input(&vdes_traj[n - 1], &x2_pred);
    inputs[n - 1] = tail;
    problem.stack(&inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{compute_dissipation, solve_discrete_lyapunov};
    use crate::model::{augment, double_integrator_cascade};
    use crate::qcqp::solve;
    use crate::rate::{derive_budgets, with_horizons};
    use crate::sets::{build_exact_sets, saturation_caps};
    use crate::synthesis::{build_exact_gain_set, GainSpec};

    fn pipeline() -> (
        crate::model::CascadeModel,
        crate::model::AugmentedOuterModel,
        TerminalGainSet,
        SetPairCertificate,
        RateBudget,
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
        let caps = saturation_caps(&m, &gains).unwrap();
        let sets = build_exact_sets(&outer, &inner, caps, &m.c, outer.alpha / 2.0).unwrap();
        let budget = with_horizons(
            derive_budgets(&m, &aug, &sets, 10, 0.9, 0.5).unwrap(),
            &sets,
            &m,
            &aug,
        )
        .unwrap();
        (m, aug, gains, sets, budget)
    }

    #[test]
    fn origin_stays_at_origin() {
        let (_m, aug, _gains, sets, budget) = pipeline();
        let n = budget.horizon;
        let vt = vec![DVector::zeros(1); n];
        let prob = build_outer_problem(
            &aug,
            &sets,
            &budget,
            0,
            &DVector::zeros(4),
            &vt,
            None,
            &StageWeights::identity(4, 1),
        )
        .unwrap();
        let sol = solve(&prob.qcqp, None);
        assert!(sol.is_optimal());
        assert!(sol.inputs.amax() < 1e-7, "v_des plan {:?}", sol.inputs);
        assert!(sol.objective.abs() < 1e-10);
    }

    #[test]
    fn rate_radius_schedule_matches_budget() {
        let (_m, _aug, _gains, _sets, budget) = pipeline();
        let n1 = budget.n1_star;
        for k in 1..n1 + 3 {
            let expect = budget.delta_vdes_max * budget.beta.powi(k.min(n1) as i32);
            assert!((budget.outer_radius(k) - expect).abs() < 1e-18);
        }
        assert!(budget.outer_radius(2) < budget.outer_radius(1));
        assert_eq!(budget.outer_radius(n1), budget.outer_radius(n1 + 10));
    }

    #[test]
    fn missing_previous_plan_is_protocol_error() {
        let (_m, aug, _gains, sets, budget) = pipeline();
        let vt = vec![DVector::zeros(1); budget.horizon];
        let err = build_outer_problem(
            &aug,
            &sets,
            &budget,
            3,
            &DVector::zeros(4),
            &vt,
            None,
            &StageWeights::identity(4, 1),
        )
        .unwrap_err();
        assert!(matches!(err, MpcError::MissingPreviousPlan { k: 3 }));
    }

    #[test]
    fn predicted_states_satisfy_dynamics() {
        let (m, aug, _gains, sets, budget) = pipeline();
        let n = budget.horizon;
        let x0 = DVector::from_row_slice(&[0.3, -0.1, 0.05, 0.0]);
        let vt: Vec<DVector<f64>> = (0..n)
            .map(|i| DVector::from_element(1, 0.01 * (i as f64 - 3.0)))
            .collect();
        let prob = build_outer_problem(
            &aug,
            &sets,
            &budget,
            0,
            &x0,
            &vt,
            None,
            &StageWeights::identity(4, 1),
        )
        .unwrap();
        let sol = solve(&prob.qcqp, None);
        assert!(sol.is_optimal());
        let plan = prob.extract_plan(&sol);
        let forcing: Vec<DVector<f64>> = vt.iter().map(|w| &aug.b1aug * w).collect();
        assert!(plan.consistency_residual(&aug.a1aug, &aug.bfaug, &forcing) <= 1e-9);
        // terminal constraints hold to the solver's feasibility contract
        assert!(prob.qcqp.max_violation(&sol.inputs) <= 1e-6);
        let v_end = sets.g1.value(&plan.states[n - 1]);
        assert!(v_end <= sets.g1.level * (1.0 + 1e-4), "V1(N-1) = {v_end}");
        let v_term = sets.g1.value(&plan.states[n]);
        assert!(v_term <= sets.g1.lambda_star * sets.g1.level * (1.0 + 1e-4));
        let _ = m;
    }

    #[test]
    fn inner_box_binds_under_aggressive_demand() {
        let (m, _aug, _gains, sets, budget) = pipeline();
        let n = budget.horizon;
        // killing this error state faster than the free decay needs |u| > 2,
        // so the optimal plan rides the box
        let xt0 = DVector::from_row_slice(&[0.0, 5.0]);
        let xf = vec![DVector::zeros(2); n + 1];
        let vd = vec![DVector::zeros(1); n];
        let prob = build_inner_problem(
            &m,
            &sets,
            &budget,
            0,
            &xt0,
            &xf,
            &vd,
            None,
            &StageWeights::scaled(2, 1, 1.0, 0.01),
            None,
        )
        .unwrap();
        let sol = solve(&prob.qcqp, None);
        assert!(sol.is_optimal(), "status {:?}", sol.status);
        let plan = prob.extract_plan(&sol);
        let peak = plan.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max);
        assert!(peak <= 2.0 + 1e-7, "box violated: {peak}");
        assert!(
            peak >= 2.0 - 1e-4,
            "expected an active box constraint, peak {peak}"
        );
        let v_term = sets.g2.value(&plan.states[n]);
        assert!(v_term <= sets.g2.lambda_star * sets.g2.level * (1.0 + 1e-4));
    }

    #[test]
    fn shifted_candidate_feasible_after_one_step() {
        let (m, aug, gains, sets, budget) = pipeline();
        let n = budget.horizon;
        let weights_o = StageWeights::identity(4, 1);
        let weights_i = StageWeights::scaled(2, 1, 1.0, 0.01);
        // step 0 from a moderate state with zero error
        let x0 = DVector::from_row_slice(&[0.3, 0.1, 0.0, 0.0]);
        let xt0 = DVector::zeros(2);
        let vt0 = vec![DVector::zeros(1); n];
        let outer0 =
            build_outer_problem(&aug, &sets, &budget, 0, &x0, &vt0, None, &weights_o).unwrap();
        let sol_o0 = solve(&outer0.qcqp, None);
        assert!(sol_o0.is_optimal());
        let plan_o0 = outer0.extract_plan(&sol_o0);
        let xf_traj: Vec<DVector<f64>> = plan_o0
            .states
            .iter()
            .map(|x| x.rows(2, 2).into_owned())
            .collect();
        let inner0 = build_inner_problem(
            &m,
            &sets,
            &budget,
            0,
            &xt0,
            &xf_traj,
            &plan_o0.inputs,
            None,
            &weights_i,
            None,
        )
        .unwrap();
        let sol_i0 = solve(&inner0.qcqp, None);
        assert!(sol_i0.is_optimal());
        let plan_i0 = inner0.extract_plan(&sol_i0);
        let vt_plan: Vec<DVector<f64>> = plan_i0.states.iter().map(|x| &m.c * x).collect();

        // true step with the first plan elements
        let s = crate::model::StateBundle {
            x1: x0.rows(0, 2).into_owned(),
            x2: &xt0 + &xf_traj[0],
            xf: xf_traj[0].clone(),
        };
        let next = crate::model::step_true(&m, &s, &plan_i0.inputs[0], &plan_o0.inputs[0]);

        // step 1 outer problem with the stored interconnection plan
        let outer1 = build_outer_problem(
            &aug,
            &sets,
            &budget,
            1,
            &next.x1aug(),
            &vt_plan[1..=n],
            Some(&plan_o0),
            &weights_o,
        )
        .unwrap();
        let cand = outer_shift_candidate(&outer1, &plan_o0, &gains);
        let viol = outer1.candidate_violation(&cand);
        assert!(viol <= 1e-6, "outer shifted candidate violation {viol}");

        // inner candidate against the outer's fresh plan
        let sol_o1 = solve(&outer1.qcqp, Some(&cand));
        assert!(sol_o1.is_optimal());
        let plan_o1 = outer1.extract_plan(&sol_o1);
        let xf1: Vec<DVector<f64>> = plan_o1
            .states
            .iter()
            .map(|x| x.rows(2, 2).into_owned())
            .collect();
        let inner1 = build_inner_problem(
            &m,
            &sets,
            &budget,
            1,
            &next.xtilde(),
            &xf1,
            &plan_o1.inputs,
            Some(&plan_i0),
            &weights_i,
            None,
        )
        .unwrap();
        let cand_i = inner_shift_candidate(&inner1, &plan_i0, &gains, &xf1, &plan_o1.inputs);
        let viol_i = inner1.candidate_violation(&cand_i);
        assert!(viol_i <= 1e-6, "inner shifted candidate violation {viol_i}");
    }
}
