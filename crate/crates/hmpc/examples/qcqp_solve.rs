//! The operator-splitting QCQP solver on its own: quadratic objective with
//! box, ball, and ellipsoid constraints.
//!
//! ```bash
//! cargo run --example qcqp_solve
//! ```

use hmpc::qcqp::{solve, Constraint, QcqpProblem};
use nalgebra::{DMatrix, DVector};

fn main() {
    // minimize (v - 3)^2 subject to |v| <= 1 and |v| <= 0.5: v* = 0.5
    let p = QcqpProblem {
        hessian: DMatrix::from_row_slice(1, 1, &[2.0]),
        linear: DVector::from_row_slice(&[-6.0]),
        constant: 9.0,
        constraints: vec![
            Constraint::Box {
                start: 0,
                lower: DVector::from_row_slice(&[-1.0]),
                upper: DVector::from_row_slice(&[1.0]),
            },
            Constraint::Ball {
                start: 0,
                center: DVector::zeros(1),
                radius: 0.5,
            },
        ],
    };
    let sol = solve(&p, None);
    println!(
        "1-D: v* = {:.6}, objective {:.6}, status {:?}, {} iterations",
        sol.inputs[0], sol.objective, sol.status, sol.iterations
    );

    // minimize ‖z - (2, 2)‖² subject to an ellipsoid on z and a box on z0
    let p = QcqpProblem {
        hessian: DMatrix::identity(2, 2) * 2.0,
        linear: DVector::from_row_slice(&[-4.0, -4.0]),
        constant: 8.0,
        constraints: vec![
            Constraint::ellipsoid(
                DMatrix::identity(2, 2),
                DVector::zeros(2),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
                1.0,
            ),
            Constraint::Box {
                start: 0,
                lower: DVector::from_row_slice(&[-0.3]),
                upper: DVector::from_row_slice(&[0.3]),
            },
        ],
    };
    let sol = solve(&p, None);
    println!(
        "2-D: z* = ({:.6}, {:.6}), objective {:.6}, worst violation {:.2e}",
        sol.inputs[0],
        sol.inputs[1],
        sol.objective,
        p.max_violation(&sol.inputs)
    );

    // an infeasible pair of balls is detected rather than ground to the cap
    let p = QcqpProblem {
        hessian: DMatrix::identity(1, 1),
        linear: DVector::zeros(1),
        constant: 0.0,
        constraints: vec![
            Constraint::Ball {
                start: 0,
                center: DVector::from_row_slice(&[5.0]),
                radius: 0.5,
            },
            Constraint::Ball {
                start: 0,
                center: DVector::from_row_slice(&[-5.0]),
                radius: 0.5,
            },
        ],
    };
    let sol = solve(&p, None);
    println!(
        "disjoint balls: status {:?} after {} iterations",
        sol.status, sol.iterations
    );
}
