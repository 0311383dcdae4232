//! Scenario files: hand-editable TOML with named numeric arrays.
//!
//! ```toml
//! [metadata]
//! name = "sample"
//!
//! [model]
//! a1 = [[1.0, 0.1], [0.0, 1.0]]
//! b1 = [[0.005], [0.1]]
//! a2 = [[0.0, 1.0], [-0.08, 0.6]]
//! b2 = [[0.0], [1.0]]
//! c  = [[1.0, 0.0]]
//! af = [[0.0, 1.0], [-0.01, 0.2]]
//! bf = [[0.0], [0.81]]
//! u_lower = [-2.0]
//! u_upper = [2.0]
//!
//! [design]
//! matching = "exact"            # or "inexact"
//! horizon = 10
//! beta = 0.9
//! # weights: scalar (multiple of identity) or full matrix rows
//! outer_state_weight = 1.0
//! inner_state_weight = [[1.0, 0.0], [0.0, 1.0]]
//!
//! [run]
//! x1 = [0.4, -0.2]
//! x2 = [0.1, 0.05]
//! xf = [0.08, 0.02]
//! steps = 200
//! ```
//!
//! All numbers parse as 64-bit floats. A scenario whose model fails the
//! structural assumption checks is rejected at load time with the full
//! assumption report attached.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_assumptions, AssumptionReport, CascadeModel, InputBox, ModelError, StateBundle,
};
use crate::synthesis::MatchingMode;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("matrix {name} is ragged: row {row} has {got} entries, expected {want}")]
    Ragged {
        name: String,
        row: usize,
        got: usize,
        want: usize,
    },
    #[error("matrix {name} is empty")]
    Empty { name: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model violates structural assumptions: {summary}")]
    Assumptions {
        summary: String,
        report: Box<AssumptionReport>,
    },
    #[error("initial state {name} has {got} entries, expected {want}")]
    StateLength {
        name: &'static str,
        got: usize,
        want: usize,
    },
    #[error("weight {name} must be a scalar or a {want}x{want} matrix")]
    WeightShape { name: &'static str, want: usize },
}

/// Scalar multiple of identity, or a full matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Scalar(1.0)
    }
}

impl WeightSpec {
    pub fn to_matrix(&self, dim: usize, name: &'static str) -> Result<DMatrix<f64>, ScenarioError> {
        match self {
            WeightSpec::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            WeightSpec::Matrix(rows) => {
                let m = parse_matrix("weight", rows)?;
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(ScenarioError::WeightShape { name, want: dim });
                }
                Ok(m)
            }
        }
    }
}

fn default_theta() -> f64 {
    0.5
}
fn default_split() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    0.9
}
fn default_horizon() -> usize {
    10
}
fn default_steps() -> usize {
    200
}
fn default_seed() -> u64 {
    crate::verification::DEFAULT_SEED
}
fn default_gain_tol() -> f64 {
    1e-6
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetadataBlock {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBlock {
    pub a1: Vec<Vec<f64>>,
    pub b1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub b2: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub af: Vec<Vec<f64>>,
    pub bf: Vec<Vec<f64>>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignBlock {
    pub matching: MatchingMode,
    #[serde(default)]
    pub outer_state_weight: WeightSpec,
    #[serde(default)]
    pub outer_input_weight: WeightSpec,
    #[serde(default)]
    pub inner_state_weight: WeightSpec,
    #[serde(default)]
    pub inner_input_weight: WeightSpec,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Margin ε1; defaults to α1/2 when absent.
    #[serde(default)]
    pub eps1: Option<f64>,
    /// Margin ε2; defaults to α2/2 when absent.
    #[serde(default)]
    pub eps2: Option<f64>,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub stage_state_weight: WeightSpec,
    #[serde(default)]
    pub stage_input_weight: WeightSpec,
    #[serde(default)]
    pub stage_error_weight: WeightSpec,
    #[serde(default)]
    pub stage_actuation_weight: WeightSpec,
    #[serde(default = "default_gain_tol")]
    pub gain_tol: f64,
    /// Fault-injection knob: scales every dissipation gain before the set
    /// construction (1.0 = no scaling).
    #[serde(default = "default_scale")]
    pub gamma_bar_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunBlock {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub xf: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// The raw file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub metadata: MetadataBlock,
    pub model: ModelBlock,
    pub design: DesignBlock,
    pub run: RunBlock,
}

fn parse_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ScenarioError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(ScenarioError::Empty {
            name: name.to_string(),
        });
    }
    let want = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != want {
            return Err(ScenarioError::Ragged {
                name: name.to_string(),
                row: i,
                got: r.len(),
                want,
            });
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), want, &flat))
}

impl Scenario {
    pub fn parse_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Builds and validates the cascade; a failed assumption rejects the
    /// scenario with the report embedded.
    pub fn to_model(&self) -> Result<(CascadeModel, AssumptionReport), ScenarioError> {
        let m = CascadeModel::new(
            parse_matrix("a1", &self.model.a1)?,
            parse_matrix("b1", &self.model.b1)?,
            parse_matrix("a2", &self.model.a2)?,
            parse_matrix("b2", &self.model.b2)?,
            parse_matrix("c", &self.model.c)?,
            parse_matrix("af", &self.model.af)?,
            parse_matrix("bf", &self.model.bf)?,
            InputBox {
                lower: DVector::from_row_slice(&self.model.u_lower),
                upper: DVector::from_row_slice(&self.model.u_upper),
            },
        )?;
        let report = validate_assumptions(&m);
        let required_pass = match self.design.matching {
            MatchingMode::Exact => {
                report.exact_matching_ok()
                    && report
                        .check(crate::model::Assumption::OriginInInputSet)
                        .passed
            }
            MatchingMode::Inexact => {
                report.inexact_matching_ok()
                    && report
                        .check(crate::model::Assumption::OriginInInputSet)
                        .passed
            }
        };
        if !required_pass {
            let summary: Vec<String> = report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{:?} ({:?})", c.assumption, c.witness))
                .collect();
            return Err(ScenarioError::Assumptions {
                summary: summary.join("; "),
                report: Box::new(report),
            });
        }
        Ok((m, report))
    }

    pub fn initial_state(&self, m: &CascadeModel) -> Result<StateBundle, ScenarioError> {
        let want = |name, got: usize, want: usize| {
            if got != want {
                Err(ScenarioError::StateLength { name, got, want })
            } else {
                Ok(())
            }
        };
        want("x1", self.run.x1.len(), m.n1())?;
        want("x2", self.run.x2.len(), m.n2())?;
        want("xf", self.run.xf.len(), m.n2())?;
        Ok(StateBundle {
            x1: DVector::from_row_slice(&self.run.x1),
            x2: DVector::from_row_slice(&self.run.x2),
            xf: DVector::from_row_slice(&self.run.xf),
        })
    }
}
