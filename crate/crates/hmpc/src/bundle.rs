//! Certificate bundle: the single structured report written by synthesis
//! and consumed by simulation and certification. JSON with stable key
//! names; matrices as row arrays; all numbers 64-bit floats that round-trip
//! bit-exactly through serde_json.
//!
//! The bundle embeds a SHA-256 hash of the scenario file so a simulate run
//! cannot mix certificates from a different scenario.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::certificates::{ChannelGain, DissipationCertificate, GainEstimate};
use crate::model::{AssumptionReport, CascadeModel, InputBox};
use crate::rate::RateBudget;
use crate::sets::{ContractiveSet, MinBranch, SetPairCertificate};
use crate::synthesis::{MatchingMode, TerminalGainSet};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot read or write bundle: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse bundle: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bundle was synthesized from a different scenario (hash {expected} vs {got})")]
    HashMismatch { expected: String, got: String },
    #[error("report carries no certificate bundle (synthesis outcome was {outcome})")]
    NoBundle { outcome: String },
    #[error("bundle model is inconsistent: {0}")]
    Model(String),
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, BundleError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(BundleError::Model("empty matrix in bundle".into()));
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(BundleError::Model("ragged matrix in bundle".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), w, &flat))
}

pub fn scenario_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    hex_string(&h.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelData {
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

impl ModelData {
    pub fn from_model(m: &CascadeModel) -> Self {
        Self {
            a1: matrix_rows(&m.a1),
            b1: matrix_rows(&m.b1),
            a2: matrix_rows(&m.a2),
            b2: matrix_rows(&m.b2),
            c: matrix_rows(&m.c),
            af: matrix_rows(&m.af),
            bf: matrix_rows(&m.bf),
            u_lower: m.input_box.lower.iter().copied().collect(),
            u_upper: m.input_box.upper.iter().copied().collect(),
        }
    }

    pub fn to_model(&self) -> Result<CascadeModel, BundleError> {
        CascadeModel::new(
            rows_matrix(&self.a1)?,
            rows_matrix(&self.b1)?,
            rows_matrix(&self.a2)?,
            rows_matrix(&self.b2)?,
            rows_matrix(&self.c)?,
            rows_matrix(&self.af)?,
            rows_matrix(&self.bf)?,
            InputBox {
                lower: DVector::from_row_slice(&self.u_lower),
                upper: DVector::from_row_slice(&self.u_upper),
            },
        )
        .map_err(|e| BundleError::Model(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainData {
    pub gamma: f64,
    pub input: String,
    pub output: String,
    pub certified: bool,
    pub witness: Option<Vec<Vec<f64>>>,
}

impl GainData {
    fn from_estimate(g: &GainEstimate) -> Self {
        Self {
            gamma: g.gamma,
            input: g.channel.0.clone(),
            output: g.channel.1.clone(),
            certified: g.certified,
            witness: g.witness.as_ref().map(matrix_rows),
        }
    }

    fn to_estimate(&self) -> Result<GainEstimate, BundleError> {
        Ok(GainEstimate {
            gamma: self.gamma,
            channel: (self.input.clone(), self.output.clone()),
            certified: self.certified,
            witness: self.witness.as_ref().map(|w| rows_matrix(w)).transpose()?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateData {
    pub lyapunov_matrix: Vec<Vec<f64>>,
    pub alpha: f64,
    pub channel_gains: Vec<(String, f64)>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl CertificateData {
    fn from_certificate(c: &DissipationCertificate) -> Self {
        Self {
            lyapunov_matrix: matrix_rows(&c.m),
            alpha: c.alpha,
            channel_gains: c
                .gains
                .iter()
                .map(|g| (g.name.clone(), g.gamma_bar))
                .collect(),
            lambda_min: c.lambda_min,
            lambda_max: c.lambda_max,
        }
    }

    pub fn to_certificate(&self) -> Result<DissipationCertificate, BundleError> {
        Ok(DissipationCertificate {
            m: rows_matrix(&self.lyapunov_matrix)?,
            alpha: self.alpha,
            gains: self
                .channel_gains
                .iter()
                .map(|(name, g)| ChannelGain {
                    name: name.clone(),
                    gamma_bar: *g,
                })
                .collect(),
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetData {
    pub matrix: Vec<Vec<f64>>,
    pub level: f64,
    pub lambda: f64,
    pub lambda_star: f64,
    pub epsilon: f64,
}

impl SetData {
    fn from_set(s: &ContractiveSet) -> Self {
        Self {
            matrix: matrix_rows(&s.matrix),
            level: s.level,
            lambda: s.lambda,
            lambda_star: s.lambda_star,
            epsilon: s.epsilon,
        }
    }

    fn to_set(&self) -> Result<ContractiveSet, BundleError> {
        Ok(ContractiveSet {
            matrix: rows_matrix(&self.matrix)?,
            level: self.level,
            lambda: self.lambda,
            lambda_star: self.lambda_star,
            epsilon: self.epsilon,
        })
    }
}

/// Echo of the design knobs the harness needs at simulate time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignEcho {
    pub theta: f64,
    pub eps1: f64,
    pub eps2: Option<f64>,
    pub split: f64,
    pub horizon: usize,
    pub beta: f64,
    pub stage_state_weight: Vec<Vec<f64>>,
    pub stage_input_weight: Vec<Vec<f64>>,
    pub stage_error_weight: Vec<Vec<f64>>,
    pub stage_actuation_weight: Vec<Vec<f64>>,
}

/// The full synthesis payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateBundle {
    pub scenario_hash: String,
    pub scenario_name: String,
    pub mode: MatchingMode,
    pub model: ModelData,
    pub design: DesignEcho,
    pub k1: Vec<Vec<f64>>,
    pub k21: Vec<Vec<f64>>,
    pub k22: Vec<Vec<f64>>,
    pub gamma1: GainData,
    pub gamma2: GainData,
    pub outer_certificate: CertificateData,
    pub inner_certificate: CertificateData,
    pub g1: SetData,
    pub g2: SetData,
    pub x1_max: f64,
    pub xtilde_max: f64,
    pub v1_branch: MinBranch,
    pub v2_branch: MinBranch,
    pub solvability: Option<SolvabilityData>,
    pub budget: RateBudget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolvabilityData {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallGainData {
    pub gamma1: f64,
    pub gamma2: f64,
    pub product: f64,
}

/// Synthesis outcome wrapper: always written, carries failure diagnostics
/// or the bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub outcome: String,
    pub scenario_name: String,
    pub scenario_hash: String,
    pub assumption_report: Option<AssumptionReport>,
    pub small_gain: Option<SmallGainData>,
    pub solvability: Option<SolvabilityData>,
    pub error: Option<String>,
    pub bundle: Option<CertificateBundle>,
}

impl SynthesisReport {
    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn require_bundle(&self) -> Result<&CertificateBundle, BundleError> {
        self.bundle.as_ref().ok_or_else(|| BundleError::NoBundle {
            outcome: self.outcome.clone(),
        })
    }
}

/// Typed objects reconstructed from a bundle.
pub struct Reconstructed {
    pub model: CascadeModel,
    pub aug: crate::model::AugmentedOuterModel,
    pub gains: TerminalGainSet,
    pub outer_certificate: DissipationCertificate,
    pub inner_certificate: DissipationCertificate,
    pub sets: SetPairCertificate,
    pub budget: RateBudget,
}

impl CertificateBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        scenario_text: &str,
        scenario_name: &str,
        model: &CascadeModel,
        design: DesignEcho,
        gains: &TerminalGainSet,
        outer: &DissipationCertificate,
        inner: &DissipationCertificate,
        sets: &SetPairCertificate,
        budget: &RateBudget,
        solvability: Option<SolvabilityData>,
    ) -> Self {
        CertificateBundle {
            scenario_hash: scenario_hash(scenario_text),
            scenario_name: scenario_name.to_string(),
            mode: gains.mode,
            model: ModelData::from_model(model),
            design,
            k1: matrix_rows(&gains.k1),
            k21: matrix_rows(&gains.k21),
            k22: matrix_rows(&gains.k22),
            gamma1: GainData::from_estimate(&gains.gamma1),
            gamma2: GainData::from_estimate(&gains.gamma2),
            outer_certificate: CertificateData::from_certificate(outer),
            inner_certificate: CertificateData::from_certificate(inner),
            g1: SetData::from_set(&sets.g1),
            g2: SetData::from_set(&sets.g2),
            x1_max: sets.x1_max,
            xtilde_max: sets.xtilde_max,
            v1_branch: sets.v1_branch,
            v2_branch: sets.v2_branch,
            solvability,
            budget: budget.clone(),
        }
    }

    pub fn verify_hash(&self, scenario_text: &str) -> Result<(), BundleError> {
        let got = scenario_hash(scenario_text);
        if got != self.scenario_hash {
            return Err(BundleError::HashMismatch {
                expected: self.scenario_hash.clone(),
                got,
            });
        }
        Ok(())
    }

    pub fn reconstruct(&self) -> Result<Reconstructed, BundleError> {
        let model = self.model.to_model()?;
        let aug = crate::model::augment(&model);
        let gains = TerminalGainSet {
            k1: rows_matrix(&self.k1)?,
            k21: rows_matrix(&self.k21)?,
            k22: rows_matrix(&self.k22)?,
            mode: self.mode,
            gamma1: self.gamma1.to_estimate()?,
            gamma2: self.gamma2.to_estimate()?,
        };
        let sets = SetPairCertificate {
            g1: self.g1.to_set()?,
            g2: self.g2.to_set()?,
            x1_max: self.x1_max,
            xtilde_max: self.xtilde_max,
            mode: self.mode,
            solvability_ok: self.solvability.as_ref().map(|s| s.satisfied),
            v1_branch: self.v1_branch,
            v2_branch: self.v2_branch,
        };
        Ok(Reconstructed {
            model,
            aug,
            gains,
            outer_certificate: self.outer_certificate.to_certificate()?,
            inner_certificate: self.inner_certificate.to_certificate()?,
            sets,
            budget: self.budget.clone(),
        })
    }
}
