//! Scenario documents: the JSON input of the verification runner and the CLI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{
    fold_motion, matrix_from_rows, BranchingMechanism, ImmigrationMechanism, JumpComponent, MassVector,
    MotionGenerator,
};
use crate::simulate::SimConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// JSON schema of [`ScenarioDocument`].
pub const SCENARIO_SCHEMA: &str = include_str!("../schema/scenario.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    WassersteinSandwich,
    TvSandwich,
    Stationary,
    LipschitzContraction,
    Laplace,
    Extinction,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::WassersteinSandwich,
        CheckKind::TvSandwich,
        CheckKind::Stationary,
        CheckKind::LipschitzContraction,
        CheckKind::Laplace,
        CheckKind::Extinction,
    ];

    pub fn id(self) -> &'static str {
        match self {
            CheckKind::WassersteinSandwich => "wasserstein_sandwich",
            CheckKind::TvSandwich => "tv_sandwich",
            CheckKind::Stationary => "stationary",
            CheckKind::LipschitzContraction => "lipschitz_contraction",
            CheckKind::Laplace => "laplace",
            CheckKind::Extinction => "extinction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionDoc {
    /// Generator rows; off-diagonal entries nonnegative, row sums <= 0.
    pub rates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismDoc {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<Vec<f64>>>,
    /// One list of components per type; empty means no jumps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jumps: Vec<Vec<JumpComponent>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmigrationDoc {
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jumps: Vec<JumpComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDoc {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Negative-control hook: every analytic value is multiplied by
/// `analytic_scale` before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tamper {
    pub analytic_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionDoc>,
    pub mechanism: MechanismDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub immigration: Option<ImmigrationDoc>,
    pub initial: InitialDoc,
    pub times: Vec<f64>,
    pub sim: SimConfig,
    /// Empty runs every check.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckKind>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Laplace arguments; defaults to `0.5 * 1`, `1` and `2 * 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<Vec<f64>>>,
    /// Time grid of the exponential rate fits.
    #[serde(default = "default_rate_times")]
    pub rate_times: Vec<f64>,
    /// Relative tolerance of the cumulant solver.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tamper: Option<Tamper>,
}

fn default_replicates() -> usize {
    3
}

fn default_rate_times() -> Vec<f64> {
    (0..=10).map(|k| 1.0 + 0.5 * k as f64).collect()
}

fn default_tolerance() -> f64 {
    1e-10
}

impl ScenarioDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A validated scenario with its mechanisms built and the motion folded in.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDocument,
    /// Mechanism with the motion folded in.
    pub mech: BranchingMechanism,
    /// Zero when the document has no immigration block.
    pub imm: ImmigrationMechanism,
    pub mu: MassVector,
    pub nu: MassVector,
}

fn scenario_err(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

fn check_len(what: &str, len: usize, d: usize) -> Result<()> {
    if len != d {
        return Err(scenario_err(format!("{what} has length {len}, dimension is {d}")));
    }
    Ok(())
}

impl Scenario {
    pub fn from_document(doc: ScenarioDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(scenario_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let d = doc.dimension;
        if d == 0 {
            return Err(scenario_err("dimension must be at least 1"));
        }
        let m = &doc.mechanism;
        check_len("mechanism.b", m.b.len(), d)?;
        check_len("mechanism.c", m.c.len(), d)?;
        let eta = match &m.eta {
            Some(rows) => {
                check_len("mechanism.eta", rows.len(), d)?;
                matrix_from_rows(rows)?
            }
            None => nalgebra::DMatrix::zeros(d, d),
        };
        let jumps = if m.jumps.is_empty() { vec![Vec::new(); d] } else { m.jumps.clone() };
        check_len("mechanism.jumps", jumps.len(), d)?;
        let raw = BranchingMechanism::new(m.b.clone(), m.c.clone(), eta, jumps)?;
        let mech = match &doc.motion {
            Some(motion) => {
                check_len("motion.rates", motion.rates.len(), d)?;
                fold_motion(&raw, &MotionGenerator::new(matrix_from_rows(&motion.rates)?)?)?
            }
            None => raw,
        };
        let imm = match &doc.immigration {
            Some(i) => {
                check_len("immigration.beta", i.beta.len(), d)?;
                ImmigrationMechanism::new(i.beta.clone(), i.jumps.clone())?
            }
            None => ImmigrationMechanism::none(d),
        };
        check_len("initial.mu", doc.initial.mu.len(), d)?;
        check_len("initial.nu", doc.initial.nu.len(), d)?;
        let mu = MassVector::new(doc.initial.mu.clone())?;
        let nu = MassVector::new(doc.initial.nu.clone())?;
        check_times("times", &doc.times)?;
        check_times("rate_times", &doc.rate_times)?;
        doc.sim.validate()?;
        if doc.replicates == 0 {
            return Err(scenario_err("replicates must be at least 1"));
        }
        if !(doc.tolerance > 0.0 && doc.tolerance < 1e-2) {
            return Err(scenario_err(format!("tolerance must lie in (0, 1e-2), got {}", doc.tolerance)));
        }
        if let Some(ls) = &doc.lambdas {
            for l in ls {
                check_len("lambdas entry", l.len(), d)?;
                if l.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(scenario_err(format!("lambdas must be finite and >= 0, got {l:?}")));
                }
            }
        }
        if let Some(t) = doc.tamper {
            if !(t.analytic_scale.is_finite() && t.analytic_scale >= 0.0) {
                return Err(scenario_err("tamper.analytic_scale must be finite and >= 0"));
            }
        }
        Ok(Self { doc, mech, imm, mu, nu })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(ScenarioDocument::from_json(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_document(ScenarioDocument::load(path)?)
    }

    pub fn dim(&self) -> usize {
        self.mech.dim()
    }

    pub fn sim_config(&self) -> SimConfig {
        self.doc.sim
    }

    pub fn has_immigration(&self) -> bool {
        !self.imm.is_zero()
    }

    pub fn checks(&self) -> Vec<CheckKind> {
        if self.doc.checks.is_empty() {
            CheckKind::ALL.to_vec()
        } else {
            let mut c = self.doc.checks.clone();
            c.sort();
            c.dedup();
            c
        }
    }

    pub fn lambdas(&self) -> Vec<Vec<f64>> {
        self.doc
            .lambdas
            .clone()
            .unwrap_or_else(|| [0.5, 1.0, 2.0].iter().map(|&s| vec![s; self.dim()]).collect())
    }

    pub fn analytic_scale(&self) -> f64 {
        self.doc.tamper.map_or(1.0, |t| t.analytic_scale)
    }
}

fn check_times(what: &str, times: &[f64]) -> Result<()> {
    let mut prev = 0.0;
    for &t in times {
        if !(t.is_finite() && t >= prev) {
            return Err(scenario_err(format!("{what} must be finite, nonnegative and increasing")));
        }
        prev = t;
    }
    Ok(())
}
