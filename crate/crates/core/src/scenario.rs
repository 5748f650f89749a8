//! Scenario files: everything needed to reproduce one run.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adp::{AdpGains, Basis};
use crate::automaton::{compile, Tiebreak};
use crate::cost::CostSpec;
use crate::plant::{ControlAffinePlant, PlantModel, Roi, RoiSet};
use crate::scltl::{parse_formula, Alphabet};
use crate::sysid::IclGains;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    Benchmark2d,
    Linear1d,
    CustomBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiebreakKind {
    Lexicographic,
    NearestRoi,
    FixedWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Staf,
    Quadratic,
}

/// A scalar (meaning a multiple of the identity or a constant vector) or an
/// explicit array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalable<T> {
    Scalar(f64),
    Explicit(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linear1dParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomBasisParams {
    pub monomials: Vec<Vec<u32>>,
    pub theta: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub name: String,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Defaults to the centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    #[serde(rename = "Q_scale")]
    pub q_scale: f64,
    #[serde(rename = "R")]
    pub r: Scalable<Vec<Vec<f64>>>,
    pub barrier_scale: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { q_scale: 1.0, r: Scalable::Scalar(2.0), barrier_scale: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SysIdConfig {
    pub k_theta: f64,
    pub beta_theta: f64,
    pub gamma0: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub dt_window: f64,
    pub theta_max: f64,
    pub gamma_cap: f64,
    /// Fill the stack from recorded excitation experiments before the run.
    pub prepopulate: bool,
    pub prepopulate_spread: f64,
    /// Seeds the recorded experiments.
    pub seed: u64,
    pub theta0_range: f64,
    /// Minimum stack excitation the run is expected to provide.
    pub lambda_theta: f64,
    /// Use the true weights and skip identification.
    pub exact: bool,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self {
            k_theta: 15.0,
            beta_theta: 10.0,
            gamma0: 20.0,
            m: 20,
            dt_window: 0.2,
            theta_max: 20.0,
            gamma_cap: 100.0,
            prepopulate: true,
            prepopulate_spread: 2.5,
            seed: 1,
            theta0_range: 5.0,
            lambda_theta: 1e-3,
            exact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdpConfig {
    pub kc1: f64,
    pub kc2: f64,
    pub ka1: f64,
    pub ka2: f64,
    pub gamma1: f64,
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub a: f64,
    pub omega_probe: f64,
    pub gamma0: f64,
    /// Defaults to `gamma0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_cap: Option<f64>,
    pub wc0: Scalable<Vec<f64>>,
    pub wa0: Scalable<Vec<f64>>,
    pub basis: BasisKind,
    /// Window length for the excitation report.
    pub excitation_window: f64,
}

impl Default for AdpConfig {
    fn default() -> Self {
        Self {
            kc1: 0.001,
            kc2: 0.25,
            ka1: 1.2,
            ka2: 0.01,
            gamma1: 1.0,
            beta: 0.003,
            n: 1,
            a: 0.7,
            omega_probe: 10.0 * std::f64::consts::PI,
            gamma0: 15.0,
            gamma_cap: None,
            wc0: Scalable::Scalar(4.0),
            wa0: Scalable::Scalar(4.0),
            basis: BasisKind::Staf,
            excitation_window: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub formula: Option<String>,
    /// Observation names in order; defaults to the ROI names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabet: Option<Vec<String>>,
    pub plant: PlantKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear1d: Option<Linear1dParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_basis: Option<CustomBasisParams>,
    #[serde(default)]
    pub roi: Vec<RoiSpec>,
    pub x0: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Time simulated after acceptance.
    #[serde(default = "default_settle")]
    pub settle: f64,
    /// Seeds the initial parameter estimate.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tiebreak")]
    pub tiebreak: TiebreakKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<Vec<String>>,
    #[serde(default = "default_max_jumps")]
    pub max_jumps: usize,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub sysid: SysIdConfig,
    #[serde(default)]
    pub adp: AdpConfig,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_dt() -> f64 {
    0.001
}
fn default_t_max() -> f64 {
    5.0
}
fn default_settle() -> f64 {
    0.5
}
fn default_tiebreak() -> TiebreakKind {
    TiebreakKind::Lexicographic
}
fn default_max_jumps() -> usize {
    1000
}

/// Validated scenario with its derived objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub alphabet: Alphabet,
    pub plant: ControlAffinePlant,
    pub rois: RoiSet,
    pub cost: CostSpec,
    pub basis: Basis,
    pub tiebreak: Tiebreak,
    pub icl: IclGains,
    pub adp: AdpGains,
    pub x0: DVector<f64>,
    pub wc0: DVector<f64>,
    pub wa0: DVector<f64>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.resolve()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// Hex SHA-256 of the canonical JSON form of the resolved scenario.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Sets a field by dotted path, e.g. `adp.kc1`, from a TOML value.
    pub fn set_path(&mut self, path: &str, value: toml::Value) -> Result<(), ScenarioError> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let mut cursor = &mut root;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = cursor.as_table_mut().ok_or_else(|| invalid(path, "not a table"))?;
            if i + 1 == parts.len() {
                table.insert((*part).to_string(), value);
                break;
            }
            cursor = table.entry((*part).to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let next: Scenario = root.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        next.resolve()?;
        *self = next;
        Ok(())
    }

    pub fn plant_model(&self) -> Result<PlantModel, ScenarioError> {
        Ok(match self.plant {
            PlantKind::Benchmark2d => PlantModel::Benchmark2d,
            PlantKind::Linear1d => {
                let p = self.linear1d.as_ref().ok_or_else(|| invalid("linear1d", "missing parameters a, b"))?;
                PlantModel::Linear1d { a: p.a, b: p.b }
            }
            PlantKind::CustomBasis => {
                let p = self.custom_basis.as_ref().ok_or_else(|| invalid("custom_basis", "missing parameters"))?;
                PlantModel::CustomBasis { monomials: p.monomials.clone(), theta: p.theta.clone(), g: p.g.clone() }
            }
        })
    }

    /// Checks every field and builds the derived objects.
    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        let plant = ControlAffinePlant::new(self.plant_model()?).map_err(|e| invalid("plant", e.to_string()))?;
        let n = plant.state_dim();
        let m = plant.input_dim();

        let names: Vec<String> = match &self.alphabet {
            Some(a) => a.clone(),
            None => self.roi.iter().map(|r| r.name.clone()).collect(),
        };
        let alphabet = Alphabet::new(&names).map_err(|e| invalid("alphabet", e.to_string()))?;
        let text = self.formula.as_deref().ok_or_else(|| invalid("formula", "missing"))?;
        let phi = parse_formula(text, &alphabet).map_err(|e| invalid("formula", e.to_string()))?;
        compile(&phi, &alphabet).map_err(|e| invalid("formula", e.to_string()))?;

        let mut rois = Vec::new();
        for (k, spec) in self.roi.iter().enumerate() {
            let field = format!("roi[{k}]");
            let obs = alphabet
                .lookup(&spec.name)
                .ok_or_else(|| invalid(&field, format!("`{}` is not an observation", spec.name)))?;
            if spec.center.len() != n {
                return Err(invalid(&field, format!("center must have {n} entries")));
            }
            let mut roi = Roi::disk(obs, spec.name.clone(), DVector::from_column_slice(&spec.center), spec.radius);
            if let Some(goal) = &spec.goal {
                if goal.len() != n {
                    return Err(invalid(&field, format!("goal must have {n} entries")));
                }
                roi.goal = DVector::from_column_slice(goal);
            }
            rois.push(roi);
        }
        for name in alphabet.names() {
            if !self.roi.iter().any(|r| &r.name == name) {
                return Err(invalid("roi", format!("observation `{name}` has no region")));
            }
        }
        let rois = RoiSet::new(rois).map_err(|e| invalid("roi", e.to_string()))?;

        if self.x0.len() != n {
            return Err(invalid("x0", format!("must have {n} entries")));
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(invalid("x0", "must be finite"));
        }
        positive("dt", self.dt)?;
        positive("t_max", self.t_max)?;
        if !(self.settle >= 0.0) {
            return Err(invalid("settle", "must be non-negative"));
        }

        let r = match &self.cost.r {
            Scalable::Scalar(s) => DMatrix::identity(m, m) * *s,
            Scalable::Explicit(rows) => {
                if rows.len() != m || rows.iter().any(|row| row.len() != m) {
                    return Err(invalid("cost.R", format!("must be {m}x{m}")));
                }
                DMatrix::from_fn(m, m, |i, j| rows[i][j])
            }
        };
        let cost =
            CostSpec::new(self.cost.q_scale, r, self.cost.barrier_scale).map_err(|e| invalid("cost", e.to_string()))?;

        let tiebreak = match self.tiebreak {
            TiebreakKind::Lexicographic => Tiebreak::Lexicographic,
            TiebreakKind::NearestRoi => Tiebreak::NearestRoi,
            TiebreakKind::FixedWord => {
                let word = self.word.as_ref().ok_or_else(|| invalid("word", "required by fixed-word tiebreak"))?;
                let ids = word
                    .iter()
                    .map(|w| alphabet.lookup(w).ok_or_else(|| invalid("word", format!("`{w}` is not an observation"))))
                    .collect::<Result<Vec<_>, _>>()?;
                Tiebreak::FixedWord(ids)
            }
        };

        let s = &self.sysid;
        positive("sysid.k_theta", s.k_theta)?;
        if !(s.beta_theta >= 0.0) {
            return Err(invalid("sysid.beta_theta", "must be non-negative"));
        }
        positive("sysid.gamma0", s.gamma0)?;
        positive("sysid.theta_max", s.theta_max)?;
        positive("sysid.gamma_cap", s.gamma_cap)?;
        positive("sysid.prepopulate_spread", s.prepopulate_spread)?;
        if !(s.theta0_range >= 0.0) {
            return Err(invalid("sysid.theta0_range", "must be non-negative"));
        }
        if s.m == 0 {
            return Err(invalid("sysid.M", "must be at least 1"));
        }
        if !(s.dt_window >= self.dt) {
            return Err(invalid("sysid.dt_window", "must be at least dt"));
        }
        let icl =
            IclGains { k_theta: s.k_theta, beta_theta: s.beta_theta, gamma_cap: s.gamma_cap, theta_max: s.theta_max };

        let a = &self.adp;
        positive("adp.gamma0", a.gamma0)?;
        positive("adp.a", a.a)?;
        if a.n == 0 {
            return Err(invalid("adp.N", "must be at least 1"));
        }
        if !(a.omega_probe.is_finite()) {
            return Err(invalid("adp.omega_probe", "must be finite"));
        }
        positive("adp.excitation_window", a.excitation_window)?;
        let adp = AdpGains {
            kc1: a.kc1,
            kc2: a.kc2,
            ka1: a.ka1,
            ka2: a.ka2,
            gamma1: a.gamma1,
            beta: a.beta,
            gamma_cap: a.gamma_cap.unwrap_or(a.gamma0),
        };
        adp.validate().map_err(|e| invalid("adp", e.to_string()))?;
        let basis = match a.basis {
            BasisKind::Staf => Basis::staf(n, a.a),
            BasisKind::Quadratic => Basis::Quadratic { n, a: a.a },
        };
        let l = basis.len();
        let weights = |field: &str, w: &Scalable<Vec<f64>>| match w {
            Scalable::Scalar(v) => Ok(DVector::from_element(l, *v)),
            Scalable::Explicit(v) if v.len() == l => Ok(DVector::from_column_slice(v)),
            Scalable::Explicit(_) => Err(invalid(field, format!("must have {l} entries"))),
        };
        let wc0 = weights("adp.wc0", &a.wc0)?;
        let wa0 = weights("adp.wa0", &a.wa0)?;

        Ok(Resolved {
            alphabet,
            plant,
            rois,
            cost,
            basis,
            tiebreak,
            icl,
            adp,
            x0: DVector::from_column_slice(&self.x0),
            wc0,
            wa0,
        })
    }
}

fn positive(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be positive and finite"))
    }
}
