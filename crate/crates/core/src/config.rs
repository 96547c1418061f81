//! JSON configuration documents.
//!
//! Every field except `sections` may be omitted; [`Config::to_canonical_string`]
//! writes the resolved document with all defaults spelled out, and parsing it
//! again gives the same model.

use std::path::Path;

use nalgebra::{DVector, Matrix4};
use serde::{Deserialize, Serialize};

use crate::control::{FastLaw, Gains, Rates, TimeBase, DEFAULT_FAST_DT, DEFAULT_KP, DEFAULT_PHI, DEFAULT_SLOW_DT};
use crate::error::{Error, Result};
use crate::kinematics::JointState;
use crate::model::{
    default_base_transform, FluidSpec, RobotModel, SectionSpec, Toggles, DEFAULT_GRAVITY,
    DEFAULT_MICROSOLIDS,
};
use crate::screw::{Pose, Screw};
use crate::sim::{perturbed_configuration, static_equilibrium, Scenario};
use crate::split::{split_by_fraction, DEFAULT_SPLIT_FRACTION};

pub const DEFAULT_TIP_LOAD: [f64; 6] = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
pub const DEFAULT_DURATION: f64 = 2.0;
pub const DEFAULT_PERTURBATION: f64 = 0.05;

fn default_microsolids() -> usize {
    DEFAULT_MICROSOLIDS
}

fn default_tip_load() -> [f64; 6] {
    DEFAULT_TIP_LOAD
}

fn default_gravity() -> [f64; 6] {
    DEFAULT_GRAVITY
}

fn default_split_fraction() -> f64 {
    DEFAULT_SPLIT_FRACTION
}

fn default_base_rows() -> [[f64; 4]; 4] {
    rows_of(&default_base_transform())
}

fn rows_of(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    rows
}

/// Proportional gain: one value for every joint, or one per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KpSpec {
    Uniform(f64),
    PerJoint(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsSpec {
    pub kp: KpSpec,
    pub phi: f64,
}

impl Default for GainsSpec {
    fn default() -> Self {
        GainsSpec {
            kp: KpSpec::Uniform(DEFAULT_KP),
            phi: DEFAULT_PHI,
        }
    }
}

/// Where the regulation setpoint sits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setpoint {
    /// Straight, unstrained arm.
    #[default]
    Rest,
    /// Static equilibrium under the configured loads.
    Equilibrium,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationSpec {
    pub duration: f64,
    pub fast_dt: f64,
    pub slow_dt: f64,
    pub substeps: usize,
    pub seed: u64,
    /// Norm of the random offset of the initial strains from the setpoint.
    pub perturbation: f64,
    pub setpoint: Setpoint,
    pub fast_law: FastLaw,
    pub time_base: TimeBase,
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        IntegrationSpec {
            duration: DEFAULT_DURATION,
            fast_dt: DEFAULT_FAST_DT,
            slow_dt: DEFAULT_SLOW_DT,
            substeps: 1,
            seed: 0,
            perturbation: DEFAULT_PERTURBATION,
            setpoint: Setpoint::default(),
            fast_law: FastLaw::default(),
            time_base: TimeBase::default(),
        }
    }
}

/// The document as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub sections: Vec<SectionSpec>,
    #[serde(default)]
    pub fluid: FluidSpec,
    #[serde(default = "default_microsolids")]
    pub microsolids_per_section: usize,
    /// Row-major.
    #[serde(default = "default_base_rows")]
    pub base_transform: [[f64; 4]; 4],
    /// Defaults to the tip.
    #[serde(default)]
    pub actuation_abscissa: Option<f64>,
    #[serde(default = "default_tip_load")]
    pub tip_load: [f64; 6],
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 6],
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub gains: GainsSpec,
    #[serde(default)]
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub toggles: Toggles,
}

/// A parsed and validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    document: ConfigDocument,
    /// Arm with every configured load, before toggles.
    base_model: RobotModel,
    model: RobotModel,
    gains: Gains,
    rates: Rates,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let document: ConfigDocument = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse(format!(
                "line {} column {}, field `{}`: {}",
                inner.line(),
                inner.column(),
                path,
                inner
            ))
        })?;
        Config::from_document(document)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Config::from_json(&text)
    }

    /// Validates every field, reporting all problems at once.
    pub fn from_document(mut document: ConfigDocument) -> Result<Self> {
        let mut problems = Vec::new();
        let total: f64 = document.sections.iter().map(|s| s.length).sum();
        let abscissa = *document.actuation_abscissa.get_or_insert(total);

        let base = Pose::from_matrix(&Matrix4::from_fn(|i, j| document.base_transform[i][j]));
        let model = match &base {
            Ok(pose) => RobotModel::new(
                document.sections.clone(),
                document.fluid.clone(),
                document.microsolids_per_section,
                *pose,
                abscissa,
                Screw::from_slice(&document.tip_load),
                Screw::from_slice(&document.gravity),
            ),
            Err(e) => {
                problems.push(format!("base_transform: {e}"));
                Err(Error::Validation(Vec::new()))
            }
        };
        let model = match model {
            Ok(m) => Some(m),
            Err(Error::Validation(p)) => {
                problems.extend(p);
                None
            }
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        };

        let f = document.split_fraction;
        if !(f > 0.0 && f < 1.0) {
            problems.push(format!("split_fraction must lie in (0, 1) (got {f})"));
        }

        let dof = 6 * document.sections.len();
        let kp = match &document.gains.kp {
            KpSpec::Uniform(k) => DVector::from_element(dof, *k),
            KpSpec::PerJoint(v) => {
                if v.len() != dof {
                    problems.push(format!("gains.kp has {} entries, expected {dof}", v.len()));
                }
                DVector::from_column_slice(v)
            }
        };
        let gains = match Gains::new(kp, document.gains.phi) {
            Ok(g) => Some(g),
            Err(Error::Validation(p)) => {
                problems.extend(p.into_iter().map(|s| format!("gains.{s}")));
                None
            }
            Err(e) => {
                problems.push(format!("gains: {e}"));
                None
            }
        };

        let it = &document.integration;
        if !(it.duration > 0.0 && it.duration.is_finite()) {
            problems.push(format!("integration.duration must be > 0 (got {})", it.duration));
        }
        if !(it.fast_dt > 0.0 && it.fast_dt.is_finite()) {
            problems.push(format!("integration.fast_dt must be > 0 (got {})", it.fast_dt));
        }
        if !(it.slow_dt > 0.0 && it.slow_dt.is_finite()) {
            problems.push(format!("integration.slow_dt must be > 0 (got {})", it.slow_dt));
        }
        let rates = Rates::new(it.fast_dt, it.slow_dt);
        if let Err(e) = &rates {
            if it.fast_dt > 0.0 && it.slow_dt > 0.0 {
                problems.push(format!("integration: {e}"));
            }
        }
        if it.substeps == 0 {
            problems.push("integration.substeps must be ≥ 1".into());
        }
        if !(it.perturbation >= 0.0 && it.perturbation.is_finite()) {
            problems.push(format!(
                "integration.perturbation must be ≥ 0 (got {})",
                it.perturbation
            ));
        }

        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let base_model = model.expect("checked above");
        let model = base_model.with_toggles(document.toggles);
        if let Err(e) = split_by_fraction(&model, f) {
            return Err(Error::Validation(vec![e.to_string()]));
        }
        Ok(Config {
            document,
            base_model,
            model,
            gains: gains.expect("checked above"),
            rates: rates.expect("checked above"),
        })
    }

    /// Resolved document with every default explicit.
    pub fn document(&self) -> &ConfigDocument {
        &self.document
    }

    pub fn to_canonical_string(&self) -> String {
        let mut doc = self.document.clone();
        doc.base_transform = rows_of(&self.base_model.base_transform().to_matrix());
        doc.actuation_abscissa = Some(self.base_model.actuation_abscissa());
        doc.gains.kp = KpSpec::PerJoint(self.gains.kp.iter().copied().collect());
        serde_json::to_string_pretty(&doc).expect("config documents always serialize")
    }

    /// The arm with toggles applied.
    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    /// The arm with every configured effect, ignoring toggles.
    pub fn untoggled_model(&self) -> &RobotModel {
        &self.base_model
    }

    pub fn gains(&self) -> &Gains {
        &self.gains
    }

    pub fn rates(&self) -> Rates {
        self.rates
    }

    pub fn split_fraction(&self) -> f64 {
        self.document.split_fraction
    }

    pub fn integration(&self) -> &IntegrationSpec {
        &self.document.integration
    }

    /// Setpoint configuration for the controller.
    pub fn setpoint(&self) -> Result<DVector<f64>> {
        let rest = self.model.rest_configuration();
        match self.document.integration.setpoint {
            Setpoint::Rest => Ok(rest),
            Setpoint::Equilibrium => static_equilibrium(&self.model, &rest),
        }
    }

    /// Closed-loop scenario: seeded perturbation of the setpoint, at rest.
    pub fn scenario(&self) -> Result<Scenario> {
        let it = &self.document.integration;
        let qd = self.setpoint()?;
        let q0 = perturbed_configuration(&qd, it.perturbation, it.seed);
        let dof = self.model.dof();
        let initial = JointState::new(&self.model, q0, DVector::zeros(dof))?;
        let mut s = Scenario::new(self.model.clone(), initial, it.duration);
        s.reference = crate::control::Reference::constant(qd);
        s.rates = self.rates;
        s.substeps = it.substeps;
        s.gains = self.gains.clone();
        s.law = it.fast_law;
        s.time_base = it.time_base;
        s.split_fraction = self.document.split_fraction;
        s.seed = it.seed;
        Ok(s)
    }
}
