//! Layered controller: slow backstepping law on `z₁`, fast torque law on the
//! boundary layer, tracking errors and Lyapunov monitors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsTerms;
use crate::error::{Error, Result};
use crate::kinematics::JointState;
use crate::model::RobotModel;
use crate::split::{assemble_split, MassSplit, SplitTerms};

pub const DEFAULT_KP: f64 = 10.0;
pub const DEFAULT_PHI: f64 = 0.5;
pub const DEFAULT_SLOW_DT: f64 = 1e-2;
pub const DEFAULT_FAST_DT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct Gains {
    /// Diagonal of `K_p`.
    pub kp: DVector<f64>,
    pub phi: f64,
}

impl Gains {
    pub fn new(kp: DVector<f64>, phi: f64) -> Result<Self> {
        let mut bad = Vec::new();
        if kp.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            bad.push("kp entries must be positive".to_string());
        }
        if !(phi > 0.0 && phi < 1.0) {
            bad.push(format!("phi must lie in (0, 1) (got {phi})"));
        }
        if bad.is_empty() {
            Ok(Gains { kp, phi })
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn uniform(dof: usize, kp: f64, phi: f64) -> Result<Self> {
        Gains::new(DVector::from_element(dof, kp), phi)
    }

    pub fn default_for(dof: usize) -> Self {
        Gains::uniform(dof, DEFAULT_KP, DEFAULT_PHI).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub qd: DVector<f64>,
    pub qd_dot: DVector<f64>,
    pub qd_ddot: DVector<f64>,
}

impl Reference {
    pub fn new(qd: DVector<f64>, qd_dot: DVector<f64>, qd_ddot: DVector<f64>) -> Result<Self> {
        let n = qd.len();
        for len in [qd_dot.len(), qd_ddot.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        Ok(Reference { qd, qd_dot, qd_ddot })
    }

    /// Setpoint with zero velocity and acceleration.
    pub fn constant(qd: DVector<f64>) -> Self {
        let n = qd.len();
        Reference {
            qd,
            qd_dot: DVector::zeros(n),
            qd_ddot: DVector::zeros(n),
        }
    }
}

/// `e₁ = z₁ − q^d`, `e₂ = z̃₂ − u_s`.
pub fn errors_of(
    z1: &DVector<f64>,
    z2tilde: &DVector<f64>,
    reference: &Reference,
    us: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    (z1 - &reference.qd, z2tilde - us)
}

/// `u_s = q̇^d − e₁ − 2 z̃₂`.
pub fn slow_control(z1: &DVector<f64>, z2tilde: &DVector<f64>, reference: &Reference) -> DVector<f64> {
    &reference.qd_dot - (z1 - &reference.qd) - z2tilde * 2.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastLaw {
    /// `u_f = M^c(q̈_d + e₁) + (C̆^c + D) z̃₂ − C̆^c e₂ − F − N^c Ad⁻¹𝒢 − τ`
    Composite,
    /// `u_f = M^c(u̇_s − e₂) + C̆^c u_s + D z̃₂ − F − N^c Ad⁻¹𝒢 − τ`
    #[default]
    Backstepping,
}

/// Everything the fast law reads besides the errors.
#[derive(Clone, Copy, Debug)]
pub struct FastInputs<'a> {
    /// Core/perturbed terms at `(z₁, z̃₂)`.
    pub terms: &'a SplitTerms,
    /// Internal wrench the input replaces.
    pub internal: &'a DVector<f64>,
    pub z2tilde: &'a DVector<f64>,
    pub reference: &'a Reference,
    pub us: &'a DVector<f64>,
    /// `u̇_s`, read by the backstepping form only.
    pub us_rate: &'a DVector<f64>,
    /// Factor on the `M^c`-weighted terms: 1 on the stretched time `T`,
    /// `1/ε` when applied in physical time.
    pub inertia_scale: f64,
}

pub fn fast_control(
    inputs: &FastInputs,
    e1: &DVector<f64>,
    e2: &DVector<f64>,
    law: FastLaw,
) -> DVector<f64> {
    let c = &inputs.terms.core;
    let mass = &c.mass * inputs.inertia_scale;
    let coriolis = c.coriolis();
    let drag = inputs.terms.full_drag();
    let loads = &c.tip_force + c.gravity_force() + inputs.internal;
    match law {
        FastLaw::Composite => {
            &mass * (&inputs.reference.qd_ddot + e1) + (&coriolis + &drag) * inputs.z2tilde
                - &coriolis * e2
                - loads
        }
        FastLaw::Backstepping => {
            &mass * (inputs.us_rate - e2) + &coriolis * inputs.us + &drag * inputs.z2tilde - loads
        }
    }
}

// relative diagonal shift under which M^c counts as positive semidefinite
const PSD_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lyapunov {
    pub v: f64,
    pub w: f64,
    pub sigma: f64,
}

/// `V = ½e₁ᵀK_p e₁`, `W = ½e₂ᵀM^c e₂`, `Σ = (1 − φ)V + φW`.
///
/// `M^c` may be singular (strains that do not move the core) but not
/// indefinite beyond round-off.
pub fn lyapunov_values(
    core_mass: &DMatrix<f64>,
    e1: &DVector<f64>,
    e2: &DVector<f64>,
    gains: &Gains,
) -> Result<Lyapunov> {
    let n = core_mass.nrows();
    let shift = PSD_SLACK * core_mass.diagonal().amax().max(f64::MIN_POSITIVE);
    let shifted = core_mass + DMatrix::identity(n, n) * shift;
    if shifted.cholesky().is_none() {
        let min_eigenvalue = core_mass.clone().symmetric_eigenvalues().min();
        return Err(Error::NotSpd { min_eigenvalue });
    }
    let v = 0.5 * e1.component_mul(&gains.kp).dot(e1);
    let w = 0.5 * e2.dot(&(core_mass * e2)).max(0.0);
    Ok(Lyapunov {
        v,
        w,
        sigma: (1.0 - gains.phi) * v + gains.phi * w,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub fast_dt: f64,
    pub slow_dt: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            fast_dt: DEFAULT_FAST_DT,
            slow_dt: DEFAULT_SLOW_DT,
        }
    }
}

impl Rates {
    pub fn new(fast_dt: f64, slow_dt: f64) -> Result<Self> {
        if !(fast_dt > 0.0 && slow_dt > 0.0 && fast_dt.is_finite() && slow_dt.is_finite()) {
            return Err(Error::Scenario("sampling periods must be positive".into()));
        }
        if fast_dt > slow_dt {
            return Err(Error::Scenario(format!(
                "fast_dt {fast_dt} exceeds slow_dt {slow_dt}"
            )));
        }
        Ok(Rates { fast_dt, slow_dt })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovRecord {
    pub t: f64,
    pub v: f64,
    pub w: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    pub held_us: DVector<f64>,
    pub held_uf: DVector<f64>,
    pub last_slow_sample_time: Option<f64>,
    pub last_fast_sample_time: Option<f64>,
    pub lyapunov_log: Vec<LyapunovRecord>,
    slow_index: u64,
    fast_index: u64,
}

/// Clock on which the sampled fast law acts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBase {
    /// Law used as written on `T = t/ε`.
    Stretched,
    /// Law mapped to `t`: `d/dT = ε d/dt`, so the `M^c` terms carry `1/ε`.
    #[default]
    Physical,
}

/// Controller context fixed for a run.
#[derive(Clone, Copy, Debug)]
pub struct ControlSetup<'a> {
    pub model: &'a RobotModel,
    pub split: &'a MassSplit,
    pub gains: &'a Gains,
    pub rates: Rates,
    pub law: FastLaw,
    pub time_base: TimeBase,
    pub threads: usize,
}

/// Values computed at a fast sampling instant.
#[derive(Clone, Debug, PartialEq)]
pub struct FastSample {
    pub z2tilde: DVector<f64>,
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub lyapunov: Lyapunov,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub u_applied: DVector<f64>,
    pub slow_sampled: bool,
    pub fast: Option<FastSample>,
}

// tolerance for deciding that t has reached a sampling instant
const INSTANT_SLACK: f64 = 1e-9;

impl ControllerState {
    pub fn new(dof: usize) -> Self {
        ControllerState {
            held_us: DVector::zeros(dof),
            held_uf: DVector::zeros(dof),
            last_slow_sample_time: None,
            last_fast_sample_time: None,
            lyapunov_log: Vec::new(),
            slow_index: 0,
            fast_index: 0,
        }
    }

    /// Whether `t` has reached the next slow instant; the caller refreshes
    /// `z̄₂` before stepping when this holds.
    pub fn slow_due(&self, t: f64, rates: &Rates) -> bool {
        t >= self.slow_index as f64 * rates.slow_dt - INSTANT_SLACK * rates.fast_dt
    }

    fn fast_due(&self, t: f64, rates: &Rates) -> bool {
        t >= self.fast_index as f64 * rates.fast_dt - INSTANT_SLACK * rates.fast_dt
    }
}

/// Advances the sampled controller to time `t`.
///
/// At a slow instant `u_s` is recomputed from `z̃₂ = z₂ − z̄₂`; at a fast
/// instant `u_f` is recomputed from the held `u_s` and `(V, W, Σ)` is
/// logged. Otherwise both inputs are held. `internal` is the internal
/// wrench of the arm at `(z₁, z₂)`.
#[allow(clippy::too_many_arguments)]
pub fn multirate_step(
    cs: &mut ControllerState,
    setup: &ControlSetup,
    t: f64,
    z1: &DVector<f64>,
    z2: &DVector<f64>,
    z2bar: &DVector<f64>,
    internal: &DVector<f64>,
    reference: &Reference,
) -> Result<StepOutput> {
    let rates = &setup.rates;
    if let Some(last) = cs.last_fast_sample_time {
        if t < last {
            return Err(Error::Scenario(format!("time went backwards: {t} < {last}")));
        }
    }
    let z2tilde = z2 - z2bar;
    let slow_sampled = cs.slow_due(t, rates);
    if slow_sampled {
        cs.held_us = slow_control(z1, &z2tilde, reference);
        cs.last_slow_sample_time = Some(t);
        while cs.slow_due(t, rates) {
            cs.slow_index += 1;
        }
    }
    let mut fast = None;
    if cs.fast_due(t, rates) {
        let state = JointState::new(setup.model, z1.clone(), z2tilde.clone())?;
        let terms = assemble_split(setup.model, &state, setup.split, setup.threads)?;
        let (e1, e2) = errors_of(z1, &z2tilde, reference, &cs.held_us);
        // u_s is held between slow instants
        let us_rate = DVector::zeros(z1.len());
        let epsilon = terms.epsilon()?;
        let inputs = FastInputs {
            terms: &terms,
            internal,
            z2tilde: &z2tilde,
            reference,
            us: &cs.held_us,
            us_rate: &us_rate,
            inertia_scale: match setup.time_base {
                TimeBase::Stretched => 1.0,
                TimeBase::Physical => 1.0 / epsilon,
            },
        };
        cs.held_uf = fast_control(&inputs, &e1, &e2, setup.law);
        let lyapunov = lyapunov_values(&terms.core.mass, &e1, &e2, setup.gains)?;
        cs.lyapunov_log.push(LyapunovRecord {
            t,
            v: lyapunov.v,
            w: lyapunov.w,
            sigma: lyapunov.sigma,
        });
        cs.last_fast_sample_time = Some(t);
        while cs.fast_due(t, rates) {
            cs.fast_index += 1;
        }
        fast = Some(FastSample {
            epsilon,
            z2tilde,
            e1,
            e2,
            lyapunov,
        });
    }
    Ok(StepOutput {
        u_applied: cs.held_uf.clone(),
        slow_sampled,
        fast,
    })
}

/// Gravity and buoyancy feedforward `−F − N^c Ad⁻¹𝒢` alone.
pub fn feedforward(core: &DynamicsTerms) -> DVector<f64> {
    -(&core.tip_force + core.gravity_force())
}
