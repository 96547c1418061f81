//! Time integration of the full arm, open loop or under the layered
//! controller.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{
    multirate_step, ControlSetup, ControllerState, FastLaw, Gains, Rates, Reference, TimeBase,
};
use crate::dynamics::{assemble_terms, forward_dynamics, internal_force, AbscissaMask};
use crate::error::{Error, Result};
use crate::kinematics::JointState;
use crate::model::RobotModel;
use crate::split::{quasi_steady_velocity, split_by_fraction, QuasiSteadyOptions, DEFAULT_SPLIT_FRACTION};

/// Classical fourth-order Runge–Kutta step of `ẏ = f(t, y)`.
pub fn rk4_step<F>(y: &DVector<f64>, t: f64, dt: f64, mut f: F) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::Integration {
            t,
            reason: format!("step {dt} is not positive"),
        });
    }
    let h = dt / 2.0;
    let k1 = f(t, y)?;
    let k2 = f(t + h, &(y + &k1 * h))?;
    let k3 = f(t + h, &(y + &k2 * h))?;
    let k4 = f(t + dt, &(y + &k3 * dt))?;
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            t,
            reason: "non-finite state".into(),
        });
    }
    Ok(next)
}

/// Stacked `(q, q̇)` derivative of the full arm under joint input `u`.
pub fn plant_rhs(model: &RobotModel, y: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let n = model.dof();
    let state = JointState::new(model, y.rows(0, n).into(), y.rows(n, n).into())?;
    let terms = assemble_terms(model, &state, &AbscissaMask::full(model))?;
    let qddot = forward_dynamics(&terms, &state.qdot, u)?;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&state.qdot);
    out.rows_mut(n, n).copy_from(&qddot);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub model: RobotModel,
    pub initial: JointState,
    pub reference: Reference,
    pub duration: f64,
    pub rates: Rates,
    /// Integrator steps per fast period.
    pub substeps: usize,
    pub gains: Gains,
    pub law: FastLaw,
    pub time_base: TimeBase,
    pub split_fraction: f64,
    pub seed: u64,
    pub threads: usize,
    pub quasi_steady: QuasiSteadyOptions,
}

impl Scenario {
    /// Controller defaults, setpoint at the initial configuration.
    pub fn new(model: RobotModel, initial: JointState, duration: f64) -> Self {
        let dof = model.dof();
        Scenario {
            reference: Reference::constant(initial.q.clone()),
            initial,
            duration,
            rates: Rates::default(),
            substeps: 1,
            gains: Gains::default_for(dof),
            law: FastLaw::default(),
            time_base: TimeBase::default(),
            split_fraction: DEFAULT_SPLIT_FRACTION,
            seed: 0,
            threads: 1,
            quasi_steady: QuasiSteadyOptions::default(),
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.dof();
        let mut bad = Vec::new();
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            bad.push(format!("duration must be positive (got {})", self.duration));
        }
        if let Err(e) = Rates::new(self.rates.fast_dt, self.rates.slow_dt) {
            bad.push(e.to_string());
        }
        if self.substeps == 0 {
            bad.push("substeps must be at least 1".into());
        }
        for (name, len) in [
            ("initial.q", self.initial.q.len()),
            ("initial.qdot", self.initial.qdot.len()),
            ("reference.qd", self.reference.qd.len()),
            ("reference.qd_dot", self.reference.qd_dot.len()),
            ("reference.qd_ddot", self.reference.qd_ddot.len()),
            ("gains.kp", self.gains.kp.len()),
        ] {
            if len != n {
                bad.push(format!("{name} has length {len}, expected {n}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(bad.join("; ")))
        }
    }

    fn step_count(&self) -> usize {
        (self.duration / self.rates.fast_dt).round().max(1.0) as usize
    }
}

/// One recorded instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub z2bar: DVector<f64>,
    pub z2tilde: DVector<f64>,
    pub us: DVector<f64>,
    pub uf: DVector<f64>,
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub v: f64,
    pub w: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

impl Sample {
    pub fn is_finite(&self) -> bool {
        [&self.q, &self.qdot, &self.z2bar, &self.z2tilde, &self.us, &self.uf, &self.e1, &self.e2]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && [self.t, self.v, self.w, self.sigma, self.epsilon].iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// `ε` of the split at rest.
    pub split_epsilon: f64,
    /// See [`MassSplit::authority`](crate::split::MassSplit::authority).
    pub core_authority: f64,
    pub warnings: Vec<String>,
    pub quasi_steady_solves: usize,
    /// Largest Tikhonov shift applied by any quasi-steady solve.
    pub max_regularization: f64,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

fn stack(q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
    let n = q.len();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(q);
    y.rows_mut(n, n).copy_from(qdot);
    y
}

fn advance(scenario: &Scenario, y: &DVector<f64>, t: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
    let h = scenario.rates.fast_dt / scenario.substeps as f64;
    let mut y = y.clone();
    for s in 0..scenario.substeps {
        let ts = t + s as f64 * h;
        y = rk4_step(&y, ts, h, |_, y| plant_rhs(&scenario.model, y, u)).map_err(|e| e.at_time(ts))?;
    }
    Ok(y)
}

/// Integrates the full arm under the multi-rate controller, recording one
/// sample per fast instant.
pub fn run_closed_loop(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let model = &scenario.model;
    let n = model.dof();
    let split = split_by_fraction(model, scenario.split_fraction)?;
    let mut traj = Trajectory {
        split_epsilon: split.epsilon,
        core_authority: split.authority,
        warnings: split.warnings(),
        ..Default::default()
    };
    let setup = ControlSetup {
        model,
        split: &split,
        gains: &scenario.gains,
        rates: scenario.rates,
        law: scenario.law,
        time_base: scenario.time_base,
        threads: scenario.threads,
    };
    let mut cs = ControllerState::new(n);
    let mut z2bar = DVector::zeros(n);
    let mut y = stack(&scenario.initial.q, &scenario.initial.qdot);
    let steps = scenario.step_count();
    traj.samples.reserve(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * scenario.rates.fast_dt;
        let z1: DVector<f64> = y.rows(0, n).into();
        let z2: DVector<f64> = y.rows(n, n).into();
        if cs.slow_due(t, &scenario.rates) {
            let qs = quasi_steady_velocity(model, &split, &z1, None, &z2bar, &scenario.quasi_steady)
                .map_err(|e| e.at_time(t))?;
            traj.quasi_steady_solves += 1;
            traj.max_regularization = traj.max_regularization.max(qs.regularization);
            z2bar = qs.z2bar;
        }
        let state = JointState::new(model, z1.clone(), z2.clone())?;
        let internal = internal_force(model, &state)?;
        let out = multirate_step(&mut cs, &setup, t, &z1, &z2, &z2bar, &internal, &scenario.reference)
            .map_err(|e| e.at_time(t))?;
        let fast = out.fast.expect("every integration step is a fast instant");
        let sample = Sample {
            t,
            q: z1,
            qdot: z2,
            z2bar: z2bar.clone(),
            z2tilde: fast.z2tilde,
            us: cs.held_us.clone(),
            uf: out.u_applied.clone(),
            e1: fast.e1,
            e2: fast.e2,
            v: fast.lyapunov.v,
            w: fast.lyapunov.w,
            sigma: fast.lyapunov.sigma,
            epsilon: fast.epsilon,
        };
        if !sample.is_finite() {
            return Err(Error::Integration {
                t,
                reason: "non-finite sample".into(),
            });
        }
        traj.samples.push(sample);
        if k < steps {
            y = advance(scenario, &y, t, &out.u_applied)?;
        }
    }
    Ok(traj)
}

/// Open-loop integration with zero input. Controller columns are zero
/// except `e₁ = q − q^d`.
pub fn run_passive(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let model = &scenario.model;
    let n = model.dof();
    let split = split_by_fraction(model, scenario.split_fraction)?;
    let mut traj = Trajectory {
        split_epsilon: split.epsilon,
        core_authority: split.authority,
        warnings: split.warnings(),
        ..Default::default()
    };
    let zero = DVector::zeros(n);
    let mut y = stack(&scenario.initial.q, &scenario.initial.qdot);
    let steps = scenario.step_count();
    traj.samples.reserve(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * scenario.rates.fast_dt;
        let q: DVector<f64> = y.rows(0, n).into();
        let sample = Sample {
            t,
            e1: &q - &scenario.reference.qd,
            q,
            qdot: y.rows(n, n).into(),
            z2bar: zero.clone(),
            z2tilde: zero.clone(),
            us: zero.clone(),
            uf: zero.clone(),
            e2: zero.clone(),
            v: 0.0,
            w: 0.0,
            sigma: 0.0,
            epsilon: split.epsilon,
        };
        if !sample.is_finite() {
            return Err(Error::Integration {
                t,
                reason: "non-finite sample".into(),
            });
        }
        traj.samples.push(sample);
        if k < steps {
            y = advance(scenario, &y, t, &zero)?;
        }
    }
    Ok(traj)
}

/// Configuration where elastic, tip and gravity/buoyancy forces balance.
///
/// External loads are ramped in from `guess` (load continuation); each
/// stage is a damped Newton solve with a finite-difference Jacobian.
pub fn static_equilibrium(model: &RobotModel, guess: &DVector<f64>) -> Result<DVector<f64>> {
    let n = model.dof();
    if guess.len() != n {
        return Err(Error::Dimension { expected: n, got: guess.len() });
    }
    let zero = DVector::zeros(n);
    let full = AbscissaMask::full(model);
    let load = |q: &DVector<f64>, lambda: f64| -> Result<DVector<f64>> {
        let state = JointState {
            q: q.clone(),
            qdot: zero.clone(),
        };
        let t = assemble_terms(model, &state, &full)?;
        Ok(&t.internal + (&t.tip_force + t.gravity_force()) * lambda)
    };
    let mut q = guess.clone();
    let mut lambda: f64 = 0.0;
    let mut step: f64 = 1.0;
    while lambda < 1.0 {
        let target = (lambda + step).min(1.0);
        match newton_stage(&q, |q| load(q, target)) {
            Ok(next) => {
                q = next;
                lambda = target;
                step = (step * 2.0).min(1.0);
            }
            Err(e) if step < 1.0 / 1024.0 => return Err(e),
            Err(_) => step *= 0.5,
        }
    }
    Ok(q)
}

fn newton_stage<F>(start: &DVector<f64>, load: F) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = start.len();
    let mut q = start.clone();
    let mut g = load(&q)?;
    let scale = 1.0 + g.norm();
    for iteration in 1..=50 {
        if g.norm() <= 1e-12 * scale {
            return Ok(q);
        }
        let h = 1e-7;
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            let mut qp = q.clone();
            qp[j] += h;
            let mut qm = q.clone();
            qm[j] -= h;
            jac.set_column(j, &((load(&qp)? - load(&qm)?) / (2.0 * h)));
        }
        let delta = jac.lu().solve(&(-&g)).ok_or(Error::NonConvergence {
            iterations: iteration,
            residual: g.norm(),
        })?;
        let mut alpha = 1.0;
        loop {
            let trial = &q + &delta * alpha;
            // trial states can leave the assembly's domain; treat as a failed step
            let gt = load(&trial).ok().filter(|g| g.iter().all(|v| v.is_finite()));
            match gt {
                Some(gt) if gt.norm() < g.norm() => {
                    q = trial;
                    g = gt;
                    break;
                }
                _ if alpha < 1e-3 => {
                    return Err(Error::NonConvergence {
                        iterations: iteration,
                        residual: g.norm(),
                    })
                }
                _ => alpha *= 0.5,
            }
        }
    }
    if g.norm() <= 1e-9 * scale {
        Ok(q)
    } else {
        Err(Error::NonConvergence {
            iterations: 50,
            residual: g.norm(),
        })
    }
}

/// `∫ ‖ξ(X) − ξ*‖ dX` over the nodes of `mask`.
pub fn strain_deviation_over(model: &RobotModel, q: &DVector<f64>, mask: &AbscissaMask) -> f64 {
    let rest = model.rest_configuration();
    model
        .quadrature_grid()
        .iter()
        .filter(|node| mask.contains(node.abscissa))
        .map(|node| {
            let k = node.section;
            node.weight * (q.rows(6 * k, 6) - rest.rows(6 * k, 6)).norm()
        })
        .sum()
}

/// `center` plus a seeded random offset of norm `amplitude`.
pub fn perturbed_configuration(center: &DVector<f64>, amplitude: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = DVector::from_fn(center.len(), |_, _| rng.random_range(-1.0..1.0));
    let norm = d.norm();
    if norm == 0.0 {
        return center.clone();
    }
    center + d * (amplitude / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble_terms, energy};
    use crate::model::Toggles;

    #[test]
    fn rk4_scalar_oracles() {
        let y0 = DVector::from_element(1, 1.0);
        let y = rk4_step(&y0, 0.0, 0.1, |_, y| Ok(-y)).unwrap();
        assert!((y[0] - (-0.1f64).exp()).abs() <= 1e-7);
        let still = rk4_step(&y0, 0.0, 0.1, |_, y| Ok(DVector::zeros(y.len()))).unwrap();
        assert_eq!(still, y0);
        let global = |dt: f64| {
            let mut y = y0.clone();
            let steps = (1.0 / dt).round() as usize;
            for i in 0..steps {
                y = rk4_step(&y, i as f64 * dt, dt, |_, y| Ok(-y)).unwrap();
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = global(0.1) / global(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
        let nan = rk4_step(&y0, 0.5, 0.1, |_, y| Ok(y * f64::NAN));
        assert!(matches!(nan, Err(Error::Integration { t, .. }) if t == 0.5));
        assert!(rk4_step(&y0, 0.0, 0.0, |_, y| Ok(y.clone())).is_err());
    }

    #[test]
    fn rest_is_an_equilibrium() {
        let m = RobotModel::reference(2, 2.0, 0.0).unwrap().with_toggles(Toggles::all_off());
        let s = Scenario::new(m.clone(), JointState::rest(&m), 0.05);
        let closed = run_closed_loop(&s).unwrap();
        let passive = run_passive(&s).unwrap();
        for traj in [&closed, &passive] {
            assert_eq!(traj.samples.len(), 51);
            for smp in &traj.samples {
                assert!((&smp.q - m.rest_configuration()).norm() <= 1e-9);
                assert!(smp.qdot.norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn closed_loop_records_consistent_split() {
        let m = RobotModel::reference(1, 1.0, 1.0).unwrap();
        let mut s = Scenario::new(m.clone(), JointState::rest(&m), 0.03);
        s.initial.q = perturbed_configuration(&m.rest_configuration(), 0.05, 4);
        let traj = run_closed_loop(&s).unwrap();
        let times: Vec<f64> = traj.samples.iter().map(|x| x.t).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        for smp in &traj.samples {
            assert!((&smp.z2bar + &smp.z2tilde - &smp.qdot).norm() <= 1e-12 * (1.0 + smp.qdot.norm()));
            assert!(smp.v >= 0.0 && smp.w >= 0.0 && smp.sigma >= 0.0);
        }
        assert_eq!(traj.quasi_steady_solves, 4);
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let m = RobotModel::reference(1, 1.0, 1.0).unwrap();
        let mk = |seed| {
            let mut s = Scenario::new(m.clone(), JointState::rest(&m), 0.02);
            s.seed = seed;
            s.initial.q = perturbed_configuration(&m.rest_configuration(), 0.05, seed);
            s
        };
        let a = run_closed_loop(&mk(11)).unwrap();
        let b = run_closed_loop(&mk(11)).unwrap();
        assert_eq!(a, b);
        let c = run_closed_loop(&mk(12)).unwrap();
        assert_ne!(a.samples[0].q, c.samples[0].q);
    }

    #[test]
    fn conservative_arm_keeps_energy() {
        let m = RobotModel::reference(1, 1.0, 0.0).unwrap().with_toggles(Toggles::all_off());
        let q0 = perturbed_configuration(&m.rest_configuration(), 0.1, 1);
        let mut s = Scenario::new(m.clone(), JointState::new(&m, q0, DVector::zeros(6)).unwrap(), 1.0);
        s.rates = Rates::new(1e-4, 1e-2).unwrap();
        let traj = run_passive(&s).unwrap();
        let e = |smp: &Sample| {
            let st = JointState { q: smp.q.clone(), qdot: smp.qdot.clone() };
            let t = assemble_terms(&m, &st, &AbscissaMask::full(&m)).unwrap();
            energy(&m, &st, &t.mass)
        };
        let e0 = e(&traj.samples[0]);
        assert!(e0 > 0.0);
        let drift = traj
            .samples
            .iter()
            .step_by(100)
            .map(|smp| (e(smp) - e0).abs() / e0)
            .fold(0.0, f64::max);
        assert!(drift <= 1e-3, "{drift}");
    }

    #[test]
    fn static_equilibrium_balances_loads() {
        let m = RobotModel::reference(2, 2.0, 1.0).unwrap().with_toggles(Toggles {
            gravity: false,
            ..Default::default()
        });
        let q = static_equilibrium(&m, &m.rest_configuration()).unwrap();
        assert!((&q - m.rest_configuration()).norm() > 1e-4);
        let st = JointState { q: q.clone(), qdot: DVector::zeros(12) };
        let t = assemble_terms(&m, &st, &AbscissaMask::full(&m)).unwrap();
        assert!(t.load().norm() < 1e-9);
    }

    #[test]
    fn tip_load_deforms_core_most() {
        let m = RobotModel::reference(4, 2.0, 1.0).unwrap().with_toggles(Toggles {
            gravity: false,
            ..Default::default()
        });
        let s = Scenario::new(m.clone(), JointState::rest(&m), 1.0);
        let traj = run_passive(&s).unwrap();
        let split = split_by_fraction(&m, 0.6).unwrap();
        let (mut core, mut pert) = (0.0, 0.0);
        for smp in &traj.samples {
            core += strain_deviation_over(&m, &smp.q, &split.core_mask);
            pert += strain_deviation_over(&m, &smp.q, &split.pert_mask);
        }
        assert!(core > pert, "core {core} pert {pert}");
        let last = traj.last().unwrap();
        let full = strain_deviation_over(&m, &last.q, &AbscissaMask::full(&m));
        let parts = strain_deviation_over(&m, &last.q, &split.core_mask)
            + strain_deviation_over(&m, &last.q, &split.pert_mask);
        assert!((full - parts).abs() <= 1e-12 * full);
    }

    #[test]
    fn scenario_validation() {
        let m = RobotModel::reference(1, 1.0, 0.0).unwrap();
        let mut s = Scenario::new(m.clone(), JointState::rest(&m), 0.0);
        assert!(matches!(run_passive(&s), Err(Error::Scenario(_))));
        s.duration = 1.0;
        s.rates = Rates { fast_dt: 0.1, slow_dt: 0.01 };
        assert!(matches!(run_closed_loop(&s), Err(Error::Scenario(_))));
    }
}
