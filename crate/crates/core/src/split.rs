//! Core/perturbed mass partition and the two reduced models of the
//! singularly perturbed arm.
//!
//! With `ε = ‖M^p‖/‖M^c‖` the full dynamics read `(M^c + M^p) ż₂ = …`.
//! Letting `ε → 0` leaves an algebraic equation for the quasi-steady
//! velocity `z̄₂` (slow model); stretching time by `T = t/ε` and freezing
//! `z₁` gives the boundary layer in `z̃₂ = z₂ − z̄₂` (fast model).

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{assemble_masks, solve_spd, AbscissaMask, DynamicsTerms};
use crate::error::{Error, Result};
use crate::kinematics::JointState;
use crate::model::RobotModel;

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.6;

/// Partition of the arm into a tip-side core and a base-side perturbed part.
#[derive(Clone, Debug, PartialEq)]
pub struct MassSplit {
    pub core_mask: AbscissaMask,
    pub pert_mask: AbscissaMask,
    /// Core share of the arm length, measured from the tip.
    pub fraction: f64,
    /// Abscissa separating the two parts.
    pub boundary: f64,
    /// `ε` at the rest configuration.
    pub epsilon: f64,
    /// Smallest eigenvalue of `M⁻¹ M^c` at rest: the weakest share of
    /// inertia the core-based fast law acts through.
    pub authority: f64,
}

/// Below this [`MassSplit::authority`] some strain modes are nearly
/// invisible to the core terms.
pub const AUTHORITY_FLOOR: f64 = 0.1;

impl MassSplit {
    /// Messages when `ε` falls outside the expected `(0, 1)` or the core
    /// barely reaches some modes.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            out.push(format!("perturbation parameter ε = {} outside (0, 1)", self.epsilon));
        }
        if self.authority < AUTHORITY_FLOOR {
            out.push(format!(
                "core inertia covers only {:.3e} of the weakest mode (floor {AUTHORITY_FLOOR}); \
                 closed-loop regulation of that mode is not expected",
                self.authority
            ));
        }
        out
    }
}

/// Core mask `[L(1 − f), L]`, perturbed mask `[0, L(1 − f))`. Microsolids
/// are assigned whole by their centre, so the two masks partition the node
/// set exactly.
pub fn split_by_fraction(model: &RobotModel, fraction: f64) -> Result<MassSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Fraction(fraction));
    }
    let length = model.total_length();
    let boundary = length * (1.0 - fraction);
    // the perturbed interval stops just short of the boundary so a node
    // centred exactly on it goes to the core
    let pert_end = boundary - boundary * f64::EPSILON;
    let core_mask = AbscissaMask::new(vec![(boundary, length)])?;
    let pert_mask = AbscissaMask::new(vec![(0.0, pert_end)])?;
    let rest = JointState::rest(model);
    let terms = assemble_masks(model, &rest, &[core_mask.clone(), pert_mask.clone()], 1)?;
    let epsilon = epsilon_of(&terms[0], &terms[1])?;
    let authority = core_authority(&terms[0].mass, &(&terms[0].mass + &terms[1].mass))?;
    Ok(MassSplit {
        core_mask,
        pert_mask,
        fraction,
        boundary,
        epsilon,
        authority,
    })
}

/// Smallest generalized eigenvalue of `(M^c, M)`.
pub fn core_authority(core_mass: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<f64> {
    let l = mass
        .clone()
        .cholesky()
        .ok_or(Error::NotSpd { min_eigenvalue: f64::NAN })?
        .l();
    let li = l
        .try_inverse()
        .ok_or(Error::NotSpd { min_eigenvalue: 0.0 })?;
    let sym = &li * core_mass * li.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    Ok(sym.symmetric_eigenvalues().min().max(0.0))
}

/// `ε = ‖M^p‖_F / ‖M^c‖_F`.
pub fn epsilon_of(core: &DynamicsTerms, pert: &DynamicsTerms) -> Result<f64> {
    let c = core.mass.norm();
    if c == 0.0 {
        return Err(Error::ZeroCoreMass);
    }
    Ok(pert.mass.norm() / c)
}

/// Core and perturbed terms assembled at one state.
#[derive(Clone, Debug)]
pub struct SplitTerms {
    pub core: DynamicsTerms,
    pub pert: DynamicsTerms,
}

impl SplitTerms {
    /// Drag over the whole arm.
    pub fn full_drag(&self) -> DMatrix<f64> {
        &self.core.drag + &self.pert.drag
    }

    pub fn epsilon(&self) -> Result<f64> {
        epsilon_of(&self.core, &self.pert)
    }

    /// Full-arm terms by quadrature additivity.
    pub fn full(&self) -> DynamicsTerms {
        let (c, p) = (&self.core, &self.pert);
        DynamicsTerms {
            mass: &c.mass + &p.mass,
            coriolis1: &c.coriolis1 + &p.coriolis1,
            coriolis2: &c.coriolis2 + &p.coriolis2,
            drag: &c.drag + &p.drag,
            buoyancy: &c.buoyancy + &p.buoyancy,
            tip_force: c.tip_force.clone(),
            internal: c.internal.clone(),
            gravity_twist: c.gravity_twist,
        }
    }
}

pub fn assemble_split(
    model: &RobotModel,
    state: &JointState,
    split: &MassSplit,
    threads: usize,
) -> Result<SplitTerms> {
    let mut v = assemble_masks(
        model,
        state,
        &[split.core_mask.clone(), split.pert_mask.clone()],
        threads,
    )?;
    let pert = v.pop().unwrap();
    let core = v.pop().unwrap();
    Ok(SplitTerms { core, pert })
}

const PICARD_ITERATIONS: usize = 40;
const PICARD_STALL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuasiSteadyOptions {
    pub max_iterations: usize,
    /// Stop when `‖Δz̄₂‖ ≤ tolerance·(1 + ‖z̄₂‖)`.
    pub tolerance: f64,
    pub threads: usize,
}

impl Default for QuasiSteadyOptions {
    fn default() -> Self {
        QuasiSteadyOptions {
            max_iterations: 100,
            tolerance: 1e-8,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuasiSteady {
    pub z2bar: DVector<f64>,
    pub iterations: usize,
    /// `‖(C1^p + C2^p + D) z̄₂ − (τ + F + N Ad⁻¹𝒢 + u)‖`
    pub residual: f64,
    pub rhs_norm: f64,
    /// Tikhonov shift applied to the linear solves (0 when none was needed).
    pub regularization: f64,
}

/// Viscous generalized damping `diag(L_k Υ_k)`; `τ = τ_el − V q̇`.
fn viscous_matrix(model: &RobotModel) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(model.dof(), model.dof());
    for (k, (p, s)) in model.props().iter().zip(model.sections()).enumerate() {
        v.fixed_view_mut::<6, 6>(6 * k, 6 * k)
            .copy_from(&(p.viscosity * s.length));
    }
    v
}

/// Quasi-steady velocity: the root of
/// `(C1^p + C2^p + D)(z̄₂) z̄₂ = τ(z₁, z̄₂) + F + N Ad⁻¹𝒢 + u`.
///
/// `τ` contains the viscous force `−V z̄₂`, which is moved to the left so
/// each Picard step solves `(C1^p + C2^p + D + V) z = τ_el + F + N Ad⁻¹𝒢 + u`
/// with the matrix frozen at the previous iterate. Steps are halved whenever
/// successive updates reverse direction. Far from rest the Picard map can
/// stop contracting; the remaining iterations then run Newton on the
/// residual with a finite-difference Jacobian and backtracking.
/// `actuation` is the joint input acting on the arm.
pub fn quasi_steady_velocity(
    model: &RobotModel,
    split: &MassSplit,
    z1: &DVector<f64>,
    actuation: Option<&DVector<f64>>,
    guess: &DVector<f64>,
    opts: &QuasiSteadyOptions,
) -> Result<QuasiSteady> {
    let n = model.dof();
    for len in [z1.len(), guess.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    let viscous = viscous_matrix(model);
    // (A + V, τ_el + F + N Ad⁻¹𝒢 + u) at velocity z
    let eval = |z: &DVector<f64>| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let state = JointState {
            q: z1.clone(),
            qdot: z.clone(),
        };
        let t = assemble_split(model, &state, split, opts.threads)?;
        let a = &t.pert.coriolis1 + &t.pert.coriolis2 + t.full_drag() + &viscous;
        let mut rhs = &t.core.internal + &viscous * z + &t.core.tip_force + (t.core.gravity_force() + t.pert.gravity_force());
        if let Some(u) = actuation {
            rhs += u;
        }
        Ok((a, rhs))
    };
    let residual = |z: &DVector<f64>| -> Result<(DVector<f64>, f64)> {
        let (a, rhs) = eval(z)?;
        let g = &a * z - &rhs;
        let rhs_norm = (rhs - &viscous * z).norm();
        Ok((g, rhs_norm))
    };
    let finish = |z: DVector<f64>, iterations: usize, regularization: f64| -> Result<QuasiSteady> {
        let (g, rhs_norm) = residual(&z)?;
        Ok(QuasiSteady {
            residual: g.norm(),
            rhs_norm,
            z2bar: z,
            iterations,
            regularization,
        })
    };
    let converged = |step: f64, z: &DVector<f64>| step <= opts.tolerance * (1.0 + z.norm());

    let mut z = guess.clone();
    // quadratic drag gives the undamped map a slope near −1 at the root,
    // which a half step cancels
    let mut damping: f64 = 0.5;
    let mut last_delta: Option<DVector<f64>> = None;
    let mut regularization: f64 = 0.0;
    let picard_budget = opts.max_iterations.min(PICARD_ITERATIONS);
    let mut iteration = 0;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    while iteration < picard_budget {
        iteration += 1;
        let (lhs, rhs) = eval(&z)?;
        let target = match lhs.clone().lu().solve(&rhs) {
            Some(x) if x.iter().all(|v| v.is_finite()) => x,
            _ => {
                let lambda = 1e-6 * (1.0 + rhs.norm());
                regularization = regularization.max(lambda);
                let shifted = lhs + DMatrix::identity(n, n) * lambda;
                shifted.lu().solve(&rhs).ok_or(Error::NonConvergence {
                    iterations: iteration,
                    residual: f64::INFINITY,
                })?
            }
        };
        let delta = &target - &z;
        let step = delta.norm();
        if let Some(prev) = &last_delta {
            if delta.dot(prev) < 0.0 {
                damping = (damping * 0.5).max(1.0 / 64.0);
            }
        }
        z += &delta * damping;
        last_delta = Some(delta);
        if converged(step, &z) {
            return finish(z, iteration, regularization);
        }
        if step < 0.5 * best {
            best = step;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= PICARD_STALL {
                break;
            }
        }
    }

    let (mut g, _) = residual(&z)?;
    let mut gnorm = g.norm();
    while iteration < opts.max_iterations {
        iteration += 1;
        let h = 1e-7 * (1.0 + z.norm());
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut zp = z.clone();
            zp[j] += h;
            let (gp, _) = residual(&zp)?;
            jac.set_column(j, &((gp - &g) / h));
        }
        let delta = match jac.lu().solve(&(-&g)) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => break,
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1.0 / 1024.0 {
            let trial = &z + &delta * alpha;
            let (gt, _) = residual(&trial)?;
            if gt.norm() < gnorm {
                z = trial;
                g = gt;
                gnorm = g.norm();
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || converged(alpha * delta.norm(), &z) {
            break;
        }
    }
    let (_, rhs_norm) = residual(&z)?;
    if gnorm <= 1e-6 * (1.0 + rhs_norm) {
        return finish(z, iteration, regularization);
    }
    Err(Error::NonConvergence {
        iterations: iteration,
        residual: gnorm,
    })
}

/// Boundary-layer vector field at frozen `z₁`:
/// `dz̃₂/dT = (M^c)⁻¹ (u_f + τ + F + N^c Ad⁻¹𝒢 − (C1^c + C2^c + D) z̃₂)`,
/// with `terms` assembled at `(z₁, z̃₂)`.
pub fn boundary_layer_rhs(
    terms: &SplitTerms,
    z2tilde: &DVector<f64>,
    uf: &DVector<f64>,
) -> Result<DVector<f64>> {
    let c = &terms.core;
    let rhs = uf + &c.internal + &c.tip_force + c.gravity_force()
        - (&c.coriolis1 + &c.coriolis2 + terms.full_drag()) * z2tilde;
    solve_spd(&c.mass, &rhs)
}

/// Assembles at `(z₁, z̃₂)` and evaluates [`boundary_layer_rhs`].
pub fn boundary_layer_rhs_at(
    model: &RobotModel,
    split: &MassSplit,
    z1: &DVector<f64>,
    z2tilde: &DVector<f64>,
    uf: &DVector<f64>,
) -> Result<DVector<f64>> {
    let state = JointState::new(model, z1.clone(), z2tilde.clone())?;
    let terms = assemble_split(model, &state, split, 1)?;
    boundary_layer_rhs(&terms, z2tilde, uf)
}

/// Slow channel `dz̄₁/dt = u_s`.
pub fn slow_rhs(us: &DVector<f64>) -> DVector<f64> {
    us.clone()
}
