//! Generalized Newton–Euler terms of the arm,
//!
//! ```text
//! M(q) q̈ + [C1 + C2 + D] q̇ = u + τ + F + N Ad_{g_r}⁻¹ 𝒢,
//! ```
//!
//! assembled by midpoint quadrature over the microsolids selected by an
//! [`AbscissaMask`].
//!
//! Every matrix term is a sum `Σ wᵢ Jᵢᵀ Kᵢ Lᵢ` with `L = J` or `L = J̇`.
//! Inside section `k` the Jacobian factors as `J = ψ Ĵ_k + E_k T`, where
//! `Ĵ_k` is the Jacobian of the section's base frame, `ψ = Ad⁻¹` of the
//! local exponential and `E_k` places a block in column `k`. Each section
//! therefore reduces to a handful of 6×6 sums over its nodes, and a
//! backward composite recursion across sections turns them into the
//! 6N×6N blocks. The node pass is linear in the node count; the recursion
//! costs O(N²) 6×6 products, which is also the size of the output.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::kinematics::{jacobian, JointState, SectionOps};
use crate::model::RobotModel;
use crate::screw::{ad, coad, Pose};

/// A set of closed abscissa intervals. A microsolid belongs to the mask when
/// its centre lies in one of them.
#[derive(Clone, Debug, PartialEq)]
pub struct AbscissaMask {
    pub intervals: Vec<(f64, f64)>,
}

impl AbscissaMask {
    pub fn full(model: &RobotModel) -> Self {
        AbscissaMask {
            intervals: vec![(0.0, model.total_length())],
        }
    }

    pub fn empty() -> Self {
        AbscissaMask { intervals: vec![] }
    }

    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        let mut sorted = intervals.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (a, b) in &sorted {
            if !(a <= b) {
                return Err(Error::Scenario(format!("mask interval [{a}, {b}] is reversed")));
            }
        }
        for w in sorted.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Scenario("mask intervals overlap".into()));
            }
        }
        Ok(AbscissaMask { intervals })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= x && x <= b)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Assembled terms over one mask. `tip_force` and `internal` do not depend
/// on the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub coriolis1: DMatrix<f64>,
    pub coriolis2: DMatrix<f64>,
    pub drag: DMatrix<f64>,
    /// 6N×6, multiplies `Ad_{g_r}⁻¹ 𝒢`.
    pub buoyancy: DMatrix<f64>,
    pub tip_force: DVector<f64>,
    pub internal: DVector<f64>,
    /// `Ad_{g_r}⁻¹ 𝒢`
    pub gravity_twist: Vector6<f64>,
}

impl DynamicsTerms {
    pub fn dof(&self) -> usize {
        self.mass.nrows()
    }

    /// `N Ad_{g_r}⁻¹ 𝒢`
    pub fn gravity_force(&self) -> DVector<f64> {
        &self.buoyancy * self.gravity_twist
    }

    /// `C1 + C2`
    pub fn coriolis(&self) -> DMatrix<f64> {
        &self.coriolis1 + &self.coriolis2
    }

    /// `C1 + C2 + D`
    pub fn velocity_matrix(&self) -> DMatrix<f64> {
        &self.coriolis1 + &self.coriolis2 + &self.drag
    }

    /// `τ + F + N Ad_{g_r}⁻¹ 𝒢`
    pub fn load(&self) -> DVector<f64> {
        &self.internal + &self.tip_force + self.gravity_force()
    }

    fn is_finite(&self) -> bool {
        [&self.mass, &self.coriolis1, &self.coriolis2, &self.drag, &self.buoyancy]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.tip_force.iter().all(|v| v.is_finite())
            && self.internal.iter().all(|v| v.is_finite())
    }
}

/// Drag operator of the microsolid at `x` for body twist `eta`:
/// `𝒟(X)·‖ν‖`, with `ν` the linear part of `eta`.
pub fn drag_matrix_at(model: &RobotModel, eta: &Vector6<f64>, x: f64) -> Result<Matrix6<f64>> {
    let (k, _) = model.locate(x)?;
    Ok(model.props()[k].drag * eta.fixed_rows::<3>(3).norm())
}

/// Internal wrench `ℱ_i = Π(ξ − ξ*) + Υ ξ̇` of a section.
pub fn internal_wrench(
    model: &RobotModel,
    xi: &Vector6<f64>,
    xidot: &Vector6<f64>,
    section: usize,
) -> Result<Vector6<f64>> {
    let p = model.props().get(section).ok_or(Error::Dimension {
        expected: model.section_count(),
        got: section,
    })?;
    Ok(p.stiffness * (xi - p.rest_strain) + p.viscosity * xidot)
}

/// Elastic-plus-viscous generalized force `τ_k = −L_k ℱ_i,k`.
pub fn internal_force(model: &RobotModel, state: &JointState) -> Result<DVector<f64>> {
    let mut tau = DVector::zeros(model.dof());
    for (k, s) in model.sections().iter().enumerate() {
        let w = internal_wrench(model, &state.section_strain(k), &state.section_rate(k), k)?;
        tau.fixed_rows_mut::<6>(6 * k).copy_from(&(-w * s.length));
    }
    Ok(tau)
}

/// `F = J(X̄)ᵀ ℱ_p`, with `ℱ_p` expressed in the body frame at `X̄`.
pub fn tip_wrench_force(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    let load = model.tip_load().0;
    if load == Vector6::zeros() {
        return Ok(DVector::zeros(model.dof()));
    }
    let j = jacobian(model, q, model.actuation_abscissa())?;
    Ok(j.transpose() * load)
}

/// Kinetic plus elastic energy, `½q̇ᵀMq̇ + Σ_k ½L_k (ξ_k − ξ*)ᵀΠ(ξ_k − ξ*)`.
pub fn energy(model: &RobotModel, state: &JointState, mass: &DMatrix<f64>) -> f64 {
    let kinetic = 0.5 * state.qdot.dot(&(mass * &state.qdot));
    let elastic: f64 = model
        .props()
        .iter()
        .zip(model.sections())
        .enumerate()
        .map(|(k, (p, s))| {
            let d = state.section_strain(k) - p.rest_strain;
            0.5 * s.length * d.dot(&(p.stiffness * d))
        })
        .sum();
    kinetic + elastic
}

// Per-section node sums for a bilinear term `Σ w Jᵀ K L`, with
// `L = ψ·α + ψ·β·d/dt + E·γ` in the notation of the module docs:
// pa = Σ ψᵀKα, pb = Σ ψᵀKβ, pg = Σ ψᵀKγ, ta = Σ TᵀKα, tb = Σ TᵀKβ, tg = Σ TᵀKγ.
#[derive(Clone, Copy, Debug)]
struct Bilinear {
    pa: Matrix6<f64>,
    pb: Matrix6<f64>,
    pg: Matrix6<f64>,
    ta: Matrix6<f64>,
    tb: Matrix6<f64>,
    tg: Matrix6<f64>,
}

impl Bilinear {
    fn zero() -> Self {
        let z = Matrix6::zeros();
        Bilinear {
            pa: z,
            pb: z,
            pg: z,
            ta: z,
            tb: z,
            tg: z,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct SectionSums {
    mass: Bilinear,
    coriolis1: Bilinear,
    coriolis2: Bilinear,
    drag: Bilinear,
    /// Σ ψᵀ G, Σ Tᵀ G for the buoyancy integrand `G = βℳ Ad_g⁻¹`.
    buoy_p: Matrix6<f64>,
    buoy_t: Matrix6<f64>,
}

impl SectionSums {
    fn zero() -> Self {
        SectionSums {
            mass: Bilinear::zero(),
            coriolis1: Bilinear::zero(),
            coriolis2: Bilinear::zero(),
            drag: Bilinear::zero(),
            buoy_p: Matrix6::zeros(),
            buoy_t: Matrix6::zeros(),
        }
    }
}

/// Section-level kinematics shared by every mask.
struct Frames {
    ops: Vec<SectionOps>,
    /// `Γ_k = Ad⁻¹_{exp(ξ_k L_k)}` and its rate.
    gamma: Vec<Matrix6<f64>>,
    gamma_dot: Vec<Matrix6<f64>>,
    /// `P_k = T(ξ_k, L_k)` and its rate.
    p: Vec<Matrix6<f64>>,
    p_dot: Vec<Matrix6<f64>>,
    /// Twist of each section's base frame.
    eta_base: Vec<Vector6<f64>>,
    /// `Ad⁻¹` of the base-relative pose of each section's base frame.
    ad_inv_base: Vec<Matrix6<f64>>,
}

fn frames(model: &RobotModel, state: &JointState) -> Frames {
    let n = model.section_count();
    let mut f = Frames {
        ops: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        gamma_dot: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        p_dot: Vec::with_capacity(n),
        eta_base: Vec::with_capacity(n),
        ad_inv_base: Vec::with_capacity(n),
    };
    let mut eta = Vector6::zeros();
    let mut g = Pose::identity();
    for (k, s) in model.sections().iter().enumerate() {
        let ops = SectionOps::new(state.section_strain(k), state.section_rate(k));
        let (t, t_dot) = ops.tangent(s.length);
        let e = ops.exp(s.length);
        let gam = e.adjoint_inverse();
        let gam_dot = -ad(&(t * ops.rate)) * gam;
        f.eta_base.push(eta);
        f.ad_inv_base.push(g.adjoint_inverse());
        eta = gam * eta + t * ops.rate;
        g = g.compose(&e);
        f.ops.push(ops);
        f.gamma.push(gam);
        f.gamma_dot.push(gam_dot);
        f.p.push(t);
        f.p_dot.push(t_dot);
    }
    f
}

fn accumulate(
    acc: &mut Bilinear,
    k_mat: &Matrix6<f64>,
    psi: &Matrix6<f64>,
    t: &Matrix6<f64>,
    alpha: &Matrix6<f64>,
    beta: Option<&Matrix6<f64>>,
    gamma: &Matrix6<f64>,
) {
    let kp = psi.transpose() * k_mat;
    let kt = t.transpose() * k_mat;
    acc.pa += kp * alpha;
    acc.ta += kt * alpha;
    acc.pg += kp * gamma;
    acc.tg += kt * gamma;
    if let Some(b) = beta {
        acc.pb += kp * b;
        acc.tb += kt * b;
    }
}

/// Node pass over section `k`, producing one [`SectionSums`] per mask.
fn section_pass(
    model: &RobotModel,
    fr: &Frames,
    k: usize,
    masks: &[AbscissaMask],
) -> Result<Vec<SectionSums>> {
    let props = &model.props()[k];
    let ops = &fr.ops[k];
    let beta = props.buoyancy_factor;
    let mut out = vec![SectionSums::zero(); masks.len()];
    let start = k * model.microsolids_per_section();
    let nodes = &model.quadrature_grid()[start..start + model.microsolids_per_section()];
    for (offset, node) in nodes.iter().enumerate() {
        let member: Vec<bool> = masks.iter().map(|m| m.contains(node.abscissa)).collect();
        if !member.iter().any(|&b| b) {
            continue;
        }
        let w = node.weight;
        let (t, t_dot) = ops.tangent(node.local);
        let psi = ops.exp(node.local).adjoint_inverse();
        let psi_dot = -ad(&(t * ops.rate)) * psi;
        let eta = psi * fr.eta_base[k] + t * ops.rate;
        let ma = props.apparent_inertia * w;
        let c1 = coad(&eta) * ma;
        let dr = props.drag * (w * eta.fixed_rows::<3>(3).norm());
        let g = props.screw_inertia * (w * beta) * psi * fr.ad_inv_base[k];
        let finite = [&t, &t_dot, &psi, &c1, &dr, &g]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Assembly {
                node: start + offset,
                abscissa: node.abscissa,
                reason: "non-finite kinematic quantity".into(),
            });
        }
        for (sums, _) in out.iter_mut().zip(&member).filter(|(_, &m)| m) {
            accumulate(&mut sums.mass, &ma, &psi, &t, &psi, None, &t);
            accumulate(&mut sums.coriolis1, &c1, &psi, &t, &psi, None, &t);
            accumulate(&mut sums.coriolis2, &ma, &psi, &t, &psi_dot, Some(&psi), &t_dot);
            accumulate(&mut sums.drag, &dr, &psi, &t, &psi, None, &t);
            sums.buoy_p += psi.transpose() * g;
            sums.buoy_t += t.transpose() * g;
        }
    }
    Ok(out)
}

/// Base-frame Jacobians `Ĵ_k` and their rates, as lists of 6×6 blocks.
fn base_jacobians(fr: &Frames) -> (Vec<Vec<Matrix6<f64>>>, Vec<Vec<Matrix6<f64>>>) {
    let n = fr.ops.len();
    let mut jh: Vec<Vec<Matrix6<f64>>> = Vec::with_capacity(n);
    let mut jd: Vec<Vec<Matrix6<f64>>> = Vec::with_capacity(n);
    jh.push(vec![]);
    jd.push(vec![]);
    for k in 0..n.saturating_sub(1) {
        let (g, gd) = (&fr.gamma[k], &fr.gamma_dot[k]);
        let mut next: Vec<Matrix6<f64>> = jh[k].iter().map(|b| g * b).collect();
        let mut next_d: Vec<Matrix6<f64>> = jh[k]
            .iter()
            .zip(&jd[k])
            .map(|(b, bd)| gd * b + g * bd)
            .collect();
        next.push(fr.p[k]);
        next_d.push(fr.p_dot[k]);
        jh.push(next);
        jd.push(next_d);
    }
    (jh, jd)
}

/// Backward composite recursion turning per-section sums into the 6N×6N
/// matrix `Σ w Jᵀ K L`.
fn compose_bilinear(
    fr: &Frames,
    jh: &[Vec<Matrix6<f64>>],
    jd: &[Vec<Matrix6<f64>>],
    sums: &[Bilinear],
) -> DMatrix<f64> {
    let n = sums.len();
    let mut out = DMatrix::zeros(6 * n, 6 * n);
    let mut a_next = Matrix6::zeros();
    let mut b_next = Matrix6::zeros();
    for k in (0..n).rev() {
        let s = &sums[k];
        let (g, gd, p, pd) = (&fr.gamma[k], &fr.gamma_dot[k], &fr.p[k], &fr.p_dot[k]);
        let (pt_a, pt_b) = (p.transpose() * a_next, p.transpose() * b_next);
        let (gt_a, gt_b) = (g.transpose() * a_next, g.transpose() * b_next);
        let diag = s.tg + pt_a * p + pt_b * pd;
        let x = s.ta + pt_a * g + pt_b * gd;
        let y = s.tb + pt_b * g;
        let z = s.pg + gt_a * p + gt_b * pd;
        out.fixed_view_mut::<6, 6>(6 * k, 6 * k).copy_from(&diag);
        for a in 0..k {
            let row = x * jh[k][a] + y * jd[k][a];
            let col = jh[k][a].transpose() * z;
            out.fixed_view_mut::<6, 6>(6 * k, 6 * a).copy_from(&row);
            out.fixed_view_mut::<6, 6>(6 * a, 6 * k).copy_from(&col);
        }
        a_next = s.pa + gt_a * g + gt_b * gd;
        b_next = s.pb + gt_b * g;
    }
    out
}

fn compose_buoyancy(fr: &Frames, sums: &[SectionSums]) -> DMatrix<f64> {
    let n = sums.len();
    let mut out = DMatrix::zeros(6 * n, 6);
    let mut v_next = Matrix6::zeros();
    for k in (0..n).rev() {
        let row = sums[k].buoy_t + fr.p[k].transpose() * v_next;
        out.fixed_view_mut::<6, 6>(6 * k, 0).copy_from(&row);
        v_next = sums[k].buoy_p + fr.gamma[k].transpose() * v_next;
    }
    out
}

fn check_state(model: &RobotModel, state: &JointState) -> Result<()> {
    for len in [state.q.len(), state.qdot.len()] {
        if len != model.dof() {
            return Err(Error::Dimension {
                expected: model.dof(),
                got: len,
            });
        }
    }
    Ok(())
}

/// Assembles [`DynamicsTerms`] over one mask.
pub fn assemble_terms(
    model: &RobotModel,
    state: &JointState,
    mask: &AbscissaMask,
) -> Result<DynamicsTerms> {
    Ok(assemble_masks(model, state, std::slice::from_ref(mask), 1)?.remove(0))
}

/// Assembles one [`DynamicsTerms`] per mask, sharing the kinematics. Node
/// work is split over up to `threads` workers by section; the reduction
/// order is fixed, so results do not depend on `threads`.
pub fn assemble_masks(
    model: &RobotModel,
    state: &JointState,
    masks: &[AbscissaMask],
    threads: usize,
) -> Result<Vec<DynamicsTerms>> {
    check_state(model, state)?;
    let fr = frames(model, state);
    let n = model.section_count();
    let per_section: Vec<Vec<SectionSums>> = if threads <= 1 || n < 2 {
        (0..n)
            .map(|k| section_pass(model, &fr, k, masks))
            .collect::<Result<_>>()?
    } else {
        let workers = threads.min(n);
        let chunk = n.div_ceil(workers);
        let fr_ref = &fr;
        let results: Vec<Result<Vec<Vec<SectionSums>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|lo| {
                    scope.spawn(move || {
                        (lo..(lo + chunk).min(n))
                            .map(|k| section_pass(model, fr_ref, k, masks))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("assembly worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(n);
        for r in results {
            all.extend(r?);
        }
        all
    };
    let (jh, jd) = base_jacobians(&fr);
    let internal = internal_force(model, state)?;
    let tip_force = tip_wrench_force(model, &state.q)?;
    let gravity_twist = model.base_transform().adjoint_inverse() * model.gravity().0;
    let mut out = Vec::with_capacity(masks.len());
    for m in 0..masks.len() {
        let sums: Vec<SectionSums> = per_section.iter().map(|v| v[m]).collect();
        let pick = |f: fn(&SectionSums) -> Bilinear| -> Vec<Bilinear> { sums.iter().map(f).collect() };
        let terms = DynamicsTerms {
            mass: compose_bilinear(&fr, &jh, &jd, &pick(|s| s.mass)),
            coriolis1: compose_bilinear(&fr, &jh, &jd, &pick(|s| s.coriolis1)),
            coriolis2: compose_bilinear(&fr, &jh, &jd, &pick(|s| s.coriolis2)),
            drag: compose_bilinear(&fr, &jh, &jd, &pick(|s| s.drag)),
            buoyancy: compose_buoyancy(&fr, &sums),
            tip_force: tip_force.clone(),
            internal: internal.clone(),
            gravity_twist,
        };
        if !terms.is_finite() {
            return Err(Error::Assembly {
                node: 0,
                abscissa: 0.0,
                reason: "non-finite assembled term".into(),
            });
        }
        out.push(terms);
    }
    Ok(out)
}

/// Condition estimate above which the Cholesky solve is replaced by LU.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Solves `M x = rhs` for SPD `M`.
pub fn solve_spd(mass: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let Some(chol) = mass.clone().cholesky() else {
        let min_eigenvalue = mass.clone().symmetric_eigenvalues().min();
        return Err(Error::NotSpd { min_eigenvalue });
    };
    let l = chol.l_dirty();
    let diag = (0..l.nrows()).map(|i| l[(i, i)]);
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if (hi / lo).powi(2) > CONDITION_LIMIT {
        return mass.clone().lu().solve(rhs).ok_or(Error::NotSpd { min_eigenvalue: 0.0 });
    }
    Ok(chol.solve(rhs))
}

/// `q̈ = M⁻¹ (u + τ + F + N Ad_{g_r}⁻¹𝒢 − (C1 + C2 + D) q̇)`.
pub fn forward_dynamics(
    terms: &DynamicsTerms,
    qdot: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = terms.dof();
    for len in [qdot.len(), u.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    let rhs = u + terms.load() - terms.velocity_matrix() * qdot;
    solve_spd(&terms.mass, &rhs)
}
