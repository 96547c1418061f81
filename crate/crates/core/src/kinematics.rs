//! Piecewise-constant-strain kinematics: configuration `g(X)`, the body-frame
//! geometric Jacobian `J(X)` and its time derivative.
//!
//! Within a section the strain twist `ξ` is constant, so the section pose is
//! `exp(ξ·x)` and the strain-to-twist map is the tangent operator
//! `T(ξ, x) = ∫₀ˣ Ad_{exp(ξτ)}⁻¹ dτ`. Because `ad_ξ` annihilates
//! `z(z² + θ²)²` (θ = ‖γ‖), `T` is a quartic polynomial in `ad_ξ` whose
//! coefficients depend only on `θ` and `x`; [`tangent_coefficients`] returns
//! them together with their `θ`-derivatives, which gives `Ṫ` in closed form.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::screw::{ad, exp_se3, Pose, Screw};

/// Below this `θ·x` the tangent coefficients use their Taylor series.
pub const TANGENT_SERIES_LIMIT: f64 = 0.5;

/// Stacked strains and strain rates, both of length 6N.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn new(model: &RobotModel, q: DVector<f64>, qdot: DVector<f64>) -> Result<Self> {
        let n = model.dof();
        for len in [q.len(), qdot.len()] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(JointState { q, qdot })
    }

    /// Undeformed arm at rest.
    pub fn rest(model: &RobotModel) -> Self {
        JointState {
            q: model.rest_configuration(),
            qdot: DVector::zeros(model.dof()),
        }
    }

    pub fn section_strain(&self, k: usize) -> Vector6<f64> {
        self.q.fixed_rows::<6>(6 * k).into_owned()
    }

    pub fn section_rate(&self, k: usize) -> Vector6<f64> {
        self.qdot.fixed_rows::<6>(6 * k).into_owned()
    }
}

// Taylor coefficients in φ² = (θx)² of c_n / x^{n+1} and of
// (∂c_n/∂θ)/(θ·x^{n+3}).
const C1_SERIES: [f64; 9] = [
    -1.0 / 2.0,
    0.0,
    1.0 / 720.0,
    -1.0 / 20160.0,
    1.0 / 1209600.0,
    -1.0 / 119750400.0,
    1.0 / 17435658240.0,
    -1.0 / 3487131648000.0,
    1.0 / 914624815104000.0,
];
const C2_SERIES: [f64; 9] = [
    1.0 / 6.0,
    0.0,
    -1.0 / 5040.0,
    1.0 / 181440.0,
    -1.0 / 13305600.0,
    1.0 / 1556755200.0,
    -1.0 / 261534873600.0,
    1.0 / 59281238016000.0,
    -1.0 / 17377871486976000.0,
];
const C3_SERIES: [f64; 9] = [
    -1.0 / 24.0,
    1.0 / 360.0,
    -1.0 / 13440.0,
    1.0 / 907200.0,
    -1.0 / 95800320.0,
    1.0 / 14529715200.0,
    -1.0 / 2988969984000.0,
    1.0 / 800296713216000.0,
    -1.0 / 270322445352960000.0,
];
const C4_SERIES: [f64; 9] = [
    1.0 / 120.0,
    -1.0 / 2520.0,
    1.0 / 120960.0,
    -1.0 / 9979200.0,
    1.0 / 1245404160.0,
    -1.0 / 217945728000.0,
    1.0 / 50812489728000.0,
    -1.0 / 15205637551104000.0,
    1.0 / 5676771352412160000.0,
];
const D1_SERIES: [f64; 9] = [
    0.0,
    1.0 / 180.0,
    -1.0 / 3360.0,
    1.0 / 151200.0,
    -1.0 / 11975040.0,
    1.0 / 1452971520.0,
    -1.0 / 249080832000.0,
    1.0 / 57164050944000.0,
    -1.0 / 16895152834560000.0,
];
const D2_SERIES: [f64; 9] = [
    0.0,
    -1.0 / 1260.0,
    1.0 / 30240.0,
    -1.0 / 1663200.0,
    1.0 / 155675520.0,
    -1.0 / 21794572800.0,
    1.0 / 4234374144000.0,
    -1.0 / 1086116967936000.0,
    1.0 / 354798209525760000.0,
];
const D3_SERIES: [f64; 9] = [
    1.0 / 180.0,
    -1.0 / 3360.0,
    1.0 / 151200.0,
    -1.0 / 11975040.0,
    1.0 / 1452971520.0,
    -1.0 / 249080832000.0,
    1.0 / 57164050944000.0,
    -1.0 / 16895152834560000.0,
    1.0 / 6244448487653376000.0,
];
const D4_SERIES: [f64; 9] = [
    -1.0 / 1260.0,
    1.0 / 30240.0,
    -1.0 / 1663200.0,
    1.0 / 155675520.0,
    -1.0 / 21794572800.0,
    1.0 / 4234374144000.0,
    -1.0 / 1086116967936000.0,
    1.0 / 354798209525760000.0,
    -1.0 / 143622315216027648000.0,
];

fn horner(coeffs: &[f64; 9], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

/// Coefficients `c_n` with `T(ξ, x) = Σ c_n ad_ξⁿ` and `d_n = (∂c_n/∂θ)/θ`,
/// for `n = 0..4`.
pub fn tangent_coefficients(theta: f64, x: f64) -> ([f64; 5], [f64; 5]) {
    let phi = theta * x;
    let x2 = x * x;
    let x3 = x2 * x;
    let x4 = x3 * x;
    let x5 = x4 * x;
    if phi.abs() < TANGENT_SERIES_LIMIT {
        let u = phi * phi;
        let x6 = x5 * x;
        let x7 = x6 * x;
        (
            [
                x,
                x2 * horner(&C1_SERIES, u),
                x3 * horner(&C2_SERIES, u),
                x4 * horner(&C3_SERIES, u),
                x5 * horner(&C4_SERIES, u),
            ],
            [
                0.0,
                x4 * horner(&D1_SERIES, u),
                x5 * horner(&D2_SERIES, u),
                x6 * horner(&D3_SERIES, u),
                x7 * horner(&D4_SERIES, u),
            ],
        )
    } else {
        let (s, c) = phi.sin_cos();
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let t4 = t2 * t2;
        let t5 = t4 * theta;
        let t6 = t4 * t2;
        let t7 = t6 * theta;
        let c1 = (phi * s + 4.0 * c - 4.0) / (2.0 * t2);
        let c2 = (phi * (c + 4.0) - 5.0 * s) / (2.0 * t3);
        let c3 = (phi * s / 2.0 + c - 1.0) / t4;
        let c4 = (phi * (c + 2.0) - 3.0 * s) / (2.0 * t5);
        let e3 = phi * phi * c - 5.0 * phi * s - 8.0 * c + 8.0;
        let e4 = -phi * phi * s - 7.0 * phi * c - 8.0 * phi + 15.0 * s;
        (
            [x, c1, c2, c3, c4],
            [0.0, e3 / (2.0 * t4), e4 / (2.0 * t5), e3 / (2.0 * t6), e4 / (2.0 * t7)],
        )
    }
}

/// Per-section quantities that do not depend on the abscissa: powers of
/// `ad_ξ` and the pieces of `d/dt (ad_ξⁿ)` along `ξ̇`.
#[derive(Clone, Debug)]
pub struct SectionOps {
    pub strain: Vector6<f64>,
    pub rate: Vector6<f64>,
    theta: f64,
    /// γ·γ̇
    angular_rate: f64,
    powers: [Matrix6<f64>; 5],
    /// `Σ_{j<n} ad^j ad_ξ̇ ad^{n−1−j}` for n = 1..4 (index 0 unused).
    power_rates: [Matrix6<f64>; 5],
}

impl SectionOps {
    pub fn new(strain: Vector6<f64>, rate: Vector6<f64>) -> Self {
        let a = ad(&strain);
        let a2 = a * a;
        let a3 = a2 * a;
        let a4 = a3 * a;
        let powers = [Matrix6::identity(), a, a2, a3, a4];
        let delta = ad(&rate);
        let mut power_rates = [Matrix6::zeros(); 5];
        power_rates[1] = delta;
        for n in 1..4 {
            power_rates[n + 1] = a * power_rates[n] + delta * powers[n];
        }
        let gamma = strain.fixed_rows::<3>(0);
        let gamma_dot = rate.fixed_rows::<3>(0);
        SectionOps {
            strain,
            rate,
            theta: gamma.norm(),
            angular_rate: gamma.dot(&gamma_dot),
            powers,
            power_rates,
        }
    }

    pub fn exp(&self, x: f64) -> Pose {
        exp_se3(&Screw(self.strain), x)
    }

    /// `(T(ξ, x), Ṫ(ξ, x))` along the section rate.
    pub fn tangent(&self, x: f64) -> (Matrix6<f64>, Matrix6<f64>) {
        let (c, d) = tangent_coefficients(self.theta, x);
        let mut t = Matrix6::zeros();
        let mut tdot = Matrix6::zeros();
        for n in 0..5 {
            t += self.powers[n] * c[n];
            tdot += self.powers[n] * (d[n] * self.angular_rate);
            if n > 0 {
                tdot += self.power_rates[n] * c[n];
            }
        }
        (t, tdot)
    }

    pub fn tangent_only(&self, x: f64) -> Matrix6<f64> {
        let (c, _) = tangent_coefficients(self.theta, x);
        let mut t = Matrix6::zeros();
        for n in 0..5 {
            t += self.powers[n] * c[n];
        }
        t
    }
}

/// Left tangent operator `T(ξ, s)`.
pub fn tangent_exp(xi: &Screw, s: f64) -> Matrix6<f64> {
    SectionOps::new(xi.0, Vector6::zeros()).tangent_only(s)
}

/// `d/dt T(ξ(t), s)` for `ξ̇ = xi_dot`.
pub fn tangent_exp_dot(xi: &Screw, xi_dot: &Screw, s: f64) -> Matrix6<f64> {
    SectionOps::new(xi.0, xi_dot.0).tangent(s).1
}

fn check_state(model: &RobotModel, q: &DVector<f64>) -> Result<()> {
    if q.len() != model.dof() {
        return Err(Error::Dimension {
            expected: model.dof(),
            got: q.len(),
        });
    }
    Ok(())
}

/// Configuration `g(X) = g_r · Π_{k<i} exp(ξ_k L_k) · exp(ξ_i (X − X_{i−1}))`.
pub fn global_config(model: &RobotModel, q: &DVector<f64>, x: f64) -> Result<Pose> {
    check_state(model, q)?;
    let (k, local) = model.locate(x)?;
    let mut g = *model.base_transform();
    for (j, s) in model.sections().iter().enumerate().take(k) {
        g = g.compose(&exp_se3(&Screw(q.fixed_rows::<6>(6 * j).into_owned()), s.length));
    }
    Ok(g.compose(&exp_se3(&Screw(q.fixed_rows::<6>(6 * k).into_owned()), local)))
}

/// Body-frame Jacobian `J(X)` (6 × 6N): `η(X) = J(X)·q̇`.
pub fn jacobian(model: &RobotModel, q: &DVector<f64>, x: f64) -> Result<DMatrix<f64>> {
    check_state(model, q)?;
    let zeros = DVector::zeros(model.dof());
    Ok(jacobian_pair(model, q, &zeros, x)?.0)
}

/// Time derivative of `J(X)` along `(q, q̇)`.
pub fn jacobian_dot(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    x: f64,
) -> Result<DMatrix<f64>> {
    check_state(model, q)?;
    check_state(model, qdot)?;
    Ok(jacobian_pair(model, q, qdot, x)?.1)
}

/// `(J(X), J̇(X))` by propagating column blocks from the base.
fn jacobian_pair(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    x: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (k, local) = model.locate(x)?;
    let mut blocks: Vec<Matrix6<f64>> = Vec::with_capacity(k + 1);
    let mut block_rates: Vec<Matrix6<f64>> = Vec::with_capacity(k + 1);
    for (j, s) in model.sections().iter().enumerate().take(k + 1) {
        let ops = SectionOps::new(
            q.fixed_rows::<6>(6 * j).into_owned(),
            qdot.fixed_rows::<6>(6 * j).into_owned(),
        );
        let span = if j == k { local } else { s.length };
        let (t, tdot) = ops.tangent(span);
        let phi = ops.exp(span).adjoint_inverse();
        let phi_dot = -ad(&(t * ops.rate)) * phi;
        for (b, bd) in blocks.iter_mut().zip(block_rates.iter_mut()) {
            *bd = phi * *bd + phi_dot * *b;
            *b = phi * *b;
        }
        blocks.push(t);
        block_rates.push(tdot);
    }
    let n = model.dof();
    let mut j_mat = DMatrix::zeros(6, n);
    let mut jd_mat = DMatrix::zeros(6, n);
    for (i, (b, bd)) in blocks.iter().zip(&block_rates).enumerate() {
        j_mat.fixed_view_mut::<6, 6>(0, 6 * i).copy_from(b);
        jd_mat.fixed_view_mut::<6, 6>(0, 6 * i).copy_from(bd);
    }
    Ok((j_mat, jd_mat))
}
