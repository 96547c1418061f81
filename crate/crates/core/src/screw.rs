//! SE(3) and se(3) numerics.
//!
//! Screws are stored as `(angular, linear)` 6-vectors; every 6×6 operator in
//! this crate uses the same block order.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this value of `‖γ‖·s` the exponential switches to its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

const POSE_TOL: f64 = 1e-9;

/// A 6-vector pairing an angular part (first three entries) with a linear
/// part (last three). Strains, twists, wrenches and the gravity screw all use
/// this layout.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Screw(pub Vector6<f64>);

impl Screw {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Screw(Vector6::new(
            angular.x, angular.y, angular.z, linear.x, linear.y, linear.z,
        ))
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Screw(Vector6::from_column_slice(v))
    }

    pub fn zero() -> Self {
        Screw(Vector6::zeros())
    }

    pub fn angular(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn linear(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        out.copy_from_slice(self.0.as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vector6<f64>> for Screw {
    fn from(v: Vector6<f64>) -> Self {
        Screw(v)
    }
}

impl From<Screw> for Vector6<f64> {
    fn from(s: Screw) -> Self {
        s.0
    }
}

/// Rigid transform: rotation matrix plus position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Pose { rotation, position }
    }

    /// Builds a pose from a homogeneous matrix, rejecting anything that is not
    /// a proper rigid transform.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let pose = Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            position: m.fixed_view::<3, 1>(0, 3).into_owned(),
        };
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs())
            > POSE_TOL
        {
            return Err(Error::InvalidPose("bottom row must be (0, 0, 0, 1)".into()));
        }
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    /// Checks orthonormality and unit determinant of the rotation block.
    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.position.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if ortho > POSE_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (‖RᵀR − I‖ = {ortho:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > POSE_TOL {
            return Err(Error::InvalidPose(format!("det(R) = {det}")));
        }
        Ok(())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            position: self.rotation * other.position + self.position,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            position: -(rt * self.position),
        }
    }

    /// Applies the transform to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    /// `Ad_g`, unchecked.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = &self.rotation;
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        out.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(skew(&self.position) * r));
        out
    }

    /// `Ad_{g⁻¹}`, unchecked.
    pub fn adjoint_inverse(&self) -> Matrix6<f64> {
        let rt = self.rotation.transpose();
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
        out.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-(rt * skew(&self.position))));
        out
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// se(3) hat map.
pub fn hat(xi: &Screw) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.angular()));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.linear());
    m
}

/// Inverse of [`hat`]. The upper-left block must be antisymmetric and the
/// bottom row zero.
pub fn vee(m: &Matrix4<f64>) -> Result<Screw> {
    let w = m.fixed_view::<3, 3>(0, 0);
    let asym = (w + w.transpose()).norm();
    let bottom = m.fixed_view::<1, 4>(3, 0).norm();
    let scale = 1.0 + m.norm();
    if !m.iter().all(|v| v.is_finite()) || asym > 1e-12 * scale || bottom > 1e-12 * scale {
        return Err(Error::NotInSe3);
    }
    Ok(Screw::new(
        Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
    ))
}

/// Exponential of the constant-strain twist `ξ` over arclength `s`, i.e. the
/// solution of `∂g/∂s = g·hat(ξ)` with `g(0) = I`.
pub fn exp_se3(xi: &Screw, s: f64) -> Pose {
    let w = xi.angular();
    let v = xi.linear();
    let theta = w.norm();
    let phi = theta * s;
    let wh = skew(&w);
    let wh2 = wh * wh;
    let (a, b, c) = exp_coefficients(theta, s, phi.abs() < SMALL_ANGLE);
    let rotation = Matrix3::identity() + wh * a + wh2 * b;
    let vmat = Matrix3::identity() * s + wh * b + wh2 * c;
    Pose {
        rotation,
        position: vmat * v,
    }
}

/// Scalars `(a, b, c)` with `R = I + a·ŵ + b·ŵ²` and `V = s·I + b·ŵ + c·ŵ²`.
fn exp_coefficients(theta: f64, s: f64, series: bool) -> (f64, f64, f64) {
    if series {
        let s2 = s * s;
        let t2 = theta * theta;
        (
            s - s2 * s * t2 / 6.0,
            s2 / 2.0 - s2 * s2 * t2 / 24.0,
            s2 * s / 6.0 - s2 * s2 * s * t2 / 120.0,
        )
    } else {
        let phi = theta * s;
        let half = (0.5 * phi).sin();
        (
            phi.sin() / theta,
            2.0 * half * half / (theta * theta),
            s * s * s * phi_minus_sin_over_cube(phi),
        )
    }
}

/// `(φ − sin φ)/φ³` without cancellation for small `φ`.
fn phi_minus_sin_over_cube(phi: f64) -> f64 {
    if phi.abs() < 0.25 {
        let u = phi * phi;
        // 1/3! − u/5! + u²/7! − …
        let mut term = 1.0 / 6.0;
        let mut acc = term;
        for k in 1..8 {
            term *= -u / ((2 * k + 2) as f64 * (2 * k + 3) as f64);
            acc += term;
        }
        acc
    } else {
        (phi - phi.sin()) / (phi * phi * phi)
    }
}

/// `Ad_g` (or `Ad_{g⁻¹}` with `inverse`), after checking the pose invariants.
pub fn adjoint_of(g: &Pose, inverse: bool) -> Result<Matrix6<f64>> {
    g.validate()?;
    Ok(if inverse {
        g.adjoint_inverse()
    } else {
        g.adjoint()
    })
}

/// Lie-bracket matrix `ad_ξ`, so that `ad_ξ ζ = [ξ, ζ]`.
pub fn ad(xi: &Vector6<f64>) -> Matrix6<f64> {
    let w = skew(&Vector3::new(xi[0], xi[1], xi[2]));
    let v = skew(&Vector3::new(xi[3], xi[4], xi[5]));
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    out
}

/// Coadjoint `ad⋆_ξ = −ad_ξᵀ`, the operator in the Euler–Poincaré
/// equation `ℳη̇ + ad⋆_η ℳη = f`.
pub fn coad(xi: &Vector6<f64>) -> Matrix6<f64> {
    -ad(xi).transpose()
}

/// `ad_ξ`, or the coadjoint `ad⋆_ξ = −ad_ξᵀ` when `co` is set.
pub fn ad_small(xi: &Screw, co: bool) -> Matrix6<f64> {
    if co {
        coad(&xi.0)
    } else {
        ad(&xi.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_screw(rng: &mut ChaCha8Rng, scale: f64) -> Screw {
        Screw(Vector6::from_fn(|_, _| rng.random_range(-scale..scale)))
    }

    #[test]
    fn hat_vee_round_trip() {
        let x = Screw::from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(vee(&hat(&x)).unwrap(), x);
        assert_eq!(hat(&Screw::zero()), Matrix4::zeros());
    }

    #[test]
    fn hat_of_unit_z_rotation() {
        let m = hat(&Screw::from_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        // 1-based (1,2) and (2,1)
        assert_eq!(m[(0, 1)], -1.0);
        assert_eq!(m[(1, 0)], 1.0);
        let nonzero = m.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn vee_rejects_symmetric_block() {
        let mut m = Matrix4::zeros();
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        let err = vee(&m).unwrap_err();
        assert!(err.to_string().contains("not in se(3)"));
    }

    #[test]
    fn exp_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xi = random_screw(&mut rng, 2.0);
        assert_eq!(exp_se3(&xi, 0.0), Pose::identity());
        let g = exp_se3(&Screw::from_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]), 2.0);
        assert_eq!(g.rotation, Matrix3::identity());
        assert!((g.position - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn negative_arclength_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let xi = random_screw(&mut rng, 2.0);
            let g = exp_se3(&xi, 0.7).compose(&exp_se3(&xi, -0.7));
            assert!((g.to_matrix() - Matrix4::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn exp_branches_agree_at_threshold() {
        for s in [0.1, 0.9, 2.0] {
            for phi in [SMALL_ANGLE - 1e-9, SMALL_ANGLE + 1e-9] {
                let theta = phi / s;
                let lo = exp_coefficients(theta, s, true);
                let hi = exp_coefficients(theta, s, false);
                assert!((lo.0 - hi.0).abs() < 1e-10);
                assert!((lo.1 - hi.1).abs() < 1e-10);
                assert!((lo.2 - hi.2).abs() < 1e-10);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut xi = random_screw(&mut rng, 1.0);
            let dir = xi.angular().normalize();
            let s = 0.9;
            xi.0.fixed_rows_mut::<3>(0).copy_from(&(dir * ((SMALL_ANGLE - 1e-9) / s)));
            let g1 = exp_se3(&xi, s);
            xi.0.fixed_rows_mut::<3>(0).copy_from(&(dir * ((SMALL_ANGLE + 1e-9) / s)));
            let g2 = exp_se3(&xi, s);
            // inputs differ by 2e-9/s in angle, so outputs may differ by O(1e-9)
            let d = (g1.to_matrix() - g2.to_matrix()).norm();
            assert!(d < 1e-8, "{d}");
        }
    }

    #[test]
    fn adjoint_of_identity_and_inverse() {
        assert_eq!(adjoint_of(&Pose::identity(), false).unwrap(), Matrix6::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = exp_se3(&random_screw(&mut rng, 2.0), 1.0);
            let prod = adjoint_of(&g, true).unwrap() * adjoint_of(&g, false).unwrap();
            assert!((prod - Matrix6::identity()).norm() < 1e-10);
        }
    }

    #[test]
    fn adjoint_rejects_bad_pose() {
        let mut g = Pose::identity();
        g.rotation[(0, 0)] = 2.0;
        assert!(adjoint_of(&g, false).is_err());
    }

    #[test]
    fn adjoint_of_base_transform_permutes_axes() {
        let m = Matrix4::new(
            0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        );
        let g = Pose::from_matrix(&m).unwrap();
        let ad_g = adjoint_of(&g, false).unwrap();
        let ex = Screw::from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let out = ad_g * ex.0;
        // x maps to +y in both the angular and linear blocks
        assert_eq!(out, Vector6::new(0.0, 1.0, 0.0, 0.0, 1.0, 0.0));
        let ey = Screw::from_slice(&[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ad_g * ey.0, Vector6::new(-1.0, 0.0, 0.0, -1.0, 0.0, 0.0));
    }

    #[test]
    fn ad_matches_matrix_commutator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(ad_small(&Screw::zero(), false), Matrix6::zeros());
        for _ in 0..50 {
            let a = random_screw(&mut rng, 3.0);
            let b = random_screw(&mut rng, 3.0);
            let lhs = ad_small(&a, false) * b.0;
            let (ha, hb) = (hat(&a), hat(&b));
            let rhs = vee(&(ha * hb - hb * ha)).unwrap();
            assert!((lhs - rhs.0).norm() < 1e-12);
        }
    }

    #[test]
    fn coadjoint_is_negative_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_screw(&mut rng, 3.0);
        assert_eq!(ad_small(&a, true), -ad_small(&a, false).transpose());
        // ⟨ad⋆_ξ w, ζ⟩ = −⟨w, ad_ξ ζ⟩
        let w = random_screw(&mut rng, 1.0).0;
        let z = random_screw(&mut rng, 1.0).0;
        let lhs = (ad_small(&a, true) * w).dot(&z);
        let rhs = -(w.dot(&(ad_small(&a, false) * z)));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
