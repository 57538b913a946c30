//! Rigid-body pose arithmetic on SE(3).
//!
//! A [`Pose`] pairs a position vector with a unit quaternion, stored
//! scalar-first as `[w, x, y, z]`. Unit quaternions double-cover the
//! rotations (`q` and `-q` describe the same rotation), so every stored
//! quaternion is kept in a canonical hemisphere: `w >= 0`, and when `w == 0`
//! the first nonzero component of `(x, y, z)` is non-negative. This makes
//! pose comparison and serialization unambiguous.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::{Error, Result};

/// Tolerance for pose-level invariants: quaternion unit-norm enforcement at
/// construction and loop-closure checks.
pub const EPS_POSE: f64 = 1e-9;

/// Rank floor for matrix decompositions; smaller singular values are
/// treated as degenerate.
pub const EPS_RANK: f64 = 1e-9;

/// A rigid-body transform: rotate by `rotation`, then translate by
/// `position`. Composition follows the homogeneous-matrix convention, so
/// `a.compose(&b)` applies `b` first in `a`'s frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Translation component, in meters.
    pub position: Vector3<f64>,
    /// Orientation, canonicalized (see module docs). Kept private so the
    /// canonical form cannot be broken from outside.
    rotation: UnitQuaternion<f64>,
}

/// Flips a unit quaternion into the canonical hemisphere and scrubs
/// negative-zero components so serialization is reproducible.
fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let v = q.into_inner();
    let (w, x, y, z) = (v.w, v.i, v.j, v.k);
    let flip = if w != 0.0 {
        w < 0.0
    } else if x != 0.0 {
        x < 0.0
    } else if y != 0.0 {
        y < 0.0
    } else {
        z < 0.0
    };
    let s = if flip { -1.0 } else { 1.0 };
    // `+ 0.0` maps -0.0 to 0.0 and leaves every other value unchanged.
    UnitQuaternion::new_unchecked(Quaternion::new(
        s * w + 0.0,
        s * x + 0.0,
        s * y + 0.0,
        s * z + 0.0,
    ))
}

impl Pose {
    /// The identity transform.
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose from a position and a scalar-first quaternion
    /// `[w, x, y, z]`. The quaternion must already be unit length to within
    /// [`EPS_POSE`]; it is canonicalized but otherwise stored bit-for-bit,
    /// so serialization round-trips exactly.
    pub fn new(position: Vector3<f64>, quat_wxyz: [f64; 4]) -> Result<Self> {
        let [w, x, y, z] = quat_wxyz;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > EPS_POSE {
            return Err(Error::Invalid(format!(
                "quaternion norm {norm} deviates from 1 by more than {EPS_POSE}"
            )));
        }
        Ok(Self {
            position,
            rotation: canonical(UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))),
        })
    }

    /// Builds a pose from parts, renormalizing and canonicalizing the
    /// rotation. Used internally wherever rotations come out of arithmetic
    /// that may drift slightly from unit norm.
    pub fn from_position_rotation(position: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            rotation: canonical(UnitQuaternion::new_normalize(rotation.into_inner())),
        }
    }

    /// A pure translation.
    pub fn from_translation(v: Vector3<f64>) -> Self {
        Self {
            position: v,
            rotation: UnitQuaternion::identity(),
        }
    }

    /// A pure rotation of `angle` radians about the +Z axis.
    pub fn rot_z(angle: f64) -> Self {
        Self::from_position_rotation(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle),
        )
    }

    /// The orientation quaternion (canonical form).
    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    /// The quaternion components, scalar first: `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.into_inner();
        [q.w, q.i, q.j, q.k]
    }

    /// The translation component.
    pub fn translation_part(&self) -> Vector3<f64> {
        self.position
    }

    /// `self ∘ other`: apply `other` in `self`'s frame (homogeneous-matrix
    /// product order).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_position_rotation(
            self.position + self.rotation * other.position,
            self.rotation * other.rotation,
        )
    }

    /// The inverse transform, so that `p.compose(&p.inverse())` is the
    /// identity.
    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::from_position_rotation(-(inv * self.position), inv)
    }

    /// The transform of `other` expressed in `self`'s frame:
    /// `self⁻¹ ∘ other`.
    pub fn relative(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// The rotation angle about +Z, read off the image of the X axis in the
    /// XY plane and wrapped into `(-π, π]`. Returns 0 for poses whose X axis
    /// maps parallel to Z (see [`Pose::rot_z_angle_flagged`]).
    pub fn rot_z_angle(&self) -> f64 {
        self.rot_z_angle_flagged().0
    }

    /// Like [`Pose::rot_z_angle`], with a degeneracy flag: `true` when the
    /// rotated X axis is parallel to Z, in which case the angle about Z is
    /// undefined and 0 is returned.
    pub fn rot_z_angle_flagged(&self) -> (f64, bool) {
        let v = self.rotation * Vector3::x();
        if v.x.hypot(v.y) < EPS_RANK {
            (0.0, true)
        } else {
            (wrap_angle(v.y.atan2(v.x)), false)
        }
    }

    /// Serializes to `[px, py, pz, qw, qx, qy, qz]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.quaternion_wxyz();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q[0],
            q[1],
            q[2],
            q[3],
        ]
    }

    /// Deserializes from `[px, py, pz, qw, qx, qy, qz]`; the quaternion must
    /// be unit length to within [`EPS_POSE`].
    pub fn from_array(a: &[f64; 7]) -> Result<Self> {
        Self::new(Vector3::new(a[0], a[1], a[2]), [a[3], a[4], a[5], a[6]])
    }
}

/// Projects a general 3×3 matrix onto the nearest rotation via SVD:
/// `R = U · diag(1, 1, det(U·Vᵀ)) · Vᵀ`. The determinant correction keeps
/// reflections out. Errors when the smallest singular value is below
/// [`EPS_RANK`], i.e. the input does not determine a rotation.
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<UnitQuaternion<f64>> {
    let svd = m.svd(true, true);
    let sigma_min = svd.singular_values.min();
    if !sigma_min.is_finite() || sigma_min < EPS_RANK {
        return Err(Error::Degenerate(format!(
            "matrix is rank deficient (smallest singular value {sigma_min})"
        )));
    }
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let sign = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * v_t;
    Ok(canonical(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(r),
    )))
}

/// Positional and angular distance between poses: the Euclidean distance of
/// positions, and the geodesic rotation angle `2·acos(|⟨q_a, q_b⟩|)` which is
/// invariant to quaternion sign.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let dp = (a.position - b.position).norm();
    let qa = a.quaternion_wxyz();
    let qb = b.quaternion_wxyz();
    let dot =
        (qa[0] * qb[0] + qa[1] * qb[1] + qa[2] * qb[2] + qa[3] * qb[3]).abs();
    (dp, 2.0 * dot.min(1.0).acos())
}

/// Wraps an angle into `(-π, π]`; the boundary maps to +π.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// The rotation vector (axis times angle, angle in `[0, π]`) of a rotation.
/// Quaternion sign is normalized first so the short way around is always
/// reported.
pub fn rotation_vector(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    match canonical(*q).axis_angle() {
        Some((axis, angle)) => axis.into_inner() * angle,
        None => Vector3::zeros(),
    }
}

/// Inverse of [`rotation_vector`]: builds the rotation about `v`'s direction
/// by `|v|` radians.
pub fn quat_from_rotation_vector(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = v.norm();
    if angle < EPS_POSE {
        UnitQuaternion::identity()
    } else {
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(*v), angle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Independent oracle: the 4×4 homogeneous matrix of a pose. Composition
    /// and inversion of poses must agree with plain matrix algebra.
    fn mat4(p: &Pose) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(p.rotation().to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.position);
        m
    }

    fn assert_mat_close(a: &Matrix4<f64>, b: &Matrix4<f64>, tol: f64) {
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (a[(i, j)] - b[(i, j)]).abs() < tol,
                    "entry ({i},{j}): {} vs {}",
                    a[(i, j)],
                    b[(i, j)]
                );
            }
        }
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let position = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        loop {
            let q: [f64; 4] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.1 {
                return Pose::new(position, [q[0] / n, q[1] / n, q[2] / n, q[3] / n]).unwrap();
            }
        }
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            assert_mat_close(&mat4(&a.compose(&b)), &(mat4(&a) * mat4(&b)), 1e-12);
        }
    }

    #[test]
    fn relative_matches_matrix_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let oracle = mat4(&a).try_inverse().unwrap() * mat4(&b);
            assert_mat_close(&mat4(&a.relative(&b)), &oracle, 1e-9);
        }
    }

    #[test]
    fn compose_quarter_turn_then_unit_step() {
        // Rotating 90° about Z and then stepping one unit along the rotated X
        // axis lands at (0, 1, 0); the matrix oracle agrees.
        let a = Pose::rot_z(FRAC_PI_2);
        let b = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let c = a.compose(&b);
        assert_relative_eq!(c.position.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.position.y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.position.z, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.rot_z_angle(), FRAC_PI_2, epsilon = 1e-12);
        assert_mat_close(&mat4(&c), &(mat4(&a) * mat4(&b)), 1e-12);
    }

    #[test]
    fn relative_then_compose_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let back = a.compose(&a.relative(&b));
            // The angle metric resolves at best ~3e-8 near zero (acos is
            // infinitely steep at 1), so quaternions equal to the last bit
            // still measure a few 1e-8 apart.
            let (dp, dq) = pose_error(&back, &b);
            assert!(dp < 1e-9 && dq < 1e-7, "dp={dp} dq={dq}");
        }
    }

    #[test]
    fn rot_z_angles_add() {
        // Oracle: planar rotations compose by angle addition.
        let c = Pose::rot_z(0.3).compose(&Pose::rot_z(0.5));
        assert_relative_eq!(c.rot_z_angle(), 0.8, epsilon = 1e-12);
        let d = Pose::rot_z(2.0).compose(&Pose::rot_z(2.0));
        assert_relative_eq!(d.rot_z_angle(), wrap_angle(4.0), epsilon = 1e-12);
    }

    #[test]
    fn rot_z_angle_flags_degenerate_axis() {
        assert_eq!(Pose::identity().rot_z_angle_flagged(), (0.0, false));
        // Rotating -90° about Y maps the X axis onto +Z: no angle about Z is
        // observable.
        let p = Pose::from_position_rotation(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -FRAC_PI_2),
        );
        let (angle, degenerate) = p.rot_z_angle_flagged();
        assert_eq!(angle, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn quaternions_are_canonicalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let q = p.quaternion_wxyz();
            assert!(q[0] >= 0.0);
            // Negating all quaternion components is the same rotation and
            // must produce the identical stored form.
            let flipped = Pose::new(p.position, [-q[0], -q[1], -q[2], -q[3]]).unwrap();
            assert_eq!(flipped.quaternion_wxyz(), q);
        }
        // w == 0 tie: the first nonzero vector component decides the sign.
        let p = Pose::new(Vector3::zeros(), [0.0, -0.6, 0.8, 0.0]).unwrap();
        assert_eq!(p.quaternion_wxyz(), [0.0, 0.6, -0.8, 0.0]);
        let z = Pose::new(Vector3::zeros(), [0.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(z.quaternion_wxyz(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn constructor_rejects_non_unit_quaternions() {
        assert!(Pose::new(Vector3::zeros(), [0.9, 0.0, 0.0, 0.0]).is_err());
        assert!(Pose::new(Vector3::zeros(), [1.0 + 2e-9, 0.0, 0.0, 0.0]).is_err());
        assert!(Pose::new(Vector3::zeros(), [1.0 + 5e-10, 0.0, 0.0, 0.0]).is_ok());
        assert!(Pose::new(Vector3::zeros(), [f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn orthonormalize_recovers_scaled_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let m = p.rotation().to_rotation_matrix().matrix() * 1.001;
            let q = orthonormalize(&m).unwrap();
            let (_, dq) = pose_error(
                &Pose::from_position_rotation(Vector3::zeros(), q),
                &Pose::from_position_rotation(Vector3::zeros(), *p.rotation()),
            );
            assert!(dq < 1e-7, "angular deviation {dq}");
        }
    }

    #[test]
    fn orthonormalize_is_nearest_rotation() {
        // Oracle: the projection maximizes trace(Rᵀ·M) over rotations. Any
        // random rotation must score no better than the returned one.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut m = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let Ok(q) = orthonormalize(&m) else { continue };
            let r = q.to_rotation_matrix();
            let best = (r.matrix().transpose() * m).trace();
            for _ in 0..100 {
                let other = random_pose(&mut rng).rotation().to_rotation_matrix();
                let score = (other.matrix().transpose() * m).trace();
                assert!(score <= best + 1e-9, "{score} > {best}");
            }
            // Proper rotation: determinant +1, orthonormal columns.
            assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn orthonormalize_rejects_rank_deficient_input() {
        assert!(orthonormalize(&Matrix3::zeros()).is_err());
        let mut m = Matrix3::identity();
        m[(2, 2)] = 0.0;
        assert!(orthonormalize(&m).is_err());
    }

    #[test]
    fn wrap_angle_covers_boundaries() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(2.0 * PI), 0.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.1 - 2.0 * PI), 0.1, epsilon = 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn pose_error_measures_distance_and_angle() {
        let a = Pose::from_translation(Vector3::new(1.0, 2.0, 2.0));
        let (dp, dq) = pose_error(&a, &Pose::identity());
        assert_relative_eq!(dp, 3.0, epsilon = 1e-12);
        assert_eq!(dq, 0.0);
        let (dp, dq) = pose_error(&Pose::rot_z(0.4), &Pose::identity());
        assert_eq!(dp, 0.0);
        assert_relative_eq!(dq, 0.4, epsilon = 1e-12);
        // The double cover must not register as error.
        let q = Pose::rot_z(1.0).quaternion_wxyz();
        let flipped = Pose::new(Vector3::zeros(), [-q[0], -q[1], -q[2], -q[3]]).unwrap();
        let (_, dq) = pose_error(&Pose::rot_z(1.0), &flipped);
        assert!(dq < 1e-9);
    }

    #[test]
    fn serialization_roundtrips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let a = p.to_array();
            let back = Pose::from_array(&a).unwrap();
            assert_eq!(back.to_array(), a);
            assert_eq!(back.position, p.position);
            assert_eq!(back.quaternion_wxyz(), p.quaternion_wxyz());
        }
    }

    #[test]
    fn group_laws_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = random_pose(&mut rng);
            // Angle tolerances sit at the ~3e-8 resolution floor of the
            // acos-based metric, not at f64 precision.
            let (dp, dq) = pose_error(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)));
            assert!(dp < 1e-9 && dq < 1e-7);
            let (dp, dq) = pose_error(&a.compose(&Pose::identity()), &a);
            assert!(dp < 1e-12 && dq < 1e-7);
            let (dp, dq) = pose_error(&a.compose(&a.inverse()), &Pose::identity());
            assert!(dp < 1e-9 && dq < 1e-7);
        }
    }

    #[test]
    fn rotation_vector_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let v = rotation_vector(p.rotation());
            assert!(v.norm() <= PI + 1e-12);
            let q = quat_from_rotation_vector(&v);
            let (_, dq) = pose_error(
                &Pose::from_position_rotation(Vector3::zeros(), q),
                &Pose::from_position_rotation(Vector3::zeros(), *p.rotation()),
            );
            assert!(dq < 1e-7);
        }
        assert_eq!(rotation_vector(&UnitQuaternion::identity()), Vector3::zeros());
    }
}
