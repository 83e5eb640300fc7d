//! Rigid-body algebra on SE(3) and its tangent space se(3).
//!
//! Twists are ordered rotation first: `[ω₁, ω₂, ω₃, t₁, t₂, t₃]`. Every
//! other module relies on this ordering.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Below this rotation angle the closed forms switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-2;

/// `log` refuses rotations closer than this to π (radians).
pub const LOG_PI_MARGIN: f64 = 1e-5;

/// A 6-vector in se(3), rotation components first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist<T: Real>(Vector6<T>);

impl<T: Real> Twist<T> {
    pub fn new(xi: Vector6<T>) -> Result<Self> {
        if xi.iter().all(|v| v.is_finite()) {
            Ok(Self(xi))
        } else {
            Err(invalid("twist has non-finite entries"))
        }
    }

    pub fn from_slice(xi: &[T]) -> Result<Self> {
        if xi.len() != 6 {
            return Err(invalid(format!("twist needs 6 entries, got {}", xi.len())));
        }
        Self::new(Vector6::from_column_slice(xi))
    }

    pub fn from_parts(rotation: Vector3<T>, translation: Vector3<T>) -> Result<Self> {
        let mut xi = Vector6::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&rotation);
        xi.fixed_rows_mut::<3>(3).copy_from(&translation);
        Self::new(xi)
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    /// `scale · eᵢ`, the i-th basis direction.
    pub fn basis(i: usize, scale: T) -> Self {
        assert!(i < 6, "twist basis index {i} out of range");
        let mut xi = Vector6::zeros();
        xi[i] = scale;
        Self(xi)
    }

    pub fn rotation(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn as_vector(&self) -> &Vector6<T> {
        &self.0
    }

    pub fn norm(&self) -> T {
        self.0.norm()
    }

    pub fn neg(&self) -> Self {
        Self(-self.0)
    }
}

/// A homogeneous 4×4 rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    matrix: Matrix4<T>,
}

impl<T: Real> RigidTransform<T> {
    /// Validates the rotation block and bottom row at [`Real::validity_tol`].
    pub fn new(matrix: Matrix4<T>) -> Result<Self> {
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(invalid("transform has non-finite entries"));
        }
        let bottom = [T::zero(), T::zero(), T::zero(), T::one()];
        if (0..4).any(|c| matrix[(3, c)] != bottom[c]) {
            return Err(invalid("bottom row must be exactly [0, 0, 0, 1]"));
        }
        let r: Matrix3<T> = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        if !is_rotation(&r, T::validity_tol()) {
            return Err(invalid("rotation block is not orthonormal with det +1"));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    /// Builds from a rotation that is assumed to be valid; it is projected
    /// onto SO(3) when it drifts beyond tolerance.
    pub fn from_parts(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        let rotation = if is_rotation(&rotation, T::validity_tol()) {
            rotation
        } else {
            nearest_rotation(&rotation)
        };
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::from_parts(Matrix3::identity(), translation)
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Result<Self> {
        let n = axis.norm();
        if !(n > T::zero()) || !angle.is_finite() {
            return Err(invalid("axis must be nonzero and angle finite"));
        }
        let omega = axis / n * angle;
        Ok(exp(&Twist::from_parts(omega, Vector3::zeros())?))
    }

    pub fn matrix(&self) -> &Matrix4<T> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<T> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<T> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        Self::from_parts(rt, t)
    }

    #[inline]
    pub fn apply_point(&self, p: &Vector3<T>) -> Vector3<T> {
        let r = self.matrix.fixed_view::<3, 3>(0, 0);
        let t = self.matrix.fixed_view::<3, 1>(0, 3);
        r * p + t
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        let m = self.matrix.map(|v| U::of(v.as_f64()));
        RigidTransform::from_parts(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }
}

/// `N ≥ 1` finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    points: Vec<Vector3<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("point cloud is empty"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[T; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect())
    }

    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector3<T>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vector3<T>> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Vector3<T> {
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc: Vector3<T>, p| acc + p);
        sum / T::of(self.points.len() as f64)
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|v| U::of(v.as_f64())))
                .collect(),
        }
    }
}

pub fn skew<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -w.z,
        w.y,
        w.z,
        T::zero(),
        -w.x,
        -w.y,
        w.x,
        T::zero(),
    )
}

fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// The se(3) hat map: `skew(ω)` top-left, `t` in the last column.
pub fn wedge<T: Real>(xi: &Twist<T>) -> Matrix4<T> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&skew(&xi.rotation()));
    m.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&xi.translation());
    m
}

/// Coefficients `(sinθ/θ, (1−cosθ)/θ², (θ−sinθ)/θ³)`.
fn exp_coefficients<T: Real>(theta: T) -> (T, T, T) {
    if theta < T::of(SMALL_ANGLE) {
        let t2 = theta * theta;
        let series = |c: [f64; 4]| T::of(c[0]) + t2 * (T::of(c[1]) + t2 * (T::of(c[2]) + t2 * T::of(c[3])));
        (
            series([1.0, -1.0 / 6.0, 1.0 / 120.0, -1.0 / 5040.0]),
            series([0.5, -1.0 / 24.0, 1.0 / 720.0, -1.0 / 40320.0]),
            series([1.0 / 6.0, -1.0 / 120.0, 1.0 / 5040.0, -1.0 / 362880.0]),
        )
    } else {
        let t2 = theta * theta;
        (
            theta.sin() / theta,
            (T::one() - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

/// Closed-form exponential map (Rodrigues rotation, left Jacobian for the
/// translation).
pub fn exp<T: Real>(xi: &Twist<T>) -> RigidTransform<T> {
    let omega = xi.rotation();
    let theta = omega.norm();
    let k = skew(&omega);
    let k2 = k * k;
    let (a, b, c) = exp_coefficients(theta);
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let left_jacobian = Matrix3::identity() + k * b + k2 * c;
    RigidTransform::from_parts(rotation, left_jacobian * xi.translation())
}

/// Inverse of [`exp`] for rotation angles below `π − LOG_PI_MARGIN`.
pub fn log<T: Real>(g: &RigidTransform<T>) -> Result<Twist<T>> {
    let r = g.rotation();
    let asym = vee(&(r - r.transpose()));
    let sin_theta = asym.norm() * T::of(0.5);
    let cos_theta = (r.trace() - T::one()) * T::of(0.5);
    let theta = sin_theta.atan2(cos_theta);
    if theta > T::pi() - T::of(LOG_PI_MARGIN) {
        return Err(Error::IllConditioned(format!(
            "rotation angle {:.9} rad is too close to π",
            theta.as_f64()
        )));
    }
    let t2 = theta * theta;
    let (omega, inv_coeff) = if theta < T::of(SMALL_ANGLE) {
        let series = |c: [f64; 4]| T::of(c[0]) + t2 * (T::of(c[1]) + t2 * (T::of(c[2]) + t2 * T::of(c[3])));
        (
            asym * series([0.5, 1.0 / 12.0, 7.0 / 720.0, 31.0 / 30240.0]),
            series([1.0 / 12.0, 1.0 / 720.0, 1.0 / 30240.0, 1.0 / 1209600.0]),
        )
    } else {
        let omega = asym * (theta / (T::of(2.0) * theta.sin()));
        let d = (T::one() - theta * theta.sin() / (T::of(2.0) * (T::one() - theta.cos()))) / t2;
        (omega, d)
    };
    let k = skew(&omega);
    let v_inv = Matrix3::identity() - k * T::of(0.5) + k * k * inv_coeff;
    Twist::from_parts(omega, v_inv * g.translation())
}

/// Maps every point `p ↦ Rp + t`.
pub fn apply<T: Real>(g: &RigidTransform<T>, cloud: &PointCloud<T>) -> PointCloud<T> {
    PointCloud {
        points: cloud.points.iter().map(|p| g.apply_point(p)).collect(),
    }
}

/// Matrix product `a · b`, re-projected onto SO(3) if the rotation drifted.
pub fn compose<T: Real>(a: &RigidTransform<T>, b: &RigidTransform<T>) -> RigidTransform<T> {
    let m = a.matrix * b.matrix;
    RigidTransform::from_parts(
        m.fixed_view::<3, 3>(0, 0).into_owned(),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
    )
}

fn is_rotation<T: Real>(r: &Matrix3<T>, tol: T) -> bool {
    let ortho = r.transpose() * r - Matrix3::identity();
    ortho.iter().all(|v| v.abs() <= tol) && (r.determinant() - T::one()).abs() <= tol
}

/// Closest rotation in the Frobenius sense, with reflection correction.
pub fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    u * d * v_t
}

/// How the rotational part of [`registration_error`] is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationMetric {
    /// Angle of the relative rotation `R_gtᵀ R_est`.
    #[default]
    RelativeAngle,
    /// Mean absolute difference of ZYX Euler angles.
    EulerMeanAbs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationError<T> {
    pub rotation_deg: T,
    pub translation: T,
}

pub fn registration_error<T: Real>(
    gt: &RigidTransform<T>,
    est: &RigidTransform<T>,
) -> RegistrationError<T> {
    registration_error_with(gt, est, RotationMetric::RelativeAngle)
}

pub fn registration_error_with<T: Real>(
    gt: &RigidTransform<T>,
    est: &RigidTransform<T>,
    metric: RotationMetric,
) -> RegistrationError<T> {
    let rotation_deg = match metric {
        RotationMetric::RelativeAngle => {
            let rel = gt.rotation().transpose() * est.rotation();
            to_degrees(rotation_angle(&rel))
        }
        RotationMetric::EulerMeanAbs => {
            let a = euler_zyx(&gt.rotation());
            let b = euler_zyx(&est.rotation());
            let sum = (0..3).fold(T::zero(), |acc, i| {
                acc + wrap_angle(b[i] - a[i]).abs()
            });
            to_degrees(sum / T::of(3.0))
        }
    };
    RegistrationError {
        rotation_deg,
        translation: (est.translation() - gt.translation()).norm(),
    }
}

/// Rotation angle in `[0, π]`.
pub fn rotation_angle<T: Real>(r: &Matrix3<T>) -> T {
    let sin_theta = vee(&(r - r.transpose())).norm() * T::of(0.5);
    let cos_theta = (r.trace() - T::one()) * T::of(0.5);
    sin_theta.atan2(cos_theta)
}

fn to_degrees<T: Real>(rad: T) -> T {
    rad * T::of(180.0) / T::pi()
}

fn euler_zyx<T: Real>(r: &Matrix3<T>) -> [T; 3] {
    let pitch = (-r[(2, 0)]).max(-T::one()).min(T::one()).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    [yaw, pitch, roll]
}

fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut w = a % two_pi;
    if w > T::pi() {
        w -= two_pi;
    } else if w < -T::pi() {
        w += two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn twist(v: [f64; 6]) -> Twist<f64> {
        Twist::from_slice(&v).unwrap()
    }

    fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..max_angle);
        let t = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Twist::from_parts(axis * angle, t).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud<f64> {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    /// Truncated power series of the 4×4 matrix exponential.
    fn series_exp(m: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
        let mut sum = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..terms {
            term = term * m / k as f64;
            sum += term;
        }
        sum
    }

    fn max_abs_diff(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn wedge_of_zero_is_zero() {
        assert_eq!(wedge(&Twist::<f64>::zero()), Matrix4::zeros());
    }

    #[test]
    fn wedge_places_canonical_skew() {
        let m = wedge(&twist([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        assert_eq!(m[(0, 1)], -1.0);
        assert_eq!(m[(1, 0)], 1.0);
        let rot_block_others = [(0, 0), (0, 2), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)];
        assert!(rot_block_others.iter().all(|&ij| m[ij] == 0.0));
    }

    #[test]
    fn wedge_rotation_block_is_skew_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = wedge(&random_twist(&mut rng, 3.0));
            let r = m.fixed_view::<3, 3>(0, 0);
            assert_eq!(r + r.transpose(), Matrix3::zeros());
        }
    }

    #[test]
    fn non_finite_twist_rejected() {
        let err = Twist::from_slice(&[0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp(&Twist::<f64>::zero()), RigidTransform::identity());
    }

    #[test]
    fn exp_quarter_turn_matches_series() {
        let xi = twist([0.0, 0.0, PI / 2.0, 0.0, 0.0, 0.0]);
        let g = exp(&xi);
        let oracle = series_exp(&wedge(&xi), 30);
        assert!(max_abs_diff(g.matrix(), &oracle) < 1e-12);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((g.rotation() - expected).abs().max() < 1e-12);
        assert_eq!(g.translation(), Vector3::zeros());
    }

    #[test]
    fn exp_matches_series_for_random_twists() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let xi = random_twist(&mut rng, 2.0);
            let oracle = series_exp(&wedge(&xi), 30);
            assert!(max_abs_diff(exp(&xi).matrix(), &oracle) < 1e-10);
        }
    }

    #[test]
    fn exp_pure_translation() {
        let g = exp(&twist([0.0, 0.0, 0.0, 0.1, 0.2, 0.3]));
        assert_eq!(g.rotation(), Matrix3::identity());
        assert_eq!(g.translation(), Vector3::new(0.1, 0.2, 0.3));
    }

    #[test]
    fn exp_negated_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 3.0);
            let prod = compose(&exp(&xi), &exp(&xi.neg()));
            assert!(max_abs_diff(prod.matrix(), &Matrix4::identity()) < 1e-9);
            let inv = exp(&xi).inverse();
            assert!(max_abs_diff(exp(&xi.neg()).matrix(), inv.matrix()) < 1e-9);
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        let xi = log(&RigidTransform::<f64>::identity()).unwrap();
        assert_eq!(xi, Twist::zero());
    }

    #[test]
    fn log_recovers_twist() {
        let xi = twist([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let back = log(&exp(&xi)).unwrap();
        assert!((back.as_vector() - xi.as_vector()).norm() < 1e-9);
    }

    #[test]
    fn log_rejects_near_half_turn() {
        let g = RigidTransform::from_axis_angle(&Vector3::x(), 179.9999_f64.to_radians()).unwrap();
        assert!(matches!(log(&g), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn exp_log_round_trip_small_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let xi = random_twist(&mut rng, 1e-3);
            let back = log(&exp(&xi)).unwrap();
            let err = (back.as_vector() - xi.as_vector()).norm();
            assert!(err < 1e-12, "err {err} angle {}", xi.rotation().norm());
        }
    }

    #[test]
    fn apply_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_cloud(&mut rng, 10);
        assert_eq!(apply(&RigidTransform::identity(), &p), p);
        let origin = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let moved = apply(&RigidTransform::from_translation(Vector3::x()), &origin);
        assert_eq!(moved.points(), &[Vector3::new(1.0, 0.0, 0.0)]);
    }

    #[test]
    fn apply_then_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let g = exp(&random_twist(&mut rng, 3.0));
            let p = random_cloud(&mut rng, 50);
            let back = apply(&g, &apply(&g.inverse(), &p));
            for (a, b) in back.iter().zip(p.iter()) {
                assert!((a - b).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn compose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = exp(&random_twist(&mut rng, 3.0));
        assert_eq!(compose(&RigidTransform::identity(), &g), g);
        let prod = compose(&g, &g.inverse());
        assert!(max_abs_diff(prod.matrix(), &Matrix4::identity()) < 1e-9);
    }

    #[test]
    fn repeated_composition_stays_special_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = RigidTransform::identity();
        for _ in 0..20 {
            acc = compose(&acc, &exp(&random_twist(&mut rng, 3.0)));
            assert!((acc.rotation().determinant() - 1.0).abs() < 1e-7);
        }
        assert!(RigidTransform::new(*acc.matrix()).is_ok());
    }

    #[test]
    fn invalid_matrices_rejected() {
        let mut m = Matrix4::<f64>::identity();
        m[(3, 0)] = 1e-12;
        assert!(RigidTransform::new(m).is_err());
        let mut reflect = Matrix4::<f64>::identity();
        reflect[(2, 2)] = -1.0;
        assert!(RigidTransform::new(reflect).is_err());
    }

    #[test]
    fn empty_or_nan_clouds_rejected() {
        assert!(PointCloud::<f64>::new(vec![]).is_err());
        assert!(PointCloud::from_rows(&[[0.0, f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn registration_error_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = exp(&random_twist(&mut rng, 2.0));
        let e = registration_error(&gt, &gt);
        assert!(e.rotation_deg.abs() < 1e-6 && e.translation == 0.0);

        let extra = RigidTransform::from_axis_angle(&Vector3::z(), 10f64.to_radians()).unwrap();
        let est = compose(&gt, &extra);
        let e = registration_error(&gt, &est);
        assert!((e.rotation_deg - 10.0).abs() < 1e-6);
        assert!(e.translation < 1e-12);

        let shifted = RigidTransform::from_parts(
            gt.rotation(),
            gt.translation() + Vector3::new(0.3, 0.0, 0.4),
        );
        let e = registration_error(&gt, &shifted);
        assert!((e.translation - 0.5).abs() < 1e-12);
        assert!(e.rotation_deg.abs() < 1e-6);
    }

    #[test]
    fn euler_metric_on_single_axis_rotation() {
        let gt = RigidTransform::<f64>::identity();
        let est = RigidTransform::from_axis_angle(&Vector3::z(), 30f64.to_radians()).unwrap();
        let e = registration_error_with(&gt, &est, RotationMetric::EulerMeanAbs);
        assert!((e.rotation_deg - 10.0).abs() < 1e-9);
    }

    #[test]
    fn f32_instantiation_works() {
        let xi = Twist::<f32>::from_slice(&[0.1, -0.2, 0.3, 1.0, 2.0, 3.0]).unwrap();
        let g = exp(&xi);
        let back = log(&g).unwrap();
        assert!((back.as_vector() - xi.as_vector()).norm() < 1e-5);
        assert!(RigidTransform::new(*g.matrix()).is_ok());
    }
}
