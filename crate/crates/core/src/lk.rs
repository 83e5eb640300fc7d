//! PointNetLK pose iteration.
//!
//! The template's feature Jacobian is finite-differenced once; every
//! iteration then costs one feature extraction of the moving source, a
//! `6×K` pseudo-inverse product, and a rigid update.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fixedpoint::QuantizedPointNet;
use crate::geometry::{apply, compose, exp, PointCloud, RigidTransform, Twist};
use crate::pointnet::{global_feature, PointNetParams};
use crate::scalar::Real;

/// Anything that maps a cloud to a fixed-length feature vector.
pub trait FeatureMap<T: Real> {
    fn feature_dim(&self) -> usize;
    fn feature(&self, cloud: &PointCloud<T>) -> Result<Vec<T>>;
}

impl<T: Real, F: FeatureMap<T> + ?Sized> FeatureMap<T> for &F {
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn feature(&self, cloud: &PointCloud<T>) -> Result<Vec<T>> {
        (**self).feature(cloud)
    }
}

impl<T: Real> FeatureMap<T> for PointNetParams<T> {
    fn feature_dim(&self) -> usize {
        crate::pointnet::FEATURE_DIM
    }
    fn feature(&self, cloud: &PointCloud<T>) -> Result<Vec<T>> {
        Ok(global_feature(self, cloud)?.into_values())
    }
}

impl<T: Real> FeatureMap<T> for QuantizedPointNet {
    fn feature_dim(&self) -> usize {
        crate::pointnet::FEATURE_DIM
    }
    fn feature(&self, cloud: &PointCloud<T>) -> Result<Vec<T>> {
        let (phi, _) = self.global_feature(cloud);
        Ok(phi.into_values().into_iter().map(T::of).collect())
    }
}

/// `φ(P) = mean(P)`. A linear stand-in whose Jacobian is known in closed
/// form.
#[derive(Debug, Clone, Copy, Default)]
pub struct CentroidFeature;

impl<T: Real> FeatureMap<T> for CentroidFeature {
    fn feature_dim(&self) -> usize {
        3
    }
    fn feature(&self, cloud: &PointCloud<T>) -> Result<Vec<T>> {
        Ok(cloud.centroid().as_slice().to_vec())
    }
}

/// Wraps a feature map and counts invocations.
#[derive(Debug, Default)]
pub struct CountingFeature<F> {
    inner: F,
    calls: AtomicUsize,
}

impl<F> CountingFeature<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<T: Real, F: FeatureMap<T>> FeatureMap<T> for CountingFeature<F> {
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }
    fn feature(&self, cloud: &PointCloud<T>) -> Result<Vec<T>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.feature(cloud)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferenceScheme {
    /// `(φ(exp(−tᵢeᵢ)·P) − φ(P)) / tᵢ`
    #[default]
    Forward,
    /// `(φ(exp(−tᵢeᵢ)·P) − φ(exp(tᵢeᵢ)·P)) / 2tᵢ`
    Central,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LkConfig {
    pub max_iterations: usize,
    /// Finite-difference step per twist direction, `[ω; t]` order.
    pub perturbation: [f64; 6],
    /// Stop once `‖ξ‖` falls below this. Zero runs every iteration.
    pub convergence_tol: f64,
    pub difference: DifferenceScheme,
    /// Singular values below `svd_cutoff · σ_max` are treated as zero.
    pub svd_cutoff: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            perturbation: [1e-2; 6],
            convergence_tol: 1e-7,
            difference: DifferenceScheme::Forward,
            svd_cutoff: 1e-10,
        }
    }
}

impl LkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be ≥ 1"));
        }
        if self.perturbation.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(invalid("perturbations must be positive and finite"));
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return Err(invalid("convergence_tol must be finite and ≥ 0"));
        }
        if !(self.svd_cutoff >= 0.0) {
            return Err(invalid("svd_cutoff must be ≥ 0"));
        }
        Ok(())
    }
}

/// Wall-clock time per phase. Feature evaluations made while building the
/// Jacobian are booked under `feature`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub feature: Duration,
    pub jacobian: Duration,
    pub correspondence: Duration,
    pub solve: Duration,
    pub transform: Duration,
    pub total: Duration,
}

impl PhaseTimings {
    pub fn phase_sum(&self) -> Duration {
        self.feature + self.jacobian + self.correspondence + self.solve + self.transform
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Warning {
    /// The template feature is identically zero.
    DegenerateTemplateFeature,
    RankDeficientJacobian { rank: usize },
}

/// Outcome of an iterative registration (PointNetLK or ICP).
#[derive(Debug, Clone)]
pub struct RegistrationResult<T: Real> {
    /// Estimated transform mapping the source onto the template.
    pub transform: RigidTransform<T>,
    pub iterations_used: usize,
    /// Feature residual norm (LK) or correspondence MSE (ICP), one entry per
    /// iteration.
    pub residual_history: Vec<T>,
    pub converged: bool,
    pub timings: PhaseTimings,
    pub warnings: Vec<Warning>,
}

pub type LkResult<T> = RegistrationResult<T>;

#[derive(Debug, Clone)]
pub struct Jacobian<T: Real> {
    /// `K × 6`.
    pub matrix: DMatrix<T>,
    /// `φ(P_T)`.
    pub base_feature: Vec<T>,
    pub degenerate: bool,
}

fn timed<R>(slot: &mut Duration, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let r = f();
    *slot += start.elapsed();
    r
}

fn checked_feature<T: Real, F: FeatureMap<T>>(
    feature_fn: &F,
    cloud: &PointCloud<T>,
    iteration: usize,
) -> Result<Vec<T>> {
    let phi = feature_fn.feature(cloud)?;
    if phi.iter().all(|v| v.is_finite()) {
        Ok(phi)
    } else {
        Err(Error::NonFiniteFeature { iteration })
    }
}

pub fn compute_jacobian<T: Real, F: FeatureMap<T>>(
    feature_fn: &F,
    template: &PointCloud<T>,
    cfg: &LkConfig,
) -> Result<Jacobian<T>> {
    compute_jacobian_timed(feature_fn, template, cfg, &mut PhaseTimings::default())
}

fn compute_jacobian_timed<T: Real, F: FeatureMap<T>>(
    feature_fn: &F,
    template: &PointCloud<T>,
    cfg: &LkConfig,
    timings: &mut PhaseTimings,
) -> Result<Jacobian<T>> {
    cfg.validate()?;
    let k = feature_fn.feature_dim();
    let base = timed(&mut timings.feature, || checked_feature(feature_fn, template, 0))?;
    if base.len() != k {
        return Err(invalid(format!(
            "feature map returned {} values, declared {k}",
            base.len()
        )));
    }
    let mut matrix = DMatrix::<T>::zeros(k, 6);
    for i in 0..6 {
        let step = T::of(cfg.perturbation[i]);
        let minus = timed(&mut timings.jacobian, || {
            apply(&exp(&Twist::basis(i, -step)), template)
        });
        let phi_minus = timed(&mut timings.feature, || checked_feature(feature_fn, &minus, 0))?;
        let (reference, scale) = match cfg.difference {
            DifferenceScheme::Forward => (None, step),
            DifferenceScheme::Central => {
                let plus = timed(&mut timings.jacobian, || {
                    apply(&exp(&Twist::basis(i, step)), template)
                });
                let phi_plus =
                    timed(&mut timings.feature, || checked_feature(feature_fn, &plus, 0))?;
                (Some(phi_plus), step + step)
            }
        };
        timed(&mut timings.jacobian, || {
            let reference = reference.as_deref().unwrap_or(&base);
            for row in 0..k {
                matrix[(row, i)] = (phi_minus[row] - reference[row]) / scale;
            }
        });
    }
    let degenerate = base.iter().all(|v| *v == T::zero());
    Ok(Jacobian {
        matrix,
        base_feature: base,
        degenerate,
    })
}

/// `J†` from a thresholded SVD, reusable across iterations.
#[derive(Debug, Clone)]
pub struct PseudoInverse<T: Real> {
    /// `6 × K`.
    matrix: DMatrix<T>,
    rank: usize,
}

impl<T: Real> PseudoInverse<T> {
    pub fn new(j: &DMatrix<T>, relative_cutoff: T) -> Result<Self> {
        if j.ncols() != 6 {
            return Err(invalid(format!("jacobian has {} columns, expected 6", j.ncols())));
        }
        if !j.iter().all(|v| v.is_finite()) {
            return Err(invalid("jacobian has non-finite entries"));
        }
        let svd = j.clone().svd(true, true);
        let sigma_max = svd.singular_values.iter().fold(T::zero(), |m, s| m.max(*s));
        let u = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        let mut matrix = DMatrix::zeros(6, j.nrows());
        let mut rank = 0;
        if sigma_max > T::zero() {
            let threshold = relative_cutoff * sigma_max;
            for (idx, s) in svd.singular_values.iter().enumerate() {
                if *s > threshold {
                    rank += 1;
                    let v_col = v_t.row(idx).transpose();
                    let u_col = u.column(idx);
                    matrix += (v_col * u_col.transpose()) / *s;
                }
            }
        }
        Ok(Self { matrix, rank })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank < 6
    }

    pub fn solve(&self, residual: &[T]) -> Result<Twist<T>> {
        if residual.len() != self.matrix.ncols() {
            return Err(invalid(format!(
                "residual has {} entries, jacobian has {} rows",
                residual.len(),
                self.matrix.ncols()
            )));
        }
        let xi: DVector<T> = &self.matrix * DVector::from_column_slice(residual);
        Twist::new(Vector6::from_iterator(xi.iter().copied()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistSolution<T: Real> {
    pub twist: Twist<T>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimum-norm least-squares `ξ = J†r`.
pub fn solve_twist<T: Real>(j: &DMatrix<T>, residual: &[T], relative_cutoff: T) -> Result<TwistSolution<T>> {
    let pinv = PseudoInverse::new(j, relative_cutoff)?;
    Ok(TwistSolution {
        twist: pinv.solve(residual)?,
        rank: pinv.rank(),
        rank_deficient: pinv.rank_deficient(),
    })
}

/// Estimates the transform carrying `source` onto `template`.
pub fn register<T: Real, F: FeatureMap<T>>(
    feature_fn: &F,
    template: &PointCloud<T>,
    source: &PointCloud<T>,
    cfg: &LkConfig,
) -> Result<LkResult<T>> {
    let start = Instant::now();
    let mut timings = PhaseTimings::default();
    let mut warnings = Vec::new();

    let jacobian = compute_jacobian_timed(feature_fn, template, cfg, &mut timings)?;
    if jacobian.degenerate {
        warnings.push(Warning::DegenerateTemplateFeature);
    }
    let pinv = timed(&mut timings.solve, || {
        PseudoInverse::new(&jacobian.matrix, T::of(cfg.svd_cutoff))
    })?;
    if pinv.rank_deficient() {
        warnings.push(Warning::RankDeficientJacobian { rank: pinv.rank() });
    }

    let tol = T::of(cfg.convergence_tol);
    let mut current = source.clone();
    let mut transform = RigidTransform::identity();
    let mut residual_history = Vec::with_capacity(cfg.max_iterations);
    let mut converged = false;
    let mut residual = vec![T::zero(); jacobian.base_feature.len()];

    for iteration in 1..=cfg.max_iterations {
        let phi = timed(&mut timings.feature, || {
            checked_feature(feature_fn, &current, iteration)
        })?;
        let xi = timed(&mut timings.solve, || {
            for ((r, s), t) in residual.iter_mut().zip(&phi).zip(&jacobian.base_feature) {
                *r = *s - *t;
            }
            residual_history.push(DVector::from_column_slice(&residual).norm());
            pinv.solve(&residual)
        })?;
        timed(&mut timings.transform, || {
            let delta = exp(&xi);
            current = apply(&delta, &current);
            transform = compose(&delta, &transform);
        });
        if xi.norm() < tol {
            converged = true;
            break;
        }
    }

    timings.total = start.elapsed();
    Ok(LkResult {
        transform,
        iterations_used: residual_history.len(),
        residual_history,
        converged,
        timings,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{log, skew};
    use nalgebra::{Matrix3, Vector3};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud<f64> {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    /// d/dξ mean(exp(−ξ)·P) at ξ = 0 is `[skew(c), −I]`.
    fn centroid_jacobian(c: &Vector3<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3, 6);
        j.view_mut((0, 0), (3, 3)).copy_from(&skew(c));
        j.view_mut((0, 3), (3, 3)).copy_from(&(-Matrix3::identity()));
        j
    }

    fn rotation_error(t: f64, template: &PointCloud<f64>) -> f64 {
        let cfg = LkConfig {
            perturbation: [t; 6],
            ..LkConfig::default()
        };
        let j = compute_jacobian(&CentroidFeature, template, &cfg).unwrap();
        (j.matrix - centroid_jacobian(&template.centroid())).abs().max()
    }

    #[test]
    fn centroid_jacobian_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut template = random_cloud(&mut rng, 30);
        template = apply(&RigidTransform::from_translation(Vector3::new(0.4, -0.2, 0.3)), &template);
        let t = 1e-2;
        let err = rotation_error(t, &template);
        assert!(err < t, "error {err}");
        let ratio = rotation_error(t, &template) / rotation_error(t / 2.0, &template);
        assert!((ratio - 2.0).abs() < 0.05, "Richardson ratio {ratio}");
    }

    #[test]
    fn single_origin_point_translation_columns() {
        let template = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let j = compute_jacobian(&CentroidFeature, &template, &LkConfig::default()).unwrap();
        let expected = centroid_jacobian(&Vector3::zeros());
        assert!((j.matrix - expected).abs().max() < 1e-12);
        assert!(j.degenerate);
    }

    #[test]
    fn central_differences_are_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let template = apply(
            &RigidTransform::from_translation(Vector3::new(0.3, 0.3, 0.3)),
            &random_cloud(&mut rng, 20),
        );
        let analytic = centroid_jacobian(&template.centroid());
        let err = |t: f64| {
            let cfg = LkConfig {
                perturbation: [t; 6],
                difference: DifferenceScheme::Central,
                ..LkConfig::default()
            };
            (compute_jacobian(&CentroidFeature, &template, &cfg).unwrap().matrix - &analytic)
                .abs()
                .max()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn solve_recovers_twist_for_orthonormal_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let a = DMatrix::from_fn(40, 6, |_, _| rng.random_range(-1.0..1.0));
        let q = a.qr().q();
        let xi0 = Vector6::new(0.1, -0.2, 0.3, 0.05, 0.5, -0.7);
        let r = &q * DVector::from_column_slice(xi0.as_slice());
        let sol = solve_twist(&q, r.as_slice(), 1e-10).unwrap();
        assert!((sol.twist.as_vector() - xi0).norm() < 1e-9);
        assert!(!sol.rank_deficient);
    }

    #[test]
    fn solve_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let j = DMatrix::from_fn(10, 6, |_, _| rng.random_range(-1.0..1.0));
        let sol = solve_twist(&j, &[0.0; 10], 1e-10).unwrap();
        assert_eq!(sol.twist, Twist::zero());

        let sol = solve_twist(&DMatrix::<f64>::zeros(10, 6), &[1.0; 10], 1e-10).unwrap();
        assert_eq!(sol.twist, Twist::zero());
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 0);

        let mut bad = j.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(solve_twist(&bad, &[0.0; 10], 1e-10).is_err());
    }

    #[test]
    fn solve_is_minimum_norm_when_rank_deficient() {
        let mut j = DMatrix::<f64>::zeros(3, 6);
        j.view_mut((0, 3), (3, 3)).copy_from(&(-Matrix3::identity()));
        let sol = solve_twist(&j, &[0.1, 0.0, 0.0], 1e-10).unwrap();
        let expected = Vector6::new(0.0, 0.0, 0.0, -0.1, 0.0, 0.0);
        assert!((sol.twist.as_vector() - expected).norm() < 1e-15);
        assert_eq!(sol.rank, 3);
    }

    #[test]
    fn register_identity_converges_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let params = crate::pointnet::random_params(45);
        let cloud = random_cloud(&mut rng, 64);
        let counted = CountingFeature::new(&params);
        let res = register(&counted, &cloud, &cloud, &LkConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations_used, 1);
        assert_eq!(res.residual_history, vec![0.0]);
        assert!((res.transform.matrix() - nalgebra::Matrix4::identity()).abs().max() < 1e-5);
        assert_eq!(counted.calls(), 7 + 1);
    }

    #[test]
    fn centroid_stub_recovers_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let raw = random_cloud(&mut rng, 100);
        let c = raw.centroid();
        let template = apply(&RigidTransform::from_translation(-c), &raw);
        let offset = Vector3::new(0.1, 0.0, 0.0);
        let source = apply(&RigidTransform::from_translation(offset), &template);
        let counted = CountingFeature::new(CentroidFeature);
        let res = register(&counted, &template, &source, &LkConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations_used <= 5);
        assert!((res.transform.translation() + offset).norm() < 1e-4);
        assert_eq!(counted.calls(), 7 + res.iterations_used);
        for w in res.residual_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(log(&res.transform).unwrap().rotation().norm() < 1e-9);
    }

    #[test]
    fn non_finite_feature_aborts_with_iteration() {
        struct Poisoned(AtomicUsize);
        impl FeatureMap<f64> for Poisoned {
            fn feature_dim(&self) -> usize {
                3
            }
            fn feature(&self, cloud: &PointCloud<f64>) -> Result<Vec<f64>> {
                let call = self.0.fetch_add(1, Ordering::Relaxed);
                if call >= 9 {
                    Ok(vec![f64::NAN; 3])
                } else {
                    CentroidFeature.feature(cloud)
                }
            }
        }
        let template = PointCloud::from_rows(&[[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]]).unwrap();
        let source = apply(&exp(&Twist::from_slice(&[0.3, 0.2, 0.1, 0.1, 0.1, 0.1]).unwrap()), &template);
        let cfg = LkConfig {
            max_iterations: 20,
            ..LkConfig::default()
        };
        match register(&Poisoned(AtomicUsize::new(0)), &template, &source, &cfg) {
            Err(Error::NonFiniteFeature { iteration }) => assert_eq!(iteration, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(LkConfig::default().validate().is_ok());
        let mut cfg = LkConfig::default();
        cfg.max_iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = LkConfig::default();
        cfg.perturbation[2] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = LkConfig::default();
        cfg.convergence_tol = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn runs_in_single_precision() {
        let template = PointCloud::<f32>::from_rows(&[[0.1, -0.2, 0.05], [-0.1, 0.2, -0.05], [0.0, 0.0, 0.1]]).unwrap();
        let template = apply(&RigidTransform::from_translation(-template.centroid()), &template);
        let source = apply(&RigidTransform::from_translation(Vector3::new(0.0, 0.05, 0.0)), &template);
        let cfg = LkConfig {
            convergence_tol: 1e-5,
            ..LkConfig::default()
        };
        let res = register(&CentroidFeature, &template, &source, &cfg).unwrap();
        assert!((res.transform.translation().y + 0.05).abs() < 1e-4);
    }
}
