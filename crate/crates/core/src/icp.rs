//! Point-to-point ICP with exhaustive nearest-neighbor search.
//!
//! Correspondence search scans every template point for every source point,
//! so one iteration costs `Θ(N²)`.

use std::cmp::Ordering;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{apply, compose, PointCloud, RigidTransform};
use crate::lk::{PhaseTimings, RegistrationResult};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the correspondence MSE changes by less than this (or falls
    /// below it).
    pub mse_change_tol: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            mse_change_tol: 1e-8,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(self.mse_change_tol >= 0.0 && self.mse_change_tol.is_finite()) {
            return Err(invalid("mse_change_tol must be finite and non-negative"));
        }
        Ok(())
    }
}

/// For each source point, the closest template point and its squared
/// distance. Ties go to the lowest template index.
pub fn nearest_neighbors<T: Real>(source: &PointCloud<T>, template: &PointCloud<T>) -> Vec<(usize, T)> {
    let targets = template.points();
    source
        .iter()
        .map(|s| {
            let mut best = (0, (targets[0] - s).norm_squared());
            for (i, t) in targets.iter().enumerate().skip(1) {
                let d = (t - s).norm_squared();
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .collect()
}

fn lexicographic<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]` (Kabsch).
///
/// Pairs are summed in a canonical order, so the result does not depend on
/// how the pairs were listed.
pub fn best_fit_transform<T: Real>(src: &[Vector3<T>], dst: &[Vector3<T>]) -> Result<RigidTransform<T>> {
    if src.len() != dst.len() {
        return Err(invalid(format!(
            "{} source points paired with {} targets",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "{} pairs; at least 3 are needed",
            src.len()
        )));
    }
    let mut order: Vec<usize> = (0..src.len()).collect();
    order.sort_by(|&i, &j| lexicographic(&src[i], &src[j]).then(lexicographic(&dst[i], &dst[j])));

    let n = T::of(src.len() as f64);
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for &i in &order {
        cs += src[i];
        cd += dst[i];
    }
    cs /= n;
    cd /= n;
    let mut h = Matrix3::zeros();
    for &i in &order {
        h += (src[i] - cs) * (dst[i] - cd).transpose();
    }

    let svd = h.svd(true, true);
    let mut sv: Vec<T> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    if sv[0] <= T::zero() || sv[1] <= T::of(1e-12) * sv[0] {
        return Err(Error::RankDeficient(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let u = svd.u.expect("svd requested u");
    let v = svd.v_t.expect("svd requested v_t").transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    let r = v * d * u.transpose();
    let t = cd - r * cs;
    Ok(RigidTransform::from_parts(r, t))
}

/// Aligns `source` onto `template`. `residual_history` holds the
/// correspondence MSE measured at the start of each iteration.
pub fn icp_register<T: Real>(
    template: &PointCloud<T>,
    source: &PointCloud<T>,
    cfg: &IcpConfig,
) -> Result<RegistrationResult<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = PhaseTimings::default();
    let tol = T::of(cfg.mse_change_tol);
    let mut current = source.clone();
    let mut transform = RigidTransform::identity();
    let mut history: Vec<T> = Vec::with_capacity(cfg.max_iterations);
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        let t0 = Instant::now();
        let pairs = nearest_neighbors(&current, template);
        timings.correspondence += t0.elapsed();

        let mse = pairs.iter().fold(T::zero(), |acc, (_, d)| acc + *d) / T::of(pairs.len() as f64);
        let settled = mse < tol || history.last().is_some_and(|prev| (*prev - mse).abs() < tol);
        history.push(mse);
        if settled {
            converged = true;
            break;
        }

        let t1 = Instant::now();
        let matched: Vec<Vector3<T>> = pairs.iter().map(|(i, _)| template.points()[*i]).collect();
        let step = best_fit_transform(current.points(), &matched)?;
        timings.solve += t1.elapsed();

        let t2 = Instant::now();
        current = apply(&step, &current);
        transform = compose(&step, &transform);
        timings.transform += t2.elapsed();
    }

    timings.total = start.elapsed();
    Ok(RegistrationResult {
        transform,
        iterations_used: history.len(),
        residual_history: history,
        converged,
        timings,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::registration_error;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn random_transform(rng: &mut ChaCha8Rng, angle: f64, shift: f64) -> RigidTransform<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let rot = RigidTransform::from_axis_angle(&axis, angle).unwrap();
        let t = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * shift;
        compose(&RigidTransform::from_translation(t), &rot)
    }

    /// Spatial-hash nearest neighbor: scans cubic shells of cells outward
    /// until no unvisited cell can hold a strictly closer point.
    fn grid_nearest(template: &[Vector3<f64>], query: &Vector3<f64>, h: f64) -> (usize, f64) {
        let key = |p: &Vector3<f64>| {
            (
                (p.x / h).floor() as i64,
                (p.y / h).floor() as i64,
                (p.z / h).floor() as i64,
            )
        };
        let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in template.iter().enumerate() {
            grid.entry(key(p)).or_default().push(i);
        }
        let c = key(query);
        let mut best: Option<(usize, f64)> = None;
        for r in 0i64.. {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let Some(cell) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) else {
                            continue;
                        };
                        for &i in cell {
                            let d = (template[i] - query).norm_squared();
                            let better = match best {
                                None => true,
                                Some((bi, bd)) => d < bd || (d == bd && i < bi),
                            };
                            if better {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
            let reach = r as f64 * h;
            if let Some(b) = best {
                if b.1 < reach * reach {
                    return b;
                }
            }
        }
        unreachable!()
    }

    #[test]
    fn nearest_neighbor_examples() {
        let src = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let tpl = PointCloud::from_rows(&[[1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(nearest_neighbors(&src, &tpl), vec![(1, 0.25)]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = PointCloud::new(random_points(&mut rng, 50)).unwrap();
        for (i, (j, d)) in nearest_neighbors(&cloud, &cloud).into_iter().enumerate() {
            assert_eq!((i, d), (j, 0.0));
        }
    }

    #[test]
    fn nearest_neighbor_ties_pick_lowest_index() {
        let src = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let tpl = PointCloud::from_rows(&[[0.0, 2.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(nearest_neighbors(&src, &tpl)[0].0, 1);
    }

    #[test]
    fn nearest_neighbors_match_spatial_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tpl = random_points(&mut rng, 200);
        let src = random_points(&mut rng, 200);
        let got = nearest_neighbors(
            &PointCloud::new(src.clone()).unwrap(),
            &PointCloud::new(tpl.clone()).unwrap(),
        );
        for (q, g) in src.iter().zip(&got) {
            assert_eq!(*g, grid_nearest(&tpl, q, 0.15));
        }
    }

    #[test]
    fn best_fit_recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let src = random_points(&mut rng, 4);
            let angle = rng.random_range(0.0..3.0);
            let g = random_transform(&mut rng, angle, 1.0);
            let dst: Vec<_> = src.iter().map(|p| g.apply_point(p)).collect();
            let est = best_fit_transform(&src, &dst).unwrap();
            let diff = (est.matrix() - g.matrix()).abs().max();
            assert!(diff < 1e-9, "{diff}");
        }
        let src = random_points(&mut rng, 5);
        let est = best_fit_transform(&src, &src).unwrap();
        assert!((est.matrix() - RigidTransform::<f64>::identity().matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn best_fit_never_returns_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_points(&mut rng, 10);
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let est = best_fit_transform(&src, &dst).unwrap();
        assert!((est.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn best_fit_rejects_degenerate_pairs() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(best_fit_transform(&line, &line), Err(Error::RankDeficient(_))));
        let two = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        assert!(matches!(best_fit_transform(&two, &two), Err(Error::RankDeficient(_))));
        let same = vec![Vector3::new(0.3, 0.3, 0.3); 6];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spread = random_points(&mut rng, 6);
        assert!(best_fit_transform(&spread, &same).is_err());
    }

    #[test]
    fn best_fit_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = random_points(&mut rng, 30);
        let dst = random_points(&mut rng, 30);
        let base = best_fit_transform(&src, &dst).unwrap();
        for _ in 0..20 {
            let mut idx: Vec<usize> = (0..30).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let s: Vec<_> = idx.iter().map(|&i| src[i]).collect();
            let d: Vec<_> = idx.iter().map(|&i| dst[i]).collect();
            assert_eq!(best_fit_transform(&s, &d).unwrap(), base);
        }
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = PointCloud::new(random_points(&mut rng, 100)).unwrap();
        let res = icp_register(&cloud, &cloud, &IcpConfig::default()).unwrap();
        assert_eq!(res.iterations_used, 1);
        assert!(res.converged);
        assert!((res.transform.matrix() - RigidTransform::<f64>::identity().matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn small_rotation_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let template = PointCloud::new(random_points(&mut rng, 100)).unwrap();
        let gt = random_transform(&mut rng, 5f64.to_radians(), 0.0);
        let source = apply(&gt.inverse(), &template);
        let res = icp_register(&template, &source, &IcpConfig::default()).unwrap();
        assert!(res.iterations_used <= 20);
        let err = registration_error(&gt, &res.transform);
        assert!(err.rotation_deg < 0.5, "{err:?}");
    }

    #[test]
    fn mse_history_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let template = PointCloud::new(random_points(&mut rng, 60)).unwrap();
            let angle = rng.random_range(0.0..1.0);
            let gt = random_transform(&mut rng, angle, 0.2);
            let source = apply(&gt, &template);
            let res = icp_register(&template, &source, &IcpConfig::default()).unwrap();
            for w in res.residual_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{:?}", res.residual_history);
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = IcpConfig {
            max_iterations: 0,
            ..IcpConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: IcpConfig = toml::from_str("max_iterations = 5").unwrap();
        assert_eq!(parsed.max_iterations, 5);
        assert_eq!(parsed.mse_change_tol, 1e-8);
    }
}
