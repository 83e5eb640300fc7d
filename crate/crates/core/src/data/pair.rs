//! Unit-cube normalization, resampling and perturbed pair generation.

use nalgebra::Vector3;
use rand::seq::index;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{apply, compose, PointCloud, RigidTransform};
use crate::scalar::Real;

/// Translates and uniformly scales so the bounding box sits in `[0,1]³` with
/// its longest side exactly 1. Axes with zero extent are centered at 0.5.
pub fn normalize_unit_cube<T: Real>(cloud: &PointCloud<T>) -> PointCloud<T> {
    let mut lo = cloud.points()[0];
    let mut hi = lo;
    for p in cloud.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = hi - lo;
    let side = extent.max();
    let half = T::of(0.5);
    let points = cloud
        .iter()
        .map(|p| {
            Vector3::from_fn(|i, _| {
                if extent[i] == T::zero() {
                    half
                } else {
                    (p[i] - lo[i]) / side
                }
            })
        })
        .collect();
    PointCloud::new(points).expect("normalized coordinates stay finite")
}

/// Indices picked by [`resample`].
pub fn resample_indices(len: usize, target: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use std::cmp::Ordering::*;
    match len.cmp(&target) {
        Equal => (0..len).collect(),
        Greater => index::sample(rng, len, target).into_vec(),
        Less => (0..len)
            .chain((len..target).map(|_| rng.random_range(0..len)))
            .collect(),
    }
}

/// Random subset without replacement when shrinking; when growing, every
/// original point is kept and the rest are drawn with replacement.
pub fn resample<T: Real>(cloud: &PointCloud<T>, target: usize, seed: u64) -> Result<PointCloud<T>> {
    if target == 0 {
        return Err(invalid("resample target must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(select(cloud, &resample_indices(cloud.len(), target, &mut rng)))
}

fn select<T: Real>(cloud: &PointCloud<T>, idx: &[usize]) -> PointCloud<T> {
    PointCloud::new(idx.iter().map(|&i| cloud.points()[i]).collect()).expect("subset of a valid cloud")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    /// Template and source draw separate random subsets.
    #[default]
    Independent,
    /// Both use the same indices, so points correspond one to one.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    pub initial_angle_deg: f64,
    /// Translation components are drawn from `[0, bound)`.
    pub translation_bound: f64,
    pub seed: u64,
    pub n_points: usize,
    pub resampling: Resampling,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            initial_angle_deg: 0.0,
            translation_bound: 0.3,
            seed: 0,
            n_points: 1024,
            resampling: Resampling::Independent,
        }
    }
}

impl PairSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=90.0).contains(&self.initial_angle_deg) {
            return Err(invalid(format!(
                "initial angle {} outside [0, 90] degrees",
                self.initial_angle_deg
            )));
        }
        if !(self.translation_bound >= 0.0 && self.translation_bound.is_finite()) {
            return Err(invalid("translation bound must be finite and non-negative"));
        }
        if self.n_points == 0 {
            return Err(invalid("n_points must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub template: PointCloud<f64>,
    pub source: PointCloud<f64>,
    /// Maps the source onto the template.
    pub gt: RigidTransform<f64>,
}

/// Rotates the template by exactly `initial_angle_deg` about a uniformly
/// random axis through the origin, then translates it; the result is the
/// source. Both clouds are resampled to `n_points`.
pub fn make_pair(template: &PointCloud<f64>, spec: &PairSpec) -> Result<Pair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let axis = loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-9 {
            break v.normalize();
        }
    };
    let rotation = RigidTransform::from_axis_angle(&axis, spec.initial_angle_deg.to_radians())?;
    let translation = Vector3::from_fn(|_, _| rng.random::<f64>() * spec.translation_bound);
    let perturb = compose(&RigidTransform::from_translation(translation), &rotation);
    let moved = apply(&perturb, template);

    let t_idx = resample_indices(template.len(), spec.n_points, &mut rng);
    let s_idx = match spec.resampling {
        Resampling::Shared => t_idx.clone(),
        Resampling::Independent => resample_indices(template.len(), spec.n_points, &mut rng),
    };
    Ok(Pair {
        template: select(template, &t_idx),
        source: select(&moved, &s_idx),
        gt: perturb.inverse(),
    })
}
