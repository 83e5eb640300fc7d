//! Procedural OFF corpus of simple closed shapes, for runs without a
//! ModelNet download.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::off::{write_off_mesh, Mesh};
use crate::error::{invalid, Result};

pub const SHAPES: [&str; 5] = ["ellipsoid", "torus", "cylinder", "cone", "box"];

/// Triangulated `rows × cols` parametric grid wrapped in `u`.
fn grid_mesh(rows: usize, cols: usize, f: impl Fn(f64, f64) -> Vector3<f64>, wrap_v: bool) -> Mesh {
    let v_steps = if wrap_v { rows } else { rows - 1 };
    let mut vertices = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            vertices.push(f(c as f64 / cols as f64, r as f64 / v_steps as f64));
        }
    }
    let mut faces = Vec::new();
    let last = if wrap_v { rows } else { rows - 1 };
    for r in 0..last {
        for c in 0..cols {
            let a = r * cols + c;
            let b = r * cols + (c + 1) % cols;
            let d = ((r + 1) % rows) * cols + c;
            let e = ((r + 1) % rows) * cols + (c + 1) % cols;
            faces.push(vec![a, b, e]);
            faces.push(vec![a, e, d]);
        }
    }
    Mesh { vertices, faces }
}

/// One mesh of the named family with random proportions.
pub fn shape_mesh(kind: &str, rng: &mut ChaCha8Rng) -> Result<Mesh> {
    let mut s = || rng.random_range(0.5..1.5);
    let (a, b, c) = (s(), s(), s());
    let (rows, cols) = (24, 40);
    let mesh = match kind {
        "ellipsoid" => grid_mesh(
            rows,
            cols,
            |u, v| {
                let (th, ph) = (u * TAU, (v * 0.98 + 0.01) * std::f64::consts::PI);
                Vector3::new(a * ph.sin() * th.cos(), b * ph.sin() * th.sin(), c * ph.cos())
            },
            false,
        ),
        "torus" => {
            let minor = 0.2 + 0.25 * b / 1.5;
            grid_mesh(
                rows,
                cols,
                |u, v| {
                    let (th, ph) = (u * TAU, v * TAU);
                    let ring = a + minor * ph.cos();
                    Vector3::new(ring * th.cos(), ring * th.sin(), minor * ph.sin() * c)
                },
                true,
            )
        }
        "cylinder" => grid_mesh(
            rows,
            cols,
            |u, v| {
                let th = u * TAU;
                Vector3::new(a * th.cos(), b * th.sin(), c * 2.0 * (v - 0.5))
            },
            false,
        ),
        "cone" => grid_mesh(
            rows,
            cols,
            |u, v| {
                let th = u * TAU;
                let r = 1.0 - 0.95 * v;
                Vector3::new(a * r * th.cos(), b * r * th.sin(), c * 2.0 * v)
            },
            false,
        ),
        "box" => {
            // Six subdivided faces; shared edges are duplicated, which is
            // harmless for point sampling.
            let n = 12;
            let mut vertices = Vec::new();
            let mut faces = Vec::new();
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let base = vertices.len();
                    for i in 0..=n {
                        for j in 0..=n {
                            let (p, q) = (i as f64 / n as f64 - 0.5, j as f64 / n as f64 - 0.5);
                            let mut v = Vector3::zeros();
                            v[axis] = 0.5 * sign;
                            v[(axis + 1) % 3] = p;
                            v[(axis + 2) % 3] = q;
                            vertices.push(v.component_mul(&Vector3::new(a, b, c)));
                        }
                    }
                    for i in 0..n {
                        for j in 0..n {
                            let k = base + i * (n + 1) + j;
                            faces.push(vec![k, k + n + 1, k + n + 2, k + 1]);
                        }
                    }
                }
            }
            Mesh { vertices, faces }
        }
        other => return Err(invalid(format!("unknown shape {other:?}"))),
    };
    Ok(mesh)
}

/// Writes `count` meshes cycling through [`SHAPES`] into `dir`.
pub fn generate_corpus(dir: &Path, count: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = SHAPES[i % SHAPES.len()];
            let mesh = shape_mesh(kind, &mut rng)?;
            let path = dir.join(format!("{i:03}_{kind}.off"));
            write_off_mesh(&path, &mesh)?;
            Ok(path)
        })
        .collect()
}

/// `.off` files in `dir`, sorted by name.
pub fn list_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("off")))
        .collect();
    out.sort();
    Ok(out)
}
