//! ASCII OFF meshes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::PointCloud;

/// Vertices and polygonal faces (vertex index lists).
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<Vec<usize>>,
}

impl Mesh {
    pub fn to_cloud(&self) -> Result<PointCloud<f64>> {
        PointCloud::new(self.vertices.clone())
    }
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-blank, non-comment line with its 1-based number.
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                return Some((i + 1, body));
            }
        }
        None
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn parse_all<T: std::str::FromStr>(text: &str) -> Option<Vec<T>> {
    text.split_whitespace().map(|t| t.parse().ok()).collect()
}

/// Parses OFF text. `path` is only used in error messages.
pub fn parse_off(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
    };
    let (first, header) = lines
        .next_content()
        .ok_or_else(|| lines.error(1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| lines.error(first, "missing OFF header"))?
        .trim();
    // Some exporters glue the counts onto the header line.
    let (count_line, counts) = if rest.is_empty() {
        let (n, l) = lines
            .next_content()
            .ok_or_else(|| lines.error(first + 1, "missing element counts"))?;
        (n, l)
    } else {
        (first, rest)
    };
    let counts: Vec<usize> = parse_all(counts)
        .filter(|c: &Vec<usize>| c.len() == 3 || c.len() == 2)
        .ok_or_else(|| lines.error(count_line, "expected vertex, face and edge counts"))?;
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for v in 0..nv {
        let (ln, line) = lines
            .next_content()
            .ok_or_else(|| lines.error(count_line, format!("header declares {nv} vertices, found {v}")))?;
        let coords: Vec<f64> = parse_all(line)
            .filter(|c: &Vec<f64>| c.len() >= 3 && c.iter().all(|x| x.is_finite()))
            .ok_or_else(|| lines.error(ln, "expected three finite coordinates"))?;
        vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
    }

    let mut faces = Vec::with_capacity(nf);
    for f in 0..nf {
        let (ln, line) = lines
            .next_content()
            .ok_or_else(|| lines.error(count_line, format!("header declares {nf} faces, found {f}")))?;
        let idx: Vec<usize> = parse_all(line).ok_or_else(|| lines.error(ln, "face entries must be integers"))?;
        let k = *idx.first().ok_or_else(|| lines.error(ln, "empty face"))?;
        if idx.len() < k + 1 || idx[1..=k].iter().any(|i| *i >= nv) {
            return Err(lines.error(ln, "face references missing vertices"));
        }
        faces.push(idx[1..=k].to_vec());
    }
    if let Some((ln, _)) = lines.next_content() {
        return Err(lines.error(
            ln,
            format!("unexpected content after {nv} vertices and {nf} faces"),
        ));
    }
    Ok(Mesh { vertices, faces })
}

pub fn load_off_mesh(path: &Path) -> Result<Mesh> {
    parse_off(&std::fs::read_to_string(path)?, path)
}

/// Loads the vertices of an OFF mesh as a point cloud; faces are ignored.
pub fn load_off(path: &Path) -> Result<PointCloud<f64>> {
    let mesh = load_off_mesh(path)?;
    if mesh.vertices.is_empty() {
        return Err(Error::Parse {
            path: PathBuf::from(path),
            line: 1,
            message: "mesh has no vertices".into(),
        });
    }
    mesh.to_cloud()
}

/// Coordinates are written in shortest round-trip form, so reading back
/// is exact.
pub fn off_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF\n{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = write!(s, "{}", f.len());
        for i in f {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
    }
    s
}

pub fn write_off_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, off_string(mesh))?;
    Ok(())
}

pub fn write_off(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    write_off_mesh(
        path,
        &Mesh {
            vertices: cloud.points().to_vec(),
            faces: Vec::new(),
        },
    )
}

/// Area-weighted uniform samples on the mesh surface. Polygons are fanned
/// into triangles.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud<f64>> {
    if n == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let tris: Vec<[Vector3<f64>; 3]> = mesh
        .faces
        .iter()
        .flat_map(|f| {
            (1..f.len().saturating_sub(1)).map(move |i| {
                [
                    mesh.vertices[f[0]],
                    mesh.vertices[f[i]],
                    mesh.vertices[f[i + 1]],
                ]
            })
        })
        .collect();
    let areas: Vec<f64> = tris
        .iter()
        .map(|[a, b, c]| 0.5 * (b - a).cross(&(c - a)).norm())
        .collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| invalid("mesh has no surface area"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let [a, b, c] = tris[pick.sample(&mut rng)];
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect();
    PointCloud::new(points)
}
