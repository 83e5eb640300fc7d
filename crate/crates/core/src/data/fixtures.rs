//! CSV test vectors: clouds as `x,y,z` rows, vectors as a single `value`
//! column.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Serialize, Deserialize)]
struct Value {
    value: f64,
}

fn parse_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: err.to_string(),
    }
}

fn write_rows<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| parse_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| parse_error(path, e))).collect()
}

pub fn write_cloud_csv(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    write_rows(path, cloud.iter().map(|p| Row { x: p.x, y: p.y, z: p.z }))
}

pub fn read_cloud_csv(path: &Path) -> Result<PointCloud<f64>> {
    let rows: Vec<Row> = read_rows(path)?;
    PointCloud::new(rows.into_iter().map(|r| Vector3::new(r.x, r.y, r.z)).collect()).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })
}

pub fn write_values_csv(path: &Path, values: &[f64]) -> Result<()> {
    write_rows(path, values.iter().map(|v| Value { value: *v }))
}

pub fn read_values_csv(path: &Path) -> Result<Vec<f64>> {
    Ok(read_rows::<Value>(path)?.into_iter().map(|v| v.value).collect())
}
