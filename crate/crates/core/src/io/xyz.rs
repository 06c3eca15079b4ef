//! ASCII XYZ interop: one point per line, `x y z [intensity]`, `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{write_atomic, IoError};
use crate::geometry::{Point3, PointCloud};

pub fn parse_xyz(text: &str) -> Result<PointCloud, IoError> {
    let mut cloud = PointCloud::default();
    let mut with_intensity = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| IoError::Record { line: i + 1, message };
        let values: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if !(3..=4).contains(&values.len()) {
            return Err(bad(format!("expected 3 or 4 columns, found {}", values.len())));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite number".into()));
        }
        let has = values.len() == 4;
        if *with_intensity.get_or_insert(has) != has {
            return Err(bad("column count differs from the first point".into()));
        }
        cloud.points.push(Point3::new(values[0], values[1], values[2]));
        if has {
            cloud.intensity.push(values[3] as f32);
        }
    }
    Ok(cloud)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32);
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if cloud.has_intensity() {
            let _ = write!(out, " {}", cloud.intensity[i]);
        }
        out.push('\n');
    }
    out
}

pub fn read_xyz(path: &Path) -> Result<PointCloud, IoError> {
    parse_xyz(&fs::read_to_string(path).map_err(IoError::at(path))?)
}

/// Writes points (and intensity, if any) with shortest round-trip
/// formatting; timestamps, time indices and sources are dropped.
pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_atomic(path, format_xyz(cloud).as_bytes())
}
