//! ASCII camera files: intrinsics as 3×3 (or padded 4×4) and camera-to-world poses as 4×4,
//! whitespace-separated, one matrix row per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4};

use super::{read_text, write_bytes, DataError};
use crate::geometry::{CameraIntrinsics, CameraPose, PoseDirection};

fn parse_rows<const N: usize>(path: &Path, text: &str) -> Result<[[f64; N]; N], DataError> {
    let mut rows = [[0.0; N]; N];
    let mut filled = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if filled == N {
            return Err(DataError::parse(path, i + 1, format!("more than {N} rows")));
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::parse(path, i + 1, e.to_string()))?;
        if values.len() != N {
            return Err(DataError::parse(
                path,
                i + 1,
                format!("expected {N} values, found {}", values.len()),
            ));
        }
        rows[filled].copy_from_slice(&values);
        filled += 1;
    }
    if filled != N {
        return Err(DataError::parse(
            path,
            text.lines().count(),
            format!("expected {N} rows, found {filled}"),
        ));
    }
    Ok(rows)
}

/// Accepts a 3×3 matrix or a 4×4 one whose upper-left block holds it.
pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, DataError> {
    let text = read_text(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim().starts_with('#'))
        .count();
    let m = if rows == 4 {
        let rows = parse_rows::<4>(path, &text)?;
        Matrix3::from_fn(|r, c| rows[r][c])
    } else {
        let rows = parse_rows::<3>(path, &text)?;
        Matrix3::from_fn(|r, c| rows[r][c])
    };
    CameraIntrinsics::from_matrix(m).map_err(|e| DataError::invalid(path, e.to_string()))
}

/// Reads a camera-to-world pose and returns it as world-to-camera.
pub fn load_pose(path: &Path) -> Result<CameraPose, DataError> {
    let rows = parse_rows::<4>(path, &read_text(path)?)?;
    let m = Matrix4::from_fn(|r, c| rows[r][c]);
    CameraPose::from_matrix4(&m, PoseDirection::CameraToWorld)
        .map_err(|e| DataError::invalid(path, e.to_string()))
}

fn format_rows(values: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = String::new();
    for row in values {
        let words: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", words.join(" "));
    }
    out
}

pub fn save_intrinsics(intrinsics: &CameraIntrinsics, path: &Path) -> Result<(), DataError> {
    let m = intrinsics.matrix();
    let text = format_rows((0..3).map(|r| (0..3).map(|c| m[(r, c)]).collect()));
    write_bytes(path, text.as_bytes())
}

pub fn save_pose(pose: &CameraPose, path: &Path) -> Result<(), DataError> {
    let m = pose.camera_to_world();
    let text = format_rows((0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect()));
    write_bytes(path, text.as_bytes())
}
