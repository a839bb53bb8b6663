//! On-disk formats: point clouds, depth maps, camera files, 2D masks, token
//! blobs, proposals, evaluation inputs, scene manifests and reports.
//!
//! Binary formats are little-endian and start with a 4-byte magic followed by
//! a `u32` version. Every loader reports failures as a [`DataError`] naming the
//! file and the line or byte offset involved.

use std::io;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::binio::BinError;

mod camera;
mod evalio;
mod masks;
mod ply;
mod proposals;
mod report;
mod scene;
mod tokenstore;
mod depth;

pub use camera::{load_intrinsics, load_pose, save_intrinsics, save_pose};
pub use depth::{load_depth_png, read_png_size, save_depth_png};
pub use evalio::{
    load_category_groups, load_embeddings, load_ground_truth, load_predictions,
    save_embeddings, save_ground_truth, save_predictions, CategoryGroups,
};
pub use masks::{load_mask_file, save_mask_file, MaskFile};
pub use ply::{load_ply, parse_ply, save_ply, write_ply, PlyEncoding, PlyError};
pub use proposals::{decode_proposals, encode_proposals, load_proposals, save_proposals};
pub use report::{write_report, MatchRow, Report, ReportFormat};
pub use scene::{load_scene, FrameEntry, SceneBundle, SceneManifest};
pub use tokenstore::{
    save_aggregated, load_aggregated, AggregateRecord, TokenBlobWriter, TokenManifestRecord,
    TokenStore,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Binary {
        path: PathBuf,
        #[source]
        source: BinError,
    },
    #[error("{path}: {source}")]
    Ply {
        path: PathBuf,
        #[source]
        source: PlyError,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: size is {found:?} (width, height) but {expected:?} was expected")]
    Dimensions {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("unknown report format {0:?} (expected json or tsv)")]
    UnknownFormat(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(path: &Path, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub(crate) fn binary(path: &Path, source: BinError) -> Self {
        Self::Binary {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

/// `N` points with `f32` positions in meters and 8-bit RGB colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<[f32; 3]>,
    colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>, colors: Vec<[u8; 3]>) -> Result<Self, String> {
        if positions.len() != colors.len() {
            return Err(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            ));
        }
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(format!("point {i} has a non-finite coordinate"));
        }
        Ok(Self { positions, colors })
    }

    /// Mid-gray cloud.
    ///
    /// # Panics
    /// On non-finite coordinates.
    pub fn from_positions(positions: Vec<[f32; 3]>) -> Self {
        let colors = vec![[128; 3]; positions.len()];
        Self::new(positions, colors).expect("finite coordinates")
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Self::to_vector(&self.positions[i])
    }

    #[inline]
    pub fn to_vector(p: &[f32; 3]) -> Vector3<f64> {
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }
}

/// Parses a JSON-lines file, skipping blank lines. Returns `(line, record)` pairs.
pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, T)>, DataError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| DataError::parse(path, i + 1, e.to_string()))
        })
        .collect()
}

pub(crate) fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| DataError::invalid(path, e.to_string()))?,
        );
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}
