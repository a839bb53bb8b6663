//! Scene manifests and bundles.
//!
//! A manifest is a `key = value` text file; `#` starts a comment and relative
//! paths resolve against the manifest's directory:
//!
//! ```text
//! # point cloud, N vertices with x y z red green blue
//! cloud = scene.ply
//! # 3×3 (or 4×4) pinhole matrix shared by all frames
//! intrinsics = intrinsics.txt
//! # directory of per-frame files, see below
//! frames = frames
//! # token blob and its JSON-lines index
//! tokens = tokens.bin
//! token_manifest = tokens.jsonl
//! # optional: depth tolerance in meters (default 0.1)
//! tau_depth = 0.1
//! # optional: keep every s-th frame in id order (default 1)
//! stride = 1
//! # optional: expected image size, checked against every depth map
//! width = 640
//! height = 480
//! ```
//!
//! Frame `t` consists of `<t>.depth.png` (16-bit millimeters), `<t>.pose.txt`
//! (camera-to-world 4×4), `<t>.masks.txt` and optionally `<t>.color.jpg` or
//! `<t>.color.png`. Frames without depth or pose are skipped with a warning;
//! a frame without a mask file has no masks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{load_depth_png, load_mask_file, load_ply, load_pose, read_png_size, read_text, write_bytes};
use super::{load_intrinsics, masks::read_mask_header, DataError, PointCloud, TokenStore};
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::lifting::{FrameRecord, LiftConfig, Mask2D};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub cloud: PathBuf,
    pub intrinsics: PathBuf,
    pub frames: PathBuf,
    pub tokens: PathBuf,
    pub token_manifest: PathBuf,
    pub tau_depth: f64,
    pub stride: usize,
    pub width: Option<usize>,
    pub height: Option<usize>,
}

impl SceneManifest {
    /// Default layout of a bundle directory.
    pub fn standard() -> Self {
        Self {
            cloud: "scene.ply".into(),
            intrinsics: "intrinsics.txt".into(),
            frames: "frames".into(),
            tokens: "tokens.bin".into(),
            token_manifest: "tokens.jsonl".into(),
            tau_depth: LiftConfig::DEFAULT_TAU_DEPTH,
            stride: 1,
            width: None,
            height: None,
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, DataError> {
        let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(DataError::parse(path, i + 1, format!("expected 'key = value', found '{line}'")));
            };
            let (key, value) = (key.trim(), value.trim());
            const KEYS: [&str; 9] = [
                "cloud",
                "intrinsics",
                "frames",
                "tokens",
                "token_manifest",
                "tau_depth",
                "stride",
                "width",
                "height",
            ];
            if !KEYS.contains(&key) {
                return Err(DataError::parse(path, i + 1, format!("unknown key '{key}'")));
            }
            if values.insert(key, (i + 1, value)).is_some() {
                return Err(DataError::parse(path, i + 1, format!("duplicate key '{key}'")));
            }
        }
        let last_line = text.lines().count().max(1);
        let required = |key: &str| -> Result<PathBuf, DataError> {
            values
                .get(key)
                .map(|(_, v)| PathBuf::from(v))
                .ok_or_else(|| DataError::parse(path, last_line, format!("missing required key '{key}'")))
        };
        fn number<T: std::str::FromStr>(
            path: &Path,
            values: &BTreeMap<&str, (usize, &str)>,
            key: &str,
        ) -> Result<Option<T>, DataError> {
            values
                .get(key)
                .map(|&(line, v)| {
                    v.parse()
                        .map_err(|_| DataError::parse(path, line, format!("bad value for '{key}': '{v}'")))
                })
                .transpose()
        }
        let tau_depth = number::<f64>(path, &values, "tau_depth")?.unwrap_or(LiftConfig::DEFAULT_TAU_DEPTH);
        if !(tau_depth > 0.0 && tau_depth.is_finite()) {
            return Err(DataError::parse(path, values["tau_depth"].0, "tau_depth must be positive"));
        }
        let stride = number::<usize>(path, &values, "stride")?.unwrap_or(1);
        if stride == 0 {
            return Err(DataError::parse(path, values["stride"].0, "stride must be at least 1"));
        }
        Ok(Self {
            cloud: required("cloud")?,
            intrinsics: required("intrinsics")?,
            frames: required("frames")?,
            tokens: required("tokens")?,
            token_manifest: required("token_manifest")?,
            tau_depth,
            stride,
            width: number(path, &values, "width")?,
            height: number(path, &values, "height")?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("cloud", &self.cloud.display());
        kv("intrinsics", &self.intrinsics.display());
        kv("frames", &self.frames.display());
        kv("tokens", &self.tokens.display());
        kv("token_manifest", &self.token_manifest.display());
        kv("tau_depth", &format!("{:?}", self.tau_depth));
        kv("stride", &self.stride);
        if let Some(w) = self.width {
            kv("width", &w);
        }
        if let Some(h) = self.height {
            kv("height", &h);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        write_bytes(path, self.to_text().as_bytes())
    }
}

/// Files of one frame. The pose is read eagerly so unreadable poses fail at load.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub id: u32,
    pub depth_path: PathBuf,
    pub pose_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub color_path: Option<PathBuf>,
    pub pose: CameraPose,
}

/// A validated scene. Depth maps and masks are read on demand by [`SceneBundle::load_frame`].
#[derive(Debug)]
pub struct SceneBundle {
    pub manifest_path: PathBuf,
    pub manifest: SceneManifest,
    pub cloud: PointCloud,
    pub intrinsics: CameraIntrinsics,
    /// Ascending by id, after striding.
    pub frames: Vec<FrameEntry>,
    pub width: usize,
    pub height: usize,
    pub tokens: TokenStore,
}

#[derive(Default)]
struct FrameFiles {
    depth: Option<PathBuf>,
    pose: Option<PathBuf>,
    masks: Option<PathBuf>,
    color: Option<PathBuf>,
}

fn scan_frames(dir: &Path) -> Result<BTreeMap<u32, FrameFiles>, DataError> {
    let mut frames: BTreeMap<u32, FrameFiles> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some((stem, kind)) = name.split_once('.') else {
            continue;
        };
        let Ok(id) = stem.parse::<u32>() else {
            continue;
        };
        let files = frames.entry(id).or_default();
        match kind {
            "depth.png" => files.depth = Some(path),
            "pose.txt" => files.pose = Some(path),
            "masks.txt" => files.masks = Some(path),
            "color.jpg" | "color.png" => files.color = Some(path),
            _ => {}
        }
    }
    Ok(frames)
}

/// Loads and validates a scene manifest.
pub fn load_scene(manifest_path: &Path) -> Result<SceneBundle, DataError> {
    let manifest = SceneManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let cloud = load_ply(&base.join(&manifest.cloud))?;
    if cloud.is_empty() {
        return Err(DataError::invalid(&base.join(&manifest.cloud), "point cloud is empty"));
    }
    let intrinsics = load_intrinsics(&base.join(&manifest.intrinsics))?;
    let tokens = TokenStore::open(&base.join(&manifest.tokens), &base.join(&manifest.token_manifest))?;

    let mut size = manifest.width.zip(manifest.height);
    let mut frames = Vec::new();
    for (index, (id, files)) in scan_frames(&base.join(&manifest.frames))?.into_iter().enumerate() {
        if index % manifest.stride != 0 {
            continue;
        }
        let (Some(depth_path), Some(pose_path)) = (files.depth, files.pose) else {
            log::warn!("frame {id}: missing depth or pose file, skipped");
            continue;
        };
        let pose = load_pose(&pose_path)?;
        let depth_size = read_png_size(&depth_path)?;
        match size {
            None => size = Some(depth_size),
            Some(expected) if expected != depth_size => {
                return Err(DataError::Dimensions {
                    path: depth_path,
                    expected,
                    found: depth_size,
                })
            }
            _ => {}
        }
        if let Some(mask_path) = &files.masks {
            let (w, h, _) = read_mask_header(mask_path)?;
            if (w, h) != depth_size {
                return Err(DataError::Dimensions {
                    path: mask_path.clone(),
                    expected: depth_size,
                    found: (w, h),
                });
            }
        }
        frames.push(FrameEntry {
            id,
            depth_path,
            pose_path,
            mask_path: files.masks,
            color_path: files.color,
            pose,
        });
    }
    let (width, height) = size.ok_or_else(|| {
        DataError::invalid(manifest_path, "no usable frames and no width/height given")
    })?;
    Ok(SceneBundle {
        manifest_path: manifest_path.to_path_buf(),
        manifest,
        cloud,
        intrinsics,
        frames,
        width,
        height,
        tokens,
    })
}

impl SceneBundle {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn lift_config(&self) -> LiftConfig {
        LiftConfig {
            tau_depth: self.manifest.tau_depth,
            ..LiftConfig::new(self.width, self.height)
        }
    }

    /// Reads the depth map, masks and tokens of `frames[index]`.
    pub fn load_frame(&mut self, index: usize) -> Result<FrameRecord, DataError> {
        let entry = &self.frames[index];
        let depth = load_depth_png(&entry.depth_path)?;
        if (depth.width(), depth.height()) != (self.width, self.height) {
            return Err(DataError::Dimensions {
                path: entry.depth_path.clone(),
                expected: (self.width, self.height),
                found: (depth.width(), depth.height()),
            });
        }
        let mut masks = Vec::new();
        if let Some(mask_path) = &entry.mask_path {
            let file = load_mask_file(mask_path)?;
            if (file.width, file.height) != (self.width, self.height) {
                return Err(DataError::Dimensions {
                    path: mask_path.clone(),
                    expected: (self.width, self.height),
                    found: (file.width, file.height),
                });
            }
            for (mask_id, pixels) in file.masks {
                let tokens = self.tokens.get(entry.id, mask_id)?.ok_or_else(|| {
                    DataError::invalid(
                        &self.manifest_path,
                        format!("token manifest has no entry for frame {} mask {mask_id}", entry.id),
                    )
                })?;
                masks.push(Mask2D {
                    frame_id: entry.id,
                    mask_id,
                    pixels,
                    tokens,
                });
            }
        }
        Ok(FrameRecord {
            id: entry.id,
            intrinsics: self.intrinsics,
            pose: entry.pose.clone(),
            depth,
            masks,
            color_path: entry.color_path.clone(),
        })
    }
}
