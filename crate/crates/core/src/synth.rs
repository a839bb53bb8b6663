//! Synthetic scenes with known ground truth.
//!
//! Objects are boxes or spheres sampled on their surface. Each camera renders
//! a depth map by 1-pixel point splatting with a z-buffer, and the pixels won
//! by an object form its 2D mask in that view. Every mask carries the one-hot
//! token code of its object's category, optionally with Gaussian noise, so
//! aggregated tokens can be decoded back to categories by nearest code.
//!
//! Randomness comes from ChaCha8 streams derived from one 64-bit seed.
//!
//! # Spec files
//!
//! Global `key = value` lines come first, then `[object]`, `[camera]` and
//! `[orbit]` sections. See [`DEFAULT_SPEC`] for a complete example.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::aggregation::{split_seed, Proposal3D};
use crate::dataio::{
    save_depth_png, save_embeddings, save_ground_truth, save_intrinsics, save_mask_file, save_ply,
    save_pose, save_proposals, DataError, MaskFile, PlyEncoding, PointCloud, SceneManifest,
    TokenBlobWriter, TokenManifestRecord,
};
use crate::evaluation::GroundTruthInstance;
use crate::geometry::{project_point, CameraIntrinsics, CameraPose, DepthMap};
use crate::lifting::{FrameRecord, Mask2D, NO_PIXEL};
use crate::mask::{PixelMask, PointSet};
use crate::tokens::TokenMatrix;

/// Five objects on a ring, eight cameras orbiting them.
pub const DEFAULT_SPEC: &str = "\
# image size in pixels and pinhole parameters fx fy cx cy
width = 96
height = 72
intrinsics = 80 80 48 36
# token matrix shape E x C; C must cover the number of categories
token_rows = 2
token_cols = 8
# noise: token entries, depth in meters, probability of dropping a 2D mask
token_noise = 0
depth_noise = 0
mask_dropout = 0

[object]
shape = box
center = 0.8 0 0.15
size = 0.3 0.3 0.3
label = chair
points = 300

[object]
shape = sphere
# radius
size = 0.18
center = 0.247 0.761 0.18
label = lamp
points = 300

[object]
shape = box
center = -0.647 0.470 0.1
size = 0.4 0.25 0.2
label = sofa
points = 300

[object]
shape = box
center = -0.647 -0.470 0.2
size = 0.2 0.3 0.4
label = shelf
points = 300

[object]
shape = sphere
size = 0.15
center = 0.247 -0.761 0.15
label = table
points = 300

# evenly spaced cameras on a circle around `target`
[orbit]
count = 8
radius = 2.5
height = 1.5
target = 0 0 0.15
";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("line {line}: {message}")]
    Spec { line: usize, message: String },
    #[error("invalid scene spec: {0}")]
    Invalid(String),
    #[error("object {index} ('{label}') has zero volume")]
    ZeroVolume { index: usize, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Box,
    Sphere,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub center: [f64; 3],
    /// Full extents for boxes; `size[0]` is the radius for spheres.
    pub size: [f64; 3],
    pub label: String,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    /// Standard deviation of additive token noise.
    pub token_sigma: f64,
    /// Standard deviation of additive depth noise in meters.
    pub depth_sigma: f64,
    /// Probability that a rendered 2D mask is dropped.
    pub mask_dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub cameras: Vec<CameraPose>,
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub token_rows: usize,
    pub token_cols: usize,
    pub noise: NoiseSpec,
}

fn spec_err(line: usize, message: impl Into<String>) -> SynthError {
    SynthError::Spec {
        line,
        message: message.into(),
    }
}

fn floats<const N: usize>(line: usize, key: &str, value: &str) -> Result<[f64; N], SynthError> {
    let parsed: Vec<f64> = value
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| spec_err(line, format!("bad number in '{key}'")))?;
    parsed
        .try_into()
        .map_err(|v: Vec<f64>| spec_err(line, format!("'{key}' needs {N} numbers, found {}", v.len())))
}

fn single<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, SynthError> {
    value
        .parse()
        .map_err(|_| spec_err(line, format!("bad value for '{key}': '{value}'")))
}

#[derive(Default)]
struct Section {
    kind: String,
    line: usize,
    entries: Vec<(usize, String, String)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.as_str()))
    }

    fn require(&self, key: &str) -> Result<(usize, &str), SynthError> {
        self.get(key)
            .ok_or_else(|| spec_err(self.line, format!("[{}] is missing '{key}'", self.kind)))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), SynthError> {
        for (line, key, _) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(spec_err(*line, format!("unknown key '{key}' in [{}]", self.kind)));
            }
        }
        Ok(())
    }
}

fn vector(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl SceneSpec {
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut sections = vec![Section {
            kind: "global".into(),
            line: 1,
            entries: Vec::new(),
        }];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push(Section {
                    kind: name.trim().to_string(),
                    line: i + 1,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| spec_err(i + 1, format!("expected 'key = value', found '{line}'")))?;
            let section = sections.last_mut().unwrap();
            let key = key.trim().to_string();
            if section.get(&key).is_some() {
                return Err(spec_err(i + 1, format!("duplicate key '{key}'")));
            }
            section.entries.push((i + 1, key, value.trim().to_string()));
        }

        let global = &sections[0];
        global.check_keys(&[
            "width",
            "height",
            "intrinsics",
            "token_rows",
            "token_cols",
            "token_noise",
            "depth_noise",
            "mask_dropout",
        ])?;
        let (l, v) = global.require("width")?;
        let width: usize = single(l, "width", v)?;
        let (l, v) = global.require("height")?;
        let height: usize = single(l, "height", v)?;
        let (l, v) = global.require("intrinsics")?;
        let [fx, fy, cx, cy] = floats::<4>(l, "intrinsics", v)?;
        let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy).map_err(|e| spec_err(l, e.to_string()))?;
        let opt = |key: &str, default: f64| -> Result<f64, SynthError> {
            global.get(key).map_or(Ok(default), |(l, v)| single(l, key, v))
        };
        let opt_usize = |key: &str, default: usize| -> Result<usize, SynthError> {
            global.get(key).map_or(Ok(default), |(l, v)| single(l, key, v))
        };
        let noise = NoiseSpec {
            token_sigma: opt("token_noise", 0.0)?,
            depth_sigma: opt("depth_noise", 0.0)?,
            mask_dropout: opt("mask_dropout", 0.0)?,
        };
        let token_rows = opt_usize("token_rows", 1)?;
        let token_cols = opt_usize("token_cols", 0)?;

        let up_of = |s: &Section| -> Result<Vector3<f64>, SynthError> {
            s.get("up")
                .map_or(Ok([0.0, 0.0, 1.0]), |(l, v)| floats::<3>(l, "up", v))
                .map(vector)
        };
        let mut objects = Vec::new();
        let mut cameras = Vec::new();
        for s in &sections[1..] {
            match s.kind.as_str() {
                "object" => {
                    s.check_keys(&["shape", "center", "size", "label", "points"])?;
                    let (l, v) = s.require("shape")?;
                    let shape = match v {
                        "box" => Shape::Box,
                        "sphere" => Shape::Sphere,
                        _ => return Err(spec_err(l, format!("unknown shape '{v}' (box or sphere)"))),
                    };
                    let (l, v) = s.require("center")?;
                    let center = floats::<3>(l, "center", v)?;
                    let (l, v) = s.require("size")?;
                    let size = match shape {
                        Shape::Box => floats::<3>(l, "size", v)?,
                        Shape::Sphere => {
                            let [r] = floats::<1>(l, "size", v)?;
                            [r; 3]
                        }
                    };
                    let (_, label) = s.require("label")?;
                    let (l, v) = s.require("points")?;
                    objects.push(ObjectSpec {
                        shape,
                        center,
                        size,
                        label: label.to_string(),
                        points: single(l, "points", v)?,
                    });
                }
                "camera" => {
                    s.check_keys(&["eye", "target", "up"])?;
                    let (l, v) = s.require("eye")?;
                    let eye = vector(floats::<3>(l, "eye", v)?);
                    let (l, v) = s.require("target")?;
                    let target = vector(floats::<3>(l, "target", v)?);
                    let pose = CameraPose::look_at(eye, target, up_of(s)?)
                        .map_err(|_| spec_err(s.line, "degenerate camera orientation"))?;
                    cameras.push(pose);
                }
                "orbit" => {
                    s.check_keys(&["count", "radius", "height", "target", "up"])?;
                    let (l, v) = s.require("count")?;
                    let count: usize = single(l, "count", v)?;
                    let (l, v) = s.require("radius")?;
                    let radius: f64 = single(l, "radius", v)?;
                    let (l, v) = s.require("height")?;
                    let z: f64 = single(l, "height", v)?;
                    let target = s
                        .get("target")
                        .map_or(Ok([0.0; 3]), |(l, v)| floats::<3>(l, "target", v))
                        .map(vector)?;
                    let up = up_of(s)?;
                    for k in 0..count {
                        let angle = TAU * k as f64 / count as f64;
                        let eye = target + Vector3::new(radius * angle.cos(), radius * angle.sin(), z);
                        let pose = CameraPose::look_at(eye, target, up)
                            .map_err(|_| spec_err(s.line, "degenerate orbit camera"))?;
                        cameras.push(pose);
                    }
                }
                other => return Err(spec_err(s.line, format!("unknown section [{other}]"))),
            }
        }

        let spec = Self {
            objects,
            cameras,
            intrinsics,
            width,
            height,
            token_rows,
            token_cols,
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SynthError::Invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn default_scene() -> Self {
        Self::parse(DEFAULT_SPEC).expect("built-in spec is valid")
    }

    /// Sorted unique labels; a category's index selects its token code.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.objects.iter().map(|o| o.label.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::Invalid(m));
        if self.objects.is_empty() {
            return invalid("at least one [object] is required".into());
        }
        if self.cameras.is_empty() {
            return invalid("at least one [camera] or [orbit] camera is required".into());
        }
        if self.width == 0 || self.height == 0 {
            return invalid(format!("image size {}x{} is empty", self.width, self.height));
        }
        for (index, o) in self.objects.iter().enumerate() {
            let extents = match o.shape {
                Shape::Box => &o.size[..],
                Shape::Sphere => &o.size[..1],
            };
            if extents.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(SynthError::ZeroVolume {
                    index,
                    label: o.label.clone(),
                });
            }
            if o.points == 0 {
                return invalid(format!("object {index} ('{}') has no points", o.label));
            }
            if o.center.iter().any(|c| !c.is_finite()) {
                return invalid(format!("object {index} has a non-finite center"));
            }
        }
        let ncat = self.categories().len();
        if self.token_rows == 0 || self.token_cols < ncat {
            return invalid(format!(
                "token shape {}x{} cannot hold one-hot codes for {ncat} categories",
                self.token_rows, self.token_cols
            ));
        }
        let n = self.noise;
        if !(n.token_sigma >= 0.0 && n.token_sigma.is_finite())
            || !(n.depth_sigma >= 0.0 && n.depth_sigma.is_finite())
        {
            return invalid("noise levels must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&n.mask_dropout) {
            return invalid(format!("mask_dropout {} outside [0, 1]", n.mask_dropout));
        }
        Ok(())
    }
}

/// Ground truth of one sampled object.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub label: String,
    pub category: usize,
    pub points: PointSet,
}

fn box_surface_point(rng: &mut ChaCha8Rng, size: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = size;
    let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
    let total: f64 = faces.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut face = 5;
    for (i, area) in faces.iter().enumerate() {
        if pick < *area {
            face = i;
            break;
        }
        pick -= area;
    }
    let axis = face / 2;
    let sign = if face % 2 == 0 { -0.5 } else { 0.5 };
    let mut p = [0.0; 3];
    for (k, coord) in p.iter_mut().enumerate() {
        *coord = if k == axis {
            sign * size[k]
        } else {
            (rng.random::<f64>() - 0.5) * size[k]
        };
    }
    p
}

fn sphere_surface_point(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    loop {
        let d: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if norm > 1e-12 {
            return d.map(|x| radius * x / norm);
        }
    }
}

/// Surface samples for every object, object by object, with one instance
/// mask per object covering exactly its points.
pub fn sample_objects(spec: &SceneSpec, seed: u64) -> Result<(PointCloud, Vec<GtObject>), SynthError> {
    spec.validate()?;
    let categories = spec.categories();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 0));
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut objects = Vec::new();
    for o in &spec.objects {
        let category = categories.binary_search(&o.label).unwrap();
        let color = category_color(category);
        let start = positions.len() as u32;
        for _ in 0..o.points {
            let local = match o.shape {
                Shape::Box => box_surface_point(&mut rng, o.size),
                Shape::Sphere => sphere_surface_point(&mut rng, o.size[0]),
            };
            positions.push(std::array::from_fn(|k| (o.center[k] + local[k]) as f32));
            colors.push(color);
        }
        objects.push(GtObject {
            label: o.label.clone(),
            category,
            points: (start..positions.len() as u32).collect(),
        });
    }
    let cloud = PointCloud::new(positions, colors).map_err(SynthError::Invalid)?;
    Ok((cloud, objects))
}

fn category_color(category: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    PALETTE[category % PALETTE.len()]
}

/// Z-buffer splat returning the depth map and the winning point per pixel
/// (`NO_PIXEL` where empty). Equal depths keep the lower point index.
fn splat(
    cloud: &PointCloud,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> (DepthMap, Vec<u32>) {
    let mut depth = DepthMap::empty(width, height);
    let mut owner = vec![NO_PIXEL; width * height];
    for i in 0..cloud.len() {
        let proj = project_point(&cloud.position(i), intrinsics, pose);
        let Some((col, row)) = proj.pixel(width, height) else {
            continue;
        };
        let current = depth.get(col, row);
        if current == 0.0 || proj.d < current {
            depth.set(col, row, proj.d);
            owner[row * width + col] = i as u32;
        }
    }
    (depth, owner)
}

/// Each pixel holds the smallest positive depth of the points projecting onto
/// it, or 0 when none does.
pub fn render_depth(
    cloud: &PointCloud,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> DepthMap {
    splat(cloud, pose, intrinsics, width, height).0
}

/// A rendered ground-truth mask before tokens are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct GtMask2D {
    pub frame_id: u32,
    pub mask_id: u32,
    pub pixels: PixelMask,
    pub category: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenScheme {
    /// Every row one-hot at the category's column, plus `N(0, sigma²)` per entry.
    OneHot { sigma: f64 },
}

/// Noise-free token code of a category.
pub fn category_code(category: usize, rows: usize, cols: usize) -> TokenMatrix {
    let mut m = TokenMatrix::zeros(rows, cols);
    for r in 0..rows {
        m.as_mut_slice()[r * cols + category] = 1.0;
    }
    m
}

/// Attaches token matrices to masks, drawing noise in mask order.
pub fn emit_tokens(
    masks: &[GtMask2D],
    num_categories: usize,
    rows: usize,
    cols: usize,
    scheme: TokenScheme,
    seed: u64,
) -> Result<Vec<Mask2D>, SynthError> {
    if cols < num_categories || rows == 0 {
        return Err(SynthError::Invalid(format!(
            "token shape {rows}x{cols} cannot hold one-hot codes for {num_categories} categories"
        )));
    }
    let TokenScheme::OneHot { sigma } = scheme;
    let noise = Normal::new(0.0, sigma).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    masks
        .iter()
        .map(|m| {
            if m.category >= num_categories {
                return Err(SynthError::Invalid(format!(
                    "mask {} has category {} of {num_categories}",
                    m.mask_id, m.category
                )));
            }
            let mut tokens = category_code(m.category, rows, cols);
            if sigma > 0.0 {
                for x in tokens.as_mut_slice() {
                    *x += noise.sample(&mut rng) as f32;
                }
            }
            Ok(Mask2D {
                frame_id: m.frame_id,
                mask_id: m.mask_id,
                pixels: m.pixels.clone(),
                tokens,
            })
        })
        .collect()
}

/// Index of the code closest in Frobenius norm, lower index on ties; `None`
/// for an all-zero matrix, which carries no evidence.
pub fn decode_nearest(tokens: &TokenMatrix, codes: &[TokenMatrix]) -> Option<usize> {
    if tokens.is_zero() {
        return None;
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, code) in codes.iter().enumerate() {
        let d: f64 = tokens
            .as_slice()
            .iter()
            .zip(code.as_slice())
            .map(|(a, b)| {
                let x = (*a - *b) as f64;
                x * x
            })
            .sum();
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub cloud: PointCloud,
    pub objects: Vec<GtObject>,
    pub categories: Vec<String>,
    /// One per camera, id = camera index.
    pub frames: Vec<FrameRecord>,
}

/// Samples, renders and tokenizes a full scene.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene, SynthError> {
    let (cloud, objects) = sample_objects(spec, seed)?;
    let categories = spec.categories();
    let mut object_of = vec![0usize; cloud.len()];
    for (k, o) in objects.iter().enumerate() {
        for p in o.points.iter() {
            object_of[p as usize] = k;
        }
    }
    let (w, h) = (spec.width, spec.height);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1));
    let mut depth_rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 2));
    let depth_noise =
        Normal::new(0.0, spec.noise.depth_sigma).map_err(|e| SynthError::Invalid(e.to_string()))?;

    let mut frames = Vec::with_capacity(spec.cameras.len());
    let mut gt_masks = Vec::new();
    for (t, pose) in spec.cameras.iter().enumerate() {
        let (mut depth, owner) = splat(&cloud, pose, &spec.intrinsics, w, h);
        let mut footprints = vec![PixelMask::new(w, h); objects.len()];
        for (idx, &p) in owner.iter().enumerate() {
            if p != NO_PIXEL {
                footprints[object_of[p as usize]].insert_index(idx);
            }
        }
        for (k, pixels) in footprints.into_iter().enumerate() {
            // One draw per object and frame keeps streams aligned across spec edits.
            let dropped = dropout_rng.random::<f64>() < spec.noise.mask_dropout;
            if pixels.is_empty() || dropped {
                continue;
            }
            gt_masks.push(GtMask2D {
                frame_id: t as u32,
                mask_id: k as u32,
                pixels,
                category: objects[k].category,
            });
        }
        if spec.noise.depth_sigma > 0.0 {
            for d in depth.as_mut_slice() {
                if *d > 0.0 {
                    *d = (*d + depth_noise.sample(&mut depth_rng)).max(0.0);
                }
            }
        }
        frames.push(FrameRecord {
            id: t as u32,
            intrinsics: spec.intrinsics,
            pose: pose.clone(),
            depth,
            masks: Vec::new(),
            color_path: None,
        });
    }
    let masks = emit_tokens(
        &gt_masks,
        categories.len(),
        spec.token_rows,
        spec.token_cols,
        TokenScheme::OneHot {
            sigma: spec.noise.token_sigma,
        },
        split_seed(seed, 3),
    )?;
    for m in masks {
        frames[m.frame_id as usize].masks.push(m);
    }
    Ok(SyntheticScene {
        spec: spec.clone(),
        seed,
        cloud,
        objects,
        categories,
        frames,
    })
}

/// File names inside a bundle directory written by [`SyntheticScene::write_bundle`].
pub const MANIFEST_FILE: &str = "scene.manifest";
pub const GT_FILE: &str = "gt.jsonl";
pub const PROPOSALS_FILE: &str = "proposals.oepr";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const CATEGORIES_FILE: &str = "categories.txt";

impl SyntheticScene {
    pub fn codes(&self) -> Vec<TokenMatrix> {
        (0..self.categories.len())
            .map(|c| category_code(c, self.spec.token_rows, self.spec.token_cols))
            .collect()
    }

    /// Ground-truth instances as proposals with confidence 1.
    pub fn proposals(&self) -> Vec<Proposal3D> {
        self.objects
            .iter()
            .map(|o| Proposal3D::new(o.points.clone(), 1.0).expect("objects are non-empty"))
            .collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthInstance> {
        self.objects
            .iter()
            .map(|o| GroundTruthInstance::new(o.points.clone(), o.label.clone()).expect("non-empty"))
            .collect()
    }

    /// One-hot label embeddings, one dimension per category.
    pub fn embeddings(&self) -> Vec<(String, Vec<f64>)> {
        let n = self.categories.len();
        self.categories
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                (l.clone(), v)
            })
            .collect()
    }

    /// Writes a loadable scene bundle plus ground truth, proposals, label
    /// embeddings and the category list. Returns the manifest path.
    pub fn write_bundle(&self, dir: &Path) -> Result<PathBuf, DataError> {
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| DataError::io(p, e));
        mkdir(dir)?;
        let mut manifest = SceneManifest::standard();
        manifest.width = Some(self.spec.width);
        manifest.height = Some(self.spec.height);
        let frames_dir = dir.join(&manifest.frames);
        mkdir(&frames_dir)?;

        save_ply(&self.cloud, &dir.join(&manifest.cloud), PlyEncoding::BinaryLittleEndian)?;
        save_intrinsics(&self.spec.intrinsics, &dir.join(&manifest.intrinsics))?;
        let mut blob = TokenBlobWriter::new(self.spec.token_rows, self.spec.token_cols);
        let mut index = Vec::new();
        for f in &self.frames {
            save_depth_png(&f.depth, &frames_dir.join(format!("{}.depth.png", f.id)))?;
            save_pose(&f.pose, &frames_dir.join(format!("{}.pose.txt", f.id)))?;
            let file = MaskFile {
                width: self.spec.width,
                height: self.spec.height,
                masks: f.masks.iter().map(|m| (m.mask_id, m.pixels.clone())).collect(),
            };
            save_mask_file(&file, &frames_dir.join(format!("{}.masks.txt", f.id)))?;
            for m in &f.masks {
                index.push(TokenManifestRecord {
                    frame: f.id,
                    mask_id: m.mask_id,
                    offset: blob.push(&m.tokens),
                });
            }
        }
        blob.save(&dir.join(&manifest.tokens))?;
        crate::dataio::write_jsonl(&dir.join(&manifest.token_manifest), &index)?;
        save_ground_truth(&self.ground_truth(), &dir.join(GT_FILE))?;
        save_proposals(self.cloud.len(), &self.proposals(), &dir.join(PROPOSALS_FILE))?;
        save_embeddings(&self.embeddings(), &dir.join(EMBEDDINGS_FILE))?;
        let categories: String = self.categories.iter().map(|c| format!("{c}\n")).collect();
        crate::dataio::write_bytes(&dir.join(CATEGORIES_FILE), categories.as_bytes())?;
        let path = dir.join(MANIFEST_FILE);
        manifest.save(&path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::depth_lookup;

    fn one_box(points: usize) -> SceneSpec {
        SceneSpec::parse(&format!(
            "width = 32\nheight = 24\nintrinsics = 30 30 16 12\ntoken_cols = 2\n\
             [object]\nshape = box\ncenter = 0 0 0\nsize = 0.2 0.2 0.2\nlabel = cube\npoints = {points}\n\
             [camera]\neye = 0 -2 0\ntarget = 0 0 0\n"
        ))
        .unwrap()
    }

    #[test]
    fn default_spec_parses() {
        let s = SceneSpec::default_scene();
        assert_eq!(s.objects.len(), 5);
        assert_eq!(s.cameras.len(), 8);
        assert_eq!(s.categories(), vec!["chair", "lamp", "shelf", "sofa", "table"]);
        assert_eq!(s.objects[1].shape, Shape::Sphere);
        assert_eq!(s.objects[1].size, [0.18; 3]);
    }

    #[test]
    fn spec_errors() {
        let base = "width = 8\nheight = 8\nintrinsics = 5 5 4 4\ntoken_cols = 4\n";
        assert_eq!(
            SceneSpec::parse(&format!("{base}[camera]\neye = 0 -1 0\ntarget = 0 0 0\n")),
            Err(SynthError::Invalid("at least one [object] is required".into()))
        );
        let obj = "[object]\nshape = box\ncenter = 0 0 0\nsize = 0.1 0 0.1\nlabel = a\npoints = 3\n";
        let cam = "[camera]\neye = 0 -1 0\ntarget = 0 0 0\n";
        assert!(matches!(
            SceneSpec::parse(&format!("{base}{obj}{cam}")),
            Err(SynthError::ZeroVolume { index: 0, .. })
        ));
        assert!(matches!(
            SceneSpec::parse(&format!("{base}{}", obj.replace("0.1 0 0.1", "0.1 0.1 0.1"))),
            Err(SynthError::Invalid(_))
        ));
        assert!(matches!(
            SceneSpec::parse(&format!("{base}[thing]\n")),
            Err(SynthError::Spec { line: 5, .. })
        ));
        assert!(matches!(
            SceneSpec::parse(&format!("{base}{}{cam}", obj.replace("shape = box", "shape = cone"))),
            Err(SynthError::Spec { line: 6, .. })
        ));
    }

    #[test]
    fn one_box_cloud() {
        let (cloud, objects) = sample_objects(&one_box(100), 3).unwrap();
        assert_eq!(cloud.len(), 100);
        assert_eq!(objects.len(), 1);
        assert_eq!(objects[0].points.len(), 100);
        for p in cloud.positions() {
            let on_face = p.iter().any(|c| (c.abs() - 0.1).abs() < 1e-6);
            assert!(on_face && p.iter().all(|c| c.abs() <= 0.1 + 1e-6), "{p:?}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let s = SceneSpec::default_scene();
        let (a, _) = sample_objects(&s, 11).unwrap();
        let (b, _) = sample_objects(&s, 11).unwrap();
        let (c, _) = sample_objects(&s, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn disjoint_instances() {
        let s = SceneSpec::default_scene();
        let (cloud, objects) = sample_objects(&s, 0).unwrap();
        let total: usize = objects.iter().map(|o| o.points.len()).sum();
        assert_eq!(total, cloud.len());
        for (i, a) in objects.iter().enumerate() {
            for b in &objects[i + 1..] {
                assert_eq!(a.points.intersection_len(&b.points), 0);
            }
        }
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0).unwrap();
        let pose = CameraPose::identity();
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]]);
        let d = render_depth(&cloud, &pose, &k, 4, 4);
        assert_eq!(d.get(2, 2), 1.0);
        assert_eq!(d.as_slice().iter().filter(|&&x| x > 0.0).count(), 1);
        let empty = render_depth(&PointCloud::default(), &pose, &k, 4, 4);
        assert!(empty.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rendered_depth_matches_projection() {
        let spec = SceneSpec::default_scene();
        let scene = generate(&spec, 5).unwrap();
        let f = &scene.frames[0];
        let mut exact = 0;
        for i in 0..scene.cloud.len() {
            let p = project_point(&scene.cloud.position(i), &f.intrinsics, &f.pose);
            if let Some(d) = depth_lookup(&f.depth, p.u, p.v) {
                if d == p.d {
                    exact += 1;
                }
            }
        }
        assert!(exact > 100, "{exact}");
    }

    #[test]
    fn one_hot_codes_are_orthogonal() {
        let codes: Vec<TokenMatrix> = (0..3).map(|c| category_code(c, 2, 3)).collect();
        for (i, a) in codes.iter().enumerate() {
            for (j, b) in codes.iter().enumerate() {
                let dot: f32 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
                assert_eq!(dot, if i == j { 2.0 } else { 0.0 });
            }
            assert_eq!(decode_nearest(a, &codes), Some(i));
        }
        assert_eq!(decode_nearest(&TokenMatrix::zeros(2, 3), &codes), None);
    }

    #[test]
    fn emit_tokens_checks_width() {
        let m = GtMask2D {
            frame_id: 0,
            mask_id: 0,
            pixels: PixelMask::new(2, 2),
            category: 0,
        };
        assert!(emit_tokens(&[m.clone()], 3, 1, 2, TokenScheme::OneHot { sigma: 0.0 }, 0).is_err());
        let out = emit_tokens(&[m], 2, 1, 2, TokenScheme::OneHot { sigma: 0.0 }, 0).unwrap();
        assert_eq!(out[0].tokens.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn generate_is_deterministic() {
        let mut spec = SceneSpec::default_scene();
        spec.noise = NoiseSpec {
            token_sigma: 0.01,
            depth_sigma: 0.01,
            mask_dropout: 0.1,
        };
        assert_eq!(generate(&spec, 9).unwrap(), generate(&spec, 9).unwrap());
    }

    fn recovered(scene: &SyntheticScene) -> usize {
        use crate::aggregation::aggregate_weighted;
        use crate::lifting::{accumulate_tokens, LiftConfig};
        let config = LiftConfig::new(scene.spec.width, scene.spec.height);
        let field = accumulate_tokens(&scene.cloud, &scene.frames, &config).unwrap();
        let codes = scene.codes();
        scene
            .proposals()
            .iter()
            .zip(&scene.objects)
            .filter(|(p, o)| {
                let agg = aggregate_weighted(p, &field).unwrap();
                decode_nearest(&agg.tokens, &codes) == Some(o.category)
            })
            .count()
    }

    #[test]
    fn noiseless_scene_decodes() {
        let scene = generate(&SceneSpec::default_scene(), 1).unwrap();
        assert_eq!(recovered(&scene), 5);
    }
}
