//! Lifting 2D mask tokens onto the point cloud.
//!
//! Each frame's masks are tested against every point: a point counts for a
//! mask when it projects in front of the camera, lands on one of the mask's
//! pixels, and agrees with the captured depth there within `tau_depth`. The
//! token matrices of all masks that see a point are summed into a sparse
//! [`TokenField`], together with the number of contributing masks.
//!
//! Contributions to a point are always added in canonical `(frame id, mask id)`
//! order. Work is split across points, never across the sum for one point, so
//! the field is bitwise identical for any thread count and any input frame order.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::binio::{BinError, Decoder, Encoder};
use crate::dataio::{DataError, PointCloud};
use crate::geometry::{project_point, CameraIntrinsics, CameraPose, DepthMap};
use crate::mask::PixelMask;
use crate::tokens::TokenMatrix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LiftError {
    #[error("invalid lift configuration: {0}")]
    InvalidConfig(String),
    #[error("frame {frame}: {what} is {found:?} (width, height) but the scene is {expected:?}")]
    Dimensions {
        frame: u32,
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("frame {frame} mask {mask}: token matrix is {found:?} but the dataset uses {expected:?}")]
    TokenShape {
        frame: u32,
        mask: u32,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("frame {frame} mask {mask}: token matrix must have at least one element")]
    EmptyTokens { frame: u32, mask: u32 },
    #[error("mask {mask} belongs to frame {mask_frame}, not frame {frame}")]
    ForeignMask { frame: u32, mask: u32, mask_frame: u32 },
    #[error("failed to start worker pool: {0}")]
    ThreadPool(String),
}

/// One 2D mask of a frame and the visual tokens describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D {
    pub frame_id: u32,
    pub mask_id: u32,
    pub pixels: PixelMask,
    pub tokens: TokenMatrix,
}

/// A single RGB-D view with its masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: u32,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub depth: DepthMap,
    pub masks: Vec<Mask2D>,
    /// Color image location, passed through for external models.
    pub color_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftConfig {
    /// Maximum `|projected depth − captured depth|` in meters for a point to count as visible.
    pub tau_depth: f64,
    pub width: usize,
    pub height: usize,
    /// Run on the calling thread only.
    pub deterministic: bool,
    /// Accumulate sums in `f64` and round to `f32` once at the end.
    pub wide_accumulator: bool,
}

impl LiftConfig {
    pub const DEFAULT_TAU_DEPTH: f64 = 0.1;

    pub fn new(width: usize, height: usize) -> Self {
        Self {
            tau_depth: Self::DEFAULT_TAU_DEPTH,
            width,
            height,
            deterministic: false,
            wide_accumulator: false,
        }
    }

    pub fn validate(&self) -> Result<(), LiftError> {
        if !(self.tau_depth > 0.0 && self.tau_depth.is_finite()) {
            return Err(LiftError::InvalidConfig(format!(
                "tau_depth must be a positive number of meters, got {}",
                self.tau_depth
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(LiftError::InvalidConfig(format!(
                "image size must be non-empty, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Points of the cloud that one mask sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityRecord {
    pub frame_id: u32,
    pub mask_id: u32,
    /// Strictly increasing point indices.
    pub points: Vec<u32>,
}

pub(crate) const NO_PIXEL: u32 = u32::MAX;

fn check_frame(frame: &FrameRecord, config: &LiftConfig) -> Result<(), LiftError> {
    let expected = (config.width, config.height);
    let depth = (frame.depth.width(), frame.depth.height());
    if depth != expected {
        return Err(LiftError::Dimensions {
            frame: frame.id,
            what: "depth map".into(),
            expected,
            found: depth,
        });
    }
    for mask in &frame.masks {
        check_mask(frame, mask, config)?;
    }
    Ok(())
}

fn check_mask(frame: &FrameRecord, mask: &Mask2D, config: &LiftConfig) -> Result<(), LiftError> {
    if mask.frame_id != frame.id {
        return Err(LiftError::ForeignMask {
            frame: frame.id,
            mask: mask.mask_id,
            mask_frame: mask.frame_id,
        });
    }
    let expected = (config.width, config.height);
    let found = (mask.pixels.width(), mask.pixels.height());
    if found != expected {
        return Err(LiftError::Dimensions {
            frame: frame.id,
            what: format!("mask {}", mask.mask_id),
            expected,
            found,
        });
    }
    Ok(())
}

/// Row-major pixel index that each point lands on and passes the depth test
/// at, or [`NO_PIXEL`].
pub(crate) fn depth_tested_pixels(
    cloud: &PointCloud,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    depth: &DepthMap,
    tau_depth: f64,
) -> Vec<u32> {
    let (width, height) = (depth.width(), depth.height());
    cloud
        .positions()
        .par_iter()
        .map(|p| {
            let proj = project_point(&PointCloud::to_vector(p), intrinsics, pose);
            let Some((col, row)) = proj.pixel(width, height) else {
                return NO_PIXEL;
            };
            let captured = depth.get(col, row);
            if captured > 0.0 && (proj.d - captured).abs() <= tau_depth {
                (row * width + col) as u32
            } else {
                NO_PIXEL
            }
        })
        .collect()
}

/// Points visible in `mask`: in front of the camera, inside the image and the
/// mask, and within `tau_depth` of the captured depth.
pub fn compute_visibility(
    cloud: &PointCloud,
    frame: &FrameRecord,
    mask: &Mask2D,
    config: &LiftConfig,
) -> Result<VisibilityRecord, LiftError> {
    config.validate()?;
    let expected = (config.width, config.height);
    let depth = (frame.depth.width(), frame.depth.height());
    if depth != expected {
        return Err(LiftError::Dimensions {
            frame: frame.id,
            what: "depth map".into(),
            expected,
            found: depth,
        });
    }
    check_mask(frame, mask, config)?;
    let pixels = with_pool(config.deterministic, || {
        depth_tested_pixels(cloud, &frame.intrinsics, &frame.pose, &frame.depth, config.tau_depth)
    })?;
    let points = pixels
        .iter()
        .enumerate()
        .filter(|&(_, &px)| px != NO_PIXEL && mask.pixels.contains_index(px as usize))
        .map(|(i, _)| i as u32)
        .collect();
    Ok(VisibilityRecord {
        frame_id: frame.id,
        mask_id: mask.mask_id,
        points,
    })
}

/// Runs `f` on the global pool, or on a private single-thread pool when
/// `sequential` is set.
pub(crate) fn with_pool<T: Send>(
    sequential: bool,
    f: impl FnOnce() -> T + Send,
) -> Result<T, LiftError> {
    if sequential {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| LiftError::ThreadPool(e.to_string()))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

trait Accumulator: Copy + Default + Send + Sync {
    fn add(&mut self, x: f32);
    fn to_f32(self) -> f32;
}

impl Accumulator for f32 {
    #[inline]
    fn add(&mut self, x: f32) {
        *self += x;
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Accumulator for f64 {
    #[inline]
    fn add(&mut self, x: f32) {
        *self += x as f64;
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

struct SparseSums<A> {
    width: usize,
    slot_of: Vec<u32>,
    points: Vec<u32>,
    counts: Vec<u32>,
    sums: Vec<A>,
}

impl<A: Accumulator> SparseSums<A> {
    fn new(num_points: usize, width: usize) -> Self {
        Self {
            width,
            slot_of: vec![u32::MAX; num_points],
            points: Vec::new(),
            counts: Vec::new(),
            sums: Vec::new(),
        }
    }

    fn slot(&mut self, point: u32) -> usize {
        let slot = &mut self.slot_of[point as usize];
        if *slot == u32::MAX {
            *slot = self.points.len() as u32;
            self.points.push(point);
            self.counts.push(0);
            self.sums.resize(self.sums.len() + self.width, A::default());
        }
        *slot as usize
    }

    /// `hits` holds `(point, mask position)` sorted by point, then by mask order.
    fn add_hits(&mut self, hits: &[(u32, u32)], masks: &[&Mask2D]) {
        if hits.is_empty() {
            return;
        }
        let mut groups: Vec<(usize, usize, usize)> = Vec::new();
        let mut start = 0;
        while start < hits.len() {
            let point = hits[start].0;
            let end = start + hits[start..].iter().take_while(|h| h.0 == point).count();
            let slot = self.slot(point);
            self.counts[slot] += (end - start) as u32;
            groups.push((slot, start, end));
            start = end;
        }
        groups.sort_unstable_by_key(|g| g.0);

        let mut chunks = self.sums.chunks_mut(self.width).enumerate();
        let mut work = Vec::with_capacity(groups.len());
        for (slot, start, end) in groups {
            let (_, chunk) = chunks
                .find(|(s, _)| *s == slot)
                .expect("slot allocated above");
            work.push((chunk, &hits[start..end]));
        }
        work.into_par_iter().for_each(|(chunk, point_hits)| {
            for &(_, mask) in point_hits {
                for (acc, &x) in chunk.iter_mut().zip(masks[mask as usize].tokens.as_slice()) {
                    acc.add(x);
                }
            }
        });
    }

    fn finish(self, rows: usize, cols: usize) -> TokenField {
        let num_points = self.slot_of.len();
        let mut points = Vec::with_capacity(self.points.len());
        let mut counts = Vec::with_capacity(self.points.len());
        let mut sums = Vec::with_capacity(self.sums.len());
        for (point, &slot) in self.slot_of.iter().enumerate() {
            if slot == u32::MAX {
                continue;
            }
            let slot = slot as usize;
            points.push(point as u32);
            counts.push(self.counts[slot]);
            sums.extend(
                self.sums[slot * self.width..(slot + 1) * self.width]
                    .iter()
                    .map(|a| a.to_f32()),
            );
        }
        TokenField {
            num_points,
            rows,
            cols,
            points,
            counts,
            sums,
        }
    }
}

enum Sums {
    Narrow(SparseSums<f32>),
    Wide(SparseSums<f64>),
}

/// Incremental builder for a [`TokenField`], fed one frame at a time.
///
/// Frames must be added in ascending frame id for the canonical summation
/// order; [`accumulate_tokens`] takes care of that for in-memory frame lists.
pub struct FieldAccumulator<'a> {
    cloud: &'a PointCloud,
    config: LiftConfig,
    rows: usize,
    cols: usize,
    sums: Sums,
    frames: usize,
}

impl<'a> FieldAccumulator<'a> {
    pub fn new(
        cloud: &'a PointCloud,
        rows: usize,
        cols: usize,
        config: &LiftConfig,
    ) -> Result<Self, LiftError> {
        config.validate()?;
        let n = cloud.len();
        let width = rows * cols;
        let sums = if config.wide_accumulator {
            Sums::Wide(SparseSums::new(n, width))
        } else {
            Sums::Narrow(SparseSums::new(n, width))
        };
        Ok(Self {
            cloud,
            config: config.clone(),
            rows,
            cols,
            sums,
            frames: 0,
        })
    }

    pub fn frames_added(&self) -> usize {
        self.frames
    }

    pub fn add_frame(&mut self, frame: &FrameRecord) -> Result<(), LiftError> {
        check_frame(frame, &self.config)?;
        let mut masks: Vec<&Mask2D> = frame.masks.iter().collect();
        masks.sort_by_key(|m| m.mask_id);
        for mask in &masks {
            if mask.tokens.shape() != (self.rows, self.cols) {
                return Err(LiftError::TokenShape {
                    frame: frame.id,
                    mask: mask.mask_id,
                    expected: (self.rows, self.cols),
                    found: mask.tokens.shape(),
                });
            }
        }
        if self.rows * self.cols == 0 && !masks.is_empty() {
            return Err(LiftError::EmptyTokens {
                frame: frame.id,
                mask: masks[0].mask_id,
            });
        }

        let cloud = self.cloud;
        let tau = self.config.tau_depth;
        let sums = &mut self.sums;
        with_pool(self.config.deterministic, || {
            let pixels =
                depth_tested_pixels(cloud, &frame.intrinsics, &frame.pose, &frame.depth, tau);
            let hits: Vec<(u32, u32)> = pixels
                .par_iter()
                .enumerate()
                .filter(|&(_, &px)| px != NO_PIXEL)
                .flat_map_iter(|(point, &px)| {
                    masks
                        .iter()
                        .enumerate()
                        .filter(move |(_, m)| m.pixels.contains_index(px as usize))
                        .map(move |(k, _)| (point as u32, k as u32))
                })
                .collect();
            match sums {
                Sums::Narrow(s) => s.add_hits(&hits, &masks),
                Sums::Wide(s) => s.add_hits(&hits, &masks),
            }
        })?;
        self.frames += 1;
        Ok(())
    }

    pub fn finish(self) -> TokenField {
        match self.sums {
            Sums::Narrow(s) => s.finish(self.rows, self.cols),
            Sums::Wide(s) => s.finish(self.rows, self.cols),
        }
    }
}

/// Sums every visible mask's tokens into a per-point field.
///
/// The token shape is taken from the first mask in canonical order; with no
/// masks at all the field is empty with shape `(0, 0)`.
pub fn accumulate_tokens(
    cloud: &PointCloud,
    frames: &[FrameRecord],
    config: &LiftConfig,
) -> Result<TokenField, LiftError> {
    let mut order: Vec<&FrameRecord> = frames.iter().collect();
    order.sort_by_key(|f| f.id);
    let (rows, cols) = order
        .iter()
        .filter_map(|f| f.masks.iter().min_by_key(|m| m.mask_id))
        .map(|m| m.tokens.shape())
        .next()
        .unwrap_or((0, 0));
    let mut acc = FieldAccumulator::new(cloud, rows, cols, config)?;
    for frame in order {
        acc.add_frame(frame)?;
    }
    Ok(acc.finish())
}

/// Sparse per-point token sums and contribution counts.
///
/// Only points with at least one contribution are stored; entries are kept
/// in ascending point order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenField {
    num_points: usize,
    rows: usize,
    cols: usize,
    points: Vec<u32>,
    counts: Vec<u32>,
    sums: Vec<f32>,
}

/// A stored entry of a [`TokenField`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldEntry<'a> {
    pub point: u32,
    pub count: u32,
    pub sums: &'a [f32],
}

impl TokenField {
    pub fn empty(num_points: usize, rows: usize, cols: usize) -> Self {
        Self {
            num_points,
            rows,
            cols,
            points: Vec::new(),
            counts: Vec::new(),
            sums: Vec::new(),
        }
    }

    /// Builds a field from `(point, count, sums)` entries; entries must be in
    /// strictly ascending point order with counts ≥ 1.
    pub fn from_entries(
        num_points: usize,
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (u32, u32, Vec<f32>)>,
    ) -> Result<Self, String> {
        let mut field = Self::empty(num_points, rows, cols);
        for (point, count, sums) in entries {
            field.push_entry(point, count, &sums)?;
        }
        Ok(field)
    }

    fn push_entry(&mut self, point: u32, count: u32, sums: &[f32]) -> Result<(), String> {
        if point as usize >= self.num_points {
            return Err(format!("point {point} out of range for {} points", self.num_points));
        }
        if self.points.last().is_some_and(|&last| last >= point) {
            return Err(format!("point {point} out of order"));
        }
        if count == 0 {
            return Err(format!("point {point} stored with zero count"));
        }
        if sums.len() != self.rows * self.cols {
            return Err(format!(
                "point {point}: {} sums for {}x{} tokens",
                sums.len(),
                self.rows,
                self.cols
            ));
        }
        self.points.push(point);
        self.counts.push(count);
        self.sums.extend_from_slice(sums);
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of stored (touched) points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn entry_at(&self, slot: usize) -> FieldEntry<'_> {
        let w = self.rows * self.cols;
        FieldEntry {
            point: self.points[slot],
            count: self.counts[slot],
            sums: &self.sums[slot * w..(slot + 1) * w],
        }
    }

    pub fn get(&self, point: u32) -> Option<FieldEntry<'_>> {
        self.points
            .binary_search(&point)
            .ok()
            .map(|slot| self.entry_at(slot))
    }

    /// Contribution count `r`, zero for untouched points.
    pub fn count(&self, point: u32) -> u32 {
        self.get(point).map_or(0, |e| e.count)
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = FieldEntry<'_>> + '_ {
        (0..self.points.len()).map(|slot| self.entry_at(slot))
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Read-only view yielding `F / r` per point, or zeros where `r = 0`.
#[derive(Debug, Clone, Copy)]
pub struct NormalizedField<'a> {
    field: &'a TokenField,
}

pub fn normalize_field(field: &TokenField) -> NormalizedField<'_> {
    NormalizedField { field }
}

impl<'a> NormalizedField<'a> {
    pub fn field(&self) -> &'a TokenField {
        self.field
    }

    pub fn get(&self, point: u32) -> TokenMatrix {
        let (rows, cols) = self.field.shape();
        let mut out = TokenMatrix::zeros(rows, cols);
        self.write_into(point, out.as_mut_slice());
        out
    }

    /// Writes the normalized tokens of `point` into `out` and returns its count.
    pub fn write_into(&self, point: u32, out: &mut [f32]) -> u32 {
        match self.field.get(point) {
            Some(entry) => {
                let r = entry.count as f32;
                for (o, &s) in out.iter_mut().zip(entry.sums) {
                    *o = s / r;
                }
                entry.count
            }
            None => {
                out.fill(0.0);
                0
            }
        }
    }
}

const FIELD_MAGIC: &[u8; 4] = b"OEF3";
const FIELD_VERSION: u32 = 1;

pub fn encode_field(field: &TokenField) -> Vec<u8> {
    let mut enc = Encoder::with_header(FIELD_MAGIC, FIELD_VERSION);
    enc.u32(field.num_points as u32);
    enc.u32(field.rows as u32);
    enc.u32(field.cols as u32);
    enc.u32(field.len() as u32);
    for entry in field.entries() {
        enc.u32(entry.point);
        enc.u32(entry.count);
        enc.f32s(entry.sums);
    }
    enc.finish()
}

pub fn decode_field(bytes: &[u8]) -> Result<TokenField, BinError> {
    let mut dec = Decoder::with_header(bytes, FIELD_MAGIC, FIELD_VERSION)?;
    let num_points = dec.u32()? as usize;
    let rows = dec.u32()? as usize;
    let cols = dec.u32()? as usize;
    let entries = dec.u32()? as usize;
    let width = rows
        .checked_mul(cols)
        .ok_or_else(|| dec.invalid("token shape overflows"))?;
    let mut field = TokenField::empty(num_points, rows, cols);
    for _ in 0..entries {
        let at = dec.offset();
        let point = dec.u32()?;
        let count = dec.u32()?;
        let sums = dec.f32s(width)?;
        field
            .push_entry(point, count, &sums)
            .map_err(|message| BinError::Invalid { offset: at, message })?;
    }
    dec.finish()?;
    Ok(field)
}

pub fn save_field(field: &TokenField, path: &Path) -> Result<(), DataError> {
    crate::dataio::write_bytes(path, &encode_field(field))
}

pub fn load_field(path: &Path) -> Result<TokenField, DataError> {
    let bytes = crate::dataio::read_bytes(path)?;
    decode_field(&bytes).map_err(|source| DataError::Binary {
        path: path.to_path_buf(),
        source,
    })
}
