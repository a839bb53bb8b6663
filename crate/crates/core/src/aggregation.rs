//! Collapsing the per-point token field into one token matrix per 3D proposal.
//!
//! Field-based strategies only look at *supported* points, those with at
//! least one contribution (`r > 0`). A proposal with no supported point
//! yields an empty-flagged zero matrix.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::PointCloud;
use crate::lifting::{depth_tested_pixels, with_pool, FrameRecord, LiftConfig, LiftError, NO_PIXEL};
use crate::lifting::{normalize_field, NormalizedField, TokenField};
use crate::mask::{PixelMask, PointSet};
use crate::tokens::TokenMatrix;

/// Default minimum pixel IoU for the maskwise baseline to accept a 2D match.
pub const DEFAULT_IOU_MIN: f64 = 0.25;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AggregationError {
    #[error("proposal has no points")]
    EmptyProposal,
    #[error("proposal confidence {0} outside [0, 1]")]
    Confidence(f32),
    #[error("proposal references point {index} but the cloud has {num_points} points")]
    OutOfRange { index: u32, num_points: usize },
    #[error("unknown aggregation method '{0}' (expected weighted, mean, max, random or maskwise)")]
    UnknownMethod(String),
    #[error("iou_min must lie in [0, 1), got {0}")]
    IouMin(f64),
    #[error(transparent)]
    Lift(#[from] LiftError),
}

/// Class-agnostic 3D instance mask with a confidence score.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal3D {
    points: PointSet,
    confidence: f32,
}

impl Proposal3D {
    pub fn new(points: PointSet, confidence: f32) -> Result<Self, AggregationError> {
        if points.is_empty() {
            return Err(AggregationError::EmptyProposal);
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(AggregationError::Confidence(confidence));
        }
        Ok(Self { points, confidence })
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn confidence(&self) -> f32 {
        self.confidence
    }

    fn check_range(&self, num_points: usize) -> Result<(), AggregationError> {
        match self.points.max() {
            Some(index) if index as usize >= num_points => {
                Err(AggregationError::OutOfRange { index, num_points })
            }
            _ => Ok(()),
        }
    }
}

/// Token matrix for one proposal plus bookkeeping about where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedTokens {
    pub tokens: TokenMatrix,
    /// Proposal points with `r > 0` (matched views for the maskwise baseline).
    pub support: u64,
    /// `Σ r` over the proposal (matched views for the maskwise baseline).
    pub total_weight: u64,
    /// Nothing contributed; `tokens` is all zeros.
    pub empty: bool,
}

impl AggregatedTokens {
    fn empty(rows: usize, cols: usize) -> Self {
        Self {
            tokens: TokenMatrix::zeros(rows, cols),
            support: 0,
            total_weight: 0,
            empty: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationMethod {
    Weighted,
    Mean,
    Max,
    Random,
    Maskwise,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 5] = [
        Self::Weighted,
        Self::Mean,
        Self::Max,
        Self::Random,
        Self::Maskwise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Weighted => "weighted",
            Self::Mean => "mean",
            Self::Max => "max",
            Self::Random => "random",
            Self::Maskwise => "maskwise",
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationMethod {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AggregationError::UnknownMethod(s.to_string()))
    }
}

struct Supported<'a> {
    norm: NormalizedField<'a>,
    /// `(point, r)` for supported proposal points, in proposal order.
    points: Vec<(u32, u32)>,
}

impl<'a> Supported<'a> {
    fn collect(proposal: &Proposal3D, field: &'a TokenField) -> Result<Self, AggregationError> {
        proposal.check_range(field.num_points())?;
        let points = proposal
            .points()
            .iter()
            .filter_map(|i| {
                let r = field.count(i);
                (r > 0).then_some((i, r))
            })
            .collect();
        Ok(Self {
            norm: normalize_field(field),
            points,
        })
    }

    fn total_weight(&self) -> u64 {
        self.points.iter().map(|&(_, r)| r as u64).sum()
    }

    fn finish(&self, tokens: TokenMatrix) -> AggregatedTokens {
        AggregatedTokens {
            tokens,
            support: self.points.len() as u64,
            total_weight: self.total_weight(),
            empty: false,
        }
    }

    fn empty(&self) -> AggregatedTokens {
        let (rows, cols) = self.norm.field().shape();
        AggregatedTokens::empty(rows, cols)
    }

    /// `Σ wᵢ·F̄ᵢ` accumulated in `f64`, in proposal order.
    fn weighted_sum(&self, weight: impl Fn(u32) -> f64) -> TokenMatrix {
        let (rows, cols) = self.norm.field().shape();
        let mut acc = vec![0.0f64; rows * cols];
        let mut buf = vec![0.0f32; rows * cols];
        for &(point, r) in &self.points {
            self.norm.write_into(point, &mut buf);
            let w = weight(r);
            for (a, &x) in acc.iter_mut().zip(&buf) {
                *a += w * x as f64;
            }
        }
        TokenMatrix::from_vec(rows, cols, acc.into_iter().map(|x| x as f32).collect()).unwrap()
    }
}

/// Count-weighted average `Σ F̄ᵢ·rᵢ / Σ rᵢ` of the normalized point tokens.
///
/// Since `F̄ᵢ = Fᵢ / rᵢ`, this equals the raw sums over the raw counts.
pub fn aggregate_weighted(
    proposal: &Proposal3D,
    field: &TokenField,
) -> Result<AggregatedTokens, AggregationError> {
    let s = Supported::collect(proposal, field)?;
    if s.points.is_empty() {
        return Ok(s.empty());
    }
    let total = s.total_weight() as f64;
    Ok(s.finish(s.weighted_sum(|r| r as f64 / total)))
}

/// Unweighted mean of `F̄ᵢ` over supported points.
pub fn aggregate_mean(
    proposal: &Proposal3D,
    field: &TokenField,
) -> Result<AggregatedTokens, AggregationError> {
    let s = Supported::collect(proposal, field)?;
    if s.points.is_empty() {
        return Ok(s.empty());
    }
    let n = s.points.len() as f64;
    Ok(s.finish(s.weighted_sum(|_| 1.0 / n)))
}

/// Elementwise maximum of `F̄ᵢ` over supported points.
pub fn aggregate_max(
    proposal: &Proposal3D,
    field: &TokenField,
) -> Result<AggregatedTokens, AggregationError> {
    let s = Supported::collect(proposal, field)?;
    let Some(&(first, _)) = s.points.first() else {
        return Ok(s.empty());
    };
    let mut out = s.norm.get(first);
    let mut buf = vec![0.0f32; out.len()];
    for &(point, _) in &s.points[1..] {
        s.norm.write_into(point, &mut buf);
        for (o, &x) in out.as_mut_slice().iter_mut().zip(&buf) {
            *o = o.max(x);
        }
    }
    Ok(s.finish(out))
}

/// `F̄` of one supported point drawn uniformly at random.
///
/// The draw uses ChaCha8 seeded through `SeedableRng::seed_from_u64(seed)`,
/// then a single `random_range(0..support)` over supported points in
/// ascending index order, so results are reproducible across platforms.
pub fn aggregate_random(
    proposal: &Proposal3D,
    field: &TokenField,
    seed: u64,
) -> Result<AggregatedTokens, AggregationError> {
    let s = Supported::collect(proposal, field)?;
    if s.points.is_empty() {
        return Ok(s.empty());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (point, _) = s.points[rng.random_range(0..s.points.len())];
    Ok(s.finish(s.norm.get(point)))
}

/// Derives an independent per-proposal seed (SplitMix64 finalizer).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dispatches the field-based methods; `Maskwise` needs frames and goes
/// through [`MaskwiseIndex`] instead.
pub fn aggregate(
    method: AggregationMethod,
    proposal: &Proposal3D,
    field: &TokenField,
    seed: u64,
) -> Result<AggregatedTokens, AggregationError> {
    match method {
        AggregationMethod::Weighted => aggregate_weighted(proposal, field),
        AggregationMethod::Mean => aggregate_mean(proposal, field),
        AggregationMethod::Max => aggregate_max(proposal, field),
        AggregationMethod::Random => aggregate_random(proposal, field, seed),
        AggregationMethod::Maskwise => Err(AggregationError::UnknownMethod(
            "maskwise requires frames".into(),
        )),
    }
}

/// Per-frame depth-tested pixel of every point, shared across proposals for
/// the maskwise baseline.
pub struct MaskwiseIndex<'a> {
    frames: Vec<&'a FrameRecord>,
    pixels: Vec<Vec<u32>>,
    shape: (usize, usize),
    width: usize,
    height: usize,
    num_points: usize,
}

impl<'a> MaskwiseIndex<'a> {
    pub fn new(
        cloud: &PointCloud,
        frames: &'a [FrameRecord],
        config: &LiftConfig,
    ) -> Result<Self, AggregationError> {
        config.validate()?;
        let mut order: Vec<&FrameRecord> = frames.iter().collect();
        order.sort_by_key(|f| f.id);
        for f in &order {
            let found = (f.depth.width(), f.depth.height());
            if found != (config.width, config.height) {
                return Err(LiftError::Dimensions {
                    frame: f.id,
                    what: "depth map".into(),
                    expected: (config.width, config.height),
                    found,
                }
                .into());
            }
            for m in &f.masks {
                let found = (m.pixels.width(), m.pixels.height());
                if found != (config.width, config.height) {
                    return Err(LiftError::Dimensions {
                        frame: f.id,
                        what: format!("mask {}", m.mask_id),
                        expected: (config.width, config.height),
                        found,
                    }
                    .into());
                }
            }
        }
        let shape = order
            .iter()
            .flat_map(|f| f.masks.iter())
            .map(|m| m.tokens.shape())
            .next()
            .unwrap_or((0, 0));
        let pixels = with_pool(config.deterministic, || {
            order
                .iter()
                .map(|f| {
                    depth_tested_pixels(cloud, &f.intrinsics, &f.pose, &f.depth, config.tau_depth)
                })
                .collect()
        })?;
        Ok(Self {
            frames: order,
            pixels,
            shape,
            width: config.width,
            height: config.height,
            num_points: cloud.len(),
        })
    }

    /// Pixel footprint of `proposal` in each frame (frames in ascending id).
    pub fn footprints(&self, proposal: &Proposal3D) -> Vec<PixelMask> {
        self.pixels
            .iter()
            .map(|px| {
                let mut mask = PixelMask::new(self.width, self.height);
                for i in proposal.points().iter() {
                    let p = px[i as usize];
                    if p != NO_PIXEL {
                        mask.insert_index(p as usize);
                    }
                }
                mask
            })
            .collect()
    }

    /// Per view, the 2D mask with highest pixel IoU against the proposal's
    /// footprint is accepted when its IoU exceeds `iou_min` (ties go to the
    /// lower mask id). Matched token matrices are averaged without weights.
    pub fn aggregate(
        &self,
        proposal: &Proposal3D,
        iou_min: f64,
    ) -> Result<AggregatedTokens, AggregationError> {
        if !(0.0..1.0).contains(&iou_min) {
            return Err(AggregationError::IouMin(iou_min));
        }
        proposal.check_range(self.num_points)?;
        let (rows, cols) = self.shape;
        let mut acc = vec![0.0f64; rows * cols];
        let mut matched = 0u64;
        for (frame, footprint) in self.frames.iter().zip(self.footprints(proposal)) {
            if footprint.is_empty() {
                continue;
            }
            let mut best: Option<(f64, u32, &TokenMatrix)> = None;
            for m in &frame.masks {
                let iou = footprint.iou(&m.pixels);
                let better = match best {
                    None => true,
                    Some((b, id, _)) => iou > b || (iou == b && m.mask_id < id),
                };
                if better {
                    best = Some((iou, m.mask_id, &m.tokens));
                }
            }
            if let Some((iou, _, tokens)) = best {
                if iou > iou_min {
                    for (a, &x) in acc.iter_mut().zip(tokens.as_slice()) {
                        *a += x as f64;
                    }
                    matched += 1;
                }
            }
        }
        if matched == 0 {
            return Ok(AggregatedTokens::empty(rows, cols));
        }
        let n = matched as f64;
        let tokens =
            TokenMatrix::from_vec(rows, cols, acc.into_iter().map(|a| (a / n) as f32).collect())
                .unwrap();
        Ok(AggregatedTokens {
            tokens,
            support: matched,
            total_weight: matched,
            empty: false,
        })
    }
}

/// One-shot maskwise aggregation; prefer [`MaskwiseIndex`] for many proposals.
pub fn aggregate_maskwise(
    proposal: &Proposal3D,
    cloud: &PointCloud,
    frames: &[FrameRecord],
    config: &LiftConfig,
    iou_min: f64,
) -> Result<AggregatedTokens, AggregationError> {
    MaskwiseIndex::new(cloud, frames, config)?.aggregate(proposal, iou_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraPose, DepthMap};
    use crate::lifting::Mask2D;

    fn scalar_field(entries: &[(u32, u32, f32)], n: usize) -> TokenField {
        TokenField::from_entries(n, 1, 1, entries.iter().map(|&(p, r, s)| (p, r, vec![s]))).unwrap()
    }

    fn proposal(points: &[u32]) -> Proposal3D {
        Proposal3D::new(PointSet::from_unsorted(points.to_vec()), 0.5).unwrap()
    }

    #[test]
    fn weighted_is_sum_over_counts() {
        let field = scalar_field(&[(0, 1, 4.0), (1, 3, 24.0)], 2);
        let agg = aggregate_weighted(&proposal(&[0, 1]), &field).unwrap();
        assert_eq!(agg.tokens.as_slice(), &[7.0]);
        assert_eq!((agg.support, agg.total_weight, agg.empty), (2, 4, false));
    }

    #[test]
    fn mean_and_weighted_differ_with_uneven_counts() {
        // F̄ = 2 (r = 1) and F̄ = 8 (r = 3).
        let field = scalar_field(&[(0, 1, 2.0), (1, 3, 24.0)], 2);
        let p = proposal(&[0, 1]);
        assert_eq!(aggregate_mean(&p, &field).unwrap().tokens.as_slice(), &[5.0]);
        assert_eq!(aggregate_weighted(&p, &field).unwrap().tokens.as_slice(), &[6.5]);
        assert_eq!(aggregate_max(&p, &field).unwrap().tokens.as_slice(), &[8.0]);
    }

    #[test]
    fn single_contribution_identity() {
        let t = vec![0.25, -1.5, 3.0];
        let field = TokenField::from_entries(3, 1, 3, vec![(2, 1, t.clone())]).unwrap();
        let p = proposal(&[0, 2]);
        for agg in [
            aggregate_weighted(&p, &field).unwrap(),
            aggregate_mean(&p, &field).unwrap(),
            aggregate_max(&p, &field).unwrap(),
            aggregate_random(&p, &field, 99).unwrap(),
        ] {
            assert_eq!(agg.tokens.as_slice(), t.as_slice());
            assert_eq!(agg.support, 1);
        }
    }

    #[test]
    fn unsupported_proposal_is_empty() {
        let field = scalar_field(&[(3, 2, 1.0)], 4);
        let p = proposal(&[0, 1]);
        for agg in [
            aggregate_weighted(&p, &field).unwrap(),
            aggregate_mean(&p, &field).unwrap(),
            aggregate_max(&p, &field).unwrap(),
            aggregate_random(&p, &field, 1).unwrap(),
        ] {
            assert!(agg.empty);
            assert!(agg.tokens.is_zero());
            assert_eq!((agg.support, agg.total_weight), (0, 0));
        }
    }

    #[test]
    fn max_mixed_signs() {
        let field = TokenField::from_entries(
            3,
            1,
            3,
            vec![(0, 1, vec![-1.0, 5.0, -3.0]), (1, 2, vec![-4.0, 2.0, 8.0]), (2, 1, vec![-0.5, -9.0, 1.0])],
        )
        .unwrap();
        let agg = aggregate_max(&proposal(&[0, 1, 2]), &field).unwrap();
        // Normalized rows: [-1, 5, -3], [-2, 1, 4], [-0.5, -9, 1]
        assert_eq!(agg.tokens.as_slice(), &[-0.5, 5.0, 4.0]);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let field = scalar_field(&[(0, 1, 1.0), (1, 1, 2.0), (2, 1, 3.0), (3, 1, 4.0)], 4);
        let p = proposal(&[0, 1, 2, 3]);
        let a = aggregate_random(&p, &field, 7).unwrap();
        let b = aggregate_random(&p, &field, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_skips_unsupported_points() {
        let field = scalar_field(&[(2, 1, 5.0)], 4);
        for seed in 0..50 {
            let agg = aggregate_random(&proposal(&[0, 1, 2, 3]), &field, seed).unwrap();
            assert_eq!(agg.tokens.as_slice(), &[5.0]);
        }
    }

    #[test]
    fn proposal_validation() {
        assert_eq!(
            Proposal3D::new(PointSet::default(), 0.5),
            Err(AggregationError::EmptyProposal)
        );
        assert!(matches!(
            Proposal3D::new(PointSet::from_unsorted(vec![1]), 1.5),
            Err(AggregationError::Confidence(_))
        ));
        let field = scalar_field(&[], 2);
        assert_eq!(
            aggregate_weighted(&proposal(&[5]), &field),
            Err(AggregationError::OutOfRange { index: 5, num_points: 2 })
        );
    }

    #[test]
    fn method_names() {
        for m in AggregationMethod::ALL {
            assert_eq!(m.name().parse::<AggregationMethod>().unwrap(), m);
        }
        assert!(matches!(
            "median".parse::<AggregationMethod>(),
            Err(AggregationError::UnknownMethod(_))
        ));
    }

    /// Two points at depth 2 landing on pixels (4, 4) and (5, 4) of an 8×8 view.
    fn maskwise_scene(masks: Vec<(u32, Vec<(u64, u64)>, f32)>, frame_ids: &[u32]) -> (PointCloud, Vec<FrameRecord>) {
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, 2.0], [0.2, 0.0, 2.0]]);
        let k = CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0).unwrap();
        let frames = frame_ids
            .iter()
            .map(|&id| FrameRecord {
                id,
                intrinsics: k,
                pose: CameraPose::identity(),
                depth: DepthMap::from_meters(8, 8, vec![2.0; 64]),
                masks: masks
                    .iter()
                    .map(|(mid, runs, value)| Mask2D {
                        frame_id: id,
                        mask_id: *mid,
                        pixels: PixelMask::from_runs(8, 8, runs).unwrap(),
                        tokens: TokenMatrix::from_vec(1, 1, vec![*value + id as f32]).unwrap(),
                    })
                    .collect(),
                color_path: None,
            })
            .collect();
        (cloud, frames)
    }

    #[test]
    fn maskwise_exact_cover() {
        // Footprint = pixels 36, 37.
        let (cloud, frames) = maskwise_scene(vec![(0, vec![(36, 2)], 3.0), (1, vec![(0, 8)], 9.0)], &[0]);
        let agg = aggregate_maskwise(&proposal(&[0, 1]), &cloud, &frames, &LiftConfig::new(8, 8), DEFAULT_IOU_MIN).unwrap();
        assert_eq!(agg.tokens.as_slice(), &[3.0]);
        assert_eq!(agg.support, 1);
    }

    #[test]
    fn maskwise_averages_views() {
        let (cloud, frames) = maskwise_scene(vec![(0, vec![(36, 2)], 3.0)], &[0, 4]);
        let agg = aggregate_maskwise(&proposal(&[0, 1]), &cloud, &frames, &LiftConfig::new(8, 8), DEFAULT_IOU_MIN).unwrap();
        // Views carry 3 and 7.
        assert_eq!(agg.tokens.as_slice(), &[5.0]);
        assert_eq!(agg.support, 2);
    }

    #[test]
    fn maskwise_threshold() {
        // IoU of footprint {36, 37} with {37..45} is 1/9.
        let (cloud, frames) = maskwise_scene(vec![(0, vec![(37, 8)], 3.0)], &[0]);
        let agg = aggregate_maskwise(&proposal(&[0, 1]), &cloud, &frames, &LiftConfig::new(8, 8), DEFAULT_IOU_MIN).unwrap();
        assert!(agg.empty);
        let agg = aggregate_maskwise(&proposal(&[0, 1]), &cloud, &frames, &LiftConfig::new(8, 8), 0.1).unwrap();
        assert!(!agg.empty);
        assert!(matches!(
            aggregate_maskwise(&proposal(&[0]), &cloud, &frames, &LiftConfig::new(8, 8), 1.0),
            Err(AggregationError::IouMin(_))
        ));
    }

    #[test]
    fn maskwise_tie_prefers_lower_id() {
        let (cloud, frames) = maskwise_scene(vec![(5, vec![(36, 1)], 1.0), (2, vec![(37, 1)], 2.0)], &[0]);
        let agg = aggregate_maskwise(&proposal(&[0, 1]), &cloud, &frames, &LiftConfig::new(8, 8), 0.25).unwrap();
        assert_eq!(agg.tokens.as_slice(), &[2.0]);
    }

    #[test]
    fn seeds_split() {
        assert_ne!(split_seed(7, 0), split_seed(7, 1));
        assert_eq!(split_seed(7, 3), split_seed(7, 3));
    }
}
