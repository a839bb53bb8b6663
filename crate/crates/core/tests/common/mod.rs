//! Shared oracles and random scene builders for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::Vector3;
use oelift::dataio::PointCloud;
use oelift::geometry::{depth_lookup, project_point, CameraIntrinsics, CameraPose};
use oelift::lifting::{FrameRecord, LiftConfig, Mask2D, TokenField};
use oelift::mask::PixelMask;
use oelift::synth::render_depth;
use oelift::tokens::TokenMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A tiny scene with random cameras, perturbed depth maps, overlapping masks
/// and random (signed) tokens.
pub struct MicroScene {
    pub cloud: PointCloud,
    pub frames: Vec<FrameRecord>,
    pub config: LiftConfig,
    pub shape: (usize, usize),
}

pub fn random_tokens(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TokenMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    TokenMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    loop {
        let eye = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        if eye.norm() < 1.5 {
            continue;
        }
        let target = Vector3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        );
        if let Ok(p) = CameraPose::look_at(eye, target, Vector3::new(0.0, 0.0, 1.0)) {
            return p;
        }
    }
}

pub fn micro_scene(seed: u64) -> MicroScene {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=100);
    let positions: Vec<[f32; 3]> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.6f32..0.6)))
        .collect();
    let cloud = PointCloud::from_positions(positions);
    let (width, height) = (rng.random_range(4..=14), rng.random_range(4..=12));
    let f = rng.random_range(4.0..12.0);
    let intrinsics =
        CameraIntrinsics::new(f, f * rng.random_range(0.8..1.2), width as f64 / 2.0, height as f64 / 2.0)
            .unwrap();
    let shape = (rng.random_range(1..=3), rng.random_range(1..=4));
    let num_frames = rng.random_range(0..=5);
    let mut ids: Vec<u32> = (0..20).collect();
    ids.shuffle(&mut rng);
    let mut frames = Vec::new();
    for &id in &ids[..num_frames] {
        let pose = random_pose(&mut rng);
        let mut depth = render_depth(&cloud, &pose, &intrinsics, width, height);
        for d in depth.as_mut_slice() {
            let roll: f64 = rng.random();
            if *d > 0.0 && roll < 0.25 {
                *d += rng.random_range(-0.3..0.3);
                *d = d.max(0.0);
            } else if roll < 0.35 {
                *d = 0.0;
            } else if *d == 0.0 && roll < 0.45 {
                *d = rng.random_range(0.5..5.0);
            }
        }
        let num_masks = rng.random_range(0..=4);
        let mut mask_ids: Vec<u32> = (0..10).collect();
        mask_ids.shuffle(&mut rng);
        let masks = mask_ids[..num_masks]
            .iter()
            .map(|&mask_id| {
                let density: f64 = rng.random_range(0.1..0.9);
                let mut pixels = PixelMask::new(width, height);
                for idx in 0..width * height {
                    if rng.random::<f64>() < density {
                        pixels.insert_index(idx);
                    }
                }
                Mask2D {
                    frame_id: id,
                    mask_id,
                    pixels,
                    tokens: random_tokens(&mut rng, shape.0, shape.1),
                }
            })
            .collect();
        frames.push(FrameRecord {
            id,
            intrinsics,
            pose,
            depth,
            masks,
            color_path: None,
        });
    }
    let mut config = LiftConfig::new(width, height);
    config.tau_depth = rng.random_range(0.02..0.3);
    MicroScene {
        cloud,
        frames,
        config,
        shape,
    }
}

/// True when point `i` is visible in `mask` of `frame` under `tau`.
pub fn naive_visible(cloud: &PointCloud, i: usize, frame: &FrameRecord, mask: &Mask2D, tau: f64) -> bool {
    let proj = project_point(&cloud.position(i), &frame.intrinsics, &frame.pose);
    if !(proj.d > 0.0) {
        return false;
    }
    let Some(captured) = depth_lookup(&frame.depth, proj.u, proj.v) else {
        return false;
    };
    let (col, row) = (proj.u.floor() as usize, proj.v.floor() as usize);
    mask.pixels.contains(col, row) && (proj.d - captured).abs() <= tau
}

/// Triple loop over points, frames by id and masks by id, summing in `f32`.
pub fn naive_lift(
    cloud: &PointCloud,
    frames: &[FrameRecord],
    config: &LiftConfig,
) -> BTreeMap<u32, (u32, Vec<f32>)> {
    let mut order: Vec<&FrameRecord> = frames.iter().collect();
    order.sort_by_key(|f| f.id);
    let mut out = BTreeMap::new();
    for i in 0..cloud.len() {
        let mut count = 0u32;
        let mut sums: Option<Vec<f32>> = None;
        for frame in &order {
            let mut masks: Vec<&Mask2D> = frame.masks.iter().collect();
            masks.sort_by_key(|m| m.mask_id);
            for mask in masks {
                if naive_visible(cloud, i, frame, mask, config.tau_depth) {
                    count += 1;
                    let acc = sums.get_or_insert_with(|| vec![0.0; mask.tokens.len()]);
                    for (a, x) in acc.iter_mut().zip(mask.tokens.as_slice()) {
                        *a += *x;
                    }
                }
            }
        }
        if let Some(s) = sums {
            out.insert(i as u32, (count, s));
        }
    }
    out
}

pub fn field_as_map(field: &TokenField) -> BTreeMap<u32, (u32, Vec<f32>)> {
    field
        .entries()
        .map(|e| (e.point, (e.count, e.sums.to_vec())))
        .collect()
}

/// Bitwise comparison (so `-0.0` and `0.0` differ and NaN equals itself).
pub fn same_bits(a: &BTreeMap<u32, (u32, Vec<f32>)>, b: &BTreeMap<u32, (u32, Vec<f32>)>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((pa, (ca, sa)), (pb, (cb, sb)))| {
            pa == pb
                && ca == cb
                && sa.len() == sb.len()
                && sa.iter().zip(sb).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

/// Minimum over all maximal one-to-one assignments, each summed in row order.
pub fn brute_force_assignment(rows: usize, cols: usize, cost: &[f64]) -> f64 {
    fn rec(row: usize, rows: usize, cols: usize, cost: &[f64], used: &mut Vec<bool>, skips: usize, acc: f64, best: &mut f64) {
        if row == rows {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                rec(row + 1, rows, cols, cost, used, skips, acc + cost[row * cols + c], best);
                used[c] = false;
            }
        }
        // With more rows than columns some rows stay unassigned.
        if skips > 0 {
            rec(row + 1, rows, cols, cost, used, skips - 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    let skips = rows.saturating_sub(cols);
    rec(0, rows, cols, cost, &mut vec![false; cols], skips, 0.0, &mut best);
    if rows == 0 || cols == 0 {
        0.0
    } else {
        best
    }
}
