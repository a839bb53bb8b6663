//! Binary masks: sets of 3D point indices and 2D pixel masks.

use std::fmt;

/// Sorted, duplicate-free set of point indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PointSet(Vec<u32>);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("point indices must be strictly increasing (position {position}: {previous} then {next})")]
pub struct UnsortedIndices {
    pub position: usize,
    pub previous: u32,
    pub next: u32,
}

impl PointSet {
    /// Accepts indices that are already strictly increasing.
    pub fn from_sorted(indices: Vec<u32>) -> Result<Self, UnsortedIndices> {
        if let Some(position) = indices.windows(2).position(|w| w[0] >= w[1]) {
            return Err(UnsortedIndices {
                position: position + 1,
                previous: indices[position],
                next: indices[position + 1],
            });
        }
        Ok(Self(indices))
    }

    /// Sorts and removes duplicates.
    pub fn from_unsorted(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn max(&self) -> Option<u32> {
        self.0.last().copied()
    }

    pub fn contains(&self, index: u32) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// `|self ∩ other|` by a linear merge.
    pub fn intersection_len(&self, other: &PointSet) -> usize {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.0
    }
}

impl FromIterator<u32> for PointSet {
    fn from_iter<T: IntoIterator<Item = u32>>(iter: T) -> Self {
        Self::from_unsorted(iter.into_iter().collect())
    }
}

/// Pixel membership over a `width × height` image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl fmt::Debug for PixelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PixelMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("run ({start}, {length}) exceeds image of {pixels} pixels")]
pub struct RunOutOfBounds {
    pub start: u64,
    pub length: u64,
    pub pixels: u64,
}

impl PixelMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        }
    }

    /// Builds a mask from `(start, length)` runs over row-major pixel order.
    /// Overlapping runs are allowed and simply union.
    pub fn from_runs(
        width: usize,
        height: usize,
        runs: &[(u64, u64)],
    ) -> Result<Self, RunOutOfBounds> {
        let mut mask = Self::new(width, height);
        let pixels = (width * height) as u64;
        for &(start, length) in runs {
            let end = start.checked_add(length).filter(|&e| e <= pixels).ok_or(RunOutOfBounds {
                start,
                length,
                pixels,
            })?;
            for idx in start..end {
                mask.insert_index(idx as usize);
            }
        }
        Ok(mask)
    }

    /// Maximal runs of set pixels in row-major order.
    pub fn to_runs(&self) -> Vec<(u64, u64)> {
        let mut runs = Vec::new();
        let mut current: Option<(u64, u64)> = None;
        for idx in 0..self.width * self.height {
            if self.contains_index(idx) {
                match current.as_mut() {
                    Some((_, len)) => *len += 1,
                    None => current = Some((idx as u64, 1)),
                }
            } else if let Some(run) = current.take() {
                runs.push(run);
            }
        }
        runs.extend(current);
        runs
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn contains_index(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    #[inline]
    pub fn contains(&self, col: usize, row: usize) -> bool {
        col < self.width && row < self.height && self.contains_index(row * self.width + col)
    }

    #[inline]
    pub fn insert_index(&mut self, idx: usize) {
        self.words[idx / 64] |= 1 << (idx % 64);
    }

    pub fn insert(&mut self, col: usize, row: usize) {
        self.insert_index(row * self.width + col);
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// `|self ∩ other|`; both masks must share dimensions.
    pub fn intersection_area(&self, other: &PixelMask) -> usize {
        debug_assert_eq!((self.width, self.height), (other.width, other.height));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Pixel IoU; 0 when both masks are empty.
    pub fn iou(&self, other: &PixelMask) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}
