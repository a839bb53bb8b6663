//! Per-frame 2D mask files.
//!
//! ```text
//! H W num_masks
//! mask_id run_count start length start length ...
//! ```
//!
//! Runs index row-major pixel order. Whitespace, including line breaks, is
//! free between numbers.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_bytes, DataError};
use crate::mask::PixelMask;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskFile {
    pub width: usize,
    pub height: usize,
    /// `(mask_id, pixels)` in file order.
    pub masks: Vec<(u32, PixelMask)>,
}

struct Tokens<'a> {
    path: &'a Path,
    words: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let words = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |w| (i + 1, w)));
        Self {
            path,
            words: Box::new(words),
            line: 1,
        }
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, DataError> {
        let (line, word) = self
            .words
            .next()
            .ok_or_else(|| DataError::parse(self.path, self.line, format!("unexpected end of file reading {what}")))?;
        self.line = line;
        word.parse()
            .map_err(|_| DataError::parse(self.path, line, format!("bad {what} '{word}'")))
    }
}

pub fn parse_mask_file(path: &Path, text: &str) -> Result<MaskFile, DataError> {
    let mut tok = Tokens::new(path, text);
    let height: usize = tok.next("height")?;
    let width: usize = tok.next("width")?;
    let count: usize = tok.next("mask count")?;
    let mut seen = HashSet::new();
    let mut masks = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let id: u32 = tok.next("mask id")?;
        let line = tok.line;
        if !seen.insert(id) {
            return Err(DataError::parse(path, line, format!("duplicate mask id {id}")));
        }
        let runs: usize = tok.next("run count")?;
        let mut pairs = Vec::with_capacity(runs.min(1 << 16));
        for _ in 0..runs {
            let start: u64 = tok.next("run start")?;
            let length: u64 = tok.next("run length")?;
            pairs.push((start, length));
        }
        let pixels = PixelMask::from_runs(width, height, &pairs)
            .map_err(|e| DataError::parse(path, tok.line, format!("mask {id}: {e}")))?;
        if pixels.is_empty() {
            return Err(DataError::parse(path, line, format!("mask {id} has no pixels")));
        }
        masks.push((id, pixels));
    }
    if let Some((line, word)) = tok.words.next() {
        return Err(DataError::parse(path, line, format!("trailing data '{word}'")));
    }
    Ok(MaskFile {
        width,
        height,
        masks,
    })
}

pub fn load_mask_file(path: &Path) -> Result<MaskFile, DataError> {
    parse_mask_file(path, &read_text(path)?)
}

/// Reads only the `H W num_masks` header.
pub(crate) fn read_mask_header(path: &Path) -> Result<(usize, usize, usize), DataError> {
    let text = read_text(path)?;
    let mut tok = Tokens::new(path, &text);
    let height = tok.next("height")?;
    let width = tok.next("width")?;
    let count = tok.next("mask count")?;
    Ok((width, height, count))
}

pub fn format_mask_file(file: &MaskFile) -> String {
    let mut out = format!("{} {} {}\n", file.height, file.width, file.masks.len());
    for (id, pixels) in &file.masks {
        let runs = pixels.to_runs();
        let _ = write!(out, "{id} {}", runs.len());
        for (s, l) in runs {
            let _ = write!(out, " {s} {l}");
        }
        out.push('\n');
    }
    out
}

pub fn save_mask_file(file: &MaskFile, path: &Path) -> Result<(), DataError> {
    write_bytes(path, format_mask_file(file).as_bytes())
}
