//! Token blobs: magic `OETK`, `u32` version, `u32` E, `u32` C, then
//! contiguous `E·C` little-endian `f32` matrices. A JSON-lines manifest of
//! `{frame, mask_id, offset}` locates each mask's matrix by byte offset.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_bytes, read_jsonl, write_bytes, write_jsonl, DataError};
use crate::aggregation::AggregatedTokens;
use crate::binio::{BinError, Decoder, Encoder};
use crate::tokens::TokenMatrix;

const TOKEN_MAGIC: &[u8; 4] = b"OETK";
const TOKEN_VERSION: u32 = 1;
const HEADER_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenManifestRecord {
    pub frame: u32,
    pub mask_id: u32,
    /// Byte offset of the matrix inside the blob.
    pub offset: u64,
}

/// Builds a token blob in memory.
pub struct TokenBlobWriter {
    rows: usize,
    cols: usize,
    enc: Encoder,
}

impl TokenBlobWriter {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut enc = Encoder::with_header(TOKEN_MAGIC, TOKEN_VERSION);
        enc.u32(rows as u32);
        enc.u32(cols as u32);
        Self { rows, cols, enc }
    }

    /// Appends a matrix and returns its byte offset.
    ///
    /// # Panics
    /// If the matrix shape differs from the blob's.
    pub fn push(&mut self, tokens: &TokenMatrix) -> u64 {
        assert_eq!(tokens.shape(), (self.rows, self.cols), "token shape mismatch");
        let offset = self.enc.len() as u64;
        self.enc.f32s(tokens.as_slice());
        offset
    }

    pub fn finish(self) -> Vec<u8> {
        self.enc.finish()
    }

    pub fn save(self, path: &Path) -> Result<(), DataError> {
        write_bytes(path, &self.finish())
    }
}

/// Random access to a token blob through its manifest.
#[derive(Debug)]
pub struct TokenStore {
    blob_path: PathBuf,
    file: File,
    rows: usize,
    cols: usize,
    index: HashMap<(u32, u32), u64>,
}

impl TokenStore {
    pub fn open(blob_path: &Path, manifest_path: &Path) -> Result<Self, DataError> {
        let mut file = File::open(blob_path).map_err(|e| DataError::io(blob_path, e))?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|_| {
            DataError::binary(blob_path, BinError::Truncated { offset: 0, needed: HEADER_LEN as usize })
        })?;
        let mut dec = Decoder::with_header(&header, TOKEN_MAGIC, TOKEN_VERSION)
            .map_err(|e| DataError::binary(blob_path, e))?;
        let rows = dec.u32().unwrap() as usize;
        let cols = dec.u32().unwrap() as usize;
        let len = file
            .metadata()
            .map_err(|e| DataError::io(blob_path, e))?
            .len();
        let matrix_bytes = (rows * cols * 4) as u64;

        let mut index = HashMap::new();
        for (line, rec) in read_jsonl::<TokenManifestRecord>(manifest_path)? {
            if rec.offset < HEADER_LEN || rec.offset + matrix_bytes > len {
                return Err(DataError::parse(
                    manifest_path,
                    line,
                    format!("offset {} outside token blob of {len} bytes", rec.offset),
                ));
            }
            if index.insert((rec.frame, rec.mask_id), rec.offset).is_some() {
                return Err(DataError::parse(
                    manifest_path,
                    line,
                    format!("duplicate entry for frame {} mask {}", rec.frame, rec.mask_id),
                ));
            }
        }
        Ok(Self {
            blob_path: blob_path.to_path_buf(),
            file,
            rows,
            cols,
            index,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn contains(&self, frame: u32, mask_id: u32) -> bool {
        self.index.contains_key(&(frame, mask_id))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&mut self, frame: u32, mask_id: u32) -> Result<Option<TokenMatrix>, DataError> {
        let Some(&offset) = self.index.get(&(frame, mask_id)) else {
            return Ok(None);
        };
        let mut buf = vec![0u8; self.rows * self.cols * 4];
        self.file
            .seek(SeekFrom::Start(offset))
            .and_then(|_| self.file.read_exact(&mut buf))
            .map_err(|e| DataError::io(&self.blob_path, e))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Some(TokenMatrix::from_vec(self.rows, self.cols, data).unwrap()))
    }
}

/// Sidecar record for one aggregated proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub proposal: u32,
    pub support: u64,
    pub total_weight: u64,
    pub empty: bool,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("jsonl")
}

/// Writes aggregated tokens as a token blob (matrix `k` at index `k`) plus a
/// JSON-lines sidecar next to it with the `.jsonl` extension.
pub fn save_aggregated(
    path: &Path,
    shape: (usize, usize),
    results: &[AggregatedTokens],
) -> Result<(), DataError> {
    let mut blob = TokenBlobWriter::new(shape.0, shape.1);
    let mut records = Vec::with_capacity(results.len());
    for (k, agg) in results.iter().enumerate() {
        if agg.tokens.shape() != shape {
            return Err(DataError::invalid(
                path,
                format!("proposal {k} has token shape {:?}, expected {shape:?}", agg.tokens.shape()),
            ));
        }
        blob.push(&agg.tokens);
        records.push(AggregateRecord {
            proposal: k as u32,
            support: agg.support,
            total_weight: agg.total_weight,
            empty: agg.empty,
        });
    }
    blob.save(path)?;
    write_jsonl(&sidecar_path(path), &records)
}

pub fn load_aggregated(path: &Path) -> Result<Vec<(AggregateRecord, TokenMatrix)>, DataError> {
    let bytes = read_bytes(path)?;
    let mut dec =
        Decoder::with_header(&bytes, TOKEN_MAGIC, TOKEN_VERSION).map_err(|e| DataError::binary(path, e))?;
    let rows = dec.u32().map_err(|e| DataError::binary(path, e))? as usize;
    let cols = dec.u32().map_err(|e| DataError::binary(path, e))? as usize;
    let sidecar = sidecar_path(path);
    let records = read_jsonl::<AggregateRecord>(&sidecar)?;
    let mut out = Vec::with_capacity(records.len());
    for (k, (line, rec)) in records.into_iter().enumerate() {
        if rec.proposal as usize != k {
            return Err(DataError::parse(&sidecar, line, format!("expected proposal {k}, found {}", rec.proposal)));
        }
        let data = dec.f32s(rows * cols).map_err(|e| DataError::binary(path, e))?;
        out.push((rec, TokenMatrix::from_vec(rows, cols, data).unwrap()));
    }
    dec.finish().map_err(|e| DataError::binary(path, e))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = TokenBlobWriter::new(2, 2);
        let a = TokenMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = TokenMatrix::from_vec(2, 2, vec![-1.0, 0.5, 0.0, 9.0]).unwrap();
        let oa = w.push(&a);
        let ob = w.push(&b);
        assert_eq!((oa, ob), (16, 32));
        w.save(&dir.path().join("t.bin")).unwrap();
        write_jsonl(
            &dir.path().join("t.jsonl"),
            &[
                TokenManifestRecord { frame: 3, mask_id: 1, offset: ob },
                TokenManifestRecord { frame: 0, mask_id: 7, offset: oa },
            ],
        )
        .unwrap();
        let mut store = TokenStore::open(&dir.path().join("t.bin"), &dir.path().join("t.jsonl")).unwrap();
        assert_eq!(store.shape(), (2, 2));
        assert_eq!(store.get(3, 1).unwrap(), Some(b));
        assert_eq!(store.get(0, 7).unwrap(), Some(a));
        assert_eq!(store.get(0, 0).unwrap(), None);
    }

    #[test]
    fn manifest_offset_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = TokenBlobWriter::new(1, 1);
        w.push(&TokenMatrix::zeros(1, 1));
        w.save(&dir.path().join("t.bin")).unwrap();
        std::fs::write(dir.path().join("t.jsonl"), "{\"frame\":0,\"mask_id\":0,\"offset\":16}\n{\"frame\":0,\"mask_id\":1,\"offset\":20}\n").unwrap();
        match TokenStore::open(&dir.path().join("t.bin"), &dir.path().join("t.jsonl")) {
            Err(DataError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
