//! 16-bit single-channel PNG depth maps in millimeters; 0 marks a missing sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use super::DataError;
use crate::geometry::DepthMap;

fn image_err(path: &Path, message: impl std::fmt::Display) -> DataError {
    DataError::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn open(path: &Path) -> Result<png::Reader<BufReader<File>>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| image_err(path, e))
}

/// `(width, height)` from the PNG header without decoding pixels.
pub fn read_png_size(path: &Path) -> Result<(usize, usize), DataError> {
    let reader = open(path)?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}

pub fn load_depth_png(path: &Path) -> Result<DepthMap, DataError> {
    let mut reader = open(path)?;
    let (width, height, color, depth) = {
        let info = reader.info();
        (info.width as usize, info.height as usize, info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
        return Err(image_err(
            path,
            format!("depth PNG must be 16-bit grayscale, found {color:?} at {depth:?}"),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let raw: Vec<u16> = buf
        .chunks_exact(2)
        .take(width * height)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok(DepthMap::from_millimeters(width, height, &raw))
}

pub(crate) fn encode_depth_png(depth: &DepthMap) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(
            BufWriter::new(Cursor::new(&mut out)),
            depth.width() as u32,
            depth.height() as u32,
        );
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header()?;
        let data: Vec<u8> = depth
            .to_millimeters()
            .iter()
            .flat_map(|v| v.to_be_bytes())
            .collect();
        writer.write_image_data(&data)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Writes millimeter-quantized depth; see [`DepthMap::to_millimeters`].
pub fn save_depth_png(depth: &DepthMap, path: &Path) -> Result<(), DataError> {
    let bytes = encode_depth_png(depth).map_err(|e| image_err(path, e))?;
    super::write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let map = DepthMap::from_millimeters(5, 3, &[0, 1, 2, 1500, 65535, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]);
        save_depth_png(&map, &path).unwrap();
        assert_eq!(read_png_size(&path).unwrap(), (5, 3));
        let back = load_depth_png(&path).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.lookup(3.5, 0.2), Some(1.5));
        assert_eq!(back.lookup(0.0, 0.0), None);
    }

    #[test]
    fn garbage_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(load_depth_png(&path), Err(DataError::Image { .. })));
    }
}
