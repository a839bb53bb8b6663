//! PLY point clouds: `ascii 1.0` and `binary_little_endian 1.0`.
//!
//! Only the `vertex` element is decoded; it must carry scalar `x`, `y`, `z`
//! and `uchar` `red`, `green`, `blue`. Other properties and elements are
//! skipped.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_bytes, write_bytes, DataError, PointCloud};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PlyError {
    #[error("not a PLY file (missing 'ply' signature)")]
    NotPly,
    #[error("unsupported PLY variant: {0}")]
    Unsupported(String),
    #[error("header line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("vertex element lacks required property '{0}'")]
    MissingProperty(String),
    #[error("no vertex element")]
    MissingVertexElement,
    #[error("vertex element is empty")]
    NoVertices,
    #[error("file truncated at {location} (while reading {element} {index})")]
    Truncated {
        location: String,
        element: String,
        index: usize,
    },
    #[error("line {line}: {message}")]
    BadValue { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

fn header_err(line: usize, message: impl Into<String>) -> PlyError {
    PlyError::Header {
        line,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| header_err(line_no + 1, "header not terminated by end_header"))?;
        let raw = &bytes[offset..offset + end];
        offset += end + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| header_err(line_no, "header is not valid text"))?
            .trim_end_matches('\r');
        let words: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(PlyError::NotPly);
            }
            continue;
        }
        match words.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(PlyError::Unsupported(format!("format version {version}")));
                }
                encoding = Some(match *kind {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => return Err(PlyError::Unsupported(format!("format {other}"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(line_no, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let c = Scalar::parse(count_ty)
                    .ok_or_else(|| header_err(line_no, format!("unknown type '{count_ty}'")))?;
                let i = Scalar::parse(item_ty)
                    .ok_or_else(|| header_err(line_no, format!("unknown type '{item_ty}'")))?;
                el.properties.push(Property::List(c, i, name.to_string()));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let s = Scalar::parse(ty)
                    .ok_or_else(|| header_err(line_no, format!("unknown type '{ty}'")))?;
                el.properties.push(Property::Scalar(s, name.to_string()));
            }
            ["end_header"] => break,
            _ => return Err(header_err(line_no, format!("unrecognized line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| header_err(line_no, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: offset,
        body_line: line_no,
    })
}

/// Column of each required vertex property inside the vertex record.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
}

fn vertex_layout(el: &Element) -> Result<VertexLayout, PlyError> {
    let find = |want: &str, color: bool| -> Result<usize, PlyError> {
        for (i, p) in el.properties.iter().enumerate() {
            match p {
                Property::Scalar(ty, name) if name == want => {
                    if color && *ty != Scalar::U8 {
                        return Err(PlyError::Unsupported(format!(
                            "color property '{want}' must be uchar"
                        )));
                    }
                    return Ok(i);
                }
                Property::List(_, _, name) if name == want => {
                    return Err(PlyError::Unsupported(format!(
                        "vertex property '{want}' is a list"
                    )))
                }
                _ => {}
            }
        }
        Err(PlyError::MissingProperty(want.to_string()))
    };
    Ok(VertexLayout {
        xyz: [find("x", false)?, find("y", false)?, find("z", false)?],
        rgb: [find("red", true)?, find("green", true)?, find("blue", true)?],
    })
}

fn push_vertex(
    values: &[f64],
    layout: &VertexLayout,
    positions: &mut Vec<[f32; 3]>,
    colors: &mut Vec<[u8; 3]>,
) {
    positions.push(layout.xyz.map(|i| values[i] as f32));
    colors.push(layout.rgb.map(|i| values[i] as u8));
}

/// Decodes a PLY file held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or(PlyError::MissingVertexElement)?;
    let vertex = &header.elements[vertex_pos];
    let layout = vertex_layout(vertex)?;
    if vertex.count == 0 {
        return Err(PlyError::NoVertices);
    }
    let body = &bytes[header.body_offset..];
    let elements = &header.elements[..=vertex_pos];
    let (positions, colors) = match header.encoding {
        PlyEncoding::Ascii => read_ascii(body, header.body_line, elements, &layout)?,
        PlyEncoding::BinaryLittleEndian => {
            read_binary(body, header.body_offset, elements, &layout)?
        }
    };
    PointCloud::new(positions, colors).map_err(|message| PlyError::BadValue {
        line: 0,
        message,
    })
}

type Columns = (Vec<[f32; 3]>, Vec<[u8; 3]>);

fn read_ascii(
    body: &[u8],
    first_line: usize,
    elements: &[Element],
    layout: &VertexLayout,
) -> Result<Columns, PlyError> {
    let text = std::str::from_utf8(body).map_err(|_| PlyError::BadValue {
        line: first_line + 1,
        message: "ascii body is not valid text".into(),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (first_line + 1 + i, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut last_line = first_line;
    for el in elements {
        let is_vertex = el.name == "vertex";
        if is_vertex {
            positions.reserve(el.count);
            colors.reserve(el.count);
        }
        for index in 0..el.count {
            let (line_no, line) = lines.next().ok_or_else(|| PlyError::Truncated {
                location: format!("line {}", last_line + 1),
                element: el.name.clone(),
                index,
            })?;
            last_line = line_no;
            let bad = |message: String| PlyError::BadValue {
                line: line_no,
                message,
            };
            let mut words = line.split_whitespace();
            let mut next = |what: &str, ty: Scalar| -> Result<f64, PlyError> {
                let w = words
                    .next()
                    .ok_or_else(|| bad(format!("missing value for '{what}'")))?;
                // Parse f32 text directly so shortest-form output round-trips exactly.
                let parsed = if ty == Scalar::F32 {
                    w.parse::<f32>().map(f64::from)
                } else {
                    w.parse::<f64>()
                };
                parsed.map_err(|_| bad(format!("'{w}' is not a number ('{what}')")))
            };
            let mut values = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                match p {
                    Property::Scalar(ty, name) => {
                        let v = next(name, *ty)?;
                        if *ty == Scalar::U8 && !(0.0..=255.0).contains(&v) {
                            return Err(bad(format!("'{name}' value {v} out of uchar range")));
                        }
                        values.push(v);
                    }
                    Property::List(count_ty, item_ty, name) => {
                        let n = next(name, *count_ty)?;
                        for _ in 0..n as usize {
                            next(name, *item_ty)?;
                        }
                        values.push(f64::NAN);
                    }
                }
            }
            if is_vertex {
                push_vertex(&values, layout, &mut positions, &mut colors);
            }
        }
    }
    Ok((positions, colors))
}

fn read_binary(
    body: &[u8],
    body_offset: usize,
    elements: &[Element],
    layout: &VertexLayout,
) -> Result<Columns, PlyError> {
    let mut at = 0usize;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for el in elements {
        let is_vertex = el.name == "vertex";
        let mut values = vec![0.0; el.properties.len()];
        for index in 0..el.count {
            let truncated = |at: usize| PlyError::Truncated {
                location: format!("byte {}", body_offset + at),
                element: el.name.clone(),
                index,
            };
            for (slot, p) in values.iter_mut().zip(&el.properties) {
                match p {
                    Property::Scalar(ty, _) => {
                        let b = body.get(at..at + ty.size()).ok_or_else(|| truncated(at))?;
                        *slot = ty.read_le(b);
                        at += ty.size();
                    }
                    Property::List(count_ty, item_ty, _) => {
                        let b = body
                            .get(at..at + count_ty.size())
                            .ok_or_else(|| truncated(at))?;
                        let n = count_ty.read_le(b) as usize;
                        at += count_ty.size() + n * item_ty.size();
                        if at > body.len() {
                            return Err(truncated(body.len()));
                        }
                    }
                }
            }
            if is_vertex {
                push_vertex(&values, layout, &mut positions, &mut colors);
            }
        }
    }
    Ok((positions, colors))
}

pub fn load_ply(path: &Path) -> Result<PointCloud, DataError> {
    let bytes = read_bytes(path)?;
    parse_ply(&bytes).map_err(|source| DataError::Ply {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes a cloud with `float` coordinates and `uchar` colors. ASCII output
/// uses shortest round-trip float formatting, so both encodings are lossless.
pub fn write_ply(cloud: &PointCloud, encoding: PlyEncoding) -> Vec<u8> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    match encoding {
        PlyEncoding::Ascii => {
            for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
                let _ = writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
            }
            out.into_bytes()
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut bytes = out.into_bytes();
            bytes.reserve(cloud.len() * 15);
            for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
                for v in p {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                bytes.extend_from_slice(c);
            }
            bytes
        }
    }
}

pub fn save_ply(cloud: &PointCloud, path: &Path, encoding: PlyEncoding) -> Result<(), DataError> {
    write_bytes(path, &write_ply(cloud, encoding))
}
