//! Reader and writer for the uncompressed MetaImage subset (`.mhd` + raw, or `.mha`).
//!
//! Supported: `NDims = 3`, element types `MET_UCHAR`, `MET_SHORT`, `MET_USHORT`,
//! `MET_FLOAT`, either byte order, payload x-fastest. Headers are ASCII
//! `Key = Value` lines and `ElementDataFile` terminates the header.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{BinaryMask, Grid, GridError, ImageVolume};

#[derive(Debug, Error)]
pub enum MetaImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed header entry {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: invalid value for {key}: {value:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error("missing required header key {0}")]
    MissingKey(&'static str),
    #[error("unsupported dimensionality: NDims = {0}")]
    UnsupportedDimensionality(usize),
    #[error("unsupported element type {0}")]
    UnsupportedElementType(String),
    #[error("compressed data is not supported")]
    Compressed,
    #[error("raw payload {0} not found")]
    MissingPayload(PathBuf),
    #[error("short payload: expected {expected} bytes, found {found}")]
    ShortPayload { expected: usize, found: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

type Result<T> = std::result::Result<T, MetaImageError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    Short,
    UShort,
    Float,
}

impl ElementType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MET_UCHAR" => Self::UChar,
            "MET_SHORT" => Self::Short,
            "MET_USHORT" => Self::UShort,
            "MET_FLOAT" => Self::Float,
            _ => return None,
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::UChar => "MET_UCHAR",
            Self::Short => "MET_SHORT",
            Self::UShort => "MET_USHORT",
            Self::Float => "MET_FLOAT",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::UChar => 1,
            Self::Short | Self::UShort => 2,
            Self::Float => 4,
        }
    }
}

#[derive(Debug)]
struct Header {
    grid: Grid,
    element: ElementType,
    big_endian: bool,
    data_file: String,
    /// Byte offset of the payload within the header buffer (for `LOCAL`).
    payload_start: usize,
}

fn parse_triple<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<[T; 3]> {
    let bad = || MetaImageError::BadValue { line, key: key.to_string(), value: value.to_string() };
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    <[T; 3]>::try_from(parts).map_err(|_| bad())
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(MetaImageError::BadValue { line, key: key.to_string(), value: value.to_string() }),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut ndims = None;
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut element = None;
    let mut big_endian = false;
    let mut data_file = None;

    let mut pos = 0;
    let mut line_no = 0;
    while pos < bytes.len() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
        let raw = &bytes[pos..end];
        pos = (end + 1).min(bytes.len());
        line_no += 1;

        let text = String::from_utf8_lossy(raw);
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let Some((key, value)) = text.split_once('=') else {
            return Err(MetaImageError::Malformed { line: line_no, text: text.to_string() });
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" => {
                let n: usize = value.parse().map_err(|_| MetaImageError::BadValue {
                    line: line_no,
                    key: key.to_string(),
                    value: value.to_string(),
                })?;
                if n != 3 {
                    return Err(MetaImageError::UnsupportedDimensionality(n));
                }
                ndims = Some(n);
            }
            "DimSize" => dims = Some(parse_triple::<usize>(line_no, key, value)?),
            "ElementSpacing" | "ElementSize" => spacing = parse_triple(line_no, key, value)?,
            "Offset" | "Origin" | "Position" => origin = parse_triple(line_no, key, value)?,
            "ElementType" => {
                element = Some(
                    ElementType::parse(value)
                        .ok_or_else(|| MetaImageError::UnsupportedElementType(value.to_string()))?,
                )
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                big_endian = parse_bool(line_no, key, value)?
            }
            "CompressedData" => {
                if parse_bool(line_no, key, value)? {
                    return Err(MetaImageError::Compressed);
                }
            }
            "ElementNumberOfChannels" => {
                if value != "1" {
                    return Err(MetaImageError::UnsupportedElementType(format!("{value} channels")));
                }
            }
            "ElementDataFile" => {
                data_file = Some(value.to_string());
                break;
            }
            _ => {}
        }
    }

    ndims.ok_or(MetaImageError::MissingKey("NDims"))?;
    let dims = dims.ok_or(MetaImageError::MissingKey("DimSize"))?;
    let element = element.ok_or(MetaImageError::MissingKey("ElementType"))?;
    let data_file = data_file.ok_or(MetaImageError::MissingKey("ElementDataFile"))?;
    Ok(Header {
        grid: Grid::new(dims, spacing, origin)?,
        element,
        big_endian,
        data_file,
        payload_start: pos,
    })
}

fn decode(payload: &[u8], header: &Header) -> Result<Vec<f32>> {
    let n = header.grid.len();
    let size = header.element.size();
    let expected = n * size;
    if payload.len() < expected {
        return Err(MetaImageError::ShortPayload { expected, found: payload.len() });
    }
    let be = header.big_endian;
    let chunks = payload[..expected].chunks_exact(size);
    let data = match header.element {
        ElementType::UChar => chunks.map(|c| c[0] as f32).collect(),
        ElementType::Short => chunks
            .map(|c| {
                let b = [c[0], c[1]];
                (if be { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }) as f32
            })
            .collect(),
        ElementType::UShort => chunks
            .map(|c| {
                let b = [c[0], c[1]];
                (if be { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) }) as f32
            })
            .collect(),
        ElementType::Float => chunks
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if be {
                    f32::from_be_bytes(b)
                } else {
                    f32::from_le_bytes(b)
                }
            })
            .collect(),
    };
    Ok(data)
}

/// Parses a complete in-memory `.mha` (inline `LOCAL` payload).
pub fn read_metaimage_bytes(bytes: &[u8]) -> Result<ImageVolume> {
    let header = parse_header(bytes)?;
    if header.data_file != "LOCAL" {
        return Err(MetaImageError::MissingPayload(PathBuf::from(&header.data_file)));
    }
    let data = decode(&bytes[header.payload_start..], &header)?;
    Ok(ImageVolume::new(header.grid, data)?)
}

/// Loads a `.mhd` or `.mha` file. Scalars are converted to `f32`.
pub fn load_metaimage(path: impl AsRef<Path>) -> Result<ImageVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| MetaImageError::Io { path: path.to_path_buf(), source })?;
    let header = parse_header(&bytes)?;
    let data = if header.data_file == "LOCAL" {
        decode(&bytes[header.payload_start..], &header)?
    } else {
        let raw_path = path.parent().unwrap_or(Path::new("")).join(&header.data_file);
        let raw = fs::read(&raw_path).map_err(|source| {
            if source.kind() == io::ErrorKind::NotFound {
                MetaImageError::MissingPayload(raw_path.clone())
            } else {
                MetaImageError::Io { path: raw_path.clone(), source }
            }
        })?;
        decode(&raw, &header)?
    };
    Ok(ImageVolume::new(header.grid, data)?)
}

fn fmt_triple<T: std::fmt::Display>(v: &[T; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn header_text(grid: &Grid, element: ElementType, data_file: &str) -> String {
    format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         Offset = {}\n\
         ElementSpacing = {}\n\
         DimSize = {}\n\
         ElementType = {}\n\
         ElementDataFile = {}\n",
        fmt_triple(&grid.origin),
        fmt_triple(&grid.spacing),
        fmt_triple(&grid.dims),
        element.tag(),
        data_file
    )
}

/// Little-endian payload. Integer types round to nearest and saturate.
fn encode(values: impl Iterator<Item = f32>, element: ElementType, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len * element.size());
    for v in values {
        match element {
            ElementType::UChar => out.push(v.round().clamp(0.0, 255.0) as u8),
            ElementType::Short => out.extend_from_slice(&(v.round() as i16).to_le_bytes()),
            ElementType::UShort => out.extend_from_slice(&(v.round() as u16).to_le_bytes()),
            ElementType::Float => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Serializes a volume as a self-contained `.mha` byte buffer.
pub fn write_metaimage_bytes(grid: &Grid, values: &[f32], element: ElementType) -> Vec<u8> {
    let mut out = header_text(grid, element, "LOCAL").into_bytes();
    out.extend(encode(values.iter().copied(), element, grid.len()));
    out
}

fn write_file(
    path: &Path,
    grid: &Grid,
    element: ElementType,
    values: impl Iterator<Item = f32>,
) -> Result<()> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| MetaImageError::Io { path: p, source }
    };
    let payload = encode(values, element, grid.len());
    let is_mhd = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
    if is_mhd {
        let raw_path = path.with_extension("raw");
        let raw_name = raw_path.file_name().unwrap().to_string_lossy().into_owned();
        fs::write(path, header_text(grid, element, &raw_name)).map_err(io_err(path))?;
        fs::write(&raw_path, payload).map_err(io_err(&raw_path))?;
    } else {
        let mut bytes = header_text(grid, element, "LOCAL").into_bytes();
        bytes.extend(payload);
        fs::write(path, bytes).map_err(io_err(path))?;
    }
    Ok(())
}

/// Writes a volume. `.mhd` paths get a sibling `.raw` payload; anything else is written inline.
pub fn save_volume(volume: &ImageVolume, path: impl AsRef<Path>, element: ElementType) -> Result<()> {
    write_file(path.as_ref(), volume.grid(), element, volume.data().iter().copied())
}

/// Writes a mask as `MET_UCHAR`, 1 inside and 0 outside.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let grid = mask.grid();
    write_file(path.as_ref(), &grid, ElementType::UChar, mask.bits().iter().map(|&b| b as u8 as f32))
}

impl BinaryMask {
    /// Reads a mask back from any supported volume; nonzero voxels are inside.
    pub fn from_volume(volume: &ImageVolume) -> Self {
        BinaryMask::from_bits(volume.grid(), volume.data().iter().map(|&v| v != 0.0).collect())
            .expect("volume data length matches its grid")
    }

    pub fn to_mha_bytes(&self) -> Vec<u8> {
        let values: Vec<f32> = self.bits().iter().map(|&b| b as u8 as f32).collect();
        write_metaimage_bytes(&self.grid(), &values, ElementType::UChar)
    }
}
