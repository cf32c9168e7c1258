//! Classic TIFF and BigTIFF container parsing, restricted to the subset
//! needed for tiled pyramids.

use std::collections::{BTreeMap, HashSet};

use super::source::ReadAt;
use super::SlideError;

pub mod tags {
    pub const NEW_SUBFILE_TYPE: u16 = 254;
    pub const IMAGE_WIDTH: u16 = 256;
    pub const IMAGE_LENGTH: u16 = 257;
    pub const BITS_PER_SAMPLE: u16 = 258;
    pub const COMPRESSION: u16 = 259;
    pub const PHOTOMETRIC: u16 = 262;
    pub const IMAGE_DESCRIPTION: u16 = 270;
    pub const SAMPLES_PER_PIXEL: u16 = 277;
    pub const PLANAR_CONFIGURATION: u16 = 284;
    pub const TILE_WIDTH: u16 = 322;
    pub const TILE_LENGTH: u16 = 323;
    pub const TILE_OFFSETS: u16 = 324;
    pub const TILE_BYTE_COUNTS: u16 = 325;
    pub const JPEG_TABLES: u16 = 347;
}

pub mod field_type {
    pub const BYTE: u16 = 1;
    pub const ASCII: u16 = 2;
    pub const SHORT: u16 = 3;
    pub const LONG: u16 = 4;
    pub const RATIONAL: u16 = 5;
    pub const UNDEFINED: u16 = 7;
    pub const LONG8: u16 = 16;
}

pub mod compression {
    pub const NONE: u16 = 1;
    pub const JPEG: u16 = 7;
    pub const JPEG2000_APERIO_YCBCR: u16 = 33003;
    pub const JPEG2000_APERIO_RGB: u16 = 33005;
    pub const JPEG2000: u16 = 34712;
}

/// Upper bound on directory entries; real files carry a few dozen.
const MAX_ENTRIES: u64 = 4096;
/// Upper bound on chained directories.
const MAX_DIRECTORIES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TiffHeader {
    pub byte_order: ByteOrder,
    pub is_big_tiff: bool,
    pub first_ifd_offset: u64,
}

impl TiffHeader {
    fn u16(&self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self.byte_order {
            ByteOrder::Little => u16::from_le_bytes(a),
            ByteOrder::Big => u16::from_be_bytes(a),
        }
    }

    fn u32(&self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self.byte_order {
            ByteOrder::Little => u32::from_le_bytes(a),
            ByteOrder::Big => u32::from_be_bytes(a),
        }
    }

    fn u64(&self, b: &[u8]) -> u64 {
        let mut a = [0u8; 8];
        a.copy_from_slice(&b[..8]);
        match self.byte_order {
            ByteOrder::Little => u64::from_le_bytes(a),
            ByteOrder::Big => u64::from_be_bytes(a),
        }
    }
}

/// Decoded value list of one tag.
#[derive(Debug, Clone, PartialEq)]
pub enum TagValue {
    Byte(Vec<u8>),
    Ascii(String),
    Short(Vec<u16>),
    Long(Vec<u32>),
    Rational(Vec<(u32, u32)>),
    Undefined(Vec<u8>),
    Long8(Vec<u64>),
}

impl TagValue {
    /// Integer view of the value list; `None` for ASCII and RATIONAL.
    pub fn as_u64_vec(&self) -> Option<Vec<u64>> {
        Some(match self {
            TagValue::Byte(v) | TagValue::Undefined(v) => v.iter().map(|&x| x as u64).collect(),
            TagValue::Short(v) => v.iter().map(|&x| x as u64).collect(),
            TagValue::Long(v) => v.iter().map(|&x| x as u64).collect(),
            TagValue::Long8(v) => v.clone(),
            TagValue::Ascii(_) | TagValue::Rational(_) => return None,
        })
    }

    pub fn first_u64(&self) -> Option<u64> {
        match self {
            TagValue::Byte(v) | TagValue::Undefined(v) => v.first().map(|&x| x as u64),
            TagValue::Short(v) => v.first().map(|&x| x as u64),
            TagValue::Long(v) => v.first().map(|&x| x as u64),
            TagValue::Long8(v) => v.first().copied(),
            TagValue::Ascii(_) | TagValue::Rational(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TagValue::Byte(v) | TagValue::Undefined(v) => v.len(),
            TagValue::Ascii(s) => s.len(),
            TagValue::Short(v) => v.len(),
            TagValue::Long(v) => v.len(),
            TagValue::Rational(v) => v.len(),
            TagValue::Long8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One image file directory.
#[derive(Debug, Clone, PartialEq)]
pub struct TiffDirectory {
    pub tag_map: BTreeMap<u16, TagValue>,
    pub offset: u64,
    /// Offset of the successor directory; 0 ends the chain.
    pub next_offset: u64,
}

impl TiffDirectory {
    pub fn get(&self, tag: u16) -> Option<&TagValue> {
        self.tag_map.get(&tag)
    }

    pub fn get_u64(&self, tag: u16) -> Option<u64> {
        self.get(tag).and_then(TagValue::first_u64)
    }

    pub fn get_ascii(&self, tag: u16) -> Option<&str> {
        match self.get(tag) {
            Some(TagValue::Ascii(s)) => Some(s),
            _ => None,
        }
    }

    pub fn is_tiled(&self) -> bool {
        self.tag_map.contains_key(&tags::TILE_WIDTH)
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<TiffHeader, SlideError> {
    if bytes.len() < 8 {
        return Err(SlideError::TruncatedFile {
            offset: 0,
            needed: 8,
        });
    }
    let byte_order = match &bytes[..2] {
        b"II" => ByteOrder::Little,
        b"MM" => ByteOrder::Big,
        _ => return Err(SlideError::BadMagic),
    };
    let mut header = TiffHeader {
        byte_order,
        is_big_tiff: false,
        first_ifd_offset: 0,
    };
    match header.u16(&bytes[2..4]) {
        42 => {
            header.first_ifd_offset = header.u32(&bytes[4..8]) as u64;
        }
        43 => {
            if bytes.len() < 16 {
                return Err(SlideError::TruncatedFile {
                    offset: 0,
                    needed: 16,
                });
            }
            let offset_size = header.u16(&bytes[4..6]);
            let reserved = header.u16(&bytes[6..8]);
            if offset_size != 8 || reserved != 0 {
                return Err(SlideError::UnsupportedVersion(43));
            }
            header.is_big_tiff = true;
            header.first_ifd_offset = header.u64(&bytes[8..16]);
        }
        v => return Err(SlideError::UnsupportedVersion(v)),
    }
    Ok(header)
}

/// Read the header from the start of a source.
pub fn read_header(src: &dyn ReadAt) -> Result<TiffHeader, SlideError> {
    let n = src.len().min(16) as usize;
    let mut buf = vec![0u8; n];
    src.read_exact_at(0, &mut buf)?;
    parse_header(&buf)
}

fn read_checked(src: &dyn ReadAt, offset: u64, len: u64) -> Result<Vec<u8>, SlideError> {
    let end = offset.checked_add(len);
    if end.is_none_or(|e| e > src.len()) {
        return Err(SlideError::TruncatedFile {
            offset,
            needed: len,
        });
    }
    let mut buf = vec![0u8; len as usize];
    src.read_exact_at(offset, &mut buf)?;
    Ok(buf)
}

fn type_size(field_type: u16) -> Option<u64> {
    use field_type::*;
    match field_type {
        BYTE | ASCII | UNDEFINED => Some(1),
        SHORT => Some(2),
        LONG => Some(4),
        RATIONAL | LONG8 => Some(8),
        _ => None,
    }
}

fn decode_value(h: &TiffHeader, field_type: u16, count: usize, raw: &[u8]) -> TagValue {
    use field_type::*;
    match field_type {
        BYTE => TagValue::Byte(raw[..count].to_vec()),
        UNDEFINED => TagValue::Undefined(raw[..count].to_vec()),
        ASCII => {
            let s = &raw[..count];
            let s = s.split(|&b| b == 0).next().unwrap_or(&[]);
            TagValue::Ascii(String::from_utf8_lossy(s).into_owned())
        }
        SHORT => TagValue::Short(raw.chunks_exact(2).take(count).map(|c| h.u16(c)).collect()),
        LONG => TagValue::Long(raw.chunks_exact(4).take(count).map(|c| h.u32(c)).collect()),
        RATIONAL => TagValue::Rational(
            raw.chunks_exact(8)
                .take(count)
                .map(|c| (h.u32(&c[..4]), h.u32(&c[4..])))
                .collect(),
        ),
        LONG8 => TagValue::Long8(raw.chunks_exact(8).take(count).map(|c| h.u64(c)).collect()),
        _ => unreachable!("type checked by caller"),
    }
}

fn read_directory(src: &dyn ReadAt, h: &TiffHeader, offset: u64) -> Result<TiffDirectory, SlideError> {
    let (count_size, entry_size, inline_size) = if h.is_big_tiff { (8, 20, 8) } else { (2, 12, 4) };
    let count_raw = read_checked(src, offset, count_size)?;
    let count = if h.is_big_tiff { h.u64(&count_raw) } else { h.u16(&count_raw) as u64 };
    if count == 0 || count > MAX_ENTRIES {
        return Err(SlideError::InvalidDirectory(format!(
            "directory at {offset} declares {count} entries"
        )));
    }
    let body_len = count * entry_size + inline_size;
    let body = read_checked(src, offset + count_size, body_len)?;

    let mut tag_map = BTreeMap::new();
    for entry in body[..(count * entry_size) as usize].chunks_exact(entry_size as usize) {
        let tag = h.u16(&entry[0..2]);
        let ft = h.u16(&entry[2..4]);
        let n = if h.is_big_tiff { h.u64(&entry[4..12]) } else { h.u32(&entry[4..8]) as u64 };
        let value_field = if h.is_big_tiff { &entry[12..20] } else { &entry[8..12] };
        let size = type_size(ft).ok_or(SlideError::UnsupportedTagType {
            tag,
            field_type: ft,
        })?;
        let total = n.checked_mul(size).ok_or(SlideError::TruncatedFile {
            offset,
            needed: u64::MAX,
        })?;
        let raw = if total <= inline_size {
            value_field[..total as usize].to_vec()
        } else {
            let at = if h.is_big_tiff { h.u64(value_field) } else { h.u32(value_field) as u64 };
            read_checked(src, at, total)?
        };
        tag_map.insert(tag, decode_value(h, ft, n as usize, &raw));
    }
    let next_raw = &body[(count * entry_size) as usize..];
    let next_offset = if h.is_big_tiff { h.u64(next_raw) } else { h.u32(next_raw) as u64 };
    Ok(TiffDirectory {
        tag_map,
        offset,
        next_offset,
    })
}

/// Follow the IFD chain from `header.first_ifd_offset` until a zero
/// successor, rejecting cycles.
pub fn walk_ifd_chain(src: &dyn ReadAt, header: &TiffHeader) -> Result<Vec<TiffDirectory>, SlideError> {
    let mut visited = HashSet::new();
    let mut dirs = Vec::new();
    let mut offset = header.first_ifd_offset;
    while offset != 0 {
        if !visited.insert(offset) {
            return Err(SlideError::CyclicChain(offset));
        }
        if dirs.len() >= MAX_DIRECTORIES {
            return Err(SlideError::InvalidDirectory("too many directories".into()));
        }
        let dir = read_directory(src, header, offset)?;
        offset = dir.next_offset;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// A validated tiled image directory: one pyramid level.
#[derive(Debug, Clone)]
pub struct TiledImage {
    pub width: u32,
    pub height: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    pub samples_per_pixel: u8,
    pub compression: u16,
    pub photometric: u16,
    pub tile_offsets: Vec<u64>,
    pub tile_byte_counts: Vec<u64>,
    pub jpeg_tables: Option<Vec<u8>>,
    pub description: Option<String>,
    pub is_reduced_mask: bool,
}

impl TiledImage {
    pub fn from_directory(dir: &TiffDirectory) -> Result<TiledImage, SlideError> {
        let missing = |tag: u16| SlideError::InvalidDirectory(format!("missing required tag {tag}"));
        for tag in [
            tags::IMAGE_WIDTH,
            tags::IMAGE_LENGTH,
            tags::BITS_PER_SAMPLE,
            tags::COMPRESSION,
            tags::TILE_WIDTH,
            tags::TILE_LENGTH,
            tags::TILE_OFFSETS,
            tags::TILE_BYTE_COUNTS,
        ] {
            if !dir.tag_map.contains_key(&tag) {
                return Err(missing(tag));
            }
        }
        let dim = |tag: u16| -> Result<u32, SlideError> {
            dir.get_u64(tag)
                .filter(|&v| v > 0 && v <= u32::MAX as u64)
                .map(|v| v as u32)
                .ok_or_else(|| SlideError::InvalidDirectory(format!("tag {tag} must be a positive integer")))
        };
        let width = dim(tags::IMAGE_WIDTH)?;
        let height = dim(tags::IMAGE_LENGTH)?;
        let tile_width = dim(tags::TILE_WIDTH)?;
        let tile_height = dim(tags::TILE_LENGTH)?;
        if tile_width % 16 != 0 || tile_height % 16 != 0 {
            return Err(SlideError::InvalidDirectory(format!(
                "tile size {tile_width}x{tile_height} is not a multiple of 16"
            )));
        }
        let spp = dir.get_u64(tags::SAMPLES_PER_PIXEL).unwrap_or(1);
        if spp != 1 && spp != 3 {
            return Err(SlideError::InvalidDirectory(format!("{spp} samples per pixel")));
        }
        let bits = dir.get(tags::BITS_PER_SAMPLE).and_then(TagValue::as_u64_vec).unwrap_or_default();
        if bits.is_empty() || bits.iter().any(|&b| b != 8) {
            return Err(SlideError::InvalidDirectory("only 8-bit samples are supported".into()));
        }
        if dir.get_u64(tags::PLANAR_CONFIGURATION).unwrap_or(1) != 1 {
            return Err(SlideError::InvalidDirectory("planar configuration must be chunky".into()));
        }
        let compression = dir.get_u64(tags::COMPRESSION).unwrap_or(1) as u16;
        let photometric = dir.get_u64(tags::PHOTOMETRIC).unwrap_or(if spp == 3 { 2 } else { 1 }) as u16;

        let cols = (width as u64).div_ceil(tile_width as u64);
        let rows = (height as u64).div_ceil(tile_height as u64);
        let grid = cols * rows;
        let list = |tag: u16| -> Result<Vec<u64>, SlideError> {
            dir.get(tag)
                .and_then(TagValue::as_u64_vec)
                .ok_or_else(|| SlideError::InvalidDirectory(format!("tag {tag} must be integral")))
        };
        let tile_offsets = list(tags::TILE_OFFSETS)?;
        let tile_byte_counts = list(tags::TILE_BYTE_COUNTS)?;
        if tile_offsets.len() as u64 != grid || tile_byte_counts.len() as u64 != grid {
            return Err(SlideError::InvalidDirectory(format!(
                "tile grid {cols}x{rows} but {} offsets and {} byte counts",
                tile_offsets.len(),
                tile_byte_counts.len()
            )));
        }
        let jpeg_tables = match dir.get(tags::JPEG_TABLES) {
            Some(TagValue::Undefined(v)) | Some(TagValue::Byte(v)) => Some(v.clone()),
            _ => None,
        };
        Ok(TiledImage {
            width,
            height,
            tile_width,
            tile_height,
            samples_per_pixel: spp as u8,
            compression,
            photometric,
            tile_offsets,
            tile_byte_counts,
            jpeg_tables,
            description: dir.get_ascii(tags::IMAGE_DESCRIPTION).map(str::to_owned),
            is_reduced_mask: dir.get_u64(tags::NEW_SUBFILE_TYPE).unwrap_or(0) & 4 != 0,
        })
    }

    pub fn grid(&self) -> (u32, u32) {
        (
            self.width.div_ceil(self.tile_width),
            self.height.div_ceil(self.tile_height),
        )
    }
}

/// Parse `key = number` from an svs-style `|`-separated description.
pub fn description_value(description: &str, key: &str) -> Option<f64> {
    description.split('|').find_map(|part| {
        let (k, v) = part.split_once('=')?;
        if k.trim() == key {
            v.trim().parse::<f64>().ok()
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_endian_classic_header() {
        let h = parse_header(&[0x49, 0x49, 0x2A, 0x00, 0x08, 0x00, 0x00, 0x00]).unwrap();
        assert_eq!(h.byte_order, ByteOrder::Little);
        assert!(!h.is_big_tiff);
        assert_eq!(h.first_ifd_offset, 8);
    }

    #[test]
    fn big_endian_classic_header() {
        let h = parse_header(&[0x4D, 0x4D, 0x00, 0x2A, 0x00, 0x00, 0x00, 0x08]).unwrap();
        assert_eq!(h.byte_order, ByteOrder::Big);
        assert!(!h.is_big_tiff);
        assert_eq!(h.first_ifd_offset, 8);
    }

    #[test]
    fn bigtiff_header() {
        let bytes = [0x49, 0x49, 0x2B, 0x00, 0x08, 0x00, 0x00, 0x00, 0x10, 0, 0, 0, 0, 0, 0, 0];
        let h = parse_header(&bytes).unwrap();
        assert!(h.is_big_tiff);
        assert_eq!(h.first_ifd_offset, 16);
        assert!(matches!(parse_header(&bytes[..12]), Err(SlideError::TruncatedFile { .. })));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_header(&[0; 8]), Err(SlideError::BadMagic)));
        assert!(matches!(
            parse_header(&[0x49, 0x49, 0x2C, 0x00, 0, 0, 0, 0]),
            Err(SlideError::UnsupportedVersion(44))
        ));
        assert!(matches!(parse_header(b"II*"), Err(SlideError::TruncatedFile { .. })));
    }

    fn le_dir_file(next: u32) -> Vec<u8> {
        // header + one IFD at 8 with a single ImageWidth entry
        let mut b = vec![0x49, 0x49, 0x2A, 0x00, 8, 0, 0, 0];
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&256u16.to_le_bytes());
        b.extend_from_slice(&field_type::SHORT.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&[64, 0, 0, 0]);
        b.extend_from_slice(&next.to_le_bytes());
        b
    }

    #[test]
    fn single_directory_chain() {
        let f = le_dir_file(0);
        let h = parse_header(&f).unwrap();
        let dirs = walk_ifd_chain(&f, &h).unwrap();
        assert_eq!(dirs.len(), 1);
        assert_eq!(dirs[0].next_offset, 0);
        assert_eq!(dirs[0].get_u64(256), Some(64));
    }

    #[test]
    fn self_referencing_chain_is_cyclic() {
        let f = le_dir_file(8);
        let h = parse_header(&f).unwrap();
        assert!(matches!(walk_ifd_chain(&f, &h), Err(SlideError::CyclicChain(8))));
    }

    #[test]
    fn unsupported_tag_type() {
        let mut f = le_dir_file(0);
        f[12..14].copy_from_slice(&8u16.to_le_bytes()); // SSHORT
        let h = parse_header(&f).unwrap();
        assert!(matches!(
            walk_ifd_chain(&f, &h),
            Err(SlideError::UnsupportedTagType { tag: 256, field_type: 8 })
        ));
    }

    #[test]
    fn truncated_directory() {
        let f = le_dir_file(0);
        let h = parse_header(&f).unwrap();
        assert!(matches!(walk_ifd_chain(&f[..15].to_vec(), &h), Err(SlideError::TruncatedFile { .. })));
    }

    #[test]
    fn aperio_description_keys() {
        let d = "Aperio Image Library v11.2.1\r\n46000x32914 [0,100 46000x32914] (256x256) JPEG/RGB Q=30|AppMag = 20|MPP = 0.4990";
        assert_eq!(description_value(d, "AppMag"), Some(20.0));
        assert_eq!(description_value(d, "MPP"), Some(0.499));
        assert_eq!(description_value(d, "Missing"), None);
    }
}
