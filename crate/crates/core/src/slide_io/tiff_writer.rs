//! Tiled pyramid TIFF writer. Produces one tiled directory per level,
//! chained in ascending-downsample order, with edge tiles zero padded.

use std::io::Cursor;

use super::tiff::{compression, field_type, tags, ByteOrder};
use super::SlideError;
use crate::geom::Rect;
use crate::pixel::PixelBuffer;

#[derive(Debug, Clone)]
pub struct TiffWriteOptions {
    pub tile_size: u32,
    pub big_tiff: bool,
    pub byte_order: ByteOrder,
    /// 1 (none) or 7 (JPEG baseline).
    pub compression: u16,
    pub jpeg_quality: u8,
    /// Written as ImageDescription on the base directory.
    pub description: Option<String>,
}

impl Default for TiffWriteOptions {
    fn default() -> Self {
        TiffWriteOptions {
            tile_size: 256,
            big_tiff: false,
            byte_order: ByteOrder::Little,
            compression: compression::NONE,
            jpeg_quality: 90,
            description: None,
        }
    }
}

struct Entry {
    tag: u16,
    field_type: u16,
    count: u64,
    data: Vec<u8>,
}

struct Encoder {
    order: ByteOrder,
    big: bool,
    out: Vec<u8>,
}

impl Encoder {
    fn u16(&self, v: u16) -> [u8; 2] {
        match self.order {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn u32(&self, v: u32) -> [u8; 4] {
        match self.order {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn u64(&self, v: u64) -> [u8; 8] {
        match self.order {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn offset_bytes(&self, v: u64) -> Vec<u8> {
        if self.big {
            self.u64(v).to_vec()
        } else {
            self.u32(v as u32).to_vec()
        }
    }

    fn shorts(&self, tag: u16, values: &[u16]) -> Entry {
        Entry {
            tag,
            field_type: field_type::SHORT,
            count: values.len() as u64,
            data: values.iter().flat_map(|&v| self.u16(v)).collect(),
        }
    }

    fn longs(&self, tag: u16, values: &[u32]) -> Entry {
        Entry {
            tag,
            field_type: field_type::LONG,
            count: values.len() as u64,
            data: values.iter().flat_map(|&v| self.u32(v)).collect(),
        }
    }

    fn offsets(&self, tag: u16, values: &[u64]) -> Entry {
        if self.big {
            Entry {
                tag,
                field_type: field_type::LONG8,
                count: values.len() as u64,
                data: values.iter().flat_map(|&v| self.u64(v)).collect(),
            }
        } else {
            self.longs(tag, &values.iter().map(|&v| v as u32).collect::<Vec<_>>())
        }
    }

    fn align(&mut self) {
        if self.out.len() % 2 == 1 {
            self.out.push(0);
        }
    }

    /// Append an IFD; returns its offset and the position of its
    /// next-offset field for later patching.
    fn write_ifd(&mut self, mut entries: Vec<Entry>) -> (u64, usize) {
        entries.sort_by_key(|e| e.tag);
        self.align();
        let ifd_offset = self.out.len() as u64;
        let (count_size, entry_size, inline) = if self.big { (8u64, 20u64, 8usize) } else { (2, 12, 4) };
        let n = entries.len() as u64;
        let mut extra_at = ifd_offset + count_size + n * entry_size + inline as u64;
        let mut ifd = Vec::new();
        let mut extra = Vec::new();
        if self.big {
            ifd.extend_from_slice(&self.u64(n));
        } else {
            ifd.extend_from_slice(&self.u16(n as u16));
        }
        for e in &entries {
            ifd.extend_from_slice(&self.u16(e.tag));
            ifd.extend_from_slice(&self.u16(e.field_type));
            if self.big {
                ifd.extend_from_slice(&self.u64(e.count));
            } else {
                ifd.extend_from_slice(&self.u32(e.count as u32));
            }
            if e.data.len() <= inline {
                let mut field = e.data.clone();
                field.resize(inline, 0);
                ifd.extend_from_slice(&field);
            } else {
                ifd.extend_from_slice(&self.offset_bytes(extra_at));
                extra.extend_from_slice(&e.data);
                if extra.len() % 2 == 1 {
                    extra.push(0);
                }
                extra_at = ifd_offset + count_size + n * entry_size + inline as u64 + extra.len() as u64;
            }
        }
        let next_pos = self.out.len() + ifd.len();
        ifd.extend_from_slice(&vec![0u8; inline]);
        self.out.extend_from_slice(&ifd);
        self.out.extend_from_slice(&extra);
        (ifd_offset, next_pos)
    }

    fn patch_offset(&mut self, pos: usize, value: u64) {
        let bytes = self.offset_bytes(value);
        self.out[pos..pos + bytes.len()].copy_from_slice(&bytes);
    }
}

fn encode_jpeg(tile: &PixelBuffer, quality: u8) -> Result<Vec<u8>, SlideError> {
    use image::codecs::jpeg::JpegEncoder;
    let mut buf = Cursor::new(Vec::new());
    let color = if tile.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(tile.data(), tile.width(), tile.height(), color)
        .map_err(|e| SlideError::Codec(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Serialise `levels` (base first, each smaller than the previous) as a
/// tiled TIFF.
pub fn write_pyramid_tiff(levels: &[PixelBuffer], opts: &TiffWriteOptions) -> Result<Vec<u8>, SlideError> {
    let invalid = |m: &str| SlideError::InvalidDirectory(m.to_owned());
    if levels.is_empty() {
        return Err(invalid("no levels to write"));
    }
    if opts.tile_size == 0 || !opts.tile_size.is_multiple_of(16) {
        return Err(invalid("tile size must be a positive multiple of 16"));
    }
    if !matches!(opts.compression, compression::NONE | compression::JPEG) {
        return Err(SlideError::UnsupportedCompression(opts.compression));
    }
    let channels = levels[0].channels();
    if channels != 1 && channels != 3 || levels.iter().any(|l| l.channels() != channels) {
        return Err(invalid("levels must share 1 or 3 channels"));
    }

    let mut enc = Encoder {
        order: opts.byte_order,
        big: opts.big_tiff,
        out: Vec::new(),
    };
    let mark = match opts.byte_order {
        ByteOrder::Little => *b"II",
        ByteOrder::Big => *b"MM",
    };
    enc.out.extend_from_slice(&mark);
    let mut prev_next_pos;
    if opts.big_tiff {
        let v = enc.u16(43);
        enc.out.extend_from_slice(&v);
        let v = enc.u16(8);
        enc.out.extend_from_slice(&v);
        enc.out.extend_from_slice(&[0, 0]);
        prev_next_pos = enc.out.len();
        enc.out.extend_from_slice(&[0; 8]);
    } else {
        let v = enc.u16(42);
        enc.out.extend_from_slice(&v);
        prev_next_pos = enc.out.len();
        enc.out.extend_from_slice(&[0; 4]);
    }

    let ts = opts.tile_size;
    for (li, level) in levels.iter().enumerate() {
        let cols = level.width().div_ceil(ts);
        let rows = level.height().div_ceil(ts);
        let mut offsets = Vec::with_capacity((cols * rows) as usize);
        let mut counts = Vec::with_capacity((cols * rows) as usize);
        for row in 0..rows {
            for col in 0..cols {
                let rect = Rect::new((col * ts) as i64, (row * ts) as i64, ts as i64, ts as i64);
                let tile = level.crop(rect, 0);
                let bytes = match opts.compression {
                    compression::JPEG => encode_jpeg(&tile, opts.jpeg_quality)?,
                    _ => tile.into_raw(),
                };
                enc.align();
                offsets.push(enc.out.len() as u64);
                counts.push(bytes.len() as u64);
                enc.out.extend_from_slice(&bytes);
            }
        }
        let mut entries = vec![
            enc.longs(tags::NEW_SUBFILE_TYPE, &[if li == 0 { 0 } else { 1 }]),
            enc.longs(tags::IMAGE_WIDTH, &[level.width()]),
            enc.longs(tags::IMAGE_LENGTH, &[level.height()]),
            enc.shorts(tags::BITS_PER_SAMPLE, &vec![8; channels as usize]),
            enc.shorts(tags::COMPRESSION, &[opts.compression]),
            enc.shorts(tags::PHOTOMETRIC, &[if channels == 3 { 2 } else { 1 }]),
            enc.shorts(tags::SAMPLES_PER_PIXEL, &[channels as u16]),
            enc.shorts(tags::PLANAR_CONFIGURATION, &[1]),
            enc.longs(tags::TILE_WIDTH, &[ts]),
            enc.longs(tags::TILE_LENGTH, &[ts]),
            enc.offsets(tags::TILE_OFFSETS, &offsets),
            enc.offsets(tags::TILE_BYTE_COUNTS, &counts),
        ];
        if li == 0 {
            if let Some(desc) = &opts.description {
                let mut data = desc.as_bytes().to_vec();
                data.push(0);
                entries.push(Entry {
                    tag: tags::IMAGE_DESCRIPTION,
                    field_type: field_type::ASCII,
                    count: data.len() as u64,
                    data,
                });
            }
        }
        let (ifd_offset, next_pos) = enc.write_ifd(entries);
        enc.patch_offset(prev_next_pos, ifd_offset);
        prev_next_pos = next_pos;
    }
    if !opts.big_tiff && enc.out.len() > u32::MAX as usize {
        return Err(invalid("classic TIFF exceeds 4 GiB; use BigTIFF"));
    }
    Ok(enc.out)
}
