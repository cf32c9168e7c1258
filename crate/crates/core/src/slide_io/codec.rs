use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};

use image::codecs::jpeg::JpegDecoder;
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ColorType, ExtendedColorType, ImageDecoder, ImageEncoder};

use super::pyramid_dir::TileFormat;
use super::tiff::compression;
use super::SlideError;
use crate::pixel::PixelBuffer;

/// Decoder for compressed TIFF tile payloads. Uncompressed tiles never
/// reach the codec.
pub trait TileCodec: Send + Sync {
    fn decode(
        &self,
        compression: u16,
        data: &[u8],
        jpeg_tables: Option<&[u8]>,
        width: u32,
        height: u32,
        channels: u8,
    ) -> Result<PixelBuffer, SlideError>;
}

/// Baseline JPEG via the `image` crate; everything else is rejected.
#[derive(Debug, Default, Clone, Copy)]
pub struct StandardCodec;

impl TileCodec for StandardCodec {
    fn decode(
        &self,
        scheme: u16,
        data: &[u8],
        jpeg_tables: Option<&[u8]>,
        width: u32,
        height: u32,
        channels: u8,
    ) -> Result<PixelBuffer, SlideError> {
        if scheme != compression::JPEG {
            return Err(SlideError::UnsupportedCompression(scheme));
        }
        let stream = merge_jpeg_tables(data, jpeg_tables);
        let decoded = decode_with_guard(&stream, Some((width, height)))?;
        Ok(decoded.to_channels(channels))
    }
}

/// Splice an abbreviated tile stream onto the shared JPEGTables stream:
/// tables without their EOI, then the tile without its SOI.
fn merge_jpeg_tables(data: &[u8], tables: Option<&[u8]>) -> Vec<u8> {
    match tables {
        Some(t) if t.len() >= 4 && data.len() >= 2 && data[..2] == [0xFF, 0xD8] => {
            let mut out = Vec::with_capacity(t.len() + data.len());
            out.extend_from_slice(&t[..t.len() - 2]);
            out.extend_from_slice(&data[2..]);
            out
        }
        _ => data.to_vec(),
    }
}

fn decode_with_guard(bytes: &[u8], expect: Option<(u32, u32)>) -> Result<PixelBuffer, SlideError> {
    catch_unwind(AssertUnwindSafe(|| decode_jpeg(bytes, expect)))
        .unwrap_or_else(|_| Err(SlideError::Codec("decoder panicked".into())))
}

fn decode_jpeg(bytes: &[u8], expect: Option<(u32, u32)>) -> Result<PixelBuffer, SlideError> {
    let codec_err = |e: image::ImageError| SlideError::Codec(e.to_string());
    let decoder = JpegDecoder::new(Cursor::new(bytes)).map_err(codec_err)?;
    let (w, h) = decoder.dimensions();
    if let Some((ew, eh)) = expect {
        if (w, h) != (ew, eh) {
            return Err(SlideError::Codec(format!("jpeg is {w}x{h}, tile is {ew}x{eh}")));
        }
    }
    let channels = match decoder.color_type() {
        ColorType::L8 => 1,
        ColorType::Rgb8 => 3,
        other => return Err(SlideError::Codec(format!("unsupported jpeg color type {other:?}"))),
    };
    let mut data = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut data).map_err(codec_err)?;
    PixelBuffer::from_raw(w, h, channels, data).map_err(|e| SlideError::Codec(e.to_string()))
}

/// Encode a buffer as a standalone image file. PNG output is
/// byte-stable for identical input.
pub(crate) fn encode_image(buf: &PixelBuffer, format: TileFormat) -> Result<Vec<u8>, SlideError> {
    let color = match buf.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        _ => ExtendedColorType::Rgba8,
    };
    let mut out = Vec::new();
    let res = match format {
        TileFormat::Png => PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Adaptive)
            .write_image(buf.data(), buf.width(), buf.height(), color),
        TileFormat::Jpg => {
            let rgb;
            let (data, color) = if buf.channels() == 4 {
                rgb = buf.to_channels(3);
                (rgb.data(), ExtendedColorType::Rgb8)
            } else {
                (buf.data(), color)
            };
            image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, 90)
                .write_image(data, buf.width(), buf.height(), color)
        }
    };
    res.map_err(|e| SlideError::Codec(e.to_string()))?;
    Ok(out)
}

/// Decode a PNG or JPEG file to 1, 3 or 4 channels.
pub(crate) fn decode_image(bytes: &[u8]) -> Result<PixelBuffer, SlideError> {
    if bytes.starts_with(&[0xFF, 0xD8]) {
        return decode_with_guard(bytes, None);
    }
    let img = image::load_from_memory(bytes).map_err(|e| SlideError::Codec(e.to_string()))?;
    let (w, h) = (img.width(), img.height());
    let (channels, data) = match img.color() {
        ColorType::L8 | ColorType::L16 => (1, img.into_luma8().into_raw()),
        ColorType::Rgba8 | ColorType::Rgba16 | ColorType::La8 | ColorType::La16 => (4, img.into_rgba8().into_raw()),
        _ => (3, img.into_rgb8().into_raw()),
    };
    PixelBuffer::from_raw(w, h, channels, data).map_err(|e| SlideError::Codec(e.to_string()))
}
