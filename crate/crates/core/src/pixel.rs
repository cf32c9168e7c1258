use crate::geom::Rect;

/// Row-major 8-bit image. `channels` is 1 (gray), 3 (RGB) or 4 (RGBA,
/// used only for overlays).
#[derive(Clone, PartialEq, Eq)]
pub struct PixelBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for PixelBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PixelBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("pixel buffer of {width}x{height}x{channels} needs {expected} bytes, got {actual}")]
pub struct BufferSizeError {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub expected: usize,
    pub actual: usize,
}

impl PixelBuffer {
    pub fn from_raw(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<u8>,
    ) -> Result<Self, BufferSizeError> {
        let expected = width as usize * height as usize * channels as usize;
        if !matches!(channels, 1 | 3 | 4) || data.len() != expected {
            return Err(BufferSizeError {
                width,
                height,
                channels,
                expected,
                actual: data.len(),
            });
        }
        Ok(PixelBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        assert!(matches!(channels, 1 | 3 | 4), "unsupported channel count");
        PixelBuffer {
            width,
            height,
            channels,
            data: vec![value; width as usize * height as usize * channels as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn row_stride(&self) -> usize {
        self.width as usize * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[i..i + c]
    }

    /// Copy `src_rect` of `src` to `(dst_x, dst_y)` of `self`. The caller
    /// guarantees both rectangles lie inside their buffers.
    pub fn blit(&mut self, src: &PixelBuffer, src_rect: Rect, dst_x: u32, dst_y: u32) {
        debug_assert_eq!(self.channels, src.channels);
        let c = self.channels as usize;
        let len = src_rect.w as usize * c;
        for row in 0..src_rect.h as usize {
            let s = ((src_rect.y as usize + row) * src.width as usize + src_rect.x as usize) * c;
            let d = ((dst_y as usize + row) * self.width as usize + dst_x as usize) * c;
            self.data[d..d + len].copy_from_slice(&src.data[s..s + len]);
        }
    }

    /// Crop to `rect` clipped to the buffer; pixels outside are `fill`.
    pub fn crop(&self, rect: Rect, fill: u8) -> PixelBuffer {
        let mut out = PixelBuffer::filled(rect.w.max(0) as u32, rect.h.max(0) as u32, self.channels, fill);
        let bounds = Rect::new(0, 0, self.width as i64, self.height as i64);
        if let Some(inter) = rect.intersect(&bounds) {
            out.blit(self, inter, (inter.x - rect.x) as u32, (inter.y - rect.y) as u32);
        }
        out
    }

    /// Convert to `channels` (1 or 3). Gray uses integer Rec.601 luma.
    pub fn to_channels(&self, channels: u8) -> PixelBuffer {
        if channels == self.channels {
            return self.clone();
        }
        let n = self.width as usize * self.height as usize;
        let mut data = Vec::with_capacity(n * channels as usize);
        for px in self.data.chunks_exact(self.channels as usize) {
            match (self.channels, channels) {
                (1, 3) => data.extend_from_slice(&[px[0], px[0], px[0]]),
                (1, 4) => data.extend_from_slice(&[px[0], px[0], px[0], 255]),
                (3, 1) | (4, 1) => data.push(luminance(px[0], px[1], px[2])),
                (3, 4) => data.extend_from_slice(&[px[0], px[1], px[2], 255]),
                (4, 3) => data.extend_from_slice(&px[..3]),
                _ => unreachable!("unsupported channel conversion"),
            }
        }
        PixelBuffer {
            width: self.width,
            height: self.height,
            channels,
            data,
        }
    }
}

/// Integer Rec.601 luma, rounded to nearest.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}
