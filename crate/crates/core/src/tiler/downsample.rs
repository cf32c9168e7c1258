use crate::pixel::PixelBuffer;

/// Halve an image with a 2×2 box filter. Odd trailing rows and columns
/// average the smaller block that remains. Means round half away from
/// zero, which for non-negative sums is `(2·sum + n) / (2·n)`.
pub fn downsample_2x(image: &PixelBuffer) -> PixelBuffer {
    let (w, h, c) = (image.width() as usize, image.height() as usize, image.channels() as usize);
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let src = image.data();
    let stride = w * c;
    let mut out = vec![0u8; ow * oh * c];
    for oy in 0..oh {
        let y0 = 2 * oy;
        let y1 = (y0 + 1).min(h - 1);
        let rows = if y1 != y0 { 2 } else { 1 };
        for ox in 0..ow {
            let x0 = 2 * ox;
            let x1 = (x0 + 1).min(w - 1);
            let cols = if x1 != x0 { 2 } else { 1 };
            let n = (rows * cols) as u32;
            for ch in 0..c {
                let mut sum = src[y0 * stride + x0 * c + ch] as u32;
                if cols == 2 {
                    sum += src[y0 * stride + x1 * c + ch] as u32;
                }
                if rows == 2 {
                    sum += src[y1 * stride + x0 * c + ch] as u32;
                    if cols == 2 {
                        sum += src[y1 * stride + x1 * c + ch] as u32;
                    }
                }
                out[(oy * ow + ox) * c + ch] = ((2 * sum + n) / (2 * n)) as u8;
            }
        }
    }
    PixelBuffer::from_raw(ow as u32, oh as u32, c as u8, out).expect("dims computed above")
}
