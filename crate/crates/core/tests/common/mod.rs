//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pimip::config::Config;
use pimip::platform::Platform;
use pimip::slide_io::tiff_writer::{write_pyramid_tiff, TiffWriteOptions};
use pimip::PixelBuffer;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn noise(rng: &mut StdRng, w: u32, h: u32, channels: u8) -> PixelBuffer {
    let mut data = vec![0u8; w as usize * h as usize * channels as usize];
    rng.fill(&mut data[..]);
    PixelBuffer::from_raw(w, h, channels, data).unwrap()
}

/// Smooth content that survives JPEG with small error.
pub fn gradient(w: u32, h: u32) -> PixelBuffer {
    let mut img = PixelBuffer::filled(w, h, 3, 0);
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel_mut(x, y);
            p[0] = (x * 255 / w.max(1)) as u8;
            p[1] = (y * 255 / h.max(1)) as u8;
            p[2] = ((x + y) * 127 / (w + h).max(1)) as u8;
        }
    }
    img
}

/// One halving step written from the definition: every output sample is
/// the mean of its block, rounded half away from zero. Blocks hold 1, 2
/// or 4 samples so the float mean is exact.
pub fn oracle_halve(img: &PixelBuffer) -> PixelBuffer {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = PixelBuffer::filled(ow, oh, ch, 0);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..ch as usize {
                let mut sum = 0u32;
                let mut n = 0u32;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        sum += img.pixel(x, y)[c] as u32;
                        n += 1;
                    }
                }
                out.pixel_mut(ox, oy)[c] = (sum as f64 / n as f64).round() as u8;
            }
        }
    }
    out
}

/// Every pyramid level from the base down to 1×1.
pub fn oracle_levels(base: &PixelBuffer) -> Vec<PixelBuffer> {
    let mut levels = vec![base.clone()];
    while {
        let l = levels.last().unwrap();
        l.width() > 1 || l.height() > 1
    } {
        let next = oracle_halve(levels.last().unwrap());
        levels.push(next);
    }
    levels
}

/// Crop with white outside the image, pixel by pixel.
pub fn oracle_crop(img: &PixelBuffer, x: i64, y: i64, w: u32, h: u32) -> PixelBuffer {
    let ch = img.channels();
    let mut out = PixelBuffer::filled(w, h, ch, 255);
    for dy in 0..h {
        for dx in 0..w {
            let (sx, sy) = (x + dx as i64, y + dy as i64);
            if sx >= 0 && sy >= 0 && (sx as u32) < img.width() && (sy as u32) < img.height() {
                out.pixel_mut(dx, dy).copy_from_slice(img.pixel(sx as u32, sy as u32));
            }
        }
    }
    out
}

pub fn tiff_bytes(levels: &[PixelBuffer], tile_size: u32, magnification: Option<f64>) -> Vec<u8> {
    let opts = TiffWriteOptions {
        tile_size,
        description: magnification.map(|m| format!("Synthetic slide |AppMag = {m}|MPP = 0.25")),
        ..TiffWriteOptions::default()
    };
    write_pyramid_tiff(levels, &opts).unwrap()
}

/// Write a three-level uncompressed tiled TIFF for `base`.
pub fn write_slide(dir: &Path, file: &str, base: &PixelBuffer, magnification: Option<f64>) -> PathBuf {
    let levels: Vec<PixelBuffer> = oracle_levels(base).into_iter().take(3).collect();
    let path = dir.join(file);
    std::fs::write(&path, tiff_bytes(&levels, 64, magnification)).unwrap();
    path
}

pub fn config(dir: &Path) -> Config {
    let mut c = Config::with_data_dir(dir.join("data"));
    c.workers = 2;
    c
}

pub fn platform(dir: &Path) -> Platform {
    Platform::open(config(dir)).unwrap()
}

/// Platform with one ingested 1000×600 slide named `name`.
pub fn platform_with_slide(dir: &Path, name: &str) -> Platform {
    let p = platform(dir);
    let src = write_slide(dir, &format!("{name}.tif"), &tissue(&mut rng(7), 1000, 600).0, Some(40.0));
    p.ingest(&src, Some(name)).unwrap();
    p
}

/// Near-white glass with noise, plus chromatic elliptical tissue blobs.
/// Returns the image and the row-major ground-truth tissue mask.
pub fn tissue(rng: &mut StdRng, w: u32, h: u32) -> (PixelBuffer, Vec<bool>) {
    let mut img = PixelBuffer::filled(w, h, 3, 0);
    let mut truth = vec![false; (w * h) as usize];
    let blobs = rng.random_range(1..=4);
    let mut shapes = Vec::new();
    for _ in 0..blobs {
        let cx = rng.random_range(0.2..0.8) * w as f64;
        let cy = rng.random_range(0.2..0.8) * h as f64;
        let rx = rng.random_range(0.08..0.25) * w as f64;
        let ry = rng.random_range(0.08..0.25) * h as f64;
        let colour = [
            rng.random_range(150..230u8),
            rng.random_range(40..120u8),
            rng.random_range(120..200u8),
        ];
        shapes.push((cx, cy, rx, ry, colour));
    }
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let hit = shapes
                .iter()
                .find(|(cx, cy, rx, ry, _)| ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2) <= 1.0);
            let p = img.pixel_mut(x, y);
            match hit {
                Some(&(_, _, _, _, c)) => {
                    for k in 0..3 {
                        p[k] = c[k].saturating_add_signed(rng.random_range(-12..=12));
                    }
                    truth[(y * w + x) as usize] = true;
                }
                None => {
                    let v = rng.random_range(232..=250u8);
                    for c in p.iter_mut().take(3) {
                        *c = v.saturating_add_signed(rng.random_range(-3..=3));
                    }
                }
            }
        }
    }
    (img, truth)
}

/// Light noisy background with dark discs of radius 5 to 9 that neither
/// touch each other nor the border. Returns the image and disc centres.
pub fn planted_discs(rng: &mut StdRng, w: u32, h: u32, count: usize) -> (PixelBuffer, Vec<(f64, f64)>) {
    let mut discs: Vec<(f64, f64, f64)> = Vec::new();
    let mut guard = 0;
    while discs.len() < count && guard < 100_000 {
        guard += 1;
        let r = rng.random_range(5.0..=9.0);
        let cx = rng.random_range(r + 3.0..w as f64 - r - 3.0);
        let cy = rng.random_range(r + 3.0..h as f64 - r - 3.0);
        if discs.iter().all(|&(x, y, q)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() > r + q + 4.0) {
            discs.push((cx, cy, r));
        }
    }
    let mut img = PixelBuffer::filled(w, h, 3, 0);
    for y in 0..h {
        for x in 0..w {
            let inside = discs
                .iter()
                .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r);
            let base: u8 = if inside { 60 } else { 220 };
            let v = base.saturating_add_signed(rng.random_range(-15..=15));
            let p = img.pixel_mut(x, y);
            p[0] = v;
            p[1] = v.saturating_sub(10);
            p[2] = v;
        }
    }
    (img, discs.into_iter().map(|(x, y, _)| (x, y)).collect())
}
