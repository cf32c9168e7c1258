use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geom::{Point, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub label: u32,
    pub area: u64,
    /// Mean of member pixel coordinates.
    pub centroid: Point,
    pub bbox: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub width: u32,
    pub height: u32,
    /// Row-major; 0 is background, components are numbered 1..=N in
    /// raster order of their first pixel.
    pub labels: Vec<u32>,
    pub regions: Vec<Component>,
}

/// 8-connected components of a row-major binary raster.
pub fn connected_components(width: u32, height: u32, bits: &[bool]) -> Components {
    assert_eq!(bits.len(), width as usize * height as usize, "raster size");
    let (w, h) = (width as i64, height as i64);
    let mut labels = vec![0u32; bits.len()];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        let label = regions.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let (mut area, mut sx, mut sy) = (0u64, 0u64, 0u64);
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i as i64 % w, i as i64 / w);
            area += 1;
            sx += x as u64;
            sy += y as u64;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if bits[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        regions.push(Component {
            label,
            area,
            centroid: Point::new(sx as f64 / area as f64, sy as f64 / area as f64),
            bbox: Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
        });
    }
    Components {
        width,
        height,
        labels,
        regions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(rows: &[&str]) -> (u32, u32, Vec<bool>) {
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        (rows[0].len() as u32, rows.len() as u32, bits)
    }

    #[test]
    fn two_blocks() {
        let (w, h, b) = raster(&["##..##", "##..##"]);
        let c = connected_components(w, h, &b);
        assert_eq!(c.regions.len(), 2);
        assert_eq!(c.regions.iter().map(|r| r.area).collect::<Vec<_>>(), vec![4, 4]);
        assert_eq!(c.regions[0].centroid, Point::new(0.5, 0.5));
    }

    #[test]
    fn diagonal_touch_is_connected() {
        let (w, h, b) = raster(&["#.", ".#"]);
        assert_eq!(connected_components(w, h, &b).regions.len(), 1);
    }
}
