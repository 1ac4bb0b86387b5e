use std::collections::VecDeque;

use super::{Raster, Result, VisionError};

pub const DEFAULT_LOW: f64 = 40.0;
pub const DEFAULT_HIGH: f64 = 100.0;
const SIGMA: f64 = 1.4;

/// Binary edge map, `1` on edge pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl EdgeMap {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

fn clamped(v: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    let cx = x.clamp(0, w as isize - 1) as usize;
    let cy = y.clamp(0, h as isize - 1) as usize;
    v[cy * w + cx]
}

/// 5x5 Gaussian with standard deviation 1.4, replicated borders.
pub fn gaussian_blur(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k: Vec<f64> = (-2..=2).map(|i: i32| (-(i * i) as f64 / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / s).collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..5).map(|i| k[i] * clamped(img, w, h, x as isize + i as isize - 2, y as isize)).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..5).map(|i| k[i] * clamped(&tmp, w, h, x as isize, y as isize + i as isize - 2)).sum();
        }
    }
    out
}

/// Unnormalised 3x3 Sobel derivatives `(gx, gy)`, replicated borders.
pub fn sobel(img: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| clamped(img, w, h, x + dx, y + dy);
            let i = y as usize * w + x as usize;
            gx[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

fn non_max_suppression(gx: &[f64], gy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mag: Vec<f64> = gx.iter().zip(gy).map(|(a, b)| a.hypot(*b)).collect();
    let mut out = vec![0.0; w * h];
    let tan22 = (std::f64::consts::PI / 8.0).tan();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let (dx, dy) = if ay <= ax * tan22 {
                (1, 0)
            } else if ax <= ay * tan22 {
                (0, 1)
            } else if (gx[i] > 0.0) == (gy[i] > 0.0) {
                (1, 1)
            } else {
                (1, -1)
            };
            let fwd = clamped(&mag, w, h, x + dx, y + dy);
            let back = clamped(&mag, w, h, x - dx, y - dy);
            // ties go to the pixel on the backward side
            if m > fwd && m >= back {
                out[i] = m;
            }
        }
    }
    out
}

/// Double threshold with 8-connected hysteresis: pixels above `high` seed
/// edges that grow through pixels above `low`.
pub fn hysteresis(mag: &[f64], w: usize, h: usize, low: f64, high: f64) -> EdgeMap {
    let mut data = vec![0u8; w * h];
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| mag[i] > high).collect();
    for &i in &queue {
        data[i] = 1;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if data[j] == 0 && mag[j] > low {
                    data[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    EdgeMap { width: w, height: h, data }
}

/// Gaussian blur, Sobel gradients, non-maximum suppression and hysteresis.
/// Thresholds apply to the raw Sobel magnitude of 0-255 intensities.
pub fn canny_edges(raster: &Raster, low: f64, high: f64) -> Result<EdgeMap> {
    if !(0.0 <= low && low < high && high <= 255.0) {
        return Err(VisionError::InvalidParameter(format!("thresholds need 0 <= low < high <= 255, got {low}, {high}")));
    }
    let (w, h) = (raster.width(), raster.height());
    let img: Vec<f64> = raster.pixels().iter().map(|&v| v as f64).collect();
    let blurred = gaussian_blur(&img, w, h);
    let (gx, gy) = sobel(&blurred, w, h);
    let thin = non_max_suppression(&gx, &gy, w, h);
    Ok(hysteresis(&thin, w, h, low, high))
}
