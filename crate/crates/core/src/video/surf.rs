//! Upright SURF description of a temporally averaged patch.

use super::detect::InterestPoint;
use super::volume::FrameVolume;

pub const SURF_DIM: usize = 64;

const GRID: usize = 4;
const SAMPLES_PER_CELL: usize = 5;
const SAMPLES: usize = GRID * SAMPLES_PER_CELL;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfDescriptor {
    pub values: [f64; SURF_DIM],
}

impl SurfDescriptor {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Mean of frames `t - r ..= t + r` (clipped to the volume) over a square
/// window; coordinates outside the frame replicate the border.
struct AveragedPatch {
    x0: isize,
    y0: isize,
    side: usize,
    pixels: Vec<f64>,
}

impl AveragedPatch {
    fn new(volume: &FrameVolume, cx: usize, cy: usize, t: usize, radius_t: usize, half: isize) -> Self {
        let t0 = t.saturating_sub(radius_t);
        let t1 = (t + radius_t).min(volume.frames() - 1);
        let n_frames = (t1 - t0 + 1) as f64;
        let side = (2 * half + 1) as usize;
        let x0 = cx as isize - half;
        let y0 = cy as isize - half;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut pixels = vec![0.0; side * side];
        for tt in t0..=t1 {
            for j in 0..side {
                let y = clamp(y0 + j as isize, volume.height());
                for i in 0..side {
                    let x = clamp(x0 + i as isize, volume.width());
                    pixels[j * side + i] += volume.get(tt, y, x);
                }
            }
        }
        for p in &mut pixels {
            *p /= n_frames;
        }
        AveragedPatch {
            x0,
            y0,
            side,
            pixels,
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let i = (x - self.x0).clamp(0, self.side as isize - 1) as usize;
        let j = (y - self.y0).clamp(0, self.side as isize - 1) as usize;
        self.pixels[j * self.side + i]
    }

    fn box_sum(&self, x0: isize, x1: isize, y0: isize, y1: isize) -> f64 {
        let mut s = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                s += self.at(x, y);
            }
        }
        s
    }

    /// Haar responses of side `2 * half` centred on `(x, y)`.
    fn haar(&self, x: isize, y: isize, half: isize) -> (f64, f64) {
        let dx = self.box_sum(x, x + half, y - half, y + half)
            - self.box_sum(x - half, x, y - half, y + half);
        let dy = self.box_sum(x - half, x + half, y, y + half)
            - self.box_sum(x - half, x + half, y - half, y);
        (dx, dy)
    }
}

/// 64-value upright SURF descriptor: a `20 * sigma_s` square centred on the
/// point, split into 4x4 cells of 5x5 samples, each cell contributing
/// `(sum dx, sum dy, sum |dx|, sum |dy|)` of Gaussian-weighted Haar
/// responses. Frames within `sigma_t` of the point are averaged first.
pub fn describe(volume: &FrameVolume, point: &InterestPoint) -> SurfDescriptor {
    let s = point.sigma_s.max(0.5);
    let haar_half = (s.round() as isize).max(1);
    let radius_t = point.sigma_t.round().max(0.0) as usize;
    let reach = (10.0 * s).ceil() as isize + haar_half + 1;
    let patch = AveragedPatch::new(volume, point.x, point.y, point.t, radius_t, reach);

    let weight_sigma = 3.3 * s;
    let mut values = [0.0; SURF_DIM];
    for j in 0..SAMPLES {
        let v = (j as f64 - (SAMPLES as f64 - 1.0) / 2.0) * s;
        for i in 0..SAMPLES {
            let u = (i as f64 - (SAMPLES as f64 - 1.0) / 2.0) * s;
            let px = point.x as isize + u.round() as isize;
            let py = point.y as isize + v.round() as isize;
            let (dx, dy) = patch.haar(px, py, haar_half);
            let g = (-(u * u + v * v) / (2.0 * weight_sigma * weight_sigma)).exp();
            let cell = (j / SAMPLES_PER_CELL) * GRID + i / SAMPLES_PER_CELL;
            let out = &mut values[cell * 4..cell * 4 + 4];
            out[0] += g * dx;
            out[1] += g * dy;
            out[2] += g * dx.abs();
            out[3] += g * dy.abs();
        }
    }

    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for v in &mut values {
            *v /= norm;
        }
    } else {
        values = [0.0; SURF_DIM];
    }
    SurfDescriptor { values }
}
