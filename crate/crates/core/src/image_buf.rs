//! Minimal in-memory image containers. Colors are linear `f32` in `[0, 1]`.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return invalid(format!(
                "image data has {} pixels, expected {}x{}",
                data.len(),
                width,
                height
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        self.data[y * self.width + x] = c;
    }

    /// Bilinear lookup at a continuous pixel coordinate where pixel `(i, j)`
    /// has its center at `(i + 0.5, j + 0.5)`. Borders clamp to edge.
    pub fn bilinear(&self, u: f64, v: f64) -> [f32; 3] {
        let fx = u - 0.5;
        let fy = v - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = (fx - x0) as f32;
        let ay = (fy - y0) as f32;
        let clamp_x = |x: f64| x.clamp(0.0, (self.width - 1) as f64) as usize;
        let clamp_y = |y: f64| y.clamp(0.0, (self.height - 1) as f64) as usize;
        let (xa, xb) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (ya, yb) = (clamp_y(y0), clamp_y(y0 + 1.0));
        let c00 = self.get(xa, ya);
        let c10 = self.get(xb, ya);
        let c01 = self.get(xa, yb);
        let c11 = self.get(xb, yb);
        let mut out = [0.0f32; 3];
        for k in 0..3 {
            let top = c00[k] + (c10[k] - c00[k]) * ax;
            let bot = c01[k] + (c11[k] - c01[k]) * ax;
            out[k] = top + (bot - top) * ay;
        }
        out
    }
}

/// Per-pixel boolean mask; `true` means the pixel is excluded (dynamic).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub excluded: Vec<bool>,
}

impl Mask {
    pub fn none(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            excluded: vec![false; width * height],
        }
    }

    pub fn all(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            excluded: vec![true; width * height],
        }
    }

    #[inline]
    pub fn is_excluded(&self, x: usize, y: usize) -> bool {
        self.excluded[y * self.width + x]
    }

    pub fn count_included(&self) -> usize {
        self.excluded.iter().filter(|e| !**e).count()
    }
}
