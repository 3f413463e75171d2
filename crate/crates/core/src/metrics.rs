//! Image quality metrics on `[0,1]` RGB images.

use crate::error::{invalid, Result};
use crate::image_buf::{Mask, RgbImage};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return invalid(format!("image sizes differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height));
    }
    if let Some(m) = mask {
        if m.width != a.width || m.height != a.height {
            return invalid("mask size differs from the images");
        }
    }
    Ok(())
}

fn included(mask: Option<&Mask>, i: usize) -> bool {
    mask.is_none_or(|m| !m.excluded[i])
}

pub fn mse(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<f64> {
    check(a, b, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, (p, q)) in a.data.iter().zip(&b.data).enumerate() {
        if included(mask, i) {
            sum += (0..3).map(|c| (p[c] as f64 - q[c] as f64).powi(2)).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return invalid("no unmasked pixels to compare");
    }
    Ok(sum / (3 * n) as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<f64> {
    let m = mse(a, b, mask)?;
    Ok(if m <= 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output `(w-10) x (h-10)`.
fn filter(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| g[j] * src[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|j| g[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and over the 11x11 windows that lie inside the
/// image and contain no masked pixel.
pub fn ssim(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Result<f64> {
    check(a, b, mask)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return invalid(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"));
    }
    let g = gaussian_window();
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    // windows fully unmasked, via a summed-area table of excluded pixels
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let e = u32::from(!included(mask, y * w + x));
            sat[(y + 1) * (w + 1) + x + 1] = e + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    let valid: Vec<bool> = (0..ow * oh)
        .map(|i| {
            let (x, y) = (i % ow, i / ow);
            let (x1, y1) = (x + SSIM_WINDOW, y + SSIM_WINDOW);
            sat[y1 * (w + 1) + x1] + sat[y * (w + 1) + x] == sat[y * (w + 1) + x1] + sat[y1 * (w + 1) + x]
        })
        .collect();
    let n_valid = valid.iter().filter(|v| **v).count();
    if n_valid == 0 {
        return invalid("no fully unmasked SSIM window");
    }
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c] as f64).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter(&x, w, h, &g), filter(&y, w, h, &g));
        let (sxx, syy, sxy) = (filter(&xx, w, h, &g), filter(&yy, w, h, &g), filter(&xy, w, h, &g));
        for i in 0..ow * oh {
            if !valid[i] {
                continue;
            }
            let (vx, vy, cxy) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i], sxy[i] - mx[i] * my[i]);
            total += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cxy + C2)) / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
        }
    }
    Ok(total / (3 * n_valid) as f64)
}
