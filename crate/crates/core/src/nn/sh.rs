//! Real spherical-harmonics basis for view directions, up to four bands.

use crate::error::{invalid, Result};

pub const MAX_BANDS: usize = 4;

/// Number of basis values for `bands` bands.
pub const fn sh_dim(bands: usize) -> usize {
    bands * bands
}

/// Evaluates the first `bands` SH bands at direction `d` into `out`
/// (`bands²` values). `d` is renormalized; a near-zero vector is an error.
pub fn sh_encode(d: [f32; 3], bands: usize, out: &mut [f32]) -> Result<()> {
    if bands == 0 || bands > MAX_BANDS {
        return invalid(format!("spherical harmonics support 1..={MAX_BANDS} bands, got {bands}"));
    }
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(n >= 1e-6) {
        return invalid("spherical harmonics need a non-zero direction");
    }
    if (n - 1.0).abs() > 1e-3 {
        log::warn!("sh_encode: direction norm {n} renormalized");
    }
    let (x, y, z) = (d[0] / n, d[1] / n, d[2] / n);
    out[0] = 0.282_094_8;
    if bands > 1 {
        out[1] = 0.488_602_5 * y;
        out[2] = 0.488_602_5 * z;
        out[3] = 0.488_602_5 * x;
    }
    if bands > 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = 1.092_548_4 * x * y;
        out[5] = 1.092_548_4 * y * z;
        out[6] = 0.946_174_7 * zz - 0.315_391_57;
        out[7] = 1.092_548_4 * x * z;
        out[8] = 0.546_274_2 * (xx - yy);
        if bands > 3 {
            out[9] = 0.590_043_6 * y * (3.0 * xx - yy);
            out[10] = 2.890_611_4 * x * y * z;
            out[11] = 0.457_045_8 * y * (5.0 * zz - 1.0);
            out[12] = 0.373_176_33 * z * (5.0 * zz - 3.0);
            out[13] = 0.457_045_8 * x * (5.0 * zz - 1.0);
            out[14] = 1.445_305_7 * z * (xx - yy);
            out[15] = 0.590_043_6 * x * (xx - 3.0 * yy);
        }
    }
    Ok(())
}
