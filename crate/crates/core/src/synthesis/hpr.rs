//! Hidden point removal: spherical flip about the viewpoint, then convex
//! hull membership of the flipped set with the viewpoint added.

use qhull::Qh;

use crate::error::{invalid, Result};
use crate::geometry::Vec3;

pub const DEFAULT_GAMMA: f64 = 2.0;

/// Spherically flipped points relative to `viewpoint`, radius `10^γ · max‖p‖`.
pub fn spherical_flip(points: &[Vec3], viewpoint: &Vec3, gamma: f64) -> Result<Vec<Vec3>> {
    let rel: Vec<Vec3> = points.iter().map(|p| p - viewpoint).collect();
    let max = rel.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if rel.iter().any(|p| p.norm() == 0.0) {
        return invalid("hidden point removal: viewpoint coincides with a point");
    }
    let r = 10f64.powf(gamma) * max;
    Ok(rel.iter().map(|p| p + p * (2.0 * (r - p.norm()) / p.norm())).collect())
}

/// Indices (ascending) of the points visible from `viewpoint`. Inputs whose
/// hull is degenerate (fewer than four non-coplanar points) are all visible.
pub fn hidden_point_removal(points: &[Vec3], viewpoint: &Vec3, gamma: f64) -> Result<Vec<usize>> {
    if !gamma.is_finite() {
        return invalid(format!("hidden point removal: gamma must be finite, got {gamma}"));
    }
    let flipped = spherical_flip(points, viewpoint, gamma)?;
    if points.len() < 4 {
        return Ok((0..points.len()).collect());
    }
    let mut coords: Vec<[f64; 3]> = flipped.iter().map(|p| [p.x, p.y, p.z]).collect();
    coords.push([0.0; 3]);
    let qh = match Qh::builder().compute(true).capture_stdout(true).capture_stderr(true).build_from_iter(coords) {
        Ok(qh) => qh,
        Err(e) => {
            log::debug!("hull failed ({e:?}); treating all points as visible");
            return Ok((0..points.len()).collect());
        }
    };
    let mut visible: Vec<usize> = qh.vertices().filter_map(|v| v.index(&qh)).filter(|&i| i < points.len()).collect();
    visible.sort_unstable();
    visible.dedup();
    Ok(visible)
}
