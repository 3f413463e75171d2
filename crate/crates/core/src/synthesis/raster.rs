//! Sparse depth maps from projected points, nearest point per pixel.

use crate::error::{invalid, Result};
use crate::geometry::{project, PinholeCamera, SE3Pose, WorldPoint};
use crate::image_buf::RgbImage;

/// Per-pixel ray distance in meters, `0` where no point landed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub rgb: Option<Vec<[f32; 3]>>,
}

impl SparseDepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            rgb: None,
        }
    }

    pub fn from_depth(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width * height {
            return invalid(format!("depth map of {width}x{height} needs {} values, got {}", width * height, depth.len()));
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return invalid("depth map values must be finite and non-negative");
        }
        Ok(Self {
            width,
            height,
            depth,
            rgb: None,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let d = self.depth[y * self.width + x];
        (d > 0.0).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    /// Pixels with a depth value, row-major.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.depth.iter().map(|d| *d > 0.0).collect()
    }

    /// The carried colors as an image (black where invalid).
    pub fn rgb_image(&self) -> Option<RgbImage> {
        self.rgb.as_ref().map(|c| RgbImage {
            width: self.width,
            height: self.height,
            data: c.clone(),
        })
    }
}

/// Z-buffers `points` into the camera `world_to_camera` views them from.
/// The nearest point wins a pixel, earlier points on exact ties. Colors are
/// carried when at least one point has them.
pub fn rasterize_depth(points: &[WorldPoint], cam: &PinholeCamera, world_to_camera: &SE3Pose) -> Result<SparseDepthMap> {
    let n = cam.num_pixels();
    let mut best = vec![f64::INFINITY; n];
    let mut winner = vec![usize::MAX; n];
    for (k, p) in points.iter().enumerate() {
        if let Some(pr) = project(cam, world_to_camera, &p.position)? {
            let (x, y) = pr.pixel_index();
            let i = y * cam.width + x;
            if pr.range < best[i] {
                best[i] = pr.range;
                winner[i] = k;
            }
        }
    }
    let depth = best.iter().map(|&d| if d.is_finite() { d as f32 } else { 0.0 }).collect();
    let rgb = points.iter().any(|p| p.rgb.is_some()).then(|| {
        winner
            .iter()
            .map(|&k| if k == usize::MAX { [0.0; 3] } else { points[k].rgb.unwrap_or([0.0; 3]) })
            .collect()
    });
    Ok(SparseDepthMap {
        width: cam.width,
        height: cam.height,
        depth,
        rgb,
    })
}
