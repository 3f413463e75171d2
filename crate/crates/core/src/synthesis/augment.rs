//! Synthetic training views: colorized Lidar points rasterized from
//! translation-perturbed copies of real camera poses.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{PinholeCamera, SE3Pose, Vec3, WorldPoint};
use crate::image_buf::RgbImage;

use super::raster::{rasterize_depth, SparseDepthMap};

pub const DEFAULT_SIGMA: f64 = 1.5;

/// Shifts the camera center of a world-to-camera pose by an isotropic
/// Gaussian with per-axis std `sigma`; the orientation is kept.
pub fn perturb_pose<R: Rng + ?Sized>(world_to_camera: &SE3Pose, sigma: f64, rng: &mut R) -> Result<SE3Pose> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("perturbation std must be non-negative, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(*world_to_camera);
    }
    let n = Normal::new(0.0, sigma).expect("positive std");
    let shift = Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
    let center = world_to_camera.camera_center() + shift;
    Ok(SE3Pose {
        rotation: world_to_camera.rotation,
        translation: -(world_to_camera.rotation * center),
    })
}

/// A real view to perturb and the colorized points to rasterize for it.
#[derive(Debug, Clone, Copy)]
pub struct BaseView<'a> {
    pub index: usize,
    pub world_to_camera: SE3Pose,
    pub points: &'a [WorldPoint],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPose {
    pub base: usize,
    pub sigma: f64,
    /// World-from-camera, row-major 4x4.
    pub pose: [f64; 16],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub base: usize,
    pub world_to_camera: SE3Pose,
    pub rgb: RgbImage,
    /// Pixels hit by at least one colored point.
    pub mask: Vec<bool>,
    pub depth: SparseDepthMap,
    pub sigma: f64,
}

impl AugmentedView {
    pub fn valid_pixels(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn pose_record(&self) -> AugmentedPose {
        AugmentedPose {
            base: self.base,
            sigma: self.sigma,
            pose: self.world_to_camera.inverse().to_row_major(),
        }
    }
}

/// Renders one view of colored `points` from `world_to_camera`.
pub fn render_points(points: &[WorldPoint], cam: &PinholeCamera, world_to_camera: &SE3Pose) -> Result<(RgbImage, Vec<bool>, SparseDepthMap)> {
    let colored: Vec<WorldPoint> = points.iter().filter(|p| p.rgb.is_some()).copied().collect();
    let mut depth = rasterize_depth(&colored, cam, world_to_camera)?;
    let mask = depth.valid_mask();
    let rgb = depth.rgb_image().unwrap_or_else(|| RgbImage::new(cam.width, cam.height));
    depth.rgb = None;
    Ok((rgb, mask, depth))
}

/// `count` views; base views are taken round-robin.
pub fn generate_augmented_views<R: Rng + ?Sized>(
    base_views: &[BaseView<'_>],
    cam: &PinholeCamera,
    count: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<AugmentedView>> {
    if count > 0 && base_views.is_empty() {
        return invalid("augmented views need at least one base view");
    }
    (0..count)
        .map(|k| {
            let base = &base_views[k % base_views.len()];
            let pose = perturb_pose(&base.world_to_camera, sigma, rng)?;
            let (rgb, mask, depth) = render_points(base.points, cam, &pose)?;
            Ok(AugmentedView {
                base: base.index,
                world_to_camera: pose,
                rgb,
                mask,
                depth,
                sigma,
            })
        })
        .collect()
}
