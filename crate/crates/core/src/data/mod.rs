//! In-memory datasets, on-disk formats and the synthetic scene generator.

pub mod formats;
pub mod manifest;
pub mod synth;

use crate::error::{invalid, Result};
use crate::field::Ray;
use crate::geometry::{LidarSweep, PinholeCamera, SE3Pose, Vec3};
use crate::image_buf::{Mask, RgbImage};
use crate::synthesis::SparseDepthMap;

pub use manifest::{load_manifest, parse_pose, save_dataset, FrameEntry, SceneManifest, MANIFEST_FORMAT};
pub use synth::{LidarConfig, Primitive, SceneConfig, Texture};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub image: RgbImage,
    pub world_to_camera: SE3Pose,
    /// Dynamic pixels excluded from training and metrics.
    pub mask: Mask,
    pub timestamp: f64,
    /// Sweep in the sensor frame.
    pub lidar: LidarSweep,
    pub sensor_to_world: SE3Pose,
    /// Reference ray-distance depth, when known.
    pub gt_depth: Option<SparseDepthMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub camera: PinholeCamera,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        for f in &self.frames {
            let (w, h) = (self.camera.width, self.camera.height);
            if f.image.width != w || f.image.height != h || f.mask.width != w || f.mask.height != h {
                return invalid(format!("frame {}: image or mask size differs from the camera", f.name));
            }
            if f.gt_depth.as_ref().is_some_and(|d| d.width != w || d.height != h) {
                return invalid(format!("frame {}: depth size differs from the camera", f.name));
            }
            f.lidar.validate()?;
        }
        Ok(())
    }

    pub fn camera_centers(&self) -> Vec<Vec3> {
        self.frames.iter().map(|f| f.world_to_camera.camera_center()).collect()
    }
}

/// Every fourth frame (indices 2, 6, 10, ...) held out for testing.
pub fn split_every4(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % 4 != 2)
}

/// Unit-direction world ray through the center of pixel `(x, y)`.
pub fn pixel_ray(cam: &PinholeCamera, world_to_camera: &SE3Pose, x: usize, y: usize) -> Ray {
    Ray {
        origin: world_to_camera.camera_center(),
        direction: SceneConfig::pixel_direction(cam, world_to_camera, x, y),
    }
}
