//! Depth maps from Lidar, augmented views and hidden point removal.

pub mod augment;
pub mod hpr;
pub mod raster;

pub use augment::{generate_augmented_views, perturb_pose, render_points, AugmentedPose, AugmentedView, BaseView};
pub use hpr::{hidden_point_removal, spherical_flip};
pub use raster::{rasterize_depth, SparseDepthMap};
