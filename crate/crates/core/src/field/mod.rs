//! Proposal sampling, Lidar feature fusion, decoding and volume rendering.

pub mod density;
pub mod lidar_feature;
pub mod model;
pub mod render;
pub mod sampler;

pub use density::{ColorNet, DensityNet, LidarInput};
pub use lidar_feature::{LidarFeatureNet, LidarFieldConfig, NeighborSets, MIN_WEIGHT_DISTANCE};
pub use model::{FieldConfig, FieldOutput, LidarScene, RadianceField, Ray, RayGrads, RayRender};
pub use render::{compositing_weights, volume_render, volume_render_backward, weights_backward, RenderOutput};
pub use sampler::{resample, s_range, spacing, spacing_inv, stratified, RaySamples};
