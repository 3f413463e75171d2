//! Voxelization, learned Lidar features and fixed-radius neighbor search.

pub mod encoder;
pub mod frnn;
pub mod voxel;

pub use encoder::{EncoderCache, EncoderInput, EncoderKind, LidarEmbeddingSet, LidarEncoder, LidarEncoderConfig, SparseConv3};
pub use frnn::{FrnnIndex, Neighbor};
pub use voxel::{stencil_offsets, voxelize, GridBounds, VoxelCell, VoxelGrid, NO_NEIGHBOR};
