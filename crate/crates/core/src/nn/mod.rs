//! Differentiable building blocks: parameters, dense layers, hash grid and
//! spherical-harmonics encodings, optimizers and checkpoints.

pub mod checkpoint;
pub mod hash;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod sh;
pub mod tensor;

pub use checkpoint::{config_hash, BlockMeta, Checkpoint};
pub use hash::{HashEncoding, HashEncodingConfig};
pub use mlp::{Activation, Linear, Mlp, MlpCache};
pub use optim::{LrSchedule, OptimizerConfig, OptimizerKind, OptimizerState, StepOutcome};
pub use params::{ParamBlock, ParamId, ParamStore};
pub use sh::{sh_dim, sh_encode};
pub use tensor::{axpy, dot, Matrix};
