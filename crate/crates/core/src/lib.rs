pub mod autodiff;
pub mod error;
pub mod evalrep;
pub mod nets;
pub mod render;
pub mod synth;
pub mod train;
pub mod voxel;

pub use autodiff::Tensor;
pub use error::{Error, Result};
pub use voxel::{PointCloud, VoxelGrid};
