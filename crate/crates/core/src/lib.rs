//! Implicit occupancy-field shape learning.
//!
//! A coordinate-conditioned decoder `f(p, z) -> [0, 1]` is trained as a binary
//! inside/outside classifier over voxelized shapes, then sampled at any
//! resolution and meshed with marching cubes.

pub mod autodiff;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod extract;
mod format;
pub mod metrics;
pub mod sampling;
pub mod tensor;
pub mod training;
pub mod verify;
pub mod voxel;

pub use autodiff::{AdamConfig, AdamState, Params, Tape, Var};
pub use decoder::{Decoder, DecoderArch};
pub use encoder::{Encoder, EncoderArch};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
pub use voxel::{ShapeSpec, VoxelGrid};
