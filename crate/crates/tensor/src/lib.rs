//! Reverse-mode automatic differentiation over dense `f32`/`f64` tensors,
//! limited to the operators the blurwarp pipeline needs: convolutions,
//! bilinear warping, affine grid sampling, cost volumes and a handful of
//! reductions. Also hosts the Adam optimizer and the `BWCK` checkpoint
//! container.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod param;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use kernels::conv::ConvGeom;
pub use param::{Binder, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
