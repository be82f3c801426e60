//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are flat `Vec<T>` buffers with an explicit shape (N×C×H×W layout
//! for feature maps, 2-D for parameter matrices). All computation is recorded
//! on a [`Tape`]; calling [`Tape::backward`] replays the recorded operations
//! in reverse and accumulates gradients into every `requires_grad` leaf.
//!
//! The engine is deliberately small: no broadcasting beyond bias addition,
//! no views other than `reshape`, CPU only. `f32` is the working precision;
//! every op is generic over [`Scalar`] so the same graph can be instantiated
//! in `f64` for finite-difference verification (see [`gradcheck`]).

mod checkpoint;
mod data;
mod error;
pub mod gradcheck;
mod ops;
mod param;
mod scalar;
mod tape;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, CheckpointError};
pub use data::TensorData;
pub use error::{Result, TensorError};
pub use ops::sample::MaskPlan;
pub use param::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{GradSink, Tape, Var};
