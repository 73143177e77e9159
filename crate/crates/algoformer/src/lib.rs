//! AlgoFormer: a pre-transformer, a weight-shared looped transformer and a
//! post-transformer composed into one model, together with explicit-weight
//! constructions of classic solvers (gradient descent, Newton-Schulz,
//! token copying), synthetic in-context tasks, reference solvers and a
//! deterministic training/evaluation harness.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32`/`f64`);
//! concrete aliases below fix the two supported precisions. All defaults
//! are 64-bit; 32-bit is an opt-in for training speed.

pub mod scalar;
pub mod tensor;
pub mod tape;
pub mod gradcheck;
pub mod layer;
pub mod baselines;
pub mod constructions;
pub mod model;
pub mod presets;
pub mod seed;
pub mod tasks;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod train;

pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
