//! Minimal differentiable-network toolkit.
//!
//! Tensors are row-major 2-D `f64` arrays. A [`Tape`] records one forward
//! pass against a frozen [`ParamStore`]; [`Tape::backward`] returns
//! [`Gradients`] that the caller accumulates into the store before an
//! [`Adam`] step. Keeping gradients out of the store lets several tapes
//! share one set of parameters.

pub mod adam;
pub mod check;
pub mod embed;
pub mod error;
pub mod layers;
pub mod params;
pub mod tape;
pub mod unet;

pub use adam::{Adam, AdamConfig};
pub use embed::sinusoidal_embedding;
pub use error::{NetError, Result};
pub use layers::{Conv1d, GroupNorm, Linear, Mlp};
pub use params::{read_checkpoint, Gradients, Init, Manifest, ParamId, ParamStore, TensorEntry};
pub use tape::{sigmoid, softmax, Tape, Var};
pub use unet::{ResidualBlock, TemporalUNet, UNetConfig};
