//! Numeric substrate: tensors, a gradient tape, small MLPs, action
//! distributions and the Adam optimizer.

pub mod dist;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use dist::{Categorical, DiagGaussian};
pub use mlp::{Linear, Mlp, MlpVars, Modulation};
pub use optim::{clip_global_norm, Adam};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
