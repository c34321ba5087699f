pub mod agent;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod envs;
pub mod error;
pub mod layers;
pub mod math;
pub mod ood;
pub mod ppo;
pub mod space;
pub mod sweep;
pub mod uncertainty;

pub use error::{Error, Result};
pub use space::{Action, ActionSpace};
