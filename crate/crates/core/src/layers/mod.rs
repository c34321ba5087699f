//! Sub-model mechanisms (Masksembles, MC Dropout, MC Dropconnect, Ensembles)
//! behind a single "k outputs per state" interface.

pub mod bundle;
pub mod masks;
pub mod net;

pub use bundle::{forward_all_submodels, StateBundle, SubmodelBundle};
pub use masks::{generate_masks, ones_per_mask, MaskSet};
pub use net::{submodel_for_env, Method, StochasticMlp};
