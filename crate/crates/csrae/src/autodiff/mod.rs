//! Minimal reverse-mode automatic differentiation over dense `f64` matrices,
//! plus the layer initialization, parameter storage and Adam pieces needed to
//! train small MLP models.
//!
//! Graphs are rebuilt per minibatch; a [`Value`] owns its forward data and a
//! gradient accumulator of the same shape.

mod adam;
mod gradcheck;
mod init;
mod params;
mod tape;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub use init::{glorot_init, glorot_init_seeded};
pub use params::ParamStore;
pub use tape::Value;
