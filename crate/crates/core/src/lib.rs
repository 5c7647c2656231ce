//! Dictionary-based symplectic model order reduction for parametric Hamiltonian systems.
//!
//! The offline phase solves the full-order model at training parameters, stores the
//! snapshots together with all Gram and operator products, and precomputes a DEIM
//! row dictionary for the nonlinearity. The online phase selects snapshots close to
//! the current parameter and time, builds a POD or symplectic basis and its
//! hyper-reduction from the stored products only, and advances the reduced system
//! with the implicit midpoint rule.

pub mod checks;
pub mod diagnostics;
pub mod dictfile;
pub mod dictionary;
pub mod error;
pub mod instrument;
pub mod integrators;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod reduced;
pub mod reduction_db;
pub mod reduction_std;
pub mod sampling;
pub mod selection;
pub mod symplectic;

pub use error::{Error, LoadError, Result};
