//! Causal dynamical collapse models on a periodic 1+1 null lattice.
//!
//! The crate simulates a lattice field theory whose state lives on the `2N`
//! links cut by a spacelike surface. Each elementary motion applies a local
//! R-matrix and then a soft measurement (a Kraus pair) on the two outgoing
//! links. The realised link values form the field history; the state vector
//! gives the per-link "stuff".
//!
//! Modules:
//! * [`lattice`]: geometry, surfaces and elementary motions.
//! * [`hilbert`]: dense state vector and two-slot kernels.
//! * [`dynamics`]: model parameters and the trajectory sampler.
//! * [`oracle`]: exact small-lattice probabilities, linear extensions and the density-matrix channel.
//! * [`analysis`]: decay-time experiments, fits, rasters, coarse graining, vacuum statistics.
//! * [`cli`]: configuration and subcommands behind the `collapse-lattice` binary.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod lattice;
pub mod oracle;
pub mod raster;
pub mod rng;

pub use error::{Error, Result};
