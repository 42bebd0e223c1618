//! Simulation and numerical analysis of dynamical bit sequences.

pub mod cli;
pub mod energy;
pub mod error;
pub mod estimators;
pub mod lp;
pub mod parity;
pub mod process;
pub mod quad;
pub mod rng;
pub mod runs;
pub mod special;
pub mod timeset;

pub use energy::{DiscreteMeasure, Kernel, PackingSolution};
pub use error::{Error, Result};
pub use parity::BlockScheme;
pub use process::{Trajectory, TransitionParams};
pub use timeset::TimeSet;
