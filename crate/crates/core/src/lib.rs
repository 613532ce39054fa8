//! Optimal entanglement detection with local operations (LO) and one-way
//! classical communication (1-LOCC) on qutrit pairs.
//!
//! The crate computes minimal type-II error rates by semidefinite
//! programming over decomposable witnesses, searches the preparable state
//! family for the largest communication advantage, and simulates the
//! event-ready protocol round by round.

extern crate openblas_src;

pub mod conic;
pub mod data;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod gap;
pub mod instructions;
pub mod linalg;
pub mod measurement;
pub mod optimize;
pub mod simulator;
pub mod state;

pub use detection::{solve_detection, solve_inner_lp, tradeoff_curve, Bound, DetectionResult};
pub use error::{Error, Result};
pub use estimation::{estimate_state, ExpectationData};
pub use gap::{gap_objective, search, SearchConfig, SearchTrace};
pub use instructions::{InstructionSet, MergedInstructionSet, Scenario};
pub use linalg::{ComplexMatrix, SubsystemDims};
pub use measurement::{born_probability, standard_bases, Layout, MeasurementModel};
pub use simulator::{generate_rng_tables, run_rounds, run_shuffled, RoundRecord};
pub use state::{optimized_state, prepare_state, DensityMatrix, StateParams};
