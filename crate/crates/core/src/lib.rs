//! Joint pruning and quantization of neural networks as a single QUBO.
//!
//! A trained model is reduced to per-group weight statistics
//! ([`descriptor`]), turned into an upper-triangular QUBO matrix
//! ([`qubo`]), minimized by parallel tempering or exhaustive enumeration
//! ([`solver`]), decoded into a compression plan and applied to the weights
//! ([`compress`]). [`search`] tunes the two hyperparameters against an
//! accuracy oracle.

pub mod compress;
pub mod descriptor;
pub mod error;
pub mod qubo;
pub mod search;
pub mod solver;

pub use compress::{decode_solution, encode_plan, CompressionPlan, LayerPlan, StepRule};
pub use descriptor::{Granularity, GroupStats, Model, ModelDescriptor, WeightTensor};
pub use error::{Error, Result};
pub use qubo::{assemble_qubo, Hyperparameters, QuboCoefficients, QuboMatrix, VariableIndex};
pub use search::{AccuracyOracle, CommandOracle, SearchConfig, SearchState, SurrogateOracle};
pub use solver::{anneal, solve_exact, AnnealConfig, Solution};
