//! Kernel balancing weights for learning individualized treatment rules that
//! target a population other than the one the data were collected from.

pub mod comparators;
pub mod data;
pub mod error;
pub mod experiment;
pub mod itr;
pub mod kernel;
pub mod mmd;
pub mod qp;
pub mod rng;
pub mod simulation;
pub mod tuning;
pub mod weights;

pub use data::{Dataset, GroupIndices, Schema};
pub use error::{Error, Result};
pub use itr::LinearRule;
pub use kernel::{KernelFamily, KernelSpec};
pub use weights::{BalanceHyperparams, WeightSolution};
