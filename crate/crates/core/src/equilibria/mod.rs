//! Locating attractors and saddles, and continuing them in a parameter.

mod continuation;
mod newton;
mod saddle;
mod string;

pub use continuation::{continue_branch, locate_fold, read_branch_csv, BranchRow, ContinuationSettings, EquilibriumBranch, ParameterFamily};
pub use newton::{classify, newton_equilibrium, relax_equilibrium, Equilibrium, Stability, STABILITY_DEAD_BAND};
pub use saddle::{find_saddle, SADDLE_SCAN_THRESHOLD};
pub use string::{string_relax, StringResult};
