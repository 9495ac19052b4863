//! Orchestration: configuration, the adaptive loop, the Monte Carlo
//! reference, convergence suites and file output.

pub mod adaptive;
pub mod config;
pub mod convergence;
pub mod output;
pub mod reference;

pub use adaptive::{adaptive_run, IterationRow, Phase, RunOutcome, RunStatus};
pub use config::{ProblemKind, RunConfig};
pub use convergence::{fem_convergence, qmc_convergence, FemConvergence, QmcConvergence};
pub use reference::{reference_ratio, ReferenceResult};
