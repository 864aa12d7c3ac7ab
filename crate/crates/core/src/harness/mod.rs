//! Configuration, problem generators, the annealing run loop, and output
//! files.

pub mod bench;
pub mod config;
pub mod problems;
pub mod run;
pub mod trace;

pub use config::{Algorithm, ExpectationMode, GeneratorSpec, InitConfig, ProblemSpec, RunConfig, ScheduleConfig};
pub use problems::{apply_symmetry, generate_problem, SymmetryMap};
pub use run::{run, run_to_dir, RunFailure, RunOutcome};
pub use trace::{Summary, TraceRow};
