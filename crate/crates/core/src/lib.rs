//! Optimization over product distributions of categorical agent moves.
//!
//! Each agent owns a probability vector over its moves. The joint strategy is
//! their product, and it is driven toward low values of a world utility `G` by
//! descending the maxent Lagrangian `β·E_q(G) − S(q)` while `β` is annealed
//! upward. The crate provides:
//!
//! - [`domain`]: move spaces, product distributions, entropy, KL divergence.
//! - [`utility`]: world and private utilities, evaluated samples.
//! - [`oracle`]: exhaustive ground truth for small joint spaces.
//! - [`lagrangian`]: Lagrangian values, Boltzmann responses, Brouwer updates.
//! - [`descent`]: projected gradient and Nearest Newton steps.
//! - [`montecarlo`]: block sampling with aged, forced estimates.
//! - [`variants`]: percentile, transform, threshold and KL-marginal updates.
//! - [`harness`]: problem generators, annealing runs, traces and the CLI glue.

pub mod descent;
pub mod domain;
pub mod error;
pub mod harness;
pub mod lagrangian;
pub mod montecarlo;
pub mod oracle;
pub mod rng;
pub mod utility;
pub mod variants;

pub use domain::{entropy, kl_divergence, project_interior, CategoricalDomain, ProductDistribution, DEFAULT_FLOOR};
pub use error::{PdError, Result};
pub use lagrangian::{AnnealState, Conditionals, ExactSource, ExpectationSource};
pub use rng::RandomSource;
pub use utility::{GameUtilities, JointSample, PrivateUtilitySet, TableDocument, UtilityTransform, WorldUtility};
