//! Data-driven predictive control (DeePC) and poisoning attacks on its
//! output data computed by implicit differentiation of the controller's
//! solution map.
//!
//! The pieces, bottom up:
//!
//! * [`plant`] and [`hankel`]: ground-truth linear plant, offline data and
//!   block-Hankel matrices.
//! * [`problem`]: the trajectory optimization and its compact quadratic
//!   program.
//! * [`solver`]: a primal-dual solver whose stopping test is the optimality
//!   residual used for differentiation.
//! * [`implicit`]: residual, Jacobians and the adjoint least-squares solve.
//! * [`attack`]: the implicit-differentiation attack, a random baseline and
//!   a sampling oracle.

pub mod attack;
pub mod error;
pub mod hankel;
pub mod implicit;
pub mod linalg;
pub mod plant;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
pub use hankel::{build_hankel, HankelPair};
pub use plant::{collect_excitation, discretize, simulate, ContinuousLti, DiscreteLti, IoLog};
pub use problem::{
    assemble_compact, assemble_nominal, project_box, Bounds, CompactQp, DpcModel, DpcProblem, DpcWeights,
};
pub use solver::{solve_qp, solve_qp_with, Method, SaddlePoint, SolverSettings};
