//! Convex quadratic programming.

mod kkt;
mod ldl;
mod problem;
mod solver;
mod sparse;

pub use kkt::{kkt_check, KktReport};
pub use ldl::{check_psd, reverse_cuthill_mckee, EnvelopeLdl};
pub use problem::{QpDump, QpProblem, PSD_TOLERANCE};
pub use solver::{solve, QpSettings, QpSolution, QpSolver, QpStatus};
pub use sparse::CsrMatrix;
