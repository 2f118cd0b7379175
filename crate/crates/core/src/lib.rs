//! Distributed model predictive control for teams of unicycle robots.
//!
//! Each agent tracks a reference with a local MPC while discrete-time control
//! barrier functions keep it clear of obstacles and of other agents. The
//! coupled inter-agent constraints are handled by a node–edge split of
//! consensus ADMM, so every agent only solves small QPs and talks to its
//! graph neighbors. A centralized solver of the same problem is included as
//! a baseline.
//!
//! The numerical core is generic over the scalar type; the aliases below fix
//! it to `f64`.

pub mod consensus;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod planner;
pub mod qp;
pub mod safety;
pub mod scalar;

pub use error::{DmpcError, Result};
pub use scalar::Real;

pub type AgentState = dynamics::AgentState<f64>;
pub type ControlInput = dynamics::ControlInput<f64>;
pub type AgentTrajectory = dynamics::AgentTrajectory<f64>;
pub type Obstacle = safety::Obstacle<f64>;
pub type SafetyParams = safety::SafetyParams<f64>;
pub type PlannerConfig = planner::PlannerConfig<f64>;
pub type CostWeights = planner::CostWeights<f64>;
pub type QpProblem = qp::QpProblem<f64>;
pub type QpSettings = qp::QpSettings<f64>;
pub type QpSolution = qp::QpSolution<f64>;
pub type AdmmConfig = consensus::AdmmConfig<f64>;
pub type ConsensusEngine = consensus::ConsensusEngine<f64>;
