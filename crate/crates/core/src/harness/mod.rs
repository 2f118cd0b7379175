//! Scenario loading, closed-loop simulation, logging and solver comparison.

mod compare;
mod log;
mod scenario;
mod sim;

pub use compare::{compare, ComparisonReport, TimingRow};
pub use log::{
    read_jsonl, trajectory_csv, write_csv, write_jsonl, write_timings, AgentStep, EdgeStep, StepLog, StepTimings,
};
pub use scenario::{
    apply_override, parse_override, AdmmSpec, AgentSpec, BoundsSpec, GraphKind, GraphSpec, PushEvent, QpSpec,
    RandomObstacles, SafetySpec, Scenario, SolverKind, WeightSpec,
};
pub use sim::{
    arrived, mean_std, run, PushOutcome, RunOutput, RunSummary, Simulation, GOAL_HEADING_TOL, GOAL_POSITION_TOL,
    NOMINAL_H_TOL, RECOVERY_WINDOW,
};
