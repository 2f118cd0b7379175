use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmpcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost matrix is not positive semidefinite (pivot {pivot:e} at row {row})")]
    NotPsd { row: usize, pivot: f64 },
    #[error("singular KKT system at pivot {0}")]
    Singular(usize),
    #[error("node QP of agent {agent} infeasible in cycle {cycle}")]
    NodeInfeasible { agent: usize, cycle: usize },
    #[error("edge QP ({i}, {j}) infeasible in cycle {cycle}")]
    EdgeInfeasible { i: usize, j: usize, cycle: usize },
    #[error("message from agent {from} to agent {to} does not follow a graph edge")]
    NotNeighbors { from: usize, to: usize },
    #[error("malformed message frame: {0}")]
    Frame(String),
    #[error("scenario rejected: {0}")]
    Scenario(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DmpcError> = std::result::Result<T, E>;
