//! Distributed solution of the coupled planning problem.

mod engine;
mod graph;
mod transport;

pub use engine::{
    dual_update, edge_update, node_update, residual_norm, shift_trajectory_vector, AdmmConfig, AdmmResiduals,
    AgentProblem, ConsensusEngine, CycleOutput, CycleTimings, EdgeState,
};
pub use graph::InteractionGraph;
pub use transport::{decode_frames, encode_frame, Message, Payload, QueueTransport, RecordingTransport, Transport};
