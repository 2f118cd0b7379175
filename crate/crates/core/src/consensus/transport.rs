//! Message types and in-process transports.
//!
//! A frame on the wire is a little-endian `u32` byte length followed by one
//! JSON-encoded [`Message`].

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::graph::InteractionGraph;
use crate::error::{DmpcError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload<T> {
    /// A node's trajectory `ξ` with its scaled dual for the edge. The first
    /// share of a cycle (iteration 0) also carries the measured state, so the
    /// edge owner can linearize the coupling at the sender's operating point.
    TrajectoryShare {
        xi: Vec<T>,
        lambda: Vec<T>,
        x0: Option<[T; 3]>,
        /// Intended positions, sent with the measured state.
        #[serde(default)]
        intent: Vec<[T; 2]>,
    },
    /// Edge copies and slack computed by the edge owner.
    EdgeResult { z_i: Vec<T>, z_j: Vec<T>, s: Vec<T> },
}

impl<T> Payload<T> {
    fn rank(&self) -> u8 {
        match self {
            Self::TrajectoryShare { .. } => 0,
            Self::EdgeResult { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Message<T> {
    pub from: usize,
    pub to: usize,
    pub cycle: usize,
    pub iteration: usize,
    pub payload: Payload<T>,
}

pub fn encode_frame<T: Real>(msg: &Message<T>) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(msg)?;
    let len = u32::try_from(body.len()).map_err(|_| DmpcError::Frame("message too large".into()))?;
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes a concatenation of frames.
pub fn decode_frames<T: Real>(mut bytes: &[u8]) -> Result<Vec<Message<T>>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(DmpcError::Frame("truncated length prefix".into()));
        }
        let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let rest = &bytes[4..];
        if rest.len() < len {
            return Err(DmpcError::Frame(format!("frame needs {len} bytes, {} left", rest.len())));
        }
        out.push(serde_json::from_slice(&rest[..len])?);
        bytes = &rest[len..];
    }
    Ok(out)
}

/// Delivery between agents. Implementations must accept concurrent senders.
pub trait Transport<T>: Send + Sync {
    /// Queues `msg` for `msg.to`; fails unless sender and recipient are neighbors.
    fn send(&self, msg: Message<T>) -> Result<()>;
    /// Takes every message queued for `to`, in a deterministic order.
    fn receive(&self, to: usize) -> Vec<Message<T>>;
}

/// One mutex-guarded inbox per agent.
#[derive(Debug)]
pub struct QueueTransport<T> {
    graph: InteractionGraph,
    inboxes: Vec<Mutex<Vec<Message<T>>>>,
}

impl<T> QueueTransport<T> {
    pub fn new(graph: InteractionGraph) -> Self {
        let inboxes = (0..graph.num_nodes()).map(|_| Mutex::new(Vec::new())).collect();
        Self { graph, inboxes }
    }
}

impl<T: Real> Transport<T> for QueueTransport<T> {
    fn send(&self, msg: Message<T>) -> Result<()> {
        if !self.graph.are_neighbors(msg.from, msg.to) {
            return Err(DmpcError::NotNeighbors { from: msg.from, to: msg.to });
        }
        self.inboxes[msg.to].lock().expect("inbox poisoned").push(msg);
        Ok(())
    }

    fn receive(&self, to: usize) -> Vec<Message<T>> {
        let mut msgs = std::mem::take(&mut *self.inboxes[to].lock().expect("inbox poisoned"));
        msgs.sort_by_key(|m| (m.cycle, m.iteration, m.payload.rank(), m.from));
        msgs
    }
}

/// Spy transport: records every delivered message and, optionally, pushes each
/// one through the frame codec before delivery.
#[derive(Debug)]
pub struct RecordingTransport<T> {
    inner: QueueTransport<T>,
    through_codec: bool,
    log: Mutex<Vec<Message<T>>>,
}

impl<T: Real> RecordingTransport<T> {
    pub fn new(graph: InteractionGraph, through_codec: bool) -> Self {
        Self {
            inner: QueueTransport::new(graph),
            through_codec,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Recorded messages in a canonical order.
    pub fn records(&self) -> Vec<Message<T>> {
        let mut out = self.log.lock().expect("log poisoned").clone();
        out.sort_by_key(|m| (m.cycle, m.iteration, m.payload.rank(), m.from, m.to));
        out
    }
}

impl<T: Real> Transport<T> for RecordingTransport<T> {
    fn send(&self, msg: Message<T>) -> Result<()> {
        let msg = if self.through_codec {
            let mut decoded = decode_frames(&encode_frame(&msg)?)?;
            decoded.pop().ok_or_else(|| DmpcError::Frame("empty frame".into()))?
        } else {
            msg
        };
        self.inner.send(msg.clone())?;
        self.log.lock().expect("log poisoned").push(msg);
        Ok(())
    }

    fn receive(&self, to: usize) -> Vec<Message<T>> {
        self.inner.receive(to)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share(from: usize, to: usize) -> Message<f64> {
        Message {
            from,
            to,
            cycle: 3,
            iteration: 1,
            payload: Payload::TrajectoryShare { xi: vec![0.1, 1.0 / 3.0], lambda: vec![-2.5e-17, 0.0], x0: None, intent: Vec::new() },
        }
    }

    #[test]
    fn frames_round_trip_bit_exactly() {
        let a = share(0, 1);
        let b = Message {
            payload: Payload::EdgeResult { z_i: vec![1e300], z_j: vec![-0.0], s: vec![0.7] },
            ..share(1, 0)
        };
        let mut bytes = encode_frame(&a).unwrap();
        bytes.extend(encode_frame(&b).unwrap());
        assert_eq!(decode_frames::<f64>(&bytes).unwrap(), vec![a, b]);
        assert!(decode_frames::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn non_neighbors_cannot_talk() {
        let g = InteractionGraph::from_edges(3, &[(0, 1)]).unwrap();
        let t = QueueTransport::new(g);
        assert!(t.send(share(0, 1)).is_ok());
        assert!(matches!(t.send(share(0, 2)), Err(DmpcError::NotNeighbors { from: 0, to: 2 })));
        assert_eq!(t.receive(1).len(), 1);
        assert!(t.receive(1).is_empty());
    }
}
