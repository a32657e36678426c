//! Spike allgather across ranks over a pluggable byte transport.

pub mod inproc;
pub mod tcp;
pub mod wire;

use std::sync::Arc;

use sha2::{Digest, Sha256};

pub use inproc::{inproc_mesh, InProcTransport};
pub use tcp::{connect_mesh, connect_mesh_on, MeshOptions, TcpTransport};
pub use wire::{SpikeFrame, EVENT_BYTES, HEADER_BYTES};

use crate::neuron::SpikeEvent;

#[derive(Debug, thiserror::Error)]
pub enum ExchangeError {
    #[error("rank {rank} disconnected: {reason}")]
    PeerDisconnected { rank: usize, reason: String },
    #[error("rank {rank} is at global step {got}, expected {expected}")]
    StepMismatch { rank: usize, got: u32, expected: u32 },
    #[error("frame of {bytes} bytes exceeds the {limit}-byte limit")]
    Oversize { bytes: usize, limit: usize },
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("protocol version mismatch: local {local}, peer rank {rank} speaks {peer}")]
    Version { local: u32, peer: u32, rank: usize },
    #[error("rank {0} connected twice")]
    DuplicateRank(usize),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("i/o with rank {rank}: {source}")]
    Io {
        rank: usize,
        #[source]
        source: std::io::Error,
    },
}

impl ExchangeError {
    /// The peer rank this error concerns, when known.
    pub fn rank(&self) -> Option<usize> {
        match self {
            ExchangeError::PeerDisconnected { rank, .. }
            | ExchangeError::StepMismatch { rank, .. }
            | ExchangeError::Version { rank, .. }
            | ExchangeError::Io { rank, .. } => Some(*rank),
            ExchangeError::DuplicateRank(rank) => Some(*rank),
            _ => None,
        }
    }
}

/// Moves raw frames between ranks. One call is one collective round.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn ranks(&self) -> usize;
    /// Ship `frame` to every peer and return all ranks' frames, indexed by rank.
    fn exchange(&mut self, frame: Arc<[u8]>, max_frame: usize) -> Result<Vec<Arc<[u8]>>, ExchangeError>;
    /// Bytes this endpoint has sent to peers so far.
    fn bytes_sent(&self) -> u64;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn rank(&self) -> usize {
        (**self).rank()
    }
    fn ranks(&self) -> usize {
        (**self).ranks()
    }
    fn exchange(&mut self, frame: Arc<[u8]>, max_frame: usize) -> Result<Vec<Arc<[u8]>>, ExchangeError> {
        (**self).exchange(frame, max_frame)
    }
    fn bytes_sent(&self) -> u64 {
        (**self).bytes_sent()
    }
}

/// Rank-ordered concatenation of every frame of one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalBuffer {
    pub global_step: u32,
    pub frames: Vec<SpikeFrame>,
    raw: Vec<Arc<[u8]>>,
}

impl GlobalBuffer {
    pub fn len(&self) -> usize {
        self.frames.iter().map(SpikeFrame::count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> impl Iterator<Item = &SpikeEvent> {
        self.frames.iter().flat_map(|f| f.events.iter())
    }

    /// Wire bytes of all frames in rank order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.raw.concat()
    }

    /// Hex SHA-256 of [`to_bytes`](Self::to_bytes).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.raw {
            h.update(r);
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Byte accounting for one round on one rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    /// Size of this rank's own frame.
    pub frame_bytes: u64,
    /// Bytes this rank put on the wire (own frame once per peer).
    pub wire_bytes: u64,
}

/// Gather every rank's frame. Blocks until all ranks have contributed.
pub fn allgather<T: Transport + ?Sized>(
    t: &mut T,
    frame: &SpikeFrame,
    max_frame: usize,
) -> Result<(GlobalBuffer, ExchangeStats), ExchangeError> {
    let bytes: Arc<[u8]> = frame.encode().into();
    if bytes.len() > max_frame {
        return Err(ExchangeError::Oversize { bytes: bytes.len(), limit: max_frame });
    }
    let before = t.bytes_sent();
    let raw = t.exchange(bytes.clone(), max_frame)?;
    if raw.len() != t.ranks() {
        return Err(ExchangeError::Malformed(format!("{} frames for {} ranks", raw.len(), t.ranks())));
    }
    let mut frames = Vec::with_capacity(raw.len());
    for (r, b) in raw.iter().enumerate() {
        if b.len() > max_frame {
            return Err(ExchangeError::Oversize { bytes: b.len(), limit: max_frame });
        }
        let f = SpikeFrame::decode(b)?;
        if f.rank as usize != r {
            return Err(ExchangeError::Malformed(format!("slot {r} holds a frame from rank {}", f.rank)));
        }
        if f.global_step != frame.global_step {
            return Err(ExchangeError::StepMismatch { rank: r, got: f.global_step, expected: frame.global_step });
        }
        frames.push(f);
    }
    let stats = ExchangeStats { frame_bytes: bytes.len() as u64, wire_bytes: t.bytes_sent() - before };
    Ok((GlobalBuffer { global_step: frame.global_step, frames, raw }, stats))
}
