//! Bit-exact little-endian encodings of spike frames and mesh handshakes.

use crate::exchange::ExchangeError;
use crate::neuron::SpikeEvent;

pub const FRAME_MAGIC: [u8; 4] = *b"HXG1";
pub const HELLO_MAGIC: [u8; 4] = *b"HXH1";
pub const PROTOCOL_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;
pub const EVENT_BYTES: usize = 14;
pub const HELLO_BYTES: usize = 16;

pub const fn frame_len(count: usize) -> usize {
    HEADER_BYTES + EVENT_BYTES * count
}

/// One rank's contribution to an exchange round.
///
/// The header carries the round index. Events were produced during the
/// previous global step, so each event record's `global_step` is the
/// header's minus one and round 0 is always empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeFrame {
    pub rank: u32,
    pub global_step: u32,
    pub events: Vec<SpikeEvent>,
}

impl SpikeFrame {
    pub fn new(rank: u32, global_step: u32, events: Vec<SpikeEvent>) -> Result<Self, ExchangeError> {
        if let Some(e) = events.iter().find(|e| Some(e.global_step) != global_step.checked_sub(1)) {
            return Err(ExchangeError::Malformed(format!(
                "event from step {} cannot travel in round {global_step}",
                e.global_step
            )));
        }
        Ok(Self { rank, global_step, events })
    }

    pub fn empty(rank: u32, global_step: u32) -> Self {
        Self { rank, global_step, events: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.events.len()
    }

    pub fn encoded_len(&self) -> usize {
        frame_len(self.events.len())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&FRAME_MAGIC);
        out.extend_from_slice(&self.rank.to_le_bytes());
        out.extend_from_slice(&self.global_step.to_le_bytes());
        out.extend_from_slice(&(self.events.len() as u32).to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.source_gid.to_le_bytes());
            out.extend_from_slice(&e.synapse_slot.to_le_bytes());
            out.extend_from_slice(&e.local_step.to_le_bytes());
            out.extend_from_slice(&e.global_step.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ExchangeError> {
        let (rank, global_step, count) = decode_header(bytes)?;
        if bytes.len() != frame_len(count) {
            return Err(ExchangeError::Malformed(format!(
                "frame announces {count} events ({} bytes) but holds {} bytes",
                frame_len(count),
                bytes.len()
            )));
        }
        let produced = match global_step.checked_sub(1) {
            Some(g) => g,
            None if count == 0 => 0,
            None => return Err(ExchangeError::Malformed("round 0 frame carries events".into())),
        };
        let events = bytes[HEADER_BYTES..]
            .chunks_exact(EVENT_BYTES)
            .map(|c| SpikeEvent {
                source_gid: u32::from_le_bytes(c[0..4].try_into().unwrap()),
                synapse_slot: u32::from_le_bytes(c[4..8].try_into().unwrap()),
                local_step: u16::from_le_bytes(c[8..10].try_into().unwrap()),
                global_step: u32::from_le_bytes(c[10..14].try_into().unwrap()),
            })
            .collect::<Vec<SpikeEvent>>();
        if let Some(e) = events.iter().find(|e| e.global_step != produced) {
            return Err(ExchangeError::Malformed(format!("event from step {} in round {global_step}", e.global_step)));
        }
        Ok(Self { rank, global_step, events })
    }
}

/// `(rank, global_step, count)` from the first 16 bytes of a frame.
pub fn decode_header(bytes: &[u8]) -> Result<(u32, u32, usize), ExchangeError> {
    if bytes.len() < HEADER_BYTES {
        return Err(ExchangeError::Malformed(format!("{} bytes is shorter than a frame header", bytes.len())));
    }
    if bytes[0..4] != FRAME_MAGIC {
        return Err(ExchangeError::Malformed(format!("bad frame magic {:?}", &bytes[0..4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    Ok((word(4), word(8), word(12) as usize))
}

/// Handshake record exchanged once per connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hello {
    pub version: u32,
    pub rank: u32,
    pub ranks: u32,
}

impl Hello {
    pub fn encode(&self) -> [u8; HELLO_BYTES] {
        let mut out = [0u8; HELLO_BYTES];
        out[0..4].copy_from_slice(&HELLO_MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.rank.to_le_bytes());
        out[12..16].copy_from_slice(&self.ranks.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HELLO_BYTES]) -> Result<Self, ExchangeError> {
        if bytes[0..4] != HELLO_MAGIC {
            return Err(ExchangeError::Handshake(format!("bad hello magic {:?}", &bytes[0..4])));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        Ok(Self { version: word(4), rank: word(8), ranks: word(12) })
    }
}
