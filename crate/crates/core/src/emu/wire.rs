//! Binary framing shared by the device and edge agents.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CLMB"
//!      4     1  version (0x01)
//!      5     1  msg_type (0x01 frame, 0x02 command, 0x03 probe)
//!      6     1  stream_id
//!      7     1  flags (bit0 = last chunk)
//!      8     4  seq, big-endian
//!     12     8  send_ts_ns, big-endian
//!     20     4  payload_len, big-endian
//!     24     …  payload
//! ```

use std::collections::HashMap;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"CLMB";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 24;
pub const MAX_CHUNK_PAYLOAD: usize = 1_048_576;
pub const FLAG_LAST_CHUNK: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MsgType {
    Frame = 0x01,
    Command = 0x02,
    Probe = 0x03,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(MsgType::Frame),
            0x02 => Some(MsgType::Command),
            0x03 => Some(MsgType::Probe),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("need {0} more bytes")]
    Incomplete(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    BadType(u8),
    #[error("payload of {0} bytes exceeds the chunk limit")]
    PayloadTooLarge(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireFrame {
    pub msg_type: MsgType,
    pub stream_id: u8,
    pub flags: u8,
    pub seq: u32,
    pub send_ts_ns: u64,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn is_last_chunk(&self) -> bool {
        self.flags & FLAG_LAST_CHUNK != 0
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.push(self.stream_id);
        out.push(self.flags);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.send_ts_ns.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Parses one message from the front of `buf`, returning it and the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(WireFrame, usize), WireError> {
        if buf.len() < HEADER_LEN {
            // Reject garbage as early as the magic allows.
            let n = buf.len().min(4);
            if buf[..n] != MAGIC[..n] {
                return Err(WireError::BadMagic);
            }
            return Err(WireError::Incomplete(HEADER_LEN - buf.len()));
        }
        if buf[..4] != MAGIC {
            return Err(WireError::BadMagic);
        }
        if buf[4] != VERSION {
            return Err(WireError::BadVersion(buf[4]));
        }
        let msg_type = MsgType::from_byte(buf[5]).ok_or(WireError::BadType(buf[5]))?;
        let seq = u32::from_be_bytes(buf[8..12].try_into().expect("4 bytes"));
        let send_ts_ns = u64::from_be_bytes(buf[12..20].try_into().expect("8 bytes"));
        let len = u32::from_be_bytes(buf[20..24].try_into().expect("4 bytes"));
        if len as usize > MAX_CHUNK_PAYLOAD {
            return Err(WireError::PayloadTooLarge(len));
        }
        let total = HEADER_LEN + len as usize;
        if buf.len() < total {
            return Err(WireError::Incomplete(total - buf.len()));
        }
        let frame = WireFrame {
            msg_type,
            stream_id: buf[6],
            flags: buf[7],
            seq,
            send_ts_ns,
            payload: buf[HEADER_LEN..total].to_vec(),
        };
        Ok((frame, total))
    }
}

/// Splits a payload into chunks of at most `chunk_bytes`, all sharing `seq`;
/// only the final chunk carries the last-chunk flag. An empty payload yields
/// a single empty chunk.
pub fn chunk_payload(
    msg_type: MsgType,
    stream_id: u8,
    seq: u32,
    send_ts_ns: u64,
    payload_len: usize,
    chunk_bytes: usize,
) -> Vec<WireFrame> {
    let chunk_bytes = chunk_bytes.clamp(1, MAX_CHUNK_PAYLOAD);
    let count = payload_len.div_ceil(chunk_bytes).max(1);
    (0..count)
        .map(|i| {
            let len = if i + 1 == count { payload_len - i * chunk_bytes } else { chunk_bytes };
            WireFrame {
                msg_type,
                stream_id,
                flags: if i + 1 == count { FLAG_LAST_CHUNK } else { 0 },
                seq,
                send_ts_ns,
                payload: vec![0u8; len],
            }
        })
        .collect()
}

/// Incremental decoder for a byte stream. Garbage is skipped by scanning
/// for the next magic; each skipped run counts as one malformed message.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    malformed: u64,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn next_frame(&mut self) -> Option<WireFrame> {
        loop {
            if self.buf.is_empty() {
                return None;
            }
            match WireFrame::decode(&self.buf) {
                Ok((frame, used)) => {
                    self.buf.drain(..used);
                    return Some(frame);
                }
                Err(WireError::Incomplete(_)) => return None,
                Err(_) => {
                    self.malformed += 1;
                    self.resync();
                }
            }
        }
    }

    fn resync(&mut self) {
        let next = self.buf[1..].windows(4).position(|w| w == MAGIC).map(|p| p + 1);
        match next {
            Some(p) => {
                self.buf.drain(..p);
            }
            None => {
                // Keep a tail that could be the start of a split magic.
                let keep = (1..=3.min(self.buf.len() - 1))
                    .rev()
                    .find(|&k| self.buf[self.buf.len() - k..] == MAGIC[..k])
                    .unwrap_or(0);
                let cut = self.buf.len() - keep;
                self.buf.drain(..cut);
            }
        }
    }
}

/// A fully received frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reassembled {
    pub stream_id: u8,
    pub seq: u32,
    pub send_ts_ns: u64,
    pub bytes: usize,
}

/// Collects chunks per `(stream_id, seq)` until the last-chunk flag.
#[derive(Debug, Default)]
pub struct Reassembler {
    partial: HashMap<(u8, u32), usize>,
}

impl Reassembler {
    pub fn new() -> Self {
        Reassembler::default()
    }

    pub fn push(&mut self, chunk: &WireFrame) -> Option<Reassembled> {
        let key = (chunk.stream_id, chunk.seq);
        let so_far = self.partial.entry(key).or_insert(0);
        *so_far += chunk.payload.len();
        if chunk.is_last_chunk() {
            let bytes = self.partial.remove(&key).unwrap_or(0);
            Some(Reassembled { stream_id: chunk.stream_id, seq: chunk.seq, send_ts_ns: chunk.send_ts_ns, bytes })
        } else {
            None
        }
    }

    pub fn in_progress(&self) -> usize {
        self.partial.len()
    }
}
