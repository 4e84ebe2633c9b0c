//! Message framing for admin↔miner and miner↔miner traffic.
//!
//! A frame is a 4-byte big-endian length `N` followed by `N` bytes of UTF-8
//! JSON of the form `{"type": "<TYPE>", "payload": {...}}`. See
//! `protocol.md` at the repository root for the byte-level description.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Block, Transaction};

pub const LEN_PREFIX: usize = 4;

/// Frames longer than this are treated as garbage on read.
pub const MAX_READ_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the 4-byte length prefix")]
    FrameOverflow(usize),
    #[error("frame length {0} exceeds read limit")]
    FrameTooLarge(usize),
    #[error("empty frame")]
    EmptyFrame,
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown message type {0:?}")]
    UnknownMessage(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Registration record for one miner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerInfo {
    pub miner_id: u32,
    pub hashpower: f64,
    pub ip: String,
    pub port: u16,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WireMessage {
    Register {
        hashpower: f64,
        ip: String,
        port: u16,
    },
    MinerInfo {
        self_id: u32,
        #[serde(default)]
        miners: Vec<MinerInfo>,
        total_hashpower: f64,
    },
    SimStart {
        duration: f64,
        interval: f64,
        time_scale: f64,
        seed: u64,
    },
    Genesis {
        block: Block,
    },
    TxPool {
        transactions: Vec<Transaction>,
    },
    Block {
        sender_id: u32,
        block: Block,
    },
    SimEnd {},
    LastBlock {
        miner_id: u32,
        block: Block,
    },
    ChainRequest {},
    Chain {
        miner_id: u32,
        blocks: Vec<Block>,
    },
    ConsensusResult {
        winner_id: u32,
        chain: Vec<Block>,
    },
    Discard {
        reason: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    Register,
    MinerInfo,
    SimStart,
    Genesis,
    TxPool,
    Block,
    SimEnd,
    LastBlock,
    ChainRequest,
    Chain,
    ConsensusResult,
    Discard,
}

impl MessageType {
    pub const ALL: [MessageType; 12] = [
        MessageType::Register,
        MessageType::MinerInfo,
        MessageType::SimStart,
        MessageType::Genesis,
        MessageType::TxPool,
        MessageType::Block,
        MessageType::SimEnd,
        MessageType::LastBlock,
        MessageType::ChainRequest,
        MessageType::Chain,
        MessageType::ConsensusResult,
        MessageType::Discard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Register => "REGISTER",
            MessageType::MinerInfo => "MINER_INFO",
            MessageType::SimStart => "SIM_START",
            MessageType::Genesis => "GENESIS",
            MessageType::TxPool => "TX_POOL",
            MessageType::Block => "BLOCK",
            MessageType::SimEnd => "SIM_END",
            MessageType::LastBlock => "LAST_BLOCK",
            MessageType::ChainRequest => "CHAIN_REQUEST",
            MessageType::Chain => "CHAIN",
            MessageType::ConsensusResult => "CONSENSUS_RESULT",
            MessageType::Discard => "DISCARD",
        }
    }

    pub fn parse(s: &str) -> Option<MessageType> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl WireMessage {
    pub fn kind(&self) -> MessageType {
        match self {
            WireMessage::Register { .. } => MessageType::Register,
            WireMessage::MinerInfo { .. } => MessageType::MinerInfo,
            WireMessage::SimStart { .. } => MessageType::SimStart,
            WireMessage::Genesis { .. } => MessageType::Genesis,
            WireMessage::TxPool { .. } => MessageType::TxPool,
            WireMessage::Block { .. } => MessageType::Block,
            WireMessage::SimEnd {} => MessageType::SimEnd,
            WireMessage::LastBlock { .. } => MessageType::LastBlock,
            WireMessage::ChainRequest {} => MessageType::ChainRequest,
            WireMessage::Chain { .. } => MessageType::Chain,
            WireMessage::ConsensusResult { .. } => MessageType::ConsensusResult,
            WireMessage::Discard { .. } => MessageType::Discard,
        }
    }

    /// Number of blocks the message carries.
    pub fn block_count(&self) -> usize {
        match self {
            WireMessage::Genesis { .. } | WireMessage::Block { .. } | WireMessage::LastBlock { .. } => 1,
            WireMessage::Chain { blocks, .. } => blocks.len(),
            WireMessage::ConsensusResult { chain, .. } => chain.len(),
            _ => 0,
        }
    }
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let body = serde_json::to_vec(msg).map_err(|e| WireError::Parse(e.to_string()))?;
    let len = u32::try_from(body.len()).map_err(|_| WireError::FrameOverflow(body.len()))?;
    let mut out = Vec::with_capacity(LEN_PREFIX + body.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes the first frame in `buf`, returning the message and the number
/// of bytes consumed. Bytes past the frame are left alone.
pub fn decode(buf: &[u8]) -> Result<(WireMessage, usize), WireError> {
    let len = frame_len(buf)?;
    let end = LEN_PREFIX + len;
    if buf.len() < end {
        return Err(WireError::Truncated { needed: end, available: buf.len() });
    }
    Ok((decode_body(&buf[LEN_PREFIX..end])?, end))
}

fn frame_len(buf: &[u8]) -> Result<usize, WireError> {
    let prefix: [u8; 4] = buf
        .get(..LEN_PREFIX)
        .and_then(|p| p.try_into().ok())
        .ok_or(WireError::Truncated { needed: LEN_PREFIX, available: buf.len() })?;
    match u32::from_be_bytes(prefix) as usize {
        0 => Err(WireError::EmptyFrame),
        n if n > MAX_READ_FRAME => Err(WireError::FrameTooLarge(n)),
        n => Ok(n),
    }
}

/// Decodes the JSON body of a frame (length prefix already stripped).
pub fn decode_body(body: &[u8]) -> Result<WireMessage, WireError> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| WireError::Parse(e.to_string()))?;
    let ty = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| WireError::Parse("missing \"type\" string".into()))?;
    if MessageType::parse(ty).is_none() {
        return Err(WireError::UnknownMessage(ty.to_string()));
    }
    serde_json::from_value(value).map_err(|e| WireError::Parse(e.to_string()))
}

/// Incremental decoder for a byte stream delivered in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, or `None` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, WireError> {
        if self.buf.len() < LEN_PREFIX {
            return Ok(None);
        }
        let len = frame_len(&self.buf)?;
        if self.buf.len() < LEN_PREFIX + len {
            return Ok(None);
        }
        let (msg, used) = decode(&self.buf)?;
        self.buf.drain(..used);
        Ok(Some(msg))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Writes one frame; returns the bytes written.
pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> Result<usize, WireError> {
    let frame = encode(msg)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame.len())
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<(WireMessage, usize)>, WireError> {
    let mut prefix = [0u8; LEN_PREFIX];
    let mut got = 0;
    while got < LEN_PREFIX {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(WireError::Truncated { needed: LEN_PREFIX, available: got });
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = frame_len(&prefix)?;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated { needed: LEN_PREFIX + len, available: LEN_PREFIX },
        _ => WireError::Io(e),
    })?;
    Ok(Some((decode_body(&body)?, LEN_PREFIX + len)))
}

/// Per-type frame and block counts for one direction of traffic.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTally {
    pub frames: BTreeMap<MessageType, usize>,
    pub blocks: BTreeMap<MessageType, usize>,
    pub bytes: usize,
}

impl FrameTally {
    pub fn record(&mut self, msg: &WireMessage, bytes: usize) {
        *self.frames.entry(msg.kind()).or_default() += 1;
        *self.blocks.entry(msg.kind()).or_default() += msg.block_count();
        self.bytes += bytes;
    }

    pub fn frames_of(&self, ty: MessageType) -> usize {
        self.frames.get(&ty).copied().unwrap_or(0)
    }

    pub fn blocks_of(&self, ty: MessageType) -> usize {
        self.blocks.get(&ty).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &FrameTally) {
        for (k, v) in &other.frames {
            *self.frames.entry(*k).or_default() += v;
        }
        for (k, v) in &other.blocks {
            *self.blocks.entry(*k).or_default() += v;
        }
        self.bytes += other.bytes;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{BlockId, TxId};

    fn sample_block() -> Block {
        Block {
            id: BlockId([0xab; 16]),
            parent_id: Some(BlockId([0x01; 16])),
            depth: 3,
            miner_id: 2,
            blocktime: 37.25,
            tx_ids: vec![TxId(1), TxId(2)],
            is_empty: false,
        }
    }

    #[test]
    fn sim_end_frame_prefix_is_json_length() {
        let frame = encode(&WireMessage::SimEnd {}).unwrap();
        let body = &frame[4..];
        assert_eq!(body, br#"{"type":"SIM_END","payload":{}}"#);
        assert_eq!(frame[..4], (body.len() as u32).to_be_bytes());
    }

    #[test]
    fn block_payload_schema() {
        let frame = encode(&WireMessage::Block { sender_id: 2, block: sample_block() }).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&frame[4..]).unwrap();
        let b = &v["payload"]["block"];
        assert_eq!(b["id"], "abababababababababababababababab");
        assert_eq!(b["parent_id"], "01010101010101010101010101010101");
        assert_eq!(b["depth"], 3);
        assert_eq!(b["tx_ids"][1], "0000000000000002");
        assert_eq!(b["is_empty"], false);
    }

    #[test]
    fn block_frame_exact_bytes() {
        let frame = encode(&WireMessage::Block { sender_id: 2, block: sample_block() }).unwrap();
        let body = concat!(
            r#"{"type":"BLOCK","payload":{"sender_id":2,"block":{"#,
            r#""id":"abababababababababababababababab","#,
            r#""parent_id":"01010101010101010101010101010101","#,
            r#""depth":3,"miner_id":2,"blocktime":37.25,"#,
            r#""tx_ids":["0000000000000001","0000000000000002"],"is_empty":false}}}"#
        );
        assert_eq!(&frame[..4], &[0x00, 0x00, 0x00, 0xf6]);
        assert_eq!(&frame[4..], body.as_bytes());
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut bytes = 100u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(&[b'{'; 40]);
        assert!(matches!(decode(&bytes), Err(WireError::Truncated { needed: 104, available: 44 })));
        let mut r = io::Cursor::new(bytes);
        assert!(matches!(read_message(&mut r), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(decode(&[0, 0, 0, 0]), Err(WireError::EmptyFrame)));
        let junk = [0, 0, 0, 3, b'{', b'{', b'}'];
        assert!(matches!(decode(&junk), Err(WireError::Parse(_))));
        let body = br#"{"type":"GOSSIP","payload":{}}"#;
        let mut frame = (body.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(body);
        assert!(matches!(decode(&frame), Err(WireError::UnknownMessage(t)) if t == "GOSSIP"));
        assert!(matches!(decode(b"hello world"), Err(WireError::FrameTooLarge(_))));
    }

    #[test]
    fn miner_info_with_empty_roster() {
        let body = br#"{"type":"MINER_INFO","payload":{"self_id":1,"miners":[],"total_hashpower":0.0}}"#;
        match decode_body(body).unwrap() {
            WireMessage::MinerInfo { miners, .. } => assert!(miners.is_empty()),
            other => panic!("decoded {other:?}"),
        }
        let body = br#"{"type":"MINER_INFO","payload":{"self_id":1,"total_hashpower":0.0}}"#;
        assert!(matches!(decode_body(body).unwrap(), WireMessage::MinerInfo { miners, .. } if miners.is_empty()));
    }

    #[test]
    fn back_to_back_frames() {
        let a = WireMessage::Block { sender_id: 1, block: sample_block() };
        let b = WireMessage::SimEnd {};
        let mut buf = encode(&a).unwrap();
        buf.extend(encode(&b).unwrap());
        let (m1, used) = decode(&buf).unwrap();
        let (m2, used2) = decode(&buf[used..]).unwrap();
        assert_eq!((m1, m2), (a, b));
        assert_eq!(used + used2, buf.len());
    }

    #[test]
    fn tally_counts_blocks() {
        let mut t = FrameTally::default();
        t.record(&WireMessage::LastBlock { miner_id: 1, block: sample_block() }, 10);
        t.record(&WireMessage::Chain { miner_id: 1, blocks: vec![sample_block(); 4] }, 20);
        assert_eq!(t.frames_of(MessageType::LastBlock), 1);
        assert_eq!(t.blocks_of(MessageType::Chain), 4);
        assert_eq!(t.bytes, 30);
    }
}
