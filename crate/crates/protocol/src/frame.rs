//! Wire frames: `len u32 BE | tag u8 | payload | crc32 u32 BE`.
//!
//! `len` counts payload bytes only; the CRC covers tag and payload.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Default upper bound on payload size.
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;
/// Bytes of framing around a payload.
pub const OVERHEAD: usize = 4 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    PostDataset,
    TaskAnnounce,
    RequestTask,
    DatasetTransfer,
    ModelReturn,
    ValidationResult,
    PaymentAck,
    Error,
}

impl Tag {
    pub const ALL: [Tag; 8] = [
        Tag::PostDataset,
        Tag::TaskAnnounce,
        Tag::RequestTask,
        Tag::DatasetTransfer,
        Tag::ModelReturn,
        Tag::ValidationResult,
        Tag::PaymentAck,
        Tag::Error,
    ];

    pub fn to_u8(self) -> u8 {
        match self {
            Tag::PostDataset => 1,
            Tag::TaskAnnounce => 2,
            Tag::RequestTask => 3,
            Tag::DatasetTransfer => 4,
            Tag::ModelReturn => 5,
            Tag::ValidationResult => 6,
            Tag::PaymentAck => 7,
            Tag::Error => 8,
        }
    }

    pub fn from_u8(b: u8) -> Option<Self> {
        Tag::ALL.into_iter().find(|t| t.to_u8() == b)
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("frame payload of {len} bytes exceeds the {max}-byte limit")]
    Oversize { len: usize, max: usize },
    #[error("frame CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("unknown frame tag {0}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("connection closed")]
    Closed,
    #[error("frame i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub tag: Tag,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(tag: Tag, payload: Vec<u8>) -> Self {
        Message { tag, payload }
    }
}

fn crc(tag: u8, payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&[tag]);
    h.update(payload);
    h.finalize()
}

pub fn encode_message(m: &Message, max: usize) -> Result<Vec<u8>, FrameError> {
    let len = m.payload.len();
    if len > max || u32::try_from(len).is_err() {
        return Err(FrameError::Oversize { len, max });
    }
    let tag = m.tag.to_u8();
    let mut out = Vec::with_capacity(len + OVERHEAD);
    out.extend_from_slice(&(len as u32).to_be_bytes());
    out.push(tag);
    out.extend_from_slice(&m.payload);
    out.extend_from_slice(&crc(tag, &m.payload).to_be_bytes());
    Ok(out)
}

/// Decodes exactly one frame occupying all of `buf`.
pub fn decode_message(buf: &[u8], max: usize) -> Result<Message, FrameError> {
    let (m, used) = decode_prefix(buf, max)?;
    if used != buf.len() {
        return Err(FrameError::TrailingBytes(buf.len() - used));
    }
    Ok(m)
}

/// Decodes the frame at the start of `buf`, returning it and its length in bytes.
pub fn decode_prefix(buf: &[u8], max: usize) -> Result<(Message, usize), FrameError> {
    if buf.len() < 5 {
        return Err(FrameError::Truncated {
            needed: 5,
            available: buf.len(),
        });
    }
    let len = u32::from_be_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
    if len > max {
        return Err(FrameError::Oversize { len, max });
    }
    let total = len + OVERHEAD;
    if buf.len() < total {
        return Err(FrameError::Truncated {
            needed: total,
            available: buf.len(),
        });
    }
    let tag_byte = buf[4];
    let payload = &buf[5..5 + len];
    let stored = u32::from_be_bytes(buf[5 + len..total].try_into().expect("4 bytes"));
    let computed = crc(tag_byte, payload);
    if stored != computed {
        return Err(FrameError::CrcMismatch { stored, computed });
    }
    let tag = Tag::from_u8(tag_byte).ok_or(FrameError::UnknownTag(tag_byte))?;
    Ok((Message::new(tag, payload.to_vec()), total))
}

pub fn write_frame(w: &mut impl Write, m: &Message, max: usize) -> Result<(), FrameError> {
    w.write_all(&encode_message(m, max)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the first byte is [`FrameError::Closed`].
pub fn read_frame(r: &mut impl Read, max: usize) -> Result<Message, FrameError> {
    let mut head = [0u8; 5];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => {
                return Err(FrameError::Truncated {
                    needed: 5,
                    available: got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(head[..4].try_into().expect("4 bytes")) as usize;
    if len > max {
        return Err(FrameError::Oversize { len, max });
    }
    let mut frame = Vec::with_capacity(len + OVERHEAD);
    frame.extend_from_slice(&head);
    frame.resize(len + OVERHEAD, 0);
    let mut filled = 5;
    while filled < frame.len() {
        match r.read(&mut frame[filled..]) {
            Ok(0) => {
                return Err(FrameError::Truncated {
                    needed: len + OVERHEAD,
                    available: filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    decode_message(&frame, max)
}
