//! Typed payloads carried inside frames.
//!
//! Integers are big-endian. Byte strings and text are prefixed with a u32 length.

use crate::error::{ErrorCode, ProtocolError, Result};
use crate::frame::{Message, Tag};

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }
    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
        self
    }
    fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }
}

struct Reader<'a> {
    message: &'static str,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(message: &'static str, buf: &'a [u8]) -> Self {
        Reader { message, buf }
    }
    fn err(&self, reason: impl Into<String>) -> ProtocolError {
        ProtocolError::Payload {
            message: self.message,
            reason: reason.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(self.err(format!("needed {n} bytes, {} left", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?).map_err(|_| self.err("text is not utf-8"))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.err(format!("boolean byte {b}"))),
        }
    }
    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.err(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

/// A payload type bound to one frame tag.
pub trait Payload: Sized {
    const TAG: Tag;
    const NAME: &'static str;

    fn encode(&self) -> Vec<u8>;
    fn decode(buf: &[u8]) -> Result<Self>;

    fn to_message(&self) -> Message {
        Message::new(Self::TAG, self.encode())
    }

    /// Decodes `m` as `Self`. An `Error` frame becomes [`ProtocolError::Remote`].
    fn from_message(m: &Message) -> Result<Self> {
        if m.tag == Self::TAG {
            return Self::decode(&m.payload);
        }
        if m.tag == Tag::Error {
            let e = ErrorMsg::decode(&m.payload)?;
            return Err(ProtocolError::Remote {
                code: e.code,
                message: e.message,
            });
        }
        Err(ProtocolError::UnexpectedMessage {
            expected: Self::NAME,
            got: m.tag,
        })
    }
}

/// Publisher to server: encrypted train and validation splits (AENC files).
#[derive(Debug, Clone, PartialEq)]
pub struct PostDataset {
    pub epochs: u32,
    pub min_accuracy: f64,
    pub train: Vec<u8>,
    pub train_digest: String,
    pub val: Vec<u8>,
    pub val_digest: String,
    pub sent_at: u64,
}

impl Payload for PostDataset {
    const TAG: Tag = Tag::PostDataset;
    const NAME: &'static str = "PostDataset";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u32(self.epochs)
            .f64(self.min_accuracy)
            .bytes(&self.train)
            .str(&self.train_digest)
            .bytes(&self.val)
            .str(&self.val_digest)
            .u64(self.sent_at);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let m = PostDataset {
            epochs: r.u32()?,
            min_accuracy: r.f64()?,
            train: r.bytes()?,
            train_digest: r.string()?,
            val: r.bytes()?,
            val_digest: r.string()?,
            sent_at: r.u64()?,
        };
        r.finish()?;
        Ok(m)
    }
}

/// Server to publisher: the task id assigned to a posted dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskAnnounce {
    pub task_id: u64,
    pub epochs: u32,
    pub dataset_digest: String,
}

impl Payload for TaskAnnounce {
    const TAG: Tag = Tag::TaskAnnounce;
    const NAME: &'static str = "TaskAnnounce";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.task_id).u32(self.epochs).str(&self.dataset_digest);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let m = TaskAnnounce {
            task_id: r.u64()?,
            epochs: r.u32()?,
            dataset_digest: r.string()?,
        };
        r.finish()?;
        Ok(m)
    }
}

/// Worker to server.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestTask {
    pub worker: String,
    pub sent_at: u64,
}

impl Payload for RequestTask {
    const TAG: Tag = Tag::RequestTask;
    const NAME: &'static str = "RequestTask";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.str(&self.worker).u64(self.sent_at);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let m = RequestTask {
            worker: r.string()?,
            sent_at: r.u64()?,
        };
        r.finish()?;
        Ok(m)
    }
}

/// Server to worker: the encrypted training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTransfer {
    pub task_id: u64,
    pub epochs: u32,
    pub train: Vec<u8>,
    pub digest: String,
    pub sent_at: u64,
}

impl Payload for DatasetTransfer {
    const TAG: Tag = Tag::DatasetTransfer;
    const NAME: &'static str = "DatasetTransfer";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.task_id)
            .u32(self.epochs)
            .bytes(&self.train)
            .str(&self.digest)
            .u64(self.sent_at);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let m = DatasetTransfer {
            task_id: r.u64()?,
            epochs: r.u32()?,
            train: r.bytes()?,
            digest: r.string()?,
            sent_at: r.u64()?,
        };
        r.finish()?;
        Ok(m)
    }
}

/// Worker to server, then server to publisher: an ATAE checkpoint plus timing.
///
/// `legs` holds the one-way delays measured so far, in nanoseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReturn {
    pub task_id: u64,
    pub checkpoint: Vec<u8>,
    pub compute_nanos: u64,
    pub legs: Vec<u64>,
    pub queue_nanos: u64,
    pub sent_at: u64,
}

impl Payload for ModelReturn {
    const TAG: Tag = Tag::ModelReturn;
    const NAME: &'static str = "ModelReturn";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.task_id).bytes(&self.checkpoint).u64(self.compute_nanos);
        w.u8(self.legs.len() as u8);
        for &l in &self.legs {
            w.u64(l);
        }
        w.u64(self.queue_nanos).u64(self.sent_at);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let task_id = r.u64()?;
        let checkpoint = r.bytes()?;
        let compute_nanos = r.u64()?;
        let n = r.u8()? as usize;
        if n > 4 {
            return Err(r.err(format!("{n} legs, at most 4")));
        }
        let legs = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let m = ModelReturn {
            task_id,
            checkpoint,
            compute_nanos,
            legs,
            queue_nanos: r.u64()?,
            sent_at: r.u64()?,
        };
        r.finish()?;
        Ok(m)
    }
}

/// Server to publisher: outcome of the server-side validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResult {
    pub task_id: u64,
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    pub passed: bool,
    pub checkpoint_digest: String,
}

impl Payload for ValidationResult {
    const TAG: Tag = Tag::ValidationResult;
    const NAME: &'static str = "ValidationResult";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.task_id)
            .f64(self.accuracy)
            .u64(self.correct)
            .u64(self.total)
            .u8(self.passed as u8)
            .str(&self.checkpoint_digest);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let m = ValidationResult {
            task_id: r.u64()?,
            accuracy: r.f64()?,
            correct: r.u64()?,
            total: r.u64()?,
            passed: r.bool()?,
            checkpoint_digest: r.string()?,
        };
        r.finish()?;
        Ok(m)
    }
}

/// Server to worker after a model passes validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentAck {
    pub task_id: u64,
    pub amount: u64,
}

impl Payload for PaymentAck {
    const TAG: Tag = Tag::PaymentAck;
    const NAME: &'static str = "PaymentAck";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.task_id).u64(self.amount);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let m = PaymentAck {
            task_id: r.u64()?,
            amount: r.u64()?,
        };
        r.finish()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMsg {
    pub task_id: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorMsg {
    pub fn new(task_id: Option<u64>, code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorMsg {
            task_id,
            code,
            message: message.into(),
        }
    }
}

impl Payload for ErrorMsg {
    const TAG: Tag = Tag::Error;
    const NAME: &'static str = "Error";

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self.task_id {
            Some(id) => w.u8(1).u64(id),
            None => w.u8(0),
        };
        w.u16(self.code.to_u16()).str(&self.message);
        w.0
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(Self::NAME, buf);
        let task_id = if r.bool()? { Some(r.u64()?) } else { None };
        let m = ErrorMsg {
            task_id,
            code: ErrorCode::from_u16(r.u16()?),
            message: r.string()?,
        };
        r.finish()?;
        Ok(m)
    }
}
