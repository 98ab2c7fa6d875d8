//! Three-party dataset encryption protocol: a publisher posts ArchNet
//! ciphertext, a server brokers tasks and validates models, workers train on
//! ciphertext they cannot decrypt.

pub mod error;
pub mod frame;
pub mod messages;
pub mod net;
pub mod publisher;
pub mod record;
pub mod server;
pub mod simulate;
pub mod tap;
pub mod worker;

pub use error::{ErrorCode, ProtocolError, Result};
pub use frame::{decode_message, encode_message, Message, Tag};
pub use publisher::{run_publisher, PublisherConfig, PublisherOutcome};
pub use record::{delay_report, DelayBreakdown, Status, TaskRecord};
pub use server::{run_server, Server, ServerConfig, ServerHandle};
pub use worker::{run_worker, WorkerConfig, WorkerReport};
