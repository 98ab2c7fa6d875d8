//! Blocking socket helpers shared by the three roles.

use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::error::{ProtocolError, Result};
use crate::frame::{read_frame, write_frame, FrameError, Message};
use crate::messages::Payload;

/// Connects to the first reachable address and applies `timeout` to reads and writes.
pub fn connect(addr: impl ToSocketAddrs + ToString, timeout: Duration) -> Result<TcpStream> {
    let label = addr.to_string();
    let connect_err = |source| ProtocolError::Connect {
        addr: label.clone(),
        source,
    };
    let mut last = io::Error::new(io::ErrorKind::AddrNotAvailable, "no address resolved");
    for a in addr.to_socket_addrs().map_err(connect_err)? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(connect_err(last))
}

pub fn send<P: Payload>(stream: &mut TcpStream, payload: &P, max: usize) -> Result<()> {
    write_frame(stream, &payload.to_message(), max).map_err(|e| timeout_or(e, P::NAME))
}

/// Reads one frame; socket timeouts become [`ProtocolError::Timeout`].
pub fn recv(stream: &mut TcpStream, max: usize, waiting_for: &str) -> Result<Message> {
    read_frame(stream, max).map_err(|e| timeout_or(e, waiting_for))
}

/// Reads one frame and decodes it as `P`; an `Error` frame becomes [`ProtocolError::Remote`].
pub fn recv_as<P: Payload>(stream: &mut TcpStream, max: usize) -> Result<P> {
    P::from_message(&recv(stream, max, P::NAME)?)
}

fn timeout_or(e: FrameError, what: &str) -> ProtocolError {
    match &e {
        FrameError::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
            ProtocolError::Timeout(format!("waiting for {what}"))
        }
        _ => e.into(),
    }
}
