//! A recording TCP proxy for inspecting traffic between the roles, plus
//! scanners that look for plaintext pixels and decoder weights in it.

use std::collections::HashSet;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use archnet_core::dataset::Dataset;
use archnet_core::formats::quantize;
use archnet_core::params::ParamSet;

use crate::error::Result;
use crate::frame::{encode_message, read_frame, write_frame, Message, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Client to upstream.
    Upstream,
    /// Upstream to client.
    Downstream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Captured {
    pub connection: usize,
    pub direction: Direction,
    pub tag: Tag,
    /// The frame exactly as forwarded.
    pub bytes: Vec<u8>,
}

/// Rewrites a frame in flight; the frame is re-encoded with a fresh CRC.
pub type Mutator = Arc<dyn Fn(Direction, &mut Message) + Send + Sync>;

pub struct Tap {
    addr: SocketAddr,
    frames: Arc<Mutex<Vec<Captured>>>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl Tap {
    pub fn start(upstream: SocketAddr, max_frame: usize, mutator: Option<Mutator>) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let frames = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let frames = frames.clone();
            let stop = stop.clone();
            thread::Builder::new().name("tap-accept".into()).spawn(move || {
                let mut connection = 0;
                while !stop.load(Ordering::SeqCst) {
                    let client = match listener.accept() {
                        Ok((c, _)) => c,
                        Err(_) => {
                            thread::sleep(Duration::from_millis(5));
                            continue;
                        }
                    };
                    connection += 1;
                    let Ok(server) = TcpStream::connect(upstream) else {
                        continue;
                    };
                    let _ = client.set_nonblocking(false);
                    for (from, to, direction) in [
                        (client.try_clone(), server.try_clone(), Direction::Upstream),
                        (server.try_clone(), client.try_clone(), Direction::Downstream),
                    ] {
                        let (Ok(from), Ok(to)) = (from, to) else { continue };
                        let frames = frames.clone();
                        let mutator = mutator.clone();
                        let _ = thread::Builder::new().name("tap-pipe".into()).spawn(move || {
                            pipe(from, to, direction, connection, max_frame, &frames, mutator.as_deref())
                        });
                    }
                }
            })?
        };
        Ok(Tap {
            addr,
            frames,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn frames(&self) -> Vec<Captured> {
        self.frames.lock().map(|f| f.clone()).unwrap_or_default()
    }
}

impl Drop for Tap {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn pipe(
    mut from: TcpStream,
    mut to: TcpStream,
    direction: Direction,
    connection: usize,
    max_frame: usize,
    frames: &Mutex<Vec<Captured>>,
    mutator: Option<&(dyn Fn(Direction, &mut Message) + Send + Sync)>,
) {
    while let Ok(mut m) = read_frame(&mut from, max_frame) {
        if let Some(f) = mutator {
            f(direction, &mut m);
        }
        let Ok(bytes) = encode_message(&m, max_frame) else { break };
        if let Ok(mut log) = frames.lock() {
            log.push(Captured {
                connection,
                direction,
                tag: m.tag,
                bytes,
            });
        }
        if write_frame(&mut to, &m, max_frame).is_err() {
            break;
        }
    }
    let _ = to.shutdown(Shutdown::Write);
    let _ = from.shutdown(Shutdown::Read);
}

/// Pixel runs per image used as search needles.
const PIXEL_RUN: usize = 16;
/// Consecutive weights per tensor used as search needles.
const WEIGHT_RUN: usize = 8;
const MIN_DISTINCT: usize = 4;

/// One finding from [`scan_for_leaks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Leak {
    pub frame: usize,
    pub what: String,
}

/// Searches every frame for runs of plaintext pixels (as u8, f32 or f64
/// little-endian) and for decoder weights (f32 or f64) or decoder tensor names.
pub fn scan_for_leaks(frames: &[Captured], plain: &Dataset, decoder: &ParamSet) -> Vec<Leak> {
    let mut needles: Vec<(String, usize, HashSet<Vec<u8>>)> = Vec::new();
    let pixel_runs = distinct_runs(plain.images().data(), plain.images().len() / plain.len().max(1), PIXEL_RUN);
    needles.push((
        "plain pixels (u8)".into(),
        PIXEL_RUN,
        pixel_runs
            .iter()
            .map(|r| r.iter().map(|&v| quantize(v)).collect::<Vec<u8>>())
            .filter(|r| r.iter().collect::<HashSet<_>>().len() >= MIN_DISTINCT)
            .collect(),
    ));
    needles.push(("plain pixels (f32)".into(), PIXEL_RUN * 4, encode_runs(&pixel_runs, 4)));
    needles.push(("plain pixels (f64)".into(), PIXEL_RUN * 8, encode_runs(&pixel_runs, 8)));
    let mut weight_runs = Vec::new();
    for t in decoder.tensors() {
        weight_runs.extend(distinct_runs(t.data(), t.len(), WEIGHT_RUN));
    }
    needles.push(("decoder weights (f32)".into(), WEIGHT_RUN * 4, encode_runs(&weight_runs, 4)));
    needles.push(("decoder weights (f64)".into(), WEIGHT_RUN * 8, encode_runs(&weight_runs, 8)));

    let mut leaks = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        for (what, width, set) in &needles {
            if set.is_empty() || f.bytes.len() < *width {
                continue;
            }
            let prefixes: HashSet<[u8; 8]> = set.iter().map(|n| prefix(n)).collect();
            if f.bytes.windows(*width).any(|w| prefixes.contains(&prefix(w)) && set.contains(w)) {
                leaks.push(Leak {
                    frame: i,
                    what: what.clone(),
                });
            }
        }
        if f.bytes.windows(b"decoder.".len()).any(|w| w == b"decoder.") {
            leaks.push(Leak {
                frame: i,
                what: "decoder tensor name".into(),
            });
        }
    }
    leaks
}

fn prefix(bytes: &[u8]) -> [u8; 8] {
    bytes[..8].try_into().expect("needles are at least 8 bytes")
}

/// For each block of `block` values, the first `run`-long window with at least
/// [`MIN_DISTINCT`] distinct values.
fn distinct_runs(values: &[f64], block: usize, run: usize) -> Vec<Vec<f64>> {
    if block < run {
        return Vec::new();
    }
    values
        .chunks(block)
        .filter_map(|b| {
            b.windows(run)
                .find(|w| {
                    let mut seen: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
                    seen.sort_unstable();
                    seen.dedup();
                    seen.len() >= MIN_DISTINCT
                })
                .map(<[f64]>::to_vec)
        })
        .collect()
}

fn encode_runs(runs: &[Vec<f64>], width: usize) -> HashSet<Vec<u8>> {
    runs.iter()
        .map(|r| {
            r.iter()
                .flat_map(|&v| {
                    if width == 4 {
                        (v as f32).to_le_bytes().to_vec()
                    } else {
                        v.to_le_bytes().to_vec()
                    }
                })
                .collect()
        })
        .collect()
}
