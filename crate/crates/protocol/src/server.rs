//! The broker: accepts encrypted datasets from publishers, hands the training
//! split to workers in FIFO order, validates returned models on the held-back
//! validation split, pays the worker and returns the model to the publisher.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use archnet_core::classifier::TrainedClassifier;
use archnet_core::dataset::Dataset;
use archnet_core::digest::sha256_hex;
use archnet_core::formats::aenc;
use archnet_core::formats::atae::Checkpoint;

use crate::error::{ErrorCode, ProtocolError, Result};
use crate::frame::{read_frame, write_frame, Message, Tag, DEFAULT_MAX_FRAME};
use crate::messages::{
    DatasetTransfer, ErrorMsg, ModelReturn, PaymentAck, Payload, PostDataset, RequestTask, TaskAnnounce,
    ValidationResult,
};
use crate::record::{now_nanos, Status, TaskRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub max_frame: usize,
    /// Write timeout on every connection.
    pub io_timeout: Duration,
    /// Amount carried by each `PaymentAck`.
    pub payment: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            max_frame: DEFAULT_MAX_FRAME,
            io_timeout: Duration::from_secs(60),
            payment: 100,
        }
    }
}

pub struct Server {
    listener: TcpListener,
    config: ServerConfig,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> Result<Self> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            config,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Starts the acceptor and the state-owning actor thread.
    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        self.listener.set_nonblocking(true)?;
        let (events, inbox) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let config = self.config;
        let actor = thread::Builder::new()
            .name("server-actor".into())
            .spawn(move || Actor::new(config).run(inbox))?;
        let acceptor = {
            let events = events.clone();
            let stop = stop.clone();
            let listener = self.listener;
            thread::Builder::new()
                .name("server-accept".into())
                .spawn(move || accept_loop(listener, events, stop, config))?
        };
        Ok(ServerHandle {
            addr,
            events,
            stop,
            acceptor,
            actor,
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    events: Sender<Event>,
    stop: Arc<AtomicBool>,
    acceptor: JoinHandle<()>,
    actor: JoinHandle<Vec<TaskRecord>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Current task records.
    pub fn records(&self) -> Vec<TaskRecord> {
        let (tx, rx) = mpsc::channel();
        if self.events.send(Event::Snapshot(tx)).is_err() {
            return Vec::new();
        }
        rx.recv().unwrap_or_default()
    }

    /// Workers currently waiting for a task.
    pub fn waiting_workers(&self) -> usize {
        let (tx, rx) = mpsc::channel();
        if self.events.send(Event::Waiting(tx)).is_err() {
            return 0;
        }
        rx.recv().unwrap_or(0)
    }

    /// Tells waiting workers there is no more work, closes every connection and
    /// returns the final task records.
    pub fn shutdown(self) -> Vec<TaskRecord> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.events.send(Event::Shutdown);
        let _ = self.acceptor.join();
        self.actor.join().unwrap_or_default()
    }
}

/// Runs a server on `addr` until the process exits.
pub fn run_server(addr: impl ToSocketAddrs, config: ServerConfig) -> Result<()> {
    let handle = Server::bind(addr, config)?.spawn()?;
    let _ = handle.actor.join();
    Ok(())
}

enum Event {
    Connected { conn: u64, stream: TcpStream },
    Post { conn: u64, post: PostDataset, val: Dataset, received_at: u64 },
    Request { conn: u64, worker: String },
    Model { conn: u64, model: ModelReturn, received_at: u64 },
    WorkerError { conn: u64, error: ErrorMsg },
    Reject { conn: u64, error: ErrorMsg },
    Closed { conn: u64 },
    Snapshot(Sender<Vec<TaskRecord>>),
    Waiting(Sender<usize>),
    Shutdown,
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stop: Arc<AtomicBool>, config: ServerConfig) {
    let mut next_conn = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                next_conn += 1;
                let conn = next_conn;
                let events = events.clone();
                let spawned = thread::Builder::new()
                    .name(format!("server-conn-{conn}"))
                    .spawn(move || serve_connection(conn, stream, events, config));
                if spawned.is_err() {
                    continue;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

/// Reads frames from one peer and forwards them to the actor. All writes go
/// through the actor so frames never interleave.
fn serve_connection(conn: u64, mut stream: TcpStream, events: Sender<Event>, config: ServerConfig) {
    let setup = stream
        .set_nonblocking(false)
        .and_then(|_| stream.set_nodelay(true))
        .and_then(|_| stream.set_write_timeout(Some(config.io_timeout)))
        .and_then(|_| stream.try_clone());
    let writer = match setup {
        Ok(w) => w,
        Err(_) => return,
    };
    if events.send(Event::Connected { conn, stream: writer }).is_err() {
        return;
    }
    loop {
        let message = match read_frame(&mut stream, config.max_frame) {
            Ok(m) => m,
            Err(e) => {
                if !matches!(e, crate::frame::FrameError::Closed) {
                    let error = ErrorMsg::new(None, ErrorCode::BadRequest, e.to_string());
                    let _ = events.send(Event::Reject { conn, error });
                }
                break;
            }
        };
        let received_at = now_nanos();
        let event = match dispatch(conn, &message, received_at) {
            Ok(ev) => ev,
            Err(error) => Event::Reject { conn, error },
        };
        if events.send(event).is_err() {
            break;
        }
    }
    let _ = events.send(Event::Closed { conn });
}

fn dispatch(conn: u64, m: &Message, received_at: u64) -> std::result::Result<Event, ErrorMsg> {
    let bad = |e: ProtocolError| ErrorMsg::new(None, ErrorCode::BadRequest, e.to_string());
    match m.tag {
        Tag::PostDataset => {
            let post = PostDataset::decode(&m.payload).map_err(bad)?;
            let val = verify_post(&post)?;
            Ok(Event::Post {
                conn,
                post,
                val,
                received_at,
            })
        }
        Tag::RequestTask => {
            let req = RequestTask::decode(&m.payload).map_err(bad)?;
            Ok(Event::Request { conn, worker: req.worker })
        }
        Tag::ModelReturn => {
            let model = ModelReturn::decode(&m.payload).map_err(bad)?;
            Ok(Event::Model {
                conn,
                model,
                received_at,
            })
        }
        Tag::Error => {
            let error = ErrorMsg::decode(&m.payload).map_err(bad)?;
            Ok(Event::WorkerError { conn, error })
        }
        other => Err(ErrorMsg::new(
            None,
            ErrorCode::BadRequest,
            format!("{other:?} is not accepted by the server"),
        )),
    }
}

/// Checks both digests and decodes the validation split.
fn verify_post(post: &PostDataset) -> std::result::Result<Dataset, ErrorMsg> {
    for (what, bytes, claimed) in [
        ("train", &post.train, &post.train_digest),
        ("validation", &post.val, &post.val_digest),
    ] {
        let actual = sha256_hex(bytes);
        if &actual != claimed {
            return Err(ErrorMsg::new(
                None,
                ErrorCode::DigestMismatch,
                format!("{what} digest mismatch: expected {claimed}, computed {actual}"),
            ));
        }
    }
    let malformed = |e: archnet_core::Error| ErrorMsg::new(None, ErrorCode::BadRequest, e.to_string());
    let train = aenc::decode("train", &post.train).map_err(malformed)?;
    let val = aenc::decode("val", &post.val).map_err(malformed)?;
    if train.is_empty() || val.is_empty() {
        return Err(ErrorMsg::new(None, ErrorCode::BadRequest, "empty train or validation split"));
    }
    if train.sample_shape() != val.sample_shape() || train.representation() != val.representation() {
        return Err(ErrorMsg::new(
            None,
            ErrorCode::BadRequest,
            "train and validation splits disagree on shape or encryptor",
        ));
    }
    Ok(val)
}

struct Task {
    record: TaskRecord,
    publisher: u64,
    train: Vec<u8>,
    val: Dataset,
    min_accuracy: f64,
    leg1: u64,
    worker: Option<u64>,
}

struct Actor {
    config: ServerConfig,
    conns: HashMap<u64, TcpStream>,
    tasks: BTreeMap<u64, Task>,
    queue: VecDeque<u64>,
    waiting: VecDeque<(u64, String)>,
    assigned: HashMap<u64, u64>,
    next_task: u64,
}

impl Actor {
    fn new(config: ServerConfig) -> Self {
        Actor {
            config,
            conns: HashMap::new(),
            tasks: BTreeMap::new(),
            queue: VecDeque::new(),
            waiting: VecDeque::new(),
            assigned: HashMap::new(),
            next_task: 1,
        }
    }

    fn run(mut self, inbox: Receiver<Event>) -> Vec<TaskRecord> {
        while let Ok(event) = inbox.recv() {
            match event {
                Event::Connected { conn, stream } => {
                    self.conns.insert(conn, stream);
                }
                Event::Post {
                    conn,
                    post,
                    val,
                    received_at,
                } => self.on_post(conn, post, val, received_at),
                Event::Request { conn, worker } => {
                    self.waiting.push_back((conn, worker));
                    self.assign();
                }
                Event::Model {
                    conn,
                    model,
                    received_at,
                } => self.on_model(conn, model, received_at),
                Event::WorkerError { conn, error } => self.on_worker_error(conn, error),
                Event::Reject { conn, error } => {
                    self.send(conn, &error);
                }
                Event::Closed { conn } => self.on_closed(conn),
                Event::Snapshot(reply) => {
                    let _ = reply.send(self.records());
                }
                Event::Waiting(reply) => {
                    let _ = reply.send(self.waiting.len());
                }
                Event::Shutdown => break,
            }
        }
        for (conn, _) in std::mem::take(&mut self.waiting) {
            self.send(conn, &ErrorMsg::new(None, ErrorCode::Shutdown, "server shutting down; no task"));
        }
        for stream in self.conns.values() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        self.records()
    }

    fn records(&self) -> Vec<TaskRecord> {
        self.tasks.values().map(|t| t.record.clone()).collect()
    }

    fn send<P: Payload>(&mut self, conn: u64, payload: &P) -> bool {
        let max = self.config.max_frame;
        match self.conns.get_mut(&conn) {
            Some(stream) => write_frame(stream, &payload.to_message(), max).is_ok(),
            None => false,
        }
    }

    fn on_post(&mut self, conn: u64, post: PostDataset, val: Dataset, received_at: u64) {
        let id = self.next_task;
        self.next_task += 1;
        let leg1 = received_at.saturating_sub(post.sent_at);
        let record = TaskRecord::new(id, post.train_digest.clone(), post.epochs, received_at);
        let announce = TaskAnnounce {
            task_id: id,
            epochs: post.epochs,
            dataset_digest: post.train_digest.clone(),
        };
        self.tasks.insert(
            id,
            Task {
                record,
                publisher: conn,
                train: post.train,
                val,
                min_accuracy: post.min_accuracy,
                leg1,
                worker: None,
            },
        );
        self.send(conn, &announce);
        self.queue.push_back(id);
        self.assign();
    }

    /// Pairs queued tasks with waiting workers, oldest first on both sides.
    fn assign(&mut self) {
        while !self.queue.is_empty() {
            let Some((worker, name)) = self.waiting.pop_front() else { break };
            if !self.conns.contains_key(&worker) {
                continue;
            }
            let id = self.queue.pop_front().expect("queue is non-empty");
            let task = self.tasks.get_mut(&id).expect("queued task exists");
            let transfer = DatasetTransfer {
                task_id: id,
                epochs: task.record.epochs,
                train: task.train.clone(),
                digest: task.record.dataset_digest.clone(),
                sent_at: now_nanos(),
            };
            if task.record.advance(Status::Assigned, transfer.sent_at).is_err() {
                continue;
            }
            task.record.assigned_to.push(name);
            task.worker = Some(worker);
            self.assigned.insert(worker, id);
            if !self.send(worker, &transfer) {
                self.worker_lost(worker);
            }
        }
    }

    fn fail(&mut self, id: u64, code: ErrorCode, reason: String) {
        let Some(task) = self.tasks.get_mut(&id) else { return };
        if task.record.status.is_terminal() {
            return;
        }
        let _ = task.record.fail(reason.clone(), now_nanos());
        if let Some(w) = task.worker.take() {
            self.assigned.remove(&w);
        }
        let publisher = task.publisher;
        self.send(publisher, &ErrorMsg::new(Some(id), code, reason));
    }

    fn worker_lost(&mut self, worker: u64) {
        if let Some(id) = self.assigned.remove(&worker) {
            self.fail(id, ErrorCode::WorkerLost, format!("worker connection {worker} lost during task {id}"));
        }
    }

    fn on_closed(&mut self, conn: u64) {
        self.conns.remove(&conn);
        self.waiting.retain(|(c, _)| *c != conn);
        self.worker_lost(conn);
        let orphaned: Vec<u64> = self
            .tasks
            .iter()
            .filter(|(_, t)| t.publisher == conn && !t.record.status.is_terminal())
            .map(|(&id, _)| id)
            .collect();
        for id in orphaned {
            self.queue.retain(|&q| q != id);
            if let Some(task) = self.tasks.get_mut(&id) {
                let _ = task.record.fail("publisher disconnected", now_nanos());
                if let Some(w) = task.worker.take() {
                    self.assigned.remove(&w);
                    self.send(w, &ErrorMsg::new(Some(id), ErrorCode::Shutdown, "task withdrawn"));
                }
            }
        }
    }

    fn on_worker_error(&mut self, conn: u64, error: ErrorMsg) {
        let Some(&id) = self.assigned.get(&conn) else { return };
        if error.task_id.is_some_and(|t| t != id) {
            return;
        }
        let task = self.tasks.get_mut(&id).expect("assigned task exists");
        if error.code == ErrorCode::ShapeMismatch
            && task.record.status == Status::Assigned
            && task.record.advance(Status::Posted, now_nanos()).is_ok()
        {
            task.worker = None;
            self.assigned.remove(&conn);
            self.queue.push_front(id);
            self.assign();
            return;
        }
        self.fail(id, error.code, format!("worker reported: {}", error.message));
    }

    fn on_model(&mut self, conn: u64, model: ModelReturn, received_at: u64) {
        let Some(&id) = self.assigned.get(&conn) else {
            self.send(conn, &ErrorMsg::new(Some(model.task_id), ErrorCode::NoTask, "no task assigned"));
            return;
        };
        if model.task_id != id {
            let msg = format!("model for task {} but task {id} is assigned", model.task_id);
            self.send(conn, &ErrorMsg::new(Some(model.task_id), ErrorCode::BadRequest, msg.clone()));
            self.fail(id, ErrorCode::BadRequest, msg);
            return;
        }
        let task = self.tasks.get_mut(&id).expect("assigned task exists");
        task.record.model_received_at = Some(received_at);
        if task.record.advance(Status::Trained, received_at).is_err() {
            return;
        }
        let started = now_nanos();
        task.record.validation_started_at = Some(started);
        let outcome = validate(&model.checkpoint, &task.val);
        let (correct, total) = match outcome {
            Ok(v) => v,
            Err((code, reason)) => {
                self.send(conn, &ErrorMsg::new(Some(id), code, reason.clone()));
                self.fail(id, code, reason);
                return;
            }
        };
        let accuracy = correct as f64 / total as f64;
        let passed = accuracy >= task.min_accuracy;
        let result = ValidationResult {
            task_id: id,
            accuracy,
            correct: correct as u64,
            total: total as u64,
            passed,
            checkpoint_digest: sha256_hex(&model.checkpoint),
        };
        let publisher = task.publisher;
        if !passed {
            let reason = format!("accuracy {accuracy:.4} below required {:.4}", task.min_accuracy);
            let _ = task.record.fail(reason.clone(), now_nanos());
            task.worker = None;
            self.assigned.remove(&conn);
            self.send(conn, &ErrorMsg::new(Some(id), ErrorCode::ValidationFailed, reason));
            self.send(publisher, &result);
            return;
        }
        let _ = task.record.advance(Status::Validated, now_nanos());
        let mut legs = vec![task.leg1];
        legs.extend(model.legs.first().copied());
        legs.push(received_at.saturating_sub(model.sent_at));
        let queue_nanos = task.record.queue_nanos().unwrap_or(0);
        let payment = PaymentAck {
            task_id: id,
            amount: self.config.payment,
        };
        if self.send(conn, &payment) {
            let task = self.tasks.get_mut(&id).expect("task exists");
            let _ = task.record.advance(Status::Paid, now_nanos());
        } else {
            self.fail(id, ErrorCode::WorkerLost, "worker left before payment".into());
            return;
        }
        self.assigned.remove(&conn);
        self.tasks.get_mut(&id).expect("task exists").worker = None;
        let forward = ModelReturn {
            task_id: id,
            checkpoint: model.checkpoint,
            compute_nanos: model.compute_nanos,
            legs,
            queue_nanos,
            sent_at: now_nanos(),
        };
        if self.send(publisher, &result) && self.send(publisher, &forward) {
            let task = self.tasks.get_mut(&id).expect("task exists");
            let _ = task.record.advance(Status::Returned, forward.sent_at);
        } else {
            let task = self.tasks.get_mut(&id).expect("task exists");
            let _ = task.record.fail("publisher unreachable", now_nanos());
        }
    }
}

/// Decodes the checkpoint and counts correct predictions on `val`.
fn validate(checkpoint: &[u8], val: &Dataset) -> std::result::Result<(usize, usize), (ErrorCode, String)> {
    let malformed = |e: archnet_core::Error| (ErrorCode::MalformedCheckpoint, e.to_string());
    let ckpt = Checkpoint::decode(checkpoint).map_err(malformed)?;
    let model = TrainedClassifier::from_checkpoint(&ckpt).map_err(malformed)?;
    if model.representation != *val.representation() {
        return Err((
            ErrorCode::ValidationFailed,
            format!(
                "model trained on {} data, validation split is {}",
                model.representation,
                val.representation()
            ),
        ));
    }
    let pred = model.predict(val).map_err(malformed)?;
    let correct = pred.iter().zip(val.labels()).filter(|(p, l)| p == l).count();
    Ok((correct, val.len()))
}
