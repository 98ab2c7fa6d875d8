//! Task lifecycle records and the delay decomposition t0 = t1 + 4*t2 + t3 + t4.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::error::{ProtocolError, Result};

/// Nanoseconds since the Unix epoch.
pub fn now_nanos() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Posted,
    Assigned,
    Trained,
    Validated,
    Paid,
    Returned,
    Failed,
}

impl Status {
    /// Allowed successors: the forward chain, a single requeue from
    /// `Assigned` back to `Posted`, and failure from any non-terminal state.
    pub fn can_move_to(self, next: Status) -> bool {
        use Status::*;
        matches!(
            (self, next),
            (Posted, Assigned)
                | (Assigned, Trained)
                | (Trained, Validated)
                | (Validated, Paid)
                | (Paid, Returned)
                | (Assigned, Posted)
                | (Posted | Assigned | Trained | Validated | Paid, Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Returned | Status::Failed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: u64,
    pub dataset_digest: String,
    pub epochs: u32,
    pub status: Status,
    /// Every transition with its wall-clock time in nanoseconds.
    pub history: Vec<(Status, u64)>,
    pub requeues: u32,
    pub assigned_to: Vec<String>,
    pub model_received_at: Option<u64>,
    pub validation_started_at: Option<u64>,
    pub failure: Option<String>,
}

impl TaskRecord {
    pub fn new(task_id: u64, dataset_digest: impl Into<String>, epochs: u32, at: u64) -> Self {
        TaskRecord {
            task_id,
            dataset_digest: dataset_digest.into(),
            epochs,
            status: Status::Posted,
            history: vec![(Status::Posted, at)],
            requeues: 0,
            assigned_to: Vec::new(),
            model_received_at: None,
            validation_started_at: None,
            failure: None,
        }
    }

    pub fn advance(&mut self, to: Status, at: u64) -> Result<()> {
        if !self.status.can_move_to(to) {
            return Err(ProtocolError::IllegalTransition { from: self.status, to });
        }
        if self.status == Status::Assigned && to == Status::Posted {
            if self.requeues >= 1 {
                return Err(ProtocolError::IllegalTransition { from: self.status, to });
            }
            self.requeues += 1;
        }
        self.status = to;
        self.history.push((to, at));
        Ok(())
    }

    pub fn fail(&mut self, reason: impl Into<String>, at: u64) -> Result<()> {
        self.advance(Status::Failed, at)?;
        self.failure = Some(reason.into());
        Ok(())
    }

    /// Time of the first entry into `status`.
    pub fn first(&self, status: Status) -> Option<u64> {
        self.history.iter().find(|(s, _)| *s == status).map(|&(_, t)| t)
    }

    /// Time of the last entry into `status`.
    pub fn last(&self, status: Status) -> Option<u64> {
        self.history.iter().rev().find(|(s, _)| *s == status).map(|&(_, t)| t)
    }

    /// Server-side waiting: every posted-to-assigned interval plus
    /// (validation start - model arrival).
    pub fn queue_nanos(&self) -> Option<u64> {
        let mut wait = 0u64;
        let mut any = false;
        for pair in self.history.windows(2) {
            if let [(Status::Posted, p), (Status::Assigned, a)] = pair {
                wait += a.checked_sub(*p)?;
                any = true;
            }
        }
        if !any {
            return None;
        }
        let validation = self.validation_started_at?.checked_sub(self.model_received_at?)?;
        Some(wait + validation)
    }
}

/// Delay components in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBreakdown {
    pub t1: f64,
    pub legs: [f64; 4],
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub t0: f64,
}

impl DelayBreakdown {
    /// t2 = mean(legs), t0 = t1 + 4*t2 + t3 + t4.
    pub fn new(t1: f64, legs: [f64; 4], t3: f64, t4: f64) -> Result<Self> {
        for (name, v) in [("t1", t1), ("t3", t3), ("t4", t4)] {
            if !(v >= 0.0) {
                return Err(ProtocolError::NegativeDuration(name));
            }
        }
        if legs.iter().any(|&l| !(l >= 0.0)) {
            return Err(ProtocolError::NegativeDuration("network leg"));
        }
        let t2 = legs.iter().sum::<f64>() / 4.0;
        Ok(DelayBreakdown {
            t1,
            legs,
            t2,
            t3,
            t4,
            t0: t1 + 4.0 * t2 + t3 + t4,
        })
    }

    pub fn to_line(&self) -> String {
        format!(
            "t0={:.6}s t1={:.6}s t2={:.6}s t3={:.6}s t4={:.6}s legs=[{:.6}, {:.6}, {:.6}, {:.6}]",
            self.t0, self.t1, self.t2, self.t3, self.t4, self.legs[0], self.legs[1], self.legs[2], self.legs[3]
        )
    }
}

/// Builds the breakdown for `task`; t4 comes from the record's timestamps.
pub fn delay_report(task: &TaskRecord, legs: [Duration; 4], t1: Duration, t3: Duration) -> Result<DelayBreakdown> {
    let t4 = task
        .queue_nanos()
        .ok_or(ProtocolError::NegativeDuration("t4 (incomplete task record)"))?;
    DelayBreakdown::new(
        t1.as_secs_f64(),
        legs.map(|l| l.as_secs_f64()),
        t3.as_secs_f64(),
        Duration::from_nanos(t4).as_secs_f64(),
    )
}
