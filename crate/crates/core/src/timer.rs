//! Absolute-deadline timers on top of the queue: the deadline is the key, an
//! external tick counter is compared against the head only.

use std::fmt;

use crate::element::{Element, QueueConfig};
use crate::engine::{Command, ConfigError, Engine, IssueError, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArmOutcome {
    Armed,
    /// The ID was already armed; its deadline was replaced.
    Updated,
    Full,
}

impl ArmOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArmOutcome::Armed => "armed",
            ArmOutcome::Updated => "updated",
            ArmOutcome::Full => "full",
        }
    }
}

impl fmt::Display for ArmOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExpiryEvent {
    pub id: u32,
    pub deadline: u64,
    /// Tick at which the event was emitted; never before `deadline`.
    pub emitted_at: u64,
    /// Engine cycle the expiring pop was issued in.
    pub cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimerError {
    #[error(transparent)]
    Command(#[from] IssueError),
    #[error("advancing {delta} ticks from {now} overflows the {width}-bit clock")]
    ClockOverflow { now: u64, delta: u64, width: u32 },
}

#[derive(Debug, Clone)]
pub struct TimerQueue {
    engine: Engine,
    now: u64,
    head_checks: u64,
    last_advance_ops: usize,
}

impl TimerQueue {
    pub fn new(cfg: QueueConfig) -> Result<Self, ConfigError> {
        Ok(Self { engine: Engine::new(cfg)?, now: 0, head_checks: 0, last_advance_ops: 0 })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Number of armed timers (pending operations included).
    pub fn len(&self) -> usize {
        self.engine.occupancy()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_armed(&self, id: u32) -> bool {
        self.engine.contains(id)
    }

    /// Total head comparisons performed by all `advance` calls.
    pub fn head_checks(&self) -> u64 {
        self.head_checks
    }

    /// Head comparisons plus pops performed by the latest `advance`.
    pub fn last_advance_ops(&self) -> usize {
        self.last_advance_ops
    }

    /// Earliest armed timer as `(id, deadline)`.
    pub fn head(&mut self) -> Option<(u32, u64)> {
        self.engine.run_until_quiescent();
        self.engine.peek_head().valid().map(|e| (e.id, e.data))
    }

    fn issue(&mut self, cmd: Command) -> Result<Status, TimerError> {
        self.engine.validate_command(cmd)?;
        self.engine.wait_for_port();
        let ticket = self.engine.issue(cmd)?;
        Ok(self.engine.record(ticket).status)
    }

    /// Arm or rearm `id`. A deadline at or before `now` fires on the next
    /// `advance`.
    pub fn arm(&mut self, id: u32, deadline: u64) -> Result<ArmOutcome, TimerError> {
        let rearm = self.engine.contains(id);
        Ok(match self.issue(Command::Push { id, data: deadline })? {
            Status::Full => ArmOutcome::Full,
            _ if rearm => ArmOutcome::Updated,
            _ => ArmOutcome::Armed,
        })
    }

    /// Cancel `id`; `false` if it was not armed.
    pub fn disarm(&mut self, id: u32) -> Result<bool, TimerError> {
        if id == 0 || id > self.engine.config().max_id() {
            return Ok(false);
        }
        Ok(self.issue(Command::Delete { id })? == Status::Ok)
    }

    /// Move the clock forward and pop every timer whose deadline has been
    /// reached. Only the head is ever compared with the clock.
    pub fn advance(&mut self, delta: u64) -> Result<Vec<ExpiryEvent>, TimerError> {
        let cfg = *self.engine.config();
        let now = self
            .now
            .checked_add(delta)
            .filter(|&t| t <= cfg.max_data())
            .ok_or(TimerError::ClockOverflow { now: self.now, delta, width: cfg.data_width })?;
        self.now = now;
        let mut events = Vec::new();
        let mut ops = 0;
        loop {
            self.engine.run_until_quiescent();
            self.head_checks += 1;
            ops += 1;
            let head = self.engine.peek_head();
            if !head.is_valid() || head.data > now {
                break;
            }
            self.engine.wait_for_port();
            let ticket = self.engine.issue(Command::Pop)?;
            let cycle = self.engine.cycle();
            self.engine.run_until_quiescent();
            let popped: Element = self.engine.record(ticket).result.unwrap_or(Element::EMPTY);
            debug_assert_eq!(popped, head);
            ops += 1;
            events.push(ExpiryEvent { id: popped.id, deadline: popped.data, emitted_at: now, cycle });
        }
        self.last_advance_ops = ops;
        Ok(events)
    }
}
