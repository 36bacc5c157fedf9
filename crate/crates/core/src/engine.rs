//! The block array and its cycle-level scheduler.
//!
//! An operation delivered to block `k` at cycle `t` occupies that block for
//! [`STAGE_CYCLES`] cycles and commits atomically in its finish cycle
//! `t + 3`; whatever it forwards is delivered to block `k + 1` at `t + 4`.
//! When several transactions finish in the same cycle they commit from the
//! tail of the array toward the head, so a block always compares against a
//! neighbour head that the previous operation has already settled. With the
//! issue interval at least four cycles this makes the pipelined array agree
//! exactly with one that runs every operation to completion before the next.

use std::collections::HashSet;
use std::fmt;

use crate::block::{execute, BlockEffects, BlockState, OpBundle};
use crate::element::{validate_config, ConfigViolation, Element, QueueConfig, STAGE_CYCLES};

/// External operation on the issue port. `Push` covers both enqueue and
/// update: the array decides which by looking for the ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Push { id: u32, data: u64 },
    Pop,
    Delete { id: u32 },
    Peek,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Push { .. } => "push",
            Command::Pop => "pop",
            Command::Delete { .. } => "delete",
            Command::Peek => "peek",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Command::Push { id, data } => write!(f, "push {id} {data}"),
            Command::Pop => f.write_str("pop"),
            Command::Delete { id } => write!(f, "delete {id}"),
            Command::Peek => f.write_str("peek"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    NotFound,
    Full,
    Empty,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NotFound => "not_found",
            Status::Full => "full",
            Status::Empty => "empty",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Index of a command's completion record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ticket(pub usize);

/// What an issued command observably did, independent of timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Outcome {
    pub command: Command,
    pub status: Status,
    /// Dequeued or peeked element; `None` for push and delete.
    pub element: Option<Element>,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.command, self.status)?;
        if let Some(e) = self.element {
            write!(f, " {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRecord {
    pub command: Command,
    pub issue_cycle: u64,
    pub status: Status,
    pub result: Option<Element>,
    /// A pop's result arrives when block 0 finishes; everything else is
    /// complete at issue.
    pub done: bool,
}

impl CompletionRecord {
    pub fn outcome(&self) -> Outcome {
        Outcome { command: self.command, status: self.status, element: self.result }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IssueError {
    #[error("port busy at cycle {cycle}; next issue allowed at cycle {ready_at}")]
    Busy { cycle: u64, ready_at: u64 },
    #[error("invalid command `{command}`: {reason}")]
    InvalidCommand { command: Command, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid queue configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ConfigError(pub Vec<ConfigViolation>);

#[derive(Debug, Clone, PartialEq, Eq)]
struct InFlight {
    block: usize,
    bundle: OpBundle,
    delivered: u64,
    ticket: Option<Ticket>,
}

/// One committed block transaction, kept when tracing is enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionTrace {
    pub block: usize,
    pub delivered: u64,
    pub committed: u64,
    pub bundle: OpBundle,
    pub effects: BlockEffects,
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: QueueConfig,
    blocks: Vec<BlockState>,
    cycle: u64,
    in_flight: Vec<InFlight>,
    last_issue: Option<u64>,
    membership: HashSet<u32>,
    pending_pops: usize,
    records: Vec<CompletionRecord>,
    dropped: Vec<Element>,
    trace: Option<Vec<TransactionTrace>>,
}

impl Engine {
    pub fn new(cfg: QueueConfig) -> Result<Self, ConfigError> {
        validate_config(&cfg).map_err(ConfigError)?;
        Ok(Self {
            cfg,
            blocks: vec![BlockState::new(cfg.slots_per_block); cfg.n_blocks],
            cycle: 0,
            in_flight: Vec::new(),
            last_issue: None,
            membership: HashSet::new(),
            pending_pops: 0,
            records: Vec::new(),
            dropped: Vec::new(),
            trace: None,
        })
    }

    pub fn config(&self) -> &QueueConfig {
        &self.cfg
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity()
    }

    /// Elements logically in the queue, counting issued commands.
    pub fn occupancy(&self) -> usize {
        self.membership.len() - self.pending_pops
    }

    pub fn contains(&self, id: u32) -> bool {
        self.membership.contains(&id)
    }

    pub fn blocks(&self) -> &[BlockState] {
        &self.blocks
    }

    /// Direct register access, for fault injection and locality probes.
    pub fn blocks_mut(&mut self) -> &mut [BlockState] {
        &mut self.blocks
    }

    pub fn is_quiescent(&self) -> bool {
        self.in_flight.is_empty()
    }

    /// Earliest cycle at which the port accepts another command.
    pub fn port_ready_at(&self) -> u64 {
        self.last_issue.map_or(self.cycle, |t| (t + self.cfg.issue_interval).max(self.cycle))
    }

    pub fn completions(&self) -> &[CompletionRecord] {
        &self.records
    }

    pub fn record(&self, ticket: Ticket) -> &CompletionRecord {
        &self.records[ticket.0]
    }

    /// Valid elements that fell off the last block. Always empty when the
    /// capacity guard holds.
    pub fn dropped(&self) -> &[Element] {
        &self.dropped
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TransactionTrace] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Reject malformed commands (reserved or over-wide fields).
    pub fn validate_command(&self, cmd: Command) -> Result<(), IssueError> {
        let bad = |reason: String| Err(IssueError::InvalidCommand { command: cmd, reason });
        let check_id = |id: u32| {
            if id == 0 {
                bad("id 0 is reserved for empty slots".into())
            } else if id > self.cfg.max_id() {
                bad(format!("id exceeds {} bits", self.cfg.id_width))
            } else {
                Ok(())
            }
        };
        match cmd {
            Command::Push { id, data } => {
                check_id(id)?;
                if data > self.cfg.max_data() {
                    return bad(format!("data exceeds {} bits", self.cfg.data_width));
                }
                Ok(())
            }
            Command::Delete { id } => check_id(id),
            Command::Pop | Command::Peek => Ok(()),
        }
    }

    /// Start one command on the port at the current cycle.
    ///
    /// Capacity, empty-queue and membership outcomes land in the completion
    /// record; only an early issue or a malformed command is refused.
    pub fn issue(&mut self, cmd: Command) -> Result<Ticket, IssueError> {
        self.validate_command(cmd)?;
        let ready_at = self.port_ready_at();
        if self.cycle < ready_at {
            return Err(IssueError::Busy { cycle: self.cycle, ready_at });
        }
        self.last_issue = Some(self.cycle);
        let ticket = Ticket(self.records.len());
        let mut record = CompletionRecord {
            command: cmd,
            issue_cycle: self.cycle,
            status: Status::Ok,
            result: None,
            done: true,
        };
        let bundle = match cmd {
            Command::Push { id, data } => {
                if !self.membership.contains(&id) && self.occupancy() >= self.capacity() {
                    record.status = Status::Full;
                    None
                } else {
                    self.membership.insert(id);
                    Some(OpBundle::push(Element::new(id, data)))
                }
            }
            Command::Pop => {
                if self.occupancy() == 0 {
                    record.status = Status::Empty;
                    record.result = Some(Element::EMPTY);
                    None
                } else {
                    record.done = false;
                    self.pending_pops += 1;
                    Some(OpBundle::pop())
                }
            }
            Command::Delete { id } => {
                if !self.membership.remove(&id) {
                    record.status = Status::NotFound;
                }
                Some(OpBundle::delete(id))
            }
            Command::Peek => {
                let head = self.peek_head();
                record.status = if head.is_valid() { Status::Ok } else { Status::Empty };
                record.result = Some(head);
                None
            }
        };
        self.records.push(record);
        if let Some(bundle) = bundle {
            let ticket = matches!(cmd, Command::Pop).then_some(ticket);
            self.in_flight.push(InFlight { block: 0, bundle, delivered: self.cycle, ticket });
        }
        Ok(ticket)
    }

    /// Advance `n` cycles.
    pub fn step(&mut self, n: u64) {
        for _ in 0..n {
            self.tick();
        }
    }

    /// Steps until the port accepts a command; returns the cycles waited.
    pub fn wait_for_port(&mut self) -> u64 {
        let wait = self.port_ready_at() - self.cycle;
        self.step(wait);
        wait
    }

    /// Steps until nothing is in flight; returns the cycles consumed.
    pub fn run_until_quiescent(&mut self) -> u64 {
        let start = self.cycle;
        while !self.in_flight.is_empty() {
            self.tick();
        }
        self.cycle - start
    }

    fn tick(&mut self) {
        let finish = self.cycle;
        let mut due: Vec<InFlight> = Vec::new();
        self.in_flight.retain(|op| {
            if op.delivered + STAGE_CYCLES - 1 == finish {
                due.push(op.clone());
                false
            } else {
                true
            }
        });
        // Tail first: a block's compare sees its neighbour after the
        // preceding operation finished there.
        due.sort_by_key(|op| std::cmp::Reverse(op.block));
        for op in due {
            self.commit(op);
        }
        self.cycle += 1;
    }

    fn next_head(&self, block: usize) -> Element {
        self.blocks.get(block + 1).map_or(Element::EMPTY, BlockState::head)
    }

    /// The transaction `bundle` would perform at `block` right now, without
    /// committing it.
    pub fn preview_transaction(&self, block: usize, bundle: &OpBundle) -> (BlockState, BlockEffects) {
        execute(&self.blocks[block], bundle, self.next_head(block))
    }

    fn commit(&mut self, op: InFlight) {
        let k = op.block;
        let (next, effects) = self.preview_transaction(k, &op.bundle);
        self.blocks[k] = next;

        if let Some(ticket) = op.ticket {
            let dequeued = effects.to_prev.unwrap_or(Element::EMPTY);
            let record = &mut self.records[ticket.0];
            record.result = Some(dequeued);
            record.done = true;
            self.pending_pops -= 1;
            self.membership.remove(&dequeued.id);
        }

        let outgoing = effects.outgoing;
        if !outgoing.is_empty() {
            if k + 1 < self.blocks.len() {
                self.in_flight.push(InFlight {
                    block: k + 1,
                    bundle: outgoing,
                    delivered: self.cycle + 1,
                    ticket: None,
                });
            } else {
                self.dropped.extend(outgoing.push.into_iter().chain(outgoing.push_first));
            }
        }

        if let Some(trace) = self.trace.as_mut() {
            trace.push(TransactionTrace {
                block: k,
                delivered: op.delivered,
                committed: self.cycle,
                bundle: op.bundle,
                effects,
            });
        }
    }

    /// Block 0's first slot as of this cycle. Equals the queue minimum only
    /// at quiescence, or whenever the port is ready.
    pub fn peek_head(&self) -> Element {
        self.blocks[0].head()
    }

    /// Every slot in global order, empties included.
    pub fn global_slots(&self) -> Vec<Element> {
        self.blocks.iter().flat_map(|b| b.slots.iter().copied()).collect()
    }

    /// Valid elements in global order.
    ///
    /// Panics while operations are in flight.
    pub fn snapshot(&self) -> Vec<Element> {
        assert!(self.is_quiescent(), "snapshot taken with {} transaction(s) in flight", self.in_flight.len());
        self.global_slots().into_iter().filter(Element::is_valid).collect()
    }

    /// Swap two slots by global position.
    pub fn swap_slots(&mut self, a: usize, b: usize) {
        let m = self.cfg.slots_per_block;
        let (ea, eb) = (self.blocks[a / m].slots[a % m], self.blocks[b / m].slots[b % m]);
        self.blocks[a / m].slots[a % m] = eb;
        self.blocks[b / m].slots[b % m] = ea;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine(n: usize, m: usize) -> Engine {
        Engine::new(QueueConfig::new(n, m)).unwrap()
    }

    fn settle(eng: &mut Engine, cmd: Command) -> Ticket {
        eng.wait_for_port();
        let t = eng.issue(cmd).unwrap();
        eng.run_until_quiescent();
        t
    }

    fn push(id: u32, data: u64) -> Command {
        Command::Push { id, data }
    }

    #[test]
    fn new_engine_is_empty() {
        let eng = Engine::new(QueueConfig { n_blocks: 32, slots_per_block: 8, id_width: 9, data_width: 16, issue_interval: 4 }).unwrap();
        assert_eq!(eng.global_slots().len(), 256);
        assert!(eng.global_slots().iter().all(Element::is_empty));
        assert_eq!(eng.cycle(), 0);
        assert!(eng.is_quiescent());
        assert!(Engine::new(QueueConfig::new(1, 2)).is_ok());
    }

    #[test]
    fn invalid_config_rejected() {
        let err = Engine::new(QueueConfig::new(4, 1)).unwrap_err();
        assert!(matches!(err.0[0], ConfigViolation::SlotsPerBlock { .. }));
    }

    #[test]
    fn pop_on_empty_reports_invalid_element() {
        let mut eng = engine(2, 4);
        let t = settle(&mut eng, Command::Pop);
        let rec = eng.record(t);
        assert_eq!(rec.status, Status::Empty);
        assert_eq!(rec.result, Some(Element::EMPTY));
    }

    #[test]
    fn singleton_round_trip() {
        let mut eng = engine(2, 4);
        settle(&mut eng, push(5, 10));
        let t = settle(&mut eng, Command::Pop);
        assert_eq!(eng.record(t).result, Some(Element::new(5, 10)));
        assert_eq!(eng.record(t).status, Status::Ok);
        assert_eq!(eng.occupancy(), 0);
    }

    #[test]
    fn early_issue_is_busy() {
        let mut eng = engine(2, 4);
        eng.issue(push(1, 1)).unwrap();
        eng.step(2);
        assert_eq!(eng.issue(push(2, 2)), Err(IssueError::Busy { cycle: 2, ready_at: 4 }));
        assert_eq!(eng.completions().len(), 1);
        eng.step(2);
        assert!(eng.issue(push(2, 2)).is_ok());
    }

    #[test]
    fn invalid_commands_rejected() {
        let mut eng = engine(2, 4);
        assert!(matches!(eng.issue(push(0, 1)), Err(IssueError::InvalidCommand { .. })));
        assert!(matches!(eng.issue(push(1, 1 << 16)), Err(IssueError::InvalidCommand { .. })));
        assert!(matches!(eng.issue(Command::Delete { id: 16 }), Err(IssueError::InvalidCommand { .. })));
    }

    #[test]
    fn push_settles_within_stage_bound() {
        let mut eng = engine(4, 2);
        // Fill blocks 0..2 so a large key walks to the last block.
        for i in 1..=6 {
            settle(&mut eng, push(i, i as u64));
        }
        eng.wait_for_port();
        eng.issue(push(7, 100)).unwrap();
        let start = eng.cycle();
        assert_eq!(eng.run_until_quiescent(), 16);
        assert_eq!(eng.cycle() - start, 4 * 4);
        assert_eq!(eng.snapshot().last(), Some(&Element::new(7, 100)));
    }

    #[test]
    fn step_zero_is_identity() {
        let mut eng = engine(2, 2);
        eng.issue(push(1, 1)).unwrap();
        let before = eng.clone().global_slots();
        eng.step(0);
        assert_eq!(eng.cycle(), 0);
        assert_eq!(eng.global_slots(), before);
    }

    #[test]
    fn quiescent_engine_runs_zero_cycles() {
        let mut eng = engine(2, 2);
        assert_eq!(eng.run_until_quiescent(), 0);
    }

    #[test]
    fn pop_on_two_blocks_settles_in_eight() {
        let mut eng = engine(2, 2);
        for i in 1..=4 {
            settle(&mut eng, push(i, i as u64));
        }
        eng.wait_for_port();
        eng.issue(Command::Pop).unwrap();
        assert!(eng.run_until_quiescent() <= 8);
        assert_eq!(eng.snapshot().len(), 3);
    }

    #[test]
    fn back_to_back_pushes_share_a_window() {
        let mut eng = engine(4, 2);
        eng.enable_trace();
        for i in 1..=4 {
            settle(&mut eng, push(i, i as u64 * 10));
        }
        let base = eng.trace().len();
        eng.wait_for_port();
        let t0 = eng.cycle();
        eng.issue(push(9, 100)).unwrap();
        eng.step(4);
        eng.issue(push(8, 1)).unwrap();
        eng.run_until_quiescent();
        let window: Vec<_> = eng.trace()[base..].iter().filter(|t| t.committed == t0 + 7).collect();
        // second push at block 0 and first push at block 1 finish together, tail first
        assert_eq!(window.iter().map(|t| t.block).collect::<Vec<_>>(), vec![1, 0]);
        let ids: Vec<u32> = eng.snapshot().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![8, 1, 2, 3, 4, 9]);
    }

    #[test]
    fn peek_reads_head() {
        let mut eng = engine(2, 2);
        assert_eq!(eng.peek_head(), Element::EMPTY);
        settle(&mut eng, push(3, 5));
        settle(&mut eng, push(4, 9));
        assert_eq!(eng.peek_head(), Element::new(3, 5));
        let t = settle(&mut eng, Command::Peek);
        assert_eq!(eng.record(t).result, Some(Element::new(3, 5)));
    }

    #[test]
    fn snapshot_orders_ties_by_arrival() {
        let mut eng = engine(2, 2);
        settle(&mut eng, push(1, 5));
        settle(&mut eng, push(2, 3));
        settle(&mut eng, push(3, 5));
        assert_eq!(eng.snapshot(), vec![Element::new(2, 3), Element::new(1, 5), Element::new(3, 5)]);
        settle(&mut eng, push(1, 4));
        assert_eq!(eng.snapshot(), vec![Element::new(2, 3), Element::new(1, 4), Element::new(3, 5)]);
        assert!(Engine::new(QueueConfig::new(1, 2)).unwrap().snapshot().is_empty());
    }

    #[test]
    #[should_panic(expected = "in flight")]
    fn snapshot_in_flight_panics() {
        let mut eng = engine(2, 2);
        eng.issue(push(1, 1)).unwrap();
        eng.snapshot();
    }

    #[test]
    fn full_queue_refuses_new_ids_but_accepts_updates() {
        let mut eng = engine(1, 2);
        settle(&mut eng, push(1, 5));
        settle(&mut eng, push(2, 6));
        let t = settle(&mut eng, push(3, 1));
        assert_eq!(eng.record(t).status, Status::Full);
        let t = settle(&mut eng, push(2, 1));
        assert_eq!(eng.record(t).status, Status::Ok);
        assert_eq!(eng.snapshot(), vec![Element::new(2, 1), Element::new(1, 5)]);
        assert!(eng.dropped().is_empty());
    }

    #[test]
    fn delete_absent_is_not_found() {
        let mut eng = engine(2, 2);
        settle(&mut eng, push(1, 5));
        let t = settle(&mut eng, Command::Delete { id: 3 });
        assert_eq!(eng.record(t).status, Status::NotFound);
        let t = settle(&mut eng, Command::Delete { id: 1 });
        assert_eq!(eng.record(t).status, Status::Ok);
        assert!(eng.snapshot().is_empty());
    }
}
