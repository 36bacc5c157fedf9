//! Differential verification: seeded command generation, engine-vs-oracle
//! comparison, trace replay and quiescent-state invariant checks.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::{element_less, Element, QueueConfig};
use crate::engine::{Command, CompletionRecord, ConfigError, Engine, IssueError, Outcome, Status};
use crate::oracle::Oracle;

/// How commands are spaced on the issue port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    /// One command every `issue_interval` cycles, pipelined.
    Interval,
    /// Each command runs to quiescence before the next is issued.
    Quiescent,
}

impl Schedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Schedule::Interval => "interval",
            Schedule::Quiescent => "quiescent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    PushNew,
    PushUpdate,
    Pop,
    DeletePresent,
    DeleteAbsent,
    Peek,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::PushNew,
        OpKind::PushUpdate,
        OpKind::Pop,
        OpKind::DeletePresent,
        OpKind::DeleteAbsent,
        OpKind::Peek,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::PushNew => "push_new",
            OpKind::PushUpdate => "push_update",
            OpKind::Pop => "pop",
            OpKind::DeletePresent => "delete_present",
            OpKind::DeleteAbsent => "delete_absent",
            OpKind::Peek => "peek",
        }
    }
}

/// Relative weights of each command kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpMix {
    pub push_new: u32,
    pub push_update: u32,
    pub pop: u32,
    pub delete_present: u32,
    pub delete_absent: u32,
    pub peek: u32,
}

impl OpMix {
    pub const DEFAULT: OpMix =
        OpMix { push_new: 32, push_update: 34, pop: 10, delete_present: 18, delete_absent: 3, peek: 3 };
    pub const UPDATE_HEAVY: OpMix =
        OpMix { push_new: 30, push_update: 45, pop: 8, delete_present: 12, delete_absent: 2, peek: 3 };
    pub const DELETE_HEAVY: OpMix =
        OpMix { push_new: 40, push_update: 15, pop: 5, delete_present: 30, delete_absent: 7, peek: 3 };
    pub const FILL: OpMix =
        OpMix { push_new: 70, push_update: 20, pop: 3, delete_present: 5, delete_absent: 1, peek: 1 };

    fn weight(&self, kind: OpKind) -> u32 {
        match kind {
            OpKind::PushNew => self.push_new,
            OpKind::PushUpdate => self.push_update,
            OpKind::Pop => self.pop,
            OpKind::DeletePresent => self.delete_present,
            OpKind::DeleteAbsent => self.delete_absent,
            OpKind::Peek => self.peek,
        }
    }

    pub fn total(&self) -> u32 {
        OpKind::ALL.iter().map(|&k| self.weight(k)).sum()
    }

    fn pick(&self, rng: &mut impl Rng) -> OpKind {
        let mut x = rng.gen_range(0..self.total());
        for kind in OpKind::ALL {
            let w = self.weight(kind);
            if x < w {
                return kind;
            }
            x -= w;
        }
        unreachable!()
    }
}

impl Default for OpMix {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzPlan {
    pub seed: u64,
    pub n_ops: usize,
    pub mix: OpMix,
    /// Keys are drawn from `0..=data_max`.
    pub data_max: u64,
    pub config: QueueConfig,
    pub schedule: Schedule,
    /// Ops between quiescent snapshot comparisons (a final one always runs).
    pub checkpoint_every: usize,
    /// Corrupt the array at the first checkpoint that holds an element.
    pub inject_fault: bool,
    /// Also issue commands the port must refuse or that hit capacity.
    pub hostile: bool,
}

impl FuzzPlan {
    /// Twice the capacity in operations, keys drawn from a range as wide as
    /// the capacity so ties are common.
    pub fn new(config: QueueConfig, seed: u64) -> Self {
        let capacity = config.capacity();
        Self {
            seed,
            n_ops: 2 * capacity,
            mix: OpMix::DEFAULT,
            data_max: (capacity as u64).min(config.max_data()),
            config,
            schedule: Schedule::Interval,
            checkpoint_every: capacity.max(1),
            inject_fault: false,
            hostile: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.config.validate().map_err(|v| HarnessError::Config(ConfigError(v)))?;
        if self.mix.total() == 0 {
            return Err(HarnessError::Plan("op mix weights are all zero".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Plan("checkpoint interval must be positive".into()));
        }
        if self.data_max > self.config.max_data() {
            return Err(HarnessError::Plan(format!(
                "data_max {} exceeds {}-bit data",
                self.data_max, self.config.data_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid fuzz plan: {0}")]
    Plan(String),
    #[error("record {index} (`{command}`): {reason}")]
    BadCommand { index: usize, command: Command, reason: String },
}

/// Per-kind command counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts([usize; 6]);

impl OpCounts {
    fn bump(&mut self, kind: OpKind) {
        self.0[kind as usize] += 1;
    }

    pub fn get(&self, kind: OpKind) -> usize {
        self.0[kind as usize]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn updates(&self) -> usize {
        self.get(OpKind::PushUpdate)
    }

    pub fn deletes(&self) -> usize {
        self.get(OpKind::DeletePresent) + self.get(OpKind::DeleteAbsent)
    }
}

/// A command list with the oracle's verdict on every command and its
/// snapshot at each checkpoint.
#[derive(Debug, Clone)]
pub struct Workload {
    pub commands: Vec<Command>,
    pub expected: Vec<Outcome>,
    /// `(index of last command before the checkpoint, oracle snapshot)`.
    pub checkpoints: Vec<(usize, Vec<Element>)>,
    pub kinds: OpCounts,
}

fn oracle_apply(oracle: &mut Oracle, capacity: usize, cmd: Command) -> Outcome {
    let (status, element) = match cmd {
        Command::Push { id, data } => {
            if oracle.contains(id) || oracle.len() < capacity {
                oracle.push(id, data);
                (Status::Ok, None)
            } else {
                (Status::Full, None)
            }
        }
        Command::Pop => match oracle.pop() {
            Some(e) => (Status::Ok, Some(e)),
            None => (Status::Empty, Some(Element::EMPTY)),
        },
        Command::Delete { id } => (if oracle.delete(id) { Status::Ok } else { Status::NotFound }, None),
        Command::Peek => match oracle.peek() {
            Some(e) => (Status::Ok, Some(e)),
            None => (Status::Empty, Some(Element::EMPTY)),
        },
    };
    Outcome { command: cmd, status, element }
}

fn absent_id(rng: &mut impl Rng, oracle: &Oracle, max_id: u32) -> Option<u32> {
    if oracle.len() >= max_id as usize {
        return None;
    }
    loop {
        let id = rng.gen_range(1..=max_id);
        if !oracle.contains(id) {
            return Some(id);
        }
    }
}

fn present_id(rng: &mut impl Rng, oracle: &Oracle) -> Option<u32> {
    (!oracle.is_empty()).then(|| oracle.entries()[rng.gen_range(0..oracle.len())].id)
}

/// Deterministically generate a workload that honours engine preconditions
/// (no new ID at capacity unless the plan is hostile).
pub fn generate(plan: &FuzzPlan) -> Workload {
    let cfg = &plan.config;
    let capacity = cfg.capacity();
    let max_id = cfg.max_id();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut oracle = Oracle::new();
    let mut wl = Workload {
        commands: Vec::with_capacity(plan.n_ops),
        expected: Vec::with_capacity(plan.n_ops),
        checkpoints: Vec::new(),
        kinds: OpCounts::default(),
    };

    for i in 0..plan.n_ops {
        let mut kind = plan.mix.pick(&mut rng);
        // Fall back to a kind whose precondition holds.
        if kind == OpKind::PushNew && oracle.len() >= capacity && !plan.hostile {
            kind = OpKind::PushUpdate;
        }
        if matches!(kind, OpKind::PushUpdate | OpKind::DeletePresent) && oracle.is_empty() {
            kind = OpKind::PushNew;
        }
        if matches!(kind, OpKind::PushNew | OpKind::DeleteAbsent) && oracle.len() >= max_id as usize {
            kind = if kind == OpKind::PushNew { OpKind::PushUpdate } else { OpKind::DeletePresent };
        }
        let data = rng.gen_range(0..=plan.data_max);
        let cmd = match kind {
            OpKind::PushNew => Command::Push { id: absent_id(&mut rng, &oracle, max_id).unwrap(), data },
            OpKind::PushUpdate => Command::Push { id: present_id(&mut rng, &oracle).unwrap(), data },
            OpKind::Pop => Command::Pop,
            OpKind::DeletePresent => Command::Delete { id: present_id(&mut rng, &oracle).unwrap() },
            OpKind::DeleteAbsent => Command::Delete { id: absent_id(&mut rng, &oracle, max_id).unwrap() },
            OpKind::Peek => Command::Peek,
        };
        wl.kinds.bump(kind);
        wl.expected.push(oracle_apply(&mut oracle, capacity, cmd));
        wl.commands.push(cmd);
        if (i + 1) % plan.checkpoint_every == 0 || i + 1 == plan.n_ops {
            wl.checkpoints.push((i, oracle.snapshot()));
        }
    }
    wl
}

/// Expected outcomes and final snapshot of `commands` under the oracle.
pub fn oracle_replay(commands: &[Command], capacity: usize) -> (Vec<Outcome>, Vec<Element>) {
    let mut oracle = Oracle::new();
    let outcomes = commands.iter().map(|&c| oracle_apply(&mut oracle, capacity, c)).collect();
    (outcomes, oracle.snapshot())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub op_index: usize,
    pub expected: String,
    pub actual: String,
    /// Commands up to and including the divergent one; filled for the first
    /// mismatch only.
    pub prefix: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvariantViolation {
    NotQuiescent,
    Unsorted { position: usize },
    EmptyBeforeValid { position: usize },
    DuplicateId { id: u32 },
    OccupancyMismatch { stored: usize, tracked: usize },
    MembershipMismatch { id: u32 },
    DroppedElements { count: usize },
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotQuiescent => f.write_str("not quiescent"),
            Self::Unsorted { position } => write!(f, "unsorted at global position {position}"),
            Self::EmptyBeforeValid { position } => write!(f, "empty slot before a valid one at global position {position}"),
            Self::DuplicateId { id } => write!(f, "duplicate id {id}"),
            Self::OccupancyMismatch { stored, tracked } => {
                write!(f, "occupancy mismatch: {stored} stored, {tracked} tracked")
            }
            Self::MembershipMismatch { id } => write!(f, "stored id {id} missing from membership"),
            Self::DroppedElements { count } => write!(f, "{count} element(s) fell off the last block"),
        }
    }
}

/// Structural invariants of a quiescent engine.
pub fn check_invariants(engine: &Engine) -> Vec<InvariantViolation> {
    if !engine.is_quiescent() {
        return vec![InvariantViolation::NotQuiescent];
    }
    check_slots(engine, &engine.global_slots())
}

fn check_slots(engine: &Engine, slots: &[Element]) -> Vec<InvariantViolation> {
    let mut out = Vec::new();
    if let Some(first_empty) = slots.iter().position(Element::is_empty) {
        if let Some(off) = slots[first_empty..].iter().position(Element::is_valid) {
            out.push(InvariantViolation::EmptyBeforeValid { position: first_empty + off });
        }
    }
    let valid: Vec<(usize, Element)> = slots.iter().copied().enumerate().filter(|(_, e)| e.is_valid()).collect();
    if let Some(w) = valid.windows(2).find(|w| element_less(w[1].1, w[0].1)) {
        out.push(InvariantViolation::Unsorted { position: w[1].0 });
    }
    let mut seen = HashSet::new();
    for (_, e) in &valid {
        if !seen.insert(e.id) {
            out.push(InvariantViolation::DuplicateId { id: e.id });
        }
        if !engine.contains(e.id) {
            out.push(InvariantViolation::MembershipMismatch { id: e.id });
        }
    }
    if valid.len() != engine.occupancy() {
        out.push(InvariantViolation::OccupancyMismatch { stored: valid.len(), tracked: engine.occupancy() });
    }
    if !engine.dropped().is_empty() {
        out.push(InvariantViolation::DroppedElements { count: engine.dropped().len() });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub seed: u64,
    pub schedule: Schedule,
    pub ops_executed: usize,
    pub mismatches: Vec<Mismatch>,
    pub violations: Vec<InvariantViolation>,
    pub cycles: u64,
    pub max_occupancy: usize,
    pub kinds: OpCounts,
    /// Outcomes of every executed command, in issue order.
    pub outcomes: Vec<Outcome>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        let kinds: Vec<String> = OpKind::ALL.iter().map(|k| format!("{}={}", k.name(), self.kinds.get(*k))).collect();
        format!(
            "result={} seed={} schedule={} ops={} cycles={} max_occupancy={} mismatches={} violations={} {}",
            if self.passed() { "pass" } else { "fail" },
            self.seed,
            self.schedule.as_str(),
            self.ops_executed,
            self.cycles,
            self.max_occupancy,
            self.mismatches.len(),
            self.violations.len(),
            kinds.join(" ")
        )
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.summary())?;
        for m in &self.mismatches {
            writeln!(f, "mismatch op={} expected=[{}] actual=[{}]", m.op_index, m.expected, m.actual)?;
            if !m.prefix.is_empty() {
                let prefix: Vec<String> = m.prefix.iter().map(Command::to_string).collect();
                writeln!(f, "prefix {}", prefix.join("; "))?;
            }
        }
        for v in &self.violations {
            writeln!(f, "violation {v}")?;
        }
        Ok(())
    }
}

const MAX_REPORTED_MISMATCHES: usize = 16;

fn issue_on(engine: &mut Engine, cmd: Command, schedule: Schedule) -> Result<(), IssueError> {
    engine.wait_for_port();
    engine.issue(cmd)?;
    if schedule == Schedule::Quiescent {
        engine.run_until_quiescent();
    }
    Ok(())
}

fn inject_fault(engine: &mut Engine) -> bool {
    // Swapping the head with slot 1 breaks order (two elements) or leaves a
    // gap (one element).
    if engine.occupancy() == 0 {
        return false;
    }
    engine.swap_slots(0, 1);
    true
}

/// Run a plan against engine and oracle and report the first divergence.
pub fn fuzz(plan: &FuzzPlan) -> Result<Report, HarnessError> {
    plan.validate()?;
    let wl = generate(plan);
    let mut engine = Engine::new(plan.config)?;
    let mut report = Report {
        seed: plan.seed,
        schedule: plan.schedule,
        ops_executed: 0,
        mismatches: Vec::new(),
        violations: Vec::new(),
        cycles: 0,
        max_occupancy: 0,
        kinds: wl.kinds,
        outcomes: Vec::new(),
    };
    let mut fault_pending = plan.inject_fault;
    let mut checked = 0;
    let mut checkpoints = wl.checkpoints.iter().peekable();

    for (i, &cmd) in wl.commands.iter().enumerate() {
        engine.wait_for_port();
        engine.issue(cmd).map_err(|e| HarnessError::BadCommand { index: i, command: cmd, reason: e.to_string() })?;
        if plan.hostile {
            // The port must refuse a second command in the same cycle.
            if engine.issue(Command::Peek).is_ok() {
                report.mismatches.push(Mismatch {
                    op_index: i,
                    expected: "busy".into(),
                    actual: "accepted".into(),
                    prefix: Vec::new(),
                });
            }
        }
        if plan.schedule == Schedule::Quiescent {
            engine.run_until_quiescent();
        }
        report.ops_executed += 1;
        report.max_occupancy = report.max_occupancy.max(engine.occupancy());

        let Some(&&(cp, ref want_snapshot)) = checkpoints.peek() else { continue };
        if cp != i {
            continue;
        }
        checkpoints.next();
        engine.run_until_quiescent();
        if fault_pending && inject_fault(&mut engine) {
            fault_pending = false;
        }

        let records = engine.completions();
        for (j, record) in records.iter().enumerate().take(i + 1).skip(checked) {
            let got = record.outcome();
            if got != wl.expected[j] {
                push_mismatch(&mut report, &wl.commands, j, wl.expected[j].to_string(), got.to_string());
            }
        }
        checked = i + 1;

        let got_snapshot = engine.snapshot();
        if &got_snapshot != want_snapshot {
            let pos = got_snapshot
                .iter()
                .zip(want_snapshot)
                .position(|(a, b)| a != b)
                .unwrap_or(got_snapshot.len().min(want_snapshot.len()));
            let show = |s: &[Element]| s.get(pos).map_or("end".to_string(), Element::to_string);
            push_mismatch(
                &mut report,
                &wl.commands,
                i,
                format!("snapshot[{pos}]={} len={}", show(want_snapshot), want_snapshot.len()),
                format!("snapshot[{pos}]={} len={}", show(&got_snapshot), got_snapshot.len()),
            );
        }
        report.violations.extend(check_invariants(&engine));
        if !report.passed() {
            break;
        }
    }
    engine.run_until_quiescent();
    report.cycles = engine.cycle();
    report.outcomes = engine.completions().iter().map(CompletionRecord::outcome).collect();
    Ok(report)
}

/// Run plans on worker threads, one engine each; reports come back in plan
/// order.
pub fn fuzz_all(plans: &[FuzzPlan], jobs: usize) -> Result<Vec<Report>, HarnessError> {
    let jobs = match jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(plans.len())
    .max(1);
    let chunk = plans.len().div_ceil(jobs).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = plans
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(fuzz).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut all = Vec::with_capacity(plans.len());
        for h in handles {
            all.extend(h.join().expect("fuzz worker panicked")?);
        }
        Ok(all)
    })
}

fn push_mismatch(report: &mut Report, commands: &[Command], op_index: usize, expected: String, actual: String) {
    if report.mismatches.len() >= MAX_REPORTED_MISMATCHES {
        return;
    }
    let prefix = if report.mismatches.is_empty() { commands[..=op_index].to_vec() } else { Vec::new() };
    report.mismatches.push(Mismatch { op_index, expected, actual, prefix });
}

/// All records and the final snapshot of one replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub records: Vec<CompletionRecord>,
    pub snapshot: Vec<Element>,
    pub cycles: u64,
}

impl Replay {
    pub fn outcomes(&self) -> Vec<Outcome> {
        self.records.iter().map(CompletionRecord::outcome).collect()
    }
}

/// Execute a command list on a fresh engine.
pub fn replay(commands: &[Command], cfg: QueueConfig, schedule: Schedule) -> Result<Replay, HarnessError> {
    let mut engine = Engine::new(cfg)?;
    for (index, &command) in commands.iter().enumerate() {
        engine
            .validate_command(command)
            .map_err(|e| HarnessError::BadCommand { index, command, reason: e.to_string() })?;
    }
    for (index, &command) in commands.iter().enumerate() {
        issue_on(&mut engine, command, schedule)
            .map_err(|e| HarnessError::BadCommand { index, command, reason: e.to_string() })?;
    }
    engine.run_until_quiescent();
    Ok(Replay { records: engine.completions().to_vec(), snapshot: engine.snapshot(), cycles: engine.cycle() })
}

/// Result of a saturated-issue run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchStats {
    pub ops: usize,
    pub interval: u64,
    /// Cycles spanned by the issue slots of all commands.
    pub cycles: u64,
    /// Extra cycles until the last command left the array.
    pub drain_cycles: u64,
    pub completed: usize,
    /// Issue attempts the port refused; zero when the schedule is honoured.
    pub busy: usize,
}

impl BenchStats {
    pub fn per_thousand_cycles(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.completed as f64 * 1000.0 / self.cycles as f64
        }
    }
}

/// Issue a seeded workload at exactly one command per issue interval,
/// never waiting on the port.
pub fn bench(cfg: QueueConfig, ops: usize, seed: u64) -> Result<BenchStats, HarnessError> {
    let mut plan = FuzzPlan::new(cfg, seed);
    plan.n_ops = ops;
    plan.validate()?;
    let wl = generate(&plan);
    let mut engine = Engine::new(cfg)?;
    let interval = cfg.issue_interval;
    let start = engine.cycle();
    let mut busy = 0;
    for (index, &command) in wl.commands.iter().enumerate() {
        match engine.issue(command) {
            Ok(_) => {}
            Err(IssueError::Busy { .. }) => {
                busy += 1;
                engine.wait_for_port();
                engine.issue(command).map_err(|e| HarnessError::BadCommand { index, command, reason: e.to_string() })?;
            }
            Err(e) => return Err(HarnessError::BadCommand { index, command, reason: e.to_string() }),
        }
        engine.step(interval);
    }
    let cycles = engine.cycle() - start;
    let drain_cycles = engine.run_until_quiescent();
    let completed = engine.completions().iter().filter(|r| r.done).count();
    Ok(BenchStats { ops, interval, cycles, drain_cycles, completed, busy })
}
