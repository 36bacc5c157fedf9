//! `hpq run | fuzz | bench`.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input or configuration
//! error.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::element::{min_id_width, Element, QueueConfig};
use crate::engine::{Command, CompletionRecord, ConfigError};
use crate::harness::{self, FuzzPlan, HarnessError, OpMix, Schedule};
use crate::timer::{TimerError, TimerQueue};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hpq", version, about = "Cycle-accurate hybrid systolic/shift-register priority queue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Replay a trace file and print one result line per record.
    Run {
        trace: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Run each command to completion before issuing the next.
        #[arg(long, value_enum, default_value_t = ScheduleArg::Interval)]
        schedule: ScheduleArg,
    },
    /// Differential fuzz against the reference model.
    Fuzz(FuzzArgs),
    /// Saturated-issue throughput.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 10_000)]
        ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Number of systolic blocks.
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    /// Shift-register slots per block.
    #[arg(long, default_value_t = 4)]
    pub slots: usize,
    #[arg(long, default_value_t = 16)]
    pub data_width: u32,
    /// Defaults to ceil(log2(capacity + 1)).
    #[arg(long)]
    pub id_width: Option<u32>,
    /// Cycles between command issues.
    #[arg(long, default_value_t = 4)]
    pub interval: u64,
}

impl ConfigArgs {
    pub fn config(&self) -> Result<QueueConfig, ConfigError> {
        let capacity = self.blocks.saturating_mul(self.slots);
        let cfg = QueueConfig {
            n_blocks: self.blocks,
            slots_per_block: self.slots,
            id_width: self.id_width.unwrap_or_else(|| min_id_width(capacity)),
            data_width: self.data_width,
            issue_interval: self.interval,
        };
        cfg.validate().map_err(ConfigError)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Interval,
    Quiescent,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Interval => Schedule::Interval,
            ScheduleArg::Quiescent => Schedule::Quiescent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MixArg {
    Default,
    UpdateHeavy,
    DeleteHeavy,
    Fill,
}

impl From<MixArg> for OpMix {
    fn from(m: MixArg) -> Self {
        match m {
            MixArg::Default => OpMix::DEFAULT,
            MixArg::UpdateHeavy => OpMix::UPDATE_HEAVY,
            MixArg::DeleteHeavy => OpMix::DELETE_HEAVY,
            MixArg::Fill => OpMix::FILL,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FuzzArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run this many consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Operations per seed; defaults to ceil(ratio * capacity).
    #[arg(long)]
    pub ops: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value_t = MixArg::Default)]
    pub mix: MixArg,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Interval)]
    pub schedule: ScheduleArg,
    /// Corrupt the array once to prove the checker notices.
    #[arg(long)]
    pub inject_fault: bool,
    /// Also issue over-capacity pushes and early port requests.
    #[arg(long)]
    pub hostile: bool,
    /// Worker threads for multi-seed runs (0 = available parallelism).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Parse `args` (program name first) and execute, writing to `out`/`err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = match cli.command {
        Cmd::Run { trace, config, schedule } => cmd_run(&trace, &config, schedule.into(), out),
        Cmd::Fuzz(args) => cmd_fuzz(&args, out),
        Cmd::Bench { config, ops, seed } => cmd_bench(&config, ops, seed, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(HarnessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One parsed trace line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    Queue(Command),
    Arm { id: u32, deadline: u64 },
    Disarm { id: u32 },
    Advance { delta: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    Queue,
    Timer,
}

impl TraceOp {
    pub fn dialect(&self) -> Dialect {
        match self {
            TraceOp::Queue(_) => Dialect::Queue,
            _ => Dialect::Timer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    /// 1-based line number in the source.
    pub line: usize,
    pub op: TraceOp,
}

/// Parse a trace. Blank lines and lines starting with `#` are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, CliError> {
    let mut records = Vec::new();
    let mut dialect: Option<(Dialect, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let op = parse_line(s).map_err(|reason| CliError::Trace { line, reason })?;
        match dialect {
            None => dialect = Some((op.dialect(), line)),
            Some((d, first)) if d != op.dialect() => {
                return Err(CliError::Trace {
                    line,
                    reason: format!("mixes queue and timer operations (dialect set on line {first})"),
                })
            }
            _ => {}
        }
        records.push(TraceRecord { line, op });
    }
    Ok(records)
}

fn parse_line(s: &str) -> Result<TraceOp, String> {
    let fields: Vec<&str> = s.split_whitespace().collect();
    let (op, args) = (fields[0], &fields[1..]);
    let want = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{op}` takes {n} field(s), got {}", args.len()))
        }
    };
    let id = |s: &str| s.parse::<u32>().map_err(|_| format!("bad id `{s}`"));
    let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| format!("bad {what} `{s}`"));
    Ok(match op {
        "push" => {
            want(2)?;
            TraceOp::Queue(Command::Push { id: id(args[0])?, data: num(args[1], "data")? })
        }
        "pop" => {
            want(0)?;
            TraceOp::Queue(Command::Pop)
        }
        "delete" => {
            want(1)?;
            TraceOp::Queue(Command::Delete { id: id(args[0])? })
        }
        "peek" => {
            want(0)?;
            TraceOp::Queue(Command::Peek)
        }
        "arm" => {
            want(2)?;
            TraceOp::Arm { id: id(args[0])?, deadline: num(args[1], "deadline")? }
        }
        "disarm" => {
            want(1)?;
            TraceOp::Disarm { id: id(args[0])? }
        }
        "advance" => {
            want(1)?;
            TraceOp::Advance { delta: num(args[0], "delta")? }
        }
        other => return Err(format!("unknown op `{other}`")),
    })
}

/// One output record: `line= cycle= op= status= id= data=`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultLine {
    pub line: usize,
    pub cycle: u64,
    pub op: &'static str,
    pub status: String,
    pub id: Option<u32>,
    pub data: Option<u64>,
}

impl fmt::Display for ResultLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        write!(
            f,
            "line={} cycle={} op={} status={} id={} data={}",
            self.line,
            self.cycle,
            self.op,
            self.status,
            opt(self.id.map(|v| v.to_string())),
            opt(self.data.map(|v| v.to_string()))
        )
    }
}

fn queue_line(line: usize, rec: &CompletionRecord) -> ResultLine {
    let (id, data) = match rec.command {
        Command::Push { id, data } => (Some(id), Some(data)),
        Command::Delete { id } => (Some(id), None),
        Command::Pop | Command::Peek => match rec.result.and_then(Element::valid) {
            Some(e) => (Some(e.id), Some(e.data)),
            None => (None, None),
        },
    };
    ResultLine {
        line,
        cycle: rec.issue_cycle,
        op: rec.command.name(),
        status: rec.status.to_string(),
        id,
        data,
    }
}

/// Replay a parsed trace; every command is validated before any runs.
pub fn execute_trace(
    records: &[TraceRecord],
    cfg: QueueConfig,
    schedule: Schedule,
) -> Result<Vec<ResultLine>, CliError> {
    let Some(first) = records.first() else { return Ok(Vec::new()) };
    match first.op.dialect() {
        Dialect::Queue => {
            let commands: Vec<Command> = records
                .iter()
                .map(|r| match r.op {
                    TraceOp::Queue(c) => c,
                    _ => unreachable!("dialect checked by the parser"),
                })
                .collect();
            let replay = harness::replay(&commands, cfg, schedule).map_err(|e| match e {
                HarnessError::BadCommand { index, reason, .. } => CliError::Trace { line: records[index].line, reason },
                other => CliError::Harness(other),
            })?;
            Ok(replay.records.iter().zip(records).map(|(rec, r)| queue_line(r.line, rec)).collect())
        }
        Dialect::Timer => execute_timer(records, cfg),
    }
}

fn execute_timer(records: &[TraceRecord], cfg: QueueConfig) -> Result<Vec<ResultLine>, CliError> {
    // Static checks first so a bad line produces no partial output.
    let mut clock: u64 = 0;
    for r in records {
        let bad = |reason: String| Err(CliError::Trace { line: r.line, reason });
        match r.op {
            TraceOp::Arm { id, deadline } => {
                if id == 0 || id > cfg.max_id() {
                    return bad(format!("id {id} outside 1..={}", cfg.max_id()));
                }
                if deadline > cfg.max_data() {
                    return bad(format!("deadline exceeds {} bits", cfg.data_width));
                }
            }
            TraceOp::Advance { delta } => match clock.checked_add(delta).filter(|&t| t <= cfg.max_data()) {
                Some(t) => clock = t,
                None => return bad(format!("clock overflows {} bits", cfg.data_width)),
            },
            _ => {}
        }
    }

    let mut timers = TimerQueue::new(cfg)?;
    let mut out = Vec::new();
    for r in records {
        let err = |e: TimerError| CliError::Trace { line: r.line, reason: e.to_string() };
        match r.op {
            TraceOp::Arm { id, deadline } => {
                let outcome = timers.arm(id, deadline).map_err(err)?;
                out.push(ResultLine {
                    line: r.line,
                    cycle: last_issue(&timers),
                    op: "arm",
                    status: outcome.to_string(),
                    id: Some(id),
                    data: Some(deadline),
                });
            }
            TraceOp::Disarm { id } => {
                let found = timers.disarm(id).map_err(err)?;
                out.push(ResultLine {
                    line: r.line,
                    cycle: timers.engine().cycle(),
                    op: "disarm",
                    status: if found { "ok" } else { "not_found" }.into(),
                    id: Some(id),
                    data: None,
                });
            }
            TraceOp::Advance { delta } => {
                let events = timers.advance(delta).map_err(err)?;
                out.push(ResultLine {
                    line: r.line,
                    cycle: timers.engine().cycle(),
                    op: "advance",
                    status: "ok".into(),
                    id: None,
                    data: Some(timers.now()),
                });
                out.extend(events.iter().map(|e| ResultLine {
                    line: r.line,
                    cycle: e.cycle,
                    op: "expire",
                    status: "ok".into(),
                    id: Some(e.id),
                    data: Some(e.deadline),
                }));
            }
            TraceOp::Queue(_) => unreachable!("dialect checked by the parser"),
        }
    }
    Ok(out)
}

fn last_issue(timers: &TimerQueue) -> u64 {
    timers.engine().completions().last().map_or(0, |r| r.issue_cycle)
}

fn cmd_run(path: &PathBuf, config: &ConfigArgs, schedule: Schedule, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = config.config()?;
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Read { path: path.display().to_string(), source })?;
    let records = parse_trace(&text)?;
    for line in execute_trace(&records, cfg, schedule)? {
        writeln!(out, "{line}")?;
    }
    Ok(EXIT_OK)
}

fn cmd_fuzz(args: &FuzzArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = args.config.config()?;
    if !(args.ratio.is_finite() && args.ratio > 0.0) {
        return Err(CliError::Usage(format!("--ratio must be a positive number, got {}", args.ratio)));
    }
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let n_ops = args.ops.unwrap_or_else(|| (args.ratio * cfg.capacity() as f64).ceil() as usize);
    let plans: Vec<FuzzPlan> = (0..args.seeds)
        .map(|k| {
            let mut plan = FuzzPlan::new(cfg, args.seed.wrapping_add(k));
            plan.n_ops = n_ops;
            plan.mix = args.mix.into();
            plan.schedule = args.schedule.into();
            plan.inject_fault = args.inject_fault;
            plan.hostile = args.hostile;
            plan
        })
        .collect();
    let reports = harness::fuzz_all(&plans, args.jobs).map_err(CliError::Harness)?;
    for r in &reports {
        write!(out, "{r}")?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if reports.len() > 1 {
        writeln!(out, "seeds={} passed={} failed={}", reports.len(), reports.len() - failed, failed)?;
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_bench(config: &ConfigArgs, ops: usize, seed: u64, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = config.config()?;
    let start = Instant::now();
    let stats = harness::bench(cfg, ops, seed).map_err(CliError::Harness)?;
    let wall = start.elapsed();
    writeln!(
        out,
        "bench ops={} interval={} cycles={} drain_cycles={} completed={} busy={} per_1000_cycles={:.3} wall_ms={:.3}",
        stats.ops,
        stats.interval,
        stats.cycles,
        stats.drain_cycles,
        stats.completed,
        stats.busy,
        stats.per_thousand_cycles(),
        wall.as_secs_f64() * 1e3
    )?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let t = parse_trace("push 7 21\n\n# note\npop\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1], TraceRecord { line: 4, op: TraceOp::Queue(Command::Pop) });
        assert!(parse_trace("").unwrap().is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        for (text, line) in [("pop extra_field", 1), ("push 1 2\npush 1", 2), ("fly 3", 1), ("push x 1", 1), ("push 1 2\nadvance 3", 2)] {
            match parse_trace(text) {
                Err(CliError::Trace { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn queue_trace_results() {
        let t = parse_trace("push 7 21\npush 9 9\npop").unwrap();
        let lines = execute_trace(&t, QueueConfig::new(2, 4), Schedule::Interval).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2].to_string(), "line=3 cycle=8 op=pop status=ok id=9 data=9");
        assert_eq!(lines[0].to_string(), "line=1 cycle=0 op=push status=ok id=7 data=21");
    }

    #[test]
    fn timer_trace_results() {
        let t = parse_trace("arm 1 10\narm 2 5\nadvance 7\ndisarm 1\n").unwrap();
        let lines: Vec<String> = execute_trace(&t, QueueConfig::new(2, 4), Schedule::Interval)
            .unwrap()
            .iter()
            .map(ToString::to_string)
            .collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("line=3 ") && lines[2].contains("op=advance") && lines[2].ends_with("data=7"));
        assert!(lines[3].contains("op=expire status=ok id=2 data=5"));
        assert!(lines[4].contains("op=disarm status=ok id=1"));
    }

    #[test]
    fn invalid_field_values_name_the_line() {
        let cfg = QueueConfig::new(2, 4);
        let t = parse_trace("push 1 2\npush 0 3").unwrap();
        assert!(matches!(execute_trace(&t, cfg, Schedule::Interval), Err(CliError::Trace { line: 2, .. })));
        let t = parse_trace("arm 1 2\nadvance 70000").unwrap();
        assert!(matches!(execute_trace(&t, cfg, Schedule::Interval), Err(CliError::Trace { line: 2, .. })));
    }

    #[test]
    fn fuzz_default_ops() {
        let mut out = Vec::new();
        let code = run(["hpq", "fuzz", "--blocks", "4", "--slots", "4", "--seed", "1"], &mut out, &mut Vec::new());
        assert_eq!(code, EXIT_OK);
        assert!(String::from_utf8(out).unwrap().contains(" ops=32 "));
    }

    #[test]
    fn bad_config_exits_2() {
        let mut err = Vec::new();
        let code = run(["hpq", "fuzz", "--slots", "64"], &mut Vec::new(), &mut err);
        assert_eq!(code, EXIT_INPUT);
        assert!(!err.is_empty());
        assert_eq!(run(["hpq", "bench", "--interval", "3"], &mut Vec::new(), &mut Vec::new()), EXIT_INPUT);
        assert_eq!(run(["hpq", "fuzz", "--ratio", "0"], &mut Vec::new(), &mut Vec::new()), EXIT_INPUT);
        assert_eq!(run(["hpq", "nonsense"], &mut Vec::new(), &mut Vec::new()), EXIT_INPUT);
    }

    #[test]
    fn multi_seed_is_ordered_and_deterministic() {
        let args = ["hpq", "fuzz", "--blocks", "2", "--slots", "4", "--seeds", "8", "--jobs", "3"];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        assert_eq!(run(args, &mut a, &mut Vec::new()), EXIT_OK);
        assert_eq!(run(args, &mut b, &mut Vec::new()), EXIT_OK);
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.ends_with("seeds=8 passed=8 failed=0\n"));
        assert!(text.lines().next().unwrap().contains("seed=0 "));
    }
}
