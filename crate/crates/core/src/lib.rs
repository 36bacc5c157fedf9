//! Cycle-accurate behavioral model of a hybrid systolic-array /
//! shift-register priority queue with enqueue, dequeue, arbitrary delete,
//! in-queue update and peek, plus a golden reference model, a differential
//! fuzzing harness, and a timer-queue facade.

pub mod block;
pub mod cli;
pub mod element;
pub mod encoding;
pub mod engine;
pub mod harness;
pub mod oracle;
pub mod timer;

pub use block::{BlockEffects, BlockState, OpBundle, PushScenario};
pub use element::{element_less, validate_config, ConfigViolation, Element, FlagVector, QueueConfig};
pub use encoding::ControlSignals;
pub use engine::{Command, CompletionRecord, ConfigError, Engine, IssueError, Outcome, Status, Ticket};
pub use harness::{bench, check_invariants, fuzz, fuzz_all, replay, BenchStats, FuzzPlan, OpMix, Report, Schedule};
pub use oracle::Oracle;
pub use timer::{ArmOutcome, ExpiryEvent, TimerQueue};
