//! End-to-end engine behaviour against a plain sorted-list model.

use hpq::harness::{self, FuzzPlan, Schedule};
use hpq::{check_invariants, Command, Element, Engine, QueueConfig, Status};
use proptest::prelude::*;

/// `(id, data)` in queue order; updates re-enter behind equal keys.
#[derive(Default)]
struct ListModel(Vec<(u32, u64)>);

impl ListModel {
    fn apply(&mut self, cmd: Command, capacity: usize) -> (Status, Option<Element>) {
        match cmd {
            Command::Push { id, data } => {
                let present = self.0.iter().any(|e| e.0 == id);
                if !present && self.0.len() == capacity {
                    return (Status::Full, None);
                }
                self.0.retain(|e| e.0 != id);
                let at = self.0.iter().take_while(|e| e.1 <= data).count();
                self.0.insert(at, (id, data));
                (Status::Ok, None)
            }
            Command::Pop if self.0.is_empty() => (Status::Empty, Some(Element::EMPTY)),
            Command::Pop => {
                let (id, data) = self.0.remove(0);
                (Status::Ok, Some(Element::new(id, data)))
            }
            Command::Peek => match self.0.first() {
                Some(&(id, data)) => (Status::Ok, Some(Element::new(id, data))),
                None => (Status::Empty, Some(Element::EMPTY)),
            },
            Command::Delete { id } => {
                let before = self.0.len();
                self.0.retain(|e| e.0 != id);
                (if self.0.len() < before { Status::Ok } else { Status::NotFound }, None)
            }
        }
    }
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        4 => (1u32..12, 0u64..6).prop_map(|(id, data)| Command::Push { id, data }),
        1 => Just(Command::Pop),
        2 => (1u32..12).prop_map(|id| Command::Delete { id }),
        1 => Just(Command::Peek),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Includes over-capacity pushes and deletes of absent ids.
    #[test]
    fn engine_matches_list_model(cmds in proptest::collection::vec(command(), 0..80), quiescent in any::<bool>()) {
        let cfg = QueueConfig::new(3, 3);
        let schedule = if quiescent { Schedule::Quiescent } else { Schedule::Interval };
        let run = harness::replay(&cmds, cfg, schedule).unwrap();
        let mut model = ListModel::default();
        for (rec, &cmd) in run.records.iter().zip(&cmds) {
            let (status, result) = model.apply(cmd, cfg.capacity());
            prop_assert_eq!((rec.status, rec.result), (status, result), "{}", cmd);
        }
        let want: Vec<Element> = model.0.iter().map(|&(id, data)| Element::new(id, data)).collect();
        prop_assert_eq!(run.snapshot, want);
    }
}

#[test]
fn two_slot_blocks() {
    assert!(Engine::new(QueueConfig::new(5, 1)).is_err());
    let cfg = QueueConfig::new(5, 2);
    for seed in 0..50 {
        let r = harness::fuzz(&FuzzPlan::new(cfg, seed)).unwrap();
        assert!(r.passed(), "{r}");
    }
}

#[test]
fn single_block() {
    let cfg = QueueConfig::new(1, 8);
    for seed in 0..50 {
        let r = harness::fuzz(&FuzzPlan::new(cfg, seed)).unwrap();
        assert!(r.passed(), "{r}");
    }
}

#[test]
fn wide_blocks_and_wide_keys() {
    let cfg = QueueConfig::new(3, 63).with_data_width(64).with_id_width(32);
    let mut plan = FuzzPlan::new(cfg, 4);
    plan.data_max = u64::MAX;
    let r = harness::fuzz(&plan).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn larger_intervals_agree() {
    let cfg = QueueConfig::new(6, 4);
    let wl = harness::generate(&FuzzPlan::new(cfg, 12));
    let base = harness::replay(&wl.commands, cfg, Schedule::Quiescent).unwrap();
    for interval in [5, 7, 12] {
        let r = harness::replay(&wl.commands, cfg.with_interval(interval), Schedule::Interval).unwrap();
        assert_eq!(r.outcomes(), base.outcomes());
        assert_eq!(r.snapshot, base.snapshot);
    }
}

#[test]
fn early_issue_is_refused_without_side_effects() {
    let mut eng = Engine::new(QueueConfig::new(2, 4)).unwrap();
    eng.issue(Command::Push { id: 1, data: 3 }).unwrap();
    for wait in 1..4 {
        eng.step(1);
        assert!(eng.issue(Command::Push { id: 2, data: 1 }).is_err(), "accepted after {wait} cycles");
    }
    eng.step(1);
    eng.issue(Command::Push { id: 2, data: 1 }).unwrap();
    eng.run_until_quiescent();
    assert_eq!(eng.snapshot(), vec![Element::new(2, 1), Element::new(1, 3)]);
    assert_eq!(eng.completions().len(), 2);
    assert!(check_invariants(&eng).is_empty());
}

#[test]
fn full_queue_then_update_and_drain() {
    let cfg = QueueConfig::new(2, 2);
    let mut cmds: Vec<Command> = (1..=4).map(|id| Command::Push { id, data: 10 - id as u64 }).collect();
    cmds.push(Command::Push { id: 5, data: 0 });
    cmds.push(Command::Push { id: 4, data: 20 });
    cmds.extend([Command::Pop; 5]);
    let run = harness::replay(&cmds, cfg, Schedule::Interval).unwrap();
    assert_eq!(run.records[4].status, Status::Full);
    assert_eq!(run.records[5].status, Status::Ok);
    let popped: Vec<u32> = run.records[6..].iter().map(|r| r.result.unwrap().id).collect();
    assert_eq!(popped, vec![3, 2, 1, 4, 0]);
    assert_eq!(run.records[10].status, Status::Empty);
}
