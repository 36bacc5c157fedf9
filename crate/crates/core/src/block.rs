//! One systolic block: classify incoming operations against local state,
//! apply the encoded masks, and emit whatever must travel on.

use std::fmt;

use crate::element::{element_less, Element, FlagVector};
use crate::encoding::{
    data_compare_flags, encode_delete, encode_down_insert, encode_pop, encode_push_first,
    encode_up_insert, id_match_flags, ControlSignals,
};

/// Hardware operations travelling together between two adjacent blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpBundle {
    pub push: Option<Element>,
    pub pop: bool,
    pub delete_id: Option<u32>,
    pub push_first: Option<Element>,
}

impl OpBundle {
    pub const NONE: OpBundle = OpBundle { push: None, pop: false, delete_id: None, push_first: None };

    pub fn push(e: Element) -> Self {
        Self { push: Some(e), ..Self::NONE }
    }

    pub fn pop() -> Self {
        Self { pop: true, ..Self::NONE }
    }

    pub fn delete(id: u32) -> Self {
        Self { delete_id: Some(id), ..Self::NONE }
    }

    pub fn push_pop(e: Element) -> Self {
        Self { push: Some(e), pop: true, ..Self::NONE }
    }

    pub fn push_first_delete(first: Element, id: u32) -> Self {
        Self { push_first: Some(first), delete_id: Some(id), ..Self::NONE }
    }

    pub fn push_first(first: Element) -> Self {
        Self { push_first: Some(first), ..Self::NONE }
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::NONE
    }

    /// One of the combinations the array can produce.
    pub fn is_legal(&self) -> bool {
        let pushes_valid = self.push.is_none_or(|e| e.is_valid())
            && self.push_first.is_none_or(|e| e.is_valid())
            && self.delete_id.is_none_or(|id| id != 0);
        let shape = matches!(
            (self.push.is_some(), self.pop, self.delete_id.is_some(), self.push_first.is_some()),
            (false, false, false, false)
                | (true, false, false, false)
                | (false, true, false, false)
                | (false, false, true, false)
                | (true, true, false, false)
                | (false, false, true, true)
                | (false, false, false, true)
        );
        pushes_valid && shape
    }
}

impl fmt::Display for OpBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(e) = self.push {
            parts.push(format!("push{e}"));
        }
        if self.pop {
            parts.push("pop".to_string());
        }
        if let Some(e) = self.push_first {
            parts.push(format!("push_first{e}"));
        }
        if let Some(id) = self.delete_id {
            parts.push(format!("delete({id})"));
        }
        if parts.is_empty() {
            f.write_str("{}")
        } else {
            write!(f, "{{{}}}", parts.join(", "))
        }
    }
}

/// The M hold registers of one block plus its interface register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockState {
    pub slots: Vec<Element>,
    /// Last element staged toward (or received from) the next block.
    pub interface: Element,
}

impl BlockState {
    pub fn new(slots_per_block: usize) -> Self {
        Self { slots: vec![Element::EMPTY; slots_per_block], interface: Element::EMPTY }
    }

    pub fn from_slots(slots: Vec<Element>) -> Self {
        Self { slots, interface: Element::EMPTY }
    }

    pub fn width(&self) -> usize {
        self.slots.len()
    }

    pub fn head(&self) -> Element {
        self.slots[0]
    }

    pub fn is_all_empty(&self) -> bool {
        self.slots.iter().all(Element::is_empty)
    }

    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|e| e.is_valid()).count()
    }

    /// Keys non-decreasing with slot index and every empty above every valid slot.
    pub fn is_sorted(&self) -> bool {
        self.slots.windows(2).all(|w| !element_less(w[1], w[0]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockEffects {
    pub outgoing: OpBundle,
    /// Slot 0's pre-transaction value when it left toward the head side.
    pub to_prev: Option<Element>,
    /// Slot `M - 1` was refilled from the next block's first element.
    pub needs_fill: bool,
}

impl BlockEffects {
    fn forward(outgoing: OpBundle) -> Self {
        Self { outgoing, to_prev: None, needs_fill: false }
    }
}

/// How a push relates to one block, per the four ID/DATA match rows plus
/// the push-with-pop boundary case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushScenario {
    /// No local ID, no insertion point: forward the push.
    NoIdNoData,
    /// Insertion point `p` found locally, ID not local.
    DataOnly { p: usize },
    /// ID at `q`, the key sorts at or beyond the next block's head.
    IdOnly { q: usize },
    /// ID at `q` and insertion point `p` (up to `M`) both resolvable here.
    Both { q: usize, p: usize },
    /// Push with pop whose key belongs exactly in slot `M - 1`.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PushClassification {
    pub scenario: PushScenario,
    pub id_flag: FlagVector,
    /// `M + 1`-bit comparison window.
    pub window: FlagVector,
}

impl PushClassification {
    pub fn local_data_flag(&self) -> FlagVector {
        self.window.truncate(self.id_flag.width())
    }
}

pub fn classify_push(
    state: &BlockState,
    push: Element,
    next_head: Element,
    pop_active: bool,
) -> PushClassification {
    assert!(push.is_valid(), "push of invalid element");
    let m = state.width();
    let id_flag = id_match_flags(&state.slots, push.id);
    let window = data_compare_flags(&state.slots, next_head, push.data);
    let q = id_flag.lowest();
    let p = window.lowest();
    let scenario = match (q, p) {
        (Some(q), _) if pop_active => {
            panic!("push-with-pop found its ID locally at slot {q}; the match must occur upstream")
        }
        (None, Some(p)) if pop_active && p == m => PushScenario::Boundary,
        (None, Some(p)) if p < m => PushScenario::DataOnly { p },
        (None, _) => PushScenario::NoIdNoData,
        (Some(q), None) => PushScenario::IdOnly { q },
        (Some(q), Some(p)) => PushScenario::Both { q, p },
    };
    PushClassification { scenario, id_flag, window }
}

/// Materialize masks with simultaneous-assignment semantics: every read
/// sees the pre-state.
pub fn apply_signals(
    state: &BlockState,
    sig: &ControlSignals,
    new_element: Element,
    fill_value: Element,
) -> BlockState {
    debug_assert!(sig.is_well_formed(), "malformed signals {sig:?}");
    let pre = &state.slots;
    let m = pre.len();
    let slots = (0..m)
        .map(|s| {
            let bit = 1u64 << s;
            if s == m - 1 && sig.fill_top {
                fill_value
            } else if sig.set_en & bit != 0 {
                new_element
            } else if sig.down_en & bit != 0 {
                pre[s + 1]
            } else if sig.up_en & bit != 0 {
                pre[s - 1]
            } else {
                pre[s]
            }
        })
        .collect();
    BlockState { slots, interface: state.interface }
}

/// One block transaction. Reads only this block's state, the incoming
/// bundle and the next block's first element.
///
/// Panics on a bundle the array cannot produce.
pub fn execute(state: &BlockState, bundle: &OpBundle, next_head: Element) -> (BlockState, BlockEffects) {
    assert!(bundle.is_legal(), "illegal operation bundle {bundle}");
    let m = state.width() as u32;
    let top = state.width() - 1;

    match *bundle {
        OpBundle { push: Some(e), pop: false, .. } => execute_push(state, e, next_head),
        OpBundle { push: Some(e), pop: true, .. } => execute_push_pop(state, e, next_head),
        OpBundle { pop: true, .. } => {
            if state.is_all_empty() {
                return (state.clone(), BlockEffects::forward(OpBundle::NONE));
            }
            let mut next = apply_signals(state, &encode_pop(m), Element::EMPTY, next_head);
            next.interface = next_head;
            let effects = BlockEffects {
                outgoing: OpBundle::pop(),
                to_prev: Some(state.slots[0]),
                needs_fill: true,
            };
            (next, effects)
        }
        OpBundle { push_first: Some(first), delete_id, .. } => {
            let id_flag = match delete_id {
                Some(id) => id_match_flags(&state.slots, id),
                None => FlagVector::zero(m),
            };
            let sig = encode_push_first(id_flag);
            let mut next = apply_signals(state, &sig, first, next_head);
            let outgoing = if sig.overflow_top {
                let overflow = state.slots[top];
                next.interface = overflow;
                match (overflow.valid(), delete_id) {
                    (Some(ov), Some(id)) => OpBundle::push_first_delete(ov, id),
                    (Some(ov), None) => OpBundle::push_first(ov),
                    (None, Some(id)) => OpBundle::delete(id),
                    (None, None) => OpBundle::NONE,
                }
            } else {
                OpBundle::NONE
            };
            (next, BlockEffects::forward(outgoing))
        }
        OpBundle { delete_id: Some(id), .. } => {
            let id_flag = id_match_flags(&state.slots, id);
            if id_flag.is_zero() {
                return (state.clone(), BlockEffects::forward(OpBundle::delete(id)));
            }
            let mut next = apply_signals(state, &encode_delete(id_flag), Element::EMPTY, next_head);
            next.interface = next_head;
            let effects = BlockEffects { outgoing: OpBundle::pop(), to_prev: None, needs_fill: true };
            (next, effects)
        }
        _ => (state.clone(), BlockEffects::forward(OpBundle::NONE)),
    }
}

fn execute_push(state: &BlockState, e: Element, next_head: Element) -> (BlockState, BlockEffects) {
    let cls = classify_push(state, e, next_head, false);
    let m = state.width();
    let local = cls.local_data_flag();
    match cls.scenario {
        PushScenario::NoIdNoData => {
            let mut next = state.clone();
            next.interface = e;
            (next, BlockEffects::forward(OpBundle::push(e)))
        }
        PushScenario::DataOnly { .. } => {
            let sig = encode_up_insert(local, FlagVector::zero(m as u32));
            let mut next = apply_signals(state, &sig, e, next_head);
            let overflow = state.slots[m - 1];
            next.interface = overflow;
            let outgoing = match overflow.valid() {
                Some(ov) => OpBundle::push_first_delete(ov, e.id),
                None => OpBundle::delete(e.id),
            };
            (next, BlockEffects::forward(outgoing))
        }
        PushScenario::IdOnly { .. } => {
            let sig = encode_down_insert(local, cls.id_flag);
            debug_assert!(sig.fill_top);
            let mut next = apply_signals(state, &sig, e, next_head);
            next.interface = next_head;
            let effects = BlockEffects { outgoing: OpBundle::push_pop(e), to_prev: None, needs_fill: true };
            (next, effects)
        }
        PushScenario::Both { q, p } => {
            let sig = if q < p {
                let mut sig = encode_down_insert(local, cls.id_flag);
                // p == M: the key sorts ahead of the next block's head, so the
                // interface register carries the pushed element into slot M - 1.
                sig.fill_top = false;
                sig
            } else {
                encode_up_insert(local, cls.id_flag)
            };
            let mut next = apply_signals(state, &sig, e, next_head);
            next.interface = e;
            (next, BlockEffects::forward(OpBundle::NONE))
        }
        PushScenario::Boundary => unreachable!("boundary case needs an active pop"),
    }
}

fn execute_push_pop(state: &BlockState, e: Element, next_head: Element) -> (BlockState, BlockEffects) {
    let cls = classify_push(state, e, next_head, true);
    let m = state.width();
    let leaving = state.slots[0];
    assert!(leaving.is_valid(), "push-with-pop reached a block with an empty head");
    assert!(cls.window.lowest() != Some(0), "push-with-pop key {} sorts ahead of head {leaving}", e.data);
    // The departing head acts as a match at slot 0.
    let mut sig = encode_down_insert(cls.local_data_flag(), FlagVector::new(1, m as u32));
    sig.emit_bottom = true;
    let outgoing = match cls.scenario {
        PushScenario::NoIdNoData => OpBundle::push_pop(e),
        PushScenario::Boundary => {
            sig.fill_top = false;
            OpBundle::NONE
        }
        PushScenario::DataOnly { .. } => OpBundle::NONE,
        other => unreachable!("push-with-pop classified as {other:?}"),
    };
    let mut next = apply_signals(state, &sig, e, next_head);
    next.interface = if sig.fill_top { next_head } else { e };
    let effects = BlockEffects { outgoing, to_prev: Some(leaving), needs_fill: sig.fill_top };
    (next, effects)
}
