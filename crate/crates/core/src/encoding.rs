//! Set/shift control-mask generation for one systolic block.
//!
//! Every mask is an `M`-bit unsigned value where bit `s` addresses slot `s`
//! and slot 0 sits nearest the queue head. "Up" moves an element away from
//! the head (slot `s` takes slot `s - 1`), "down" moves it toward the head
//! (slot `s` takes slot `s + 1`). Subtraction, inversion and XNOR all wrap
//! at `M` bits, so the masks fall out of the flag vectors without a priority
//! encoder.

use crate::element::{low_mask, mask, Element, FlagVector};

/// Control masks for one set-and-shift phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlSignals {
    /// Slot count `M`.
    pub width: u32,
    /// Slots overwritten with the new element.
    pub set_en: u64,
    /// Slots taking the value of the slot below (away from head).
    pub up_en: u64,
    /// Slots taking the value of the slot above (toward head).
    pub down_en: u64,
    /// Slot `M - 1` takes the interface register (next block's first element).
    pub fill_top: bool,
    /// Slot 0's old value leaves toward the previous block.
    pub emit_bottom: bool,
    /// Slot `M - 1`'s old value is pushed out toward the next block.
    pub overflow_top: bool,
}

impl ControlSignals {
    pub fn idle(width: u32) -> Self {
        Self {
            width,
            set_en: 0,
            up_en: 0,
            down_en: 0,
            fill_top: false,
            emit_bottom: false,
            overflow_top: false,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.set_en == 0
            && self.up_en == 0
            && self.down_en == 0
            && !self.fill_top
            && !self.emit_bottom
            && !self.overflow_top
    }

    /// Masks are pairwise disjoint and shift sources stay inside the block.
    pub fn is_well_formed(&self) -> bool {
        let top = 1u64 << (self.width - 1);
        self.set_en & self.up_en == 0
            && self.set_en & self.down_en == 0
            && self.up_en & self.down_en == 0
            && self.up_en & 1 == 0
            && (self.down_en & top == 0 || self.fill_top)
            && (self.set_en | self.up_en | self.down_en) & !mask(self.width) == 0
    }
}

/// Bit `s` is set iff slot `s` holds `target_id`. ID 0 never matches.
pub fn id_match_flags(slots: &[Element], target_id: u32) -> FlagVector {
    let bits = slots
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_valid() && e.id == target_id)
        .fold(0u64, |acc, (s, _)| acc | (1 << s));
    FlagVector::new(bits, slots.len() as u32)
}

/// Broadcast less-than comparison of `push_data` against the block's slots
/// and the next block's first element (bit `M`). A set bit marks an element
/// the pushed key sorts strictly ahead of; empty slots always set their bit.
pub fn data_compare_flags(slots: &[Element], next_head: Element, push_data: u64) -> FlagVector {
    let probe = Element::new(u32::MAX, push_data);
    let bits = slots
        .iter()
        .chain(std::iter::once(&next_head))
        .enumerate()
        .filter(|(_, &e)| crate::element::element_less(probe, e))
        .fold(0u64, |acc, (s, _)| acc | (1 << s));
    FlagVector::new(bits, slots.len() as u32 + 1)
}

/// Push whose insertion point lies above the ID match (key increased), or
/// with no local insertion point at all.
///
/// `data_flag_lp = {1, data_flag[M-1:1]}`, `set = ~(data_flag_lp - 1)`,
/// `down = data_flag_lp XNOR (id_flag - 1)`. An all-zero `data_flag` places
/// the set at slot `M - 1` and marks it as filled from the interface
/// register; the caller clears `fill_top` when the pushed element itself
/// belongs there.
pub fn encode_down_insert(data_flag: FlagVector, id_flag: FlagVector) -> ControlSignals {
    let width = data_flag.width();
    debug_assert_eq!(width, id_flag.width());
    let m = mask(width);
    let top = 1u64 << (width - 1);
    let lp = (data_flag.bits() >> 1) | top;
    let set_en = !lp.wrapping_sub(1) & m;
    let down_en = !(lp ^ id_flag.bits().wrapping_sub(1)) & m;
    ControlSignals {
        set_en,
        down_en,
        fill_top: data_flag.is_zero(),
        ..ControlSignals::idle(width)
    }
}

/// Push whose insertion point lies at or below the ID match (key decreased),
/// or a pure enqueue when `id_flag` is zero.
///
/// `set = ~(data_flag - 1)`, `up = {data_flag XNOR (id_flag - 1), 0}`.
/// With no ID match the shift runs through slot `M - 1` and its old value
/// overflows.
pub fn encode_up_insert(data_flag: FlagVector, id_flag: FlagVector) -> ControlSignals {
    let width = data_flag.width();
    debug_assert_eq!(width, id_flag.width());
    if data_flag.is_zero() {
        return ControlSignals::idle(width);
    }
    let m = mask(width);
    let df = data_flag.bits();
    let set_en = !df.wrapping_sub(1) & m;
    let xnor = !(df ^ id_flag.bits().wrapping_sub(1)) & m;
    ControlSignals {
        set_en,
        up_en: (xnor << 1) & m,
        overflow_top: id_flag.is_zero(),
        ..ControlSignals::idle(width)
    }
}

/// Remove the matched slot and close the gap toward the head; slot `M - 1`
/// refills from the interface register. `down = ~(id_flag - 1)`.
pub fn encode_delete(id_flag: FlagVector) -> ControlSignals {
    let width = id_flag.width();
    let down_en = !id_flag.bits().wrapping_sub(1) & mask(width);
    ControlSignals {
        down_en,
        fill_top: down_en != 0,
        ..ControlSignals::idle(width)
    }
}

/// Write the incoming element at slot 0, shifting up everything below the
/// co-travelling delete target. Without a local target the whole block
/// shifts and the old slot `M - 1` overflows.
pub fn encode_push_first(id_flag: FlagVector) -> ControlSignals {
    let width = id_flag.width();
    let m = mask(width);
    let id = id_flag.bits();
    let up_en = ((id.wrapping_sub(1) << 1) | id) & m & !1;
    ControlSignals {
        set_en: 1,
        up_en,
        overflow_top: id == 0,
        ..ControlSignals::idle(width)
    }
}

/// Shift the whole block toward the head.
pub fn encode_pop(width: u32) -> ControlSignals {
    ControlSignals {
        down_en: low_mask(width as usize - 1),
        fill_top: true,
        emit_bottom: true,
        ..ControlSignals::idle(width)
    }
}
