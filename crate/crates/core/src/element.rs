//! Queue elements, flag vectors and array configuration.

use std::cmp::Ordering;
use std::fmt;

/// Largest supported slot count per block. A comparison window is `M + 1`
/// bits wide and must fit in a `u64`.
pub const MAX_SLOTS: usize = 63;
/// Widest supported ID field.
pub const MAX_ID_WIDTH: u32 = 32;
/// Widest supported DATA field.
pub const MAX_DATA_WIDTH: u32 = 64;
/// Smallest legal start-to-start spacing of external operations.
pub const MIN_ISSUE_INTERVAL: u64 = 4;
/// Cycles one block spends on a transaction (enable, compare, set-and-shift, finish).
pub const STAGE_CYCLES: u64 = 4;

/// One (ID, DATA) pair held by a shift block.
///
/// `id == 0` marks an empty slot; the `data` of an empty slot carries no
/// meaning and is never consulted by ordering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Element {
    pub id: u32,
    pub data: u64,
}

impl Element {
    pub const EMPTY: Element = Element { id: 0, data: 0 };

    pub fn new(id: u32, data: u64) -> Self {
        Self { id, data }
    }

    #[inline]
    pub fn is_valid(&self) -> bool {
        self.id != 0
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.id == 0
    }

    /// `Some(self)` when valid.
    pub fn valid(self) -> Option<Element> {
        self.is_valid().then_some(self)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "({},{})", self.id, self.data)
        } else {
            f.write_str("(empty)")
        }
    }
}

/// Strict priority comparison: `a` is served before `b`.
///
/// A valid element beats an empty one; two valid elements compare by DATA
/// with equal keys never ordered before each other.
#[inline]
pub fn element_less(a: Element, b: Element) -> bool {
    match (a.is_valid(), b.is_valid()) {
        (true, false) => true,
        (true, true) => a.data < b.data,
        (false, _) => false,
    }
}

/// Total preorder induced by [`element_less`]; empties form the maximal class.
pub fn element_cmp(a: Element, b: Element) -> Ordering {
    if element_less(a, b) {
        Ordering::Less
    } else if element_less(b, a) {
        Ordering::Greater
    } else {
        Ordering::Equal
    }
}

/// A comparison result vector. Bit `s` belongs to slot `s`; when the vector
/// spans a comparison window, bit `M` belongs to the next block's first
/// element.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlagVector {
    bits: u64,
    width: u32,
}

impl FlagVector {
    pub fn new(bits: u64, width: u32) -> Self {
        assert!((1..=64).contains(&width), "flag vector width {width} out of range");
        Self { bits: bits & mask(width), width }
    }

    pub fn zero(width: u32) -> Self {
        Self::new(0, width)
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn bit(&self, s: usize) -> bool {
        (self.bits >> s) & 1 == 1
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    /// Index of the lowest set bit.
    pub fn lowest(&self) -> Option<usize> {
        (self.bits != 0).then(|| self.bits.trailing_zeros() as usize)
    }

    pub fn is_zero_or_one_hot(&self) -> bool {
        self.bits & self.bits.wrapping_sub(1) == 0
    }

    /// No set bit appears below a clear bit: the vector reads `1..10..0`
    /// from the top, possibly all zeros or all ones.
    pub fn is_monotone(&self) -> bool {
        match self.lowest() {
            None => true,
            Some(p) => self.bits == mask(self.width) & !low_mask(p),
        }
    }

    /// The low `width` bits.
    pub fn truncate(&self, width: u32) -> FlagVector {
        FlagVector::new(self.bits, width)
    }
}

impl fmt::Debug for FlagVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}'b{:0w$b}", self.width, self.bits, w = self.width as usize)
    }
}

/// All-ones mask of `width` bits.
#[inline]
pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Bits `0..n` set.
#[inline]
pub(crate) fn low_mask(n: usize) -> u64 {
    mask(n as u32)
}

/// Geometry and field widths of one queue instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueConfig {
    pub n_blocks: usize,
    pub slots_per_block: usize,
    pub id_width: u32,
    pub data_width: u32,
    pub issue_interval: u64,
}

impl QueueConfig {
    /// Config with the narrowest ID width that fits the capacity, 16-bit
    /// DATA and the minimum issue interval.
    pub fn new(n_blocks: usize, slots_per_block: usize) -> Self {
        Self {
            n_blocks,
            slots_per_block,
            id_width: min_id_width(n_blocks.saturating_mul(slots_per_block)),
            data_width: 16,
            issue_interval: MIN_ISSUE_INTERVAL,
        }
    }

    pub fn with_data_width(mut self, bits: u32) -> Self {
        self.data_width = bits;
        self
    }

    pub fn with_id_width(mut self, bits: u32) -> Self {
        self.id_width = bits;
        self
    }

    pub fn with_interval(mut self, cycles: u64) -> Self {
        self.issue_interval = cycles;
        self
    }

    pub fn capacity(&self) -> usize {
        self.n_blocks * self.slots_per_block
    }

    pub fn max_id(&self) -> u32 {
        mask(self.id_width) as u32
    }

    pub fn max_data(&self) -> u64 {
        mask(self.data_width)
    }

    pub fn validate(&self) -> Result<(), Vec<ConfigViolation>> {
        validate_config(self)
    }
}

/// `ceil(log2(capacity + 1))`: enough bits for `capacity` distinct non-zero IDs.
pub fn min_id_width(capacity: usize) -> u32 {
    64 - (capacity as u64).leading_zeros()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigViolation {
    #[error("n_blocks must be at least 1")]
    NoBlocks,
    #[error("slots_per_block must be in 2..={max}, got {got}")]
    SlotsPerBlock { got: usize, max: usize },
    #[error("id_width {got} leaves {usable} usable IDs for capacity {capacity} (need at least {need} bits)")]
    IdWidthTooNarrow { got: u32, need: u32, usable: u64, capacity: usize },
    #[error("id_width {got} exceeds the supported maximum of {max}")]
    IdWidthTooWide { got: u32, max: u32 },
    #[error("data_width must be in 1..={max}, got {got}")]
    DataWidth { got: u32, max: u32 },
    #[error("issue_interval must be at least {min} cycles, got {got}")]
    IssueInterval { got: u64, min: u64 },
}

/// Every violated configuration invariant, or `Ok(())`.
pub fn validate_config(cfg: &QueueConfig) -> Result<(), Vec<ConfigViolation>> {
    let mut out = Vec::new();
    if cfg.n_blocks == 0 {
        out.push(ConfigViolation::NoBlocks);
    }
    if !(2..=MAX_SLOTS).contains(&cfg.slots_per_block) {
        out.push(ConfigViolation::SlotsPerBlock { got: cfg.slots_per_block, max: MAX_SLOTS });
    }
    let capacity = cfg.n_blocks.saturating_mul(cfg.slots_per_block);
    let need = min_id_width(capacity);
    if cfg.id_width > MAX_ID_WIDTH {
        out.push(ConfigViolation::IdWidthTooWide { got: cfg.id_width, max: MAX_ID_WIDTH });
    } else if cfg.id_width < need {
        out.push(ConfigViolation::IdWidthTooNarrow {
            got: cfg.id_width,
            need,
            usable: mask(cfg.id_width),
            capacity,
        });
    }
    if !(1..=MAX_DATA_WIDTH).contains(&cfg.data_width) {
        out.push(ConfigViolation::DataWidth { got: cfg.data_width, max: MAX_DATA_WIDTH });
    }
    if cfg.issue_interval < MIN_ISSUE_INTERVAL {
        out.push(ConfigViolation::IssueInterval { got: cfg.issue_interval, min: MIN_ISSUE_INTERVAL });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(id: u32, data: u64) -> Element {
        Element::new(id, data)
    }

    #[test]
    fn valid_beats_empty() {
        assert!(element_less(e(5, 7), Element::EMPTY));
        assert!(!element_less(Element::EMPTY, e(5, 7)));
    }

    #[test]
    fn equal_keys_are_not_less() {
        assert!(!element_less(e(1, 21), e(2, 21)));
        assert!(!element_less(e(2, 21), e(1, 21)));
    }

    #[test]
    fn empty_vs_empty() {
        assert!(!element_less(Element::EMPTY, Element::EMPTY));
        // data of an empty slot is ignored
        assert!(!element_less(e(0, 1), e(0, 9)));
    }

    #[test]
    fn depth_256_config_from_table() {
        let cfg = QueueConfig { n_blocks: 32, slots_per_block: 8, id_width: 9, data_width: 16, issue_interval: 4 };
        assert_eq!(validate_config(&cfg), Ok(()));
        assert_eq!(cfg.capacity(), 256);
    }

    #[test]
    fn eight_bit_ids_do_not_cover_256_slots() {
        let cfg = QueueConfig { n_blocks: 32, slots_per_block: 8, id_width: 8, data_width: 16, issue_interval: 4 };
        let errs = validate_config(&cfg).unwrap_err();
        assert_eq!(
            errs,
            vec![ConfigViolation::IdWidthTooNarrow { got: 8, need: 9, usable: 255, capacity: 256 }]
        );
    }

    #[test]
    fn single_slot_blocks_rejected() {
        let cfg = QueueConfig::new(4, 1);
        let errs = validate_config(&cfg).unwrap_err();
        assert!(matches!(errs[0], ConfigViolation::SlotsPerBlock { got: 1, .. }));
    }

    #[test]
    fn collects_every_violation() {
        let cfg = QueueConfig { n_blocks: 0, slots_per_block: 1, id_width: 40, data_width: 0, issue_interval: 3 };
        assert_eq!(validate_config(&cfg).unwrap_err().len(), 5);
    }

    #[test]
    fn min_id_width_counts_reserved_zero() {
        assert_eq!(min_id_width(1), 1);
        assert_eq!(min_id_width(2), 2);
        assert_eq!(min_id_width(3), 2);
        assert_eq!(min_id_width(4), 3);
        assert_eq!(min_id_width(255), 8);
        assert_eq!(min_id_width(256), 9);
    }

    #[test]
    fn flag_vector_shapes() {
        assert!(FlagVector::new(0b1100_0000, 8).is_monotone());
        assert!(FlagVector::new(0, 8).is_monotone());
        assert!(FlagVector::new(0xff, 8).is_monotone());
        assert!(!FlagVector::new(0b1010_0000, 8).is_monotone());
        assert!(!FlagVector::new(0b0100_0000, 8).is_monotone());
        assert!(FlagVector::new(0b0000_0100, 8).is_zero_or_one_hot());
        assert!(!FlagVector::new(0b0000_0110, 8).is_zero_or_one_hot());
        assert_eq!(format!("{:?}", FlagVector::new(0b101, 4)), "4'b0101");
    }

    fn arb_element() -> impl Strategy<Value = Element> {
        (0u32..4, 0u64..6).prop_map(|(id, data)| Element::new(id, data))
    }

    proptest! {
        #[test]
        fn element_less_is_strict_weak_order(a in arb_element(), b in arb_element(), c in arb_element()) {
            prop_assert!(!element_less(a, a));
            if element_less(a, b) {
                prop_assert!(!element_less(b, a));
            }
            if element_less(a, b) && element_less(b, c) {
                prop_assert!(element_less(a, c));
            }
            // incomparability is transitive
            let inc = |x: Element, y: Element| !element_less(x, y) && !element_less(y, x);
            if inc(a, b) && inc(b, c) {
                prop_assert!(inc(a, c));
            }
            if a.is_empty() {
                prop_assert!(!element_less(a, b));
                prop_assert!(b.is_empty() || element_less(b, a));
            }
        }

        #[test]
        fn capacity_is_product(n in 1usize..64, m in 2usize..=MAX_SLOTS) {
            let cfg = QueueConfig::new(n, m);
            prop_assert_eq!(validate_config(&cfg), Ok(()));
            prop_assert_eq!(cfg.capacity(), n * m);
            prop_assert!(cfg.max_id() as usize >= cfg.capacity());
        }
    }
}
