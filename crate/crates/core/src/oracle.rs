//! Golden reference model: a stable sorted list with the same operation
//! semantics as the array.

use crate::element::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleEntry {
    pub id: u32,
    pub data: u64,
    pub seq: u64,
}

impl OracleEntry {
    pub fn element(&self) -> Element {
        Element::new(self.id, self.data)
    }
}

/// Entries kept sorted by `(data, seq)`. O(n) per operation.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    entries: Vec<OracleEntry>,
    next_seq: u64,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    pub fn entries(&self) -> &[OracleEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    /// Enqueue or update. An update always re-enters behind every entry with
    /// an equal key, as the strict comparators in the array place it.
    pub fn push(&mut self, id: u32, data: u64) {
        assert!(id != 0, "id 0 is reserved");
        self.delete(id);
        self.insert_new(id, data);
    }

    /// Insert an ID known to be absent.
    pub fn insert_new(&mut self, id: u32, data: u64) {
        debug_assert!(!self.contains(id));
        let seq = self.next_seq;
        self.next_seq += 1;
        let at = self.entries.partition_point(|e| e.data <= data);
        self.entries.insert(at, OracleEntry { id, data, seq });
    }

    pub fn pop(&mut self) -> Option<Element> {
        (!self.entries.is_empty()).then(|| self.entries.remove(0).element())
    }

    pub fn delete(&mut self, id: u32) -> bool {
        match self.entries.iter().position(|e| e.id == id) {
            Some(i) => {
                self.entries.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn peek(&self) -> Option<Element> {
        self.entries.first().map(OracleEntry::element)
    }

    pub fn snapshot(&self) -> Vec<Element> {
        self.entries.iter().map(OracleEntry::element).collect()
    }
}
