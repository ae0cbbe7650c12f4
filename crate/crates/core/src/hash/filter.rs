//! Concurrency filter: a ring of the writes currently inside the hash
//! table's critical section, searchable across every live entry at once.

use crate::proto::{Key, Opcode};

/// Default number of in-flight writes.
pub const DEFAULT_FILTER_ENTRIES: usize = 16;

/// Largest capacity the 8-bit ring pointers can address.
pub const MAX_FILTER_ENTRIES: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterEntry {
    pub key: Key,
    pub opcode: Opcode,
    /// Bucket the write will modify.
    pub bucket: u32,
}

impl FilterEntry {
    pub fn new(key: impl Into<Key>, opcode: Opcode, bucket: u32) -> Self {
        FilterEntry { key: key.into(), opcode, bucket }
    }

    /// A FLUSH touches every bucket and every key.
    fn is_flush(&self) -> bool {
        self.opcode == Opcode::Flush
    }
}

/// Capacities must divide the 256-entry pointer space.
pub fn valid_capacity(n: usize) -> bool {
    n.is_power_of_two() && n <= MAX_FILTER_ENTRIES
}

#[derive(Debug)]
pub struct ConcurrencyFilter {
    wr_ptr: u8,
    rd_ptr: u8,
    entries: Vec<Option<FilterEntry>>,
    high_watermark: usize,
}

impl ConcurrencyFilter {
    /// # Panics
    /// If `capacity` is not a power of two in `1..=128`.
    pub fn new(capacity: usize) -> Self {
        assert!(valid_capacity(capacity), "filter capacity {capacity} not a power of two <= 128");
        ConcurrencyFilter { wr_ptr: 0, rd_ptr: 0, entries: vec![None; capacity], high_watermark: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn occupancy(&self) -> usize {
        self.wr_ptr.wrapping_sub(self.rd_ptr) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.wr_ptr == self.rd_ptr
    }

    pub fn is_full(&self) -> bool {
        self.occupancy() == self.capacity()
    }

    pub fn high_watermark(&self) -> usize {
        self.high_watermark
    }

    fn slot(&self, ptr: u8) -> usize {
        ptr as usize & (self.entries.len() - 1)
    }

    pub fn push(&mut self, e: FilterEntry) -> bool {
        if self.is_full() {
            return false;
        }
        let i = self.slot(self.wr_ptr);
        self.entries[i] = Some(e);
        self.wr_ptr = self.wr_ptr.wrapping_add(1);
        self.high_watermark = self.high_watermark.max(self.occupancy());
        true
    }

    /// Removes the oldest entry.
    pub fn pop(&mut self) -> bool {
        if self.is_empty() {
            return false;
        }
        let i = self.slot(self.rd_ptr);
        self.entries[i] = None;
        self.rd_ptr = self.rd_ptr.wrapping_add(1);
        true
    }

    fn live(&self) -> impl Iterator<Item = &FilterEntry> {
        (0..self.occupancy() as u8).filter_map(move |n| self.entries[self.slot(self.rd_ptr.wrapping_add(n))].as_ref())
    }

    /// True if a live write targets `key`.
    pub fn compare(&self, key: &[u8]) -> bool {
        self.live().any(|e| e.is_flush() || e.key.as_bytes() == key)
    }

    /// True if a live write targets `bucket`.
    pub fn compare_bucket(&self, bucket: u32) -> bool {
        self.live().any(|e| e.is_flush() || e.bucket == bucket)
    }
}

impl Default for ConcurrencyFilter {
    fn default() -> Self {
        ConcurrencyFilter::new(DEFAULT_FILTER_ENTRIES)
    }
}
