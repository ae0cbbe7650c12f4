//! The seven-stage hash table.
//!
//! ```text
//!  split ─▶ hash ─▶ concurrency ─▶ memory ─▶ key     ─▶ memory ─▶ output
//!    │               control       read      compare    write      ▲
//!    └──────────────────── value payload FIFO ─────────────────────┘
//! ```
//!
//! Writes (SET, DELETE, FLUSH) enter the concurrency filter at the
//! concurrency-control stage and leave it in the memory-write stage. While a
//! write is in between, younger writes to the same bucket and younger GETs of
//! the same key wait at concurrency control.

use std::io::{self, Write};

use crate::fifo::Fifo;
use crate::pipeline::ConfigError;
use crate::proto::{
    Fault, FaultKind, Key, Opcode, RequestHead, RequestToken, Status, StoreHead, StoreOp, StoreToken, Token,
};
use crate::wordstream::{words_for, Consumer, Producer, StreamWord};

use super::filter::{valid_capacity, ConcurrencyFilter, FilterEntry, DEFAULT_FILTER_ENTRIES};
use super::lookup3::bj_hash;

const STAGE_DEPTH: usize = 2;

/// Most slots a bucket may have.
pub const MAX_BUCKET_SLOTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashTableConfig {
    /// Number of buckets, a power of two.
    pub bucket_count: usize,
    /// Slots per bucket.
    pub bucket_slots: usize,
    /// Concurrency filter capacity.
    pub filter_entries: usize,
    /// Value-store addresses handed out by the free list.
    pub slot_count: usize,
    pub seed: u32,
}

impl Default for HashTableConfig {
    fn default() -> Self {
        HashTableConfig {
            bucket_count: 4096,
            bucket_slots: 8,
            filter_entries: DEFAULT_FILTER_ENTRIES,
            slot_count: 32768,
            seed: 0,
        }
    }
}

impl HashTableConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.bucket_count.is_power_of_two() || self.bucket_count > u32::MAX as usize {
            return Err(ConfigError::new("bucket_count", "must be a power of two"));
        }
        if self.bucket_slots == 0 || self.bucket_slots > MAX_BUCKET_SLOTS {
            return Err(ConfigError::new("bucket_slots", format!("must be in 1..={MAX_BUCKET_SLOTS}")));
        }
        if !valid_capacity(self.filter_entries) {
            return Err(ConfigError::new("filter_entries", "must be a power of two no larger than 128"));
        }
        if self.slot_count == 0 || self.slot_count > u32::MAX as usize {
            return Err(ConfigError::new("slot_count", "must be in 1..=2^32-1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HashTableEntry {
    pub valid: bool,
    pub key: Key,
    pub address: u32,
    pub value_length: u32,
    pub flags: u32,
    pub expiration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Undecided,
    Fault(Fault),
    Miss,
    Found { address: u32, value_length: u32, flags: u32 },
    Store { slot: usize, address: u32 },
    Remove { slot: usize, address: u32 },
    Flush,
    NoRoom,
}

#[derive(Debug)]
struct Job {
    head: RequestHead,
    payload_words: usize,
    bucket: u32,
    /// Bit i set if slot i of the bucket held a valid entry when read.
    valid_mask: u64,
    action: Action,
}

impl Job {
    fn is_faulted(&self) -> bool {
        self.head.fault.is_some()
    }

    fn enters_filter(&self) -> bool {
        !self.is_faulted() && self.head.meta.opcode != Opcode::Get
    }
}

/// Output stage state for the message currently leaving.
#[derive(Debug)]
struct Emit {
    head: Option<StoreHead>,
    words_left: usize,
    forward: bool,
}

/// The hash table datapath, independent of its channels.
#[derive(Debug)]
pub struct HashCore {
    cfg: HashTableConfig,
    entries: Vec<HashTableEntry>,
    free: Vec<u32>,
    filter: ConcurrencyFilter,
    held: Option<RequestToken>,
    payload: Fifo<StreamWord>,
    hashed_in: Fifo<Job>,
    cc_in: Fifo<Job>,
    read_in: Fifo<Job>,
    compare_in: Fifo<Job>,
    write_in: Fifo<Job>,
    out_in: Fifo<Job>,
    emit: Option<Emit>,
}

impl HashCore {
    /// `max_value` sizes the payload FIFO.
    ///
    /// # Panics
    /// If `cfg` does not validate.
    pub fn new(cfg: HashTableConfig, max_value: usize) -> Self {
        if let Err(e) = cfg.validate() {
            panic!("{e}");
        }
        HashCore {
            cfg,
            entries: vec![HashTableEntry::default(); cfg.bucket_count * cfg.bucket_slots],
            free: (0..cfg.slot_count as u32).rev().collect(),
            filter: ConcurrencyFilter::new(cfg.filter_entries),
            held: None,
            payload: Fifo::new(2 * words_for(max_value).max(1)),
            hashed_in: Fifo::new(STAGE_DEPTH),
            cc_in: Fifo::new(STAGE_DEPTH),
            read_in: Fifo::new(STAGE_DEPTH),
            compare_in: Fifo::new(STAGE_DEPTH),
            write_in: Fifo::new(STAGE_DEPTH),
            out_in: Fifo::new(STAGE_DEPTH),
            emit: None,
        }
    }

    pub fn config(&self) -> &HashTableConfig {
        &self.cfg
    }

    pub fn filter(&self) -> &ConcurrencyFilter {
        &self.filter
    }

    pub fn free_slots(&self) -> usize {
        self.free.len()
    }

    pub fn is_idle(&self) -> bool {
        self.held.is_none()
            && self.payload.is_empty()
            && self.hashed_in.is_empty()
            && self.cc_in.is_empty()
            && self.read_in.is_empty()
            && self.compare_in.is_empty()
            && self.write_in.is_empty()
            && self.out_in.is_empty()
            && self.emit.is_none()
    }

    fn bucket_range(&self, bucket: u32) -> std::ops::Range<usize> {
        let start = bucket as usize * self.cfg.bucket_slots;
        start..start + self.cfg.bucket_slots
    }

    /// Valid entries with their bucket and slot.
    pub fn valid_entries(&self) -> impl Iterator<Item = (usize, usize, &HashTableEntry)> {
        let b = self.cfg.bucket_slots;
        self.entries.iter().enumerate().filter(|(_, e)| e.valid).map(move |(i, e)| (i / b, i % b, e))
    }

    /// True if no two valid entries share an address and none is on the
    /// free list.
    pub fn addresses_unique(&self) -> bool {
        let mut seen = vec![false; self.cfg.slot_count];
        for &a in &self.free {
            if std::mem::replace(&mut seen[a as usize], true) {
                return false;
            }
        }
        self.valid_entries().all(|(_, _, e)| !std::mem::replace(&mut seen[e.address as usize], true))
    }

    /// One line per valid entry: bucket, slot, key in hex, address, value length.
    pub fn dump(&self, out: &mut impl Write) -> io::Result<()> {
        for (bucket, slot, e) in self.valid_entries() {
            let hex: String = e.key.iter().map(|b| format!("{b:02x}")).collect();
            writeln!(out, "{bucket} {slot} {hex} {} {}", e.address, e.value_length)?;
        }
        Ok(())
    }

    /// One clock, output stage first.
    pub fn cycle(&mut self, input: &Consumer<RequestToken>, output: &Producer<StoreToken>) -> bool {
        let mut progress = self.output_stage(output);
        progress |= self.memory_write();
        progress |= self.key_compare();
        progress |= self.memory_read();
        progress |= self.concurrency_control();
        progress |= self.hash_stage();
        progress | self.split(input)
    }

    fn split(&mut self, input: &Consumer<RequestToken>) -> bool {
        let mut progress = false;
        if self.held.is_none() {
            self.held = input.try_read();
            progress = self.held.is_some();
        }
        match self.held.take() {
            Some(Token::Head(head)) if self.hashed_in.has_room() => {
                let payload_words = if head.fault.is_none() { words_for(head.meta.value_length as usize) } else { 0 };
                self.hashed_in.push(Job { head, payload_words, bucket: 0, valid_mask: 0, action: Action::Undecided });
                true
            }
            Some(Token::Word(w)) if self.payload.has_room() => {
                self.payload.push(w);
                true
            }
            other => {
                self.held = other;
                progress
            }
        }
    }

    fn hash_stage(&mut self) -> bool {
        if !self.cc_in.has_room() {
            return false;
        }
        let Some(mut job) = self.hashed_in.pop() else {
            return false;
        };
        if !job.is_faulted() && job.head.meta.opcode != Opcode::Flush {
            let h = bj_hash(&job.head.key, self.cfg.seed);
            job.bucket = h & (self.cfg.bucket_count as u32 - 1);
        }
        self.cc_in.push(job);
        true
    }

    fn concurrency_control(&mut self) -> bool {
        if !self.read_in.has_room() {
            return false;
        }
        let Some(job) = self.cc_in.front() else {
            return false;
        };
        let admitted = if job.is_faulted() {
            true
        } else {
            let meta = job.head.meta;
            match meta.opcode {
                Opcode::Get => !self.filter.compare(&job.head.key),
                Opcode::Set | Opcode::Delete => {
                    !self.filter.compare_bucket(job.bucket)
                        && self.filter.push(FilterEntry::new(job.head.key.clone(), meta.opcode, job.bucket))
                }
                Opcode::Flush => {
                    self.filter.is_empty() && self.filter.push(FilterEntry::new(Key::default(), Opcode::Flush, 0))
                }
            }
        };
        if admitted {
            let job = self.cc_in.pop().expect("front checked");
            self.read_in.push(job);
        }
        admitted
    }

    fn memory_read(&mut self) -> bool {
        if !self.compare_in.has_room() {
            return false;
        }
        let Some(mut job) = self.read_in.pop() else {
            return false;
        };
        if !job.is_faulted() && job.head.meta.opcode != Opcode::Flush {
            job.valid_mask = self.entries[self.bucket_range(job.bucket)]
                .iter()
                .enumerate()
                .filter(|(_, e)| e.valid)
                .fold(0, |m, (i, _)| m | 1 << i);
        }
        self.compare_in.push(job);
        true
    }

    fn key_compare(&mut self) -> bool {
        if !self.write_in.has_room() {
            return false;
        }
        let Some(mut job) = self.compare_in.pop() else {
            return false;
        };
        job.action = self.decide(&job);
        self.write_in.push(job);
        true
    }

    fn decide(&mut self, job: &Job) -> Action {
        let meta = job.head.meta;
        if let Some(f) = job.head.fault {
            return Action::Fault(f);
        }
        if meta.opcode == Opcode::Flush {
            return Action::Flush;
        }
        let base = self.bucket_range(job.bucket).start;
        let hit = (0..self.cfg.bucket_slots)
            .find(|&i| job.valid_mask & (1 << i) != 0 && self.entries[base + i].key == job.head.key);
        match (meta.opcode, hit) {
            (Opcode::Get, Some(i)) => {
                let e = &self.entries[base + i];
                Action::Found { address: e.address, value_length: e.value_length, flags: e.flags }
            }
            (Opcode::Set, Some(i)) => Action::Store { slot: base + i, address: self.entries[base + i].address },
            (Opcode::Set, None) => {
                let empty = (0..self.cfg.bucket_slots).find(|&i| job.valid_mask & (1 << i) == 0);
                match (empty, self.free.pop()) {
                    (Some(i), Some(address)) => Action::Store { slot: base + i, address },
                    (_, address) => {
                        self.free.extend(address);
                        Action::NoRoom
                    }
                }
            }
            (Opcode::Delete, Some(i)) => Action::Remove { slot: base + i, address: self.entries[base + i].address },
            _ => Action::Miss,
        }
    }

    fn memory_write(&mut self) -> bool {
        if !self.out_in.has_room() {
            return false;
        }
        let Some(job) = self.write_in.pop() else {
            return false;
        };
        let meta = job.head.meta;
        match job.action {
            Action::Store { slot, address } => {
                self.entries[slot] = HashTableEntry {
                    valid: true,
                    key: job.head.key.clone(),
                    address,
                    value_length: meta.value_length,
                    flags: meta.flags,
                    expiration: meta.expiration,
                };
            }
            Action::Remove { slot, address } => {
                self.entries[slot].valid = false;
                self.free.push(address);
            }
            Action::Flush => {
                self.entries.iter_mut().for_each(|e| e.valid = false);
                self.free.clear();
                self.free.extend((0..self.cfg.slot_count as u32).rev());
            }
            _ => {}
        }
        if job.enters_filter() {
            let popped = self.filter.pop();
            assert!(popped, "write left the critical section without a filter entry");
        }
        self.out_in.push(job);
        true
    }

    fn output_stage(&mut self, output: &Producer<StoreToken>) -> bool {
        let mut loaded = false;
        if self.emit.is_none() {
            let Some(job) = self.out_in.pop() else {
                return false;
            };
            let forward = matches!(job.action, Action::Store { .. });
            self.emit = Some(Emit { words_left: job.payload_words, forward, head: Some(store_head(job)) });
            loaded = true;
        }
        let emit = self.emit.as_mut().expect("set above");
        if let Some(head) = emit.head.take() {
            if let Err(Token::Head(head)) = output.try_write(Token::Head(head)) {
                emit.head = Some(head);
                return loaded;
            }
        } else if emit.words_left > 0 {
            let Some(&w) = self.payload.front() else {
                return loaded;
            };
            assert_eq!(w.last, emit.words_left == 1, "value payload out of step with its header");
            if emit.forward && output.try_write(Token::Word(w)).is_err() {
                return loaded;
            }
            self.payload.pop();
            emit.words_left -= 1;
        }
        if emit.head.is_none() && emit.words_left == 0 {
            self.emit = None;
        }
        true
    }
}

fn store_head(job: Job) -> StoreHead {
    let RequestHead { mut meta, key, fault } = job.head;
    let (status, fault, op) = match job.action {
        Action::Fault(f) => (Status::Error, Some(f), StoreOp::Pass),
        Action::Miss => (Status::NotFound, fault, StoreOp::Pass),
        Action::Found { address, value_length, flags } => {
            meta.value_length = value_length;
            meta.flags = flags;
            (Status::Found, fault, StoreOp::Read { address })
        }
        Action::Store { address, .. } => (Status::Stored, fault, StoreOp::Write { address }),
        Action::Remove { .. } => (Status::Deleted, fault, StoreOp::Pass),
        Action::Flush => (Status::Flushed, fault, StoreOp::Pass),
        Action::NoRoom => {
            let f = Fault { kind: FaultKind::OutOfMemory, wire_opcode: meta.opcode.wire() };
            (Status::Error, Some(f), StoreOp::Pass)
        }
        Action::Undecided => unreachable!("job left key compare without a decision"),
    };
    StoreHead { meta, key, status, fault, op }
}

/// The hash table stage with its channel ends.
pub struct HashTableStage {
    core: HashCore,
    input: Consumer<RequestToken>,
    output: Producer<StoreToken>,
}

impl HashTableStage {
    pub fn new(
        cfg: HashTableConfig,
        max_value: usize,
        input: Consumer<RequestToken>,
        output: Producer<StoreToken>,
    ) -> Self {
        HashTableStage { core: HashCore::new(cfg, max_value), input, output }
    }

    pub fn poll(&mut self) -> bool {
        self.core.cycle(&self.input, &self.output)
    }

    pub fn core(&self) -> &HashCore {
        &self.core
    }

    pub fn is_idle(&self) -> bool {
        self.core.is_idle()
    }

    pub fn input(&self) -> &Consumer<RequestToken> {
        &self.input
    }

    pub fn output(&self) -> &Producer<StoreToken> {
        &self.output
    }
}
