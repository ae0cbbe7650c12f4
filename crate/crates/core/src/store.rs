//! Value store stage: slab reads and writes at hash-table addresses.

use thiserror::Error;

use crate::pipeline::ConfigError;
use crate::proto::{Fault, FaultKind, ResponseHead, ResponseToken, Status, StoreHead, StoreOp, StoreToken, Token};
use crate::wordstream::{keep_mask, words_for, Consumer, Producer, StreamWord, WORD_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    pub slot_count: usize,
    /// Bytes per slot.
    pub slab_size: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { slot_count: 32768, slab_size: crate::proto::DEFAULT_MAX_VALUE }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.slot_count == 0 || self.slot_count > u32::MAX as usize {
            return Err(ConfigError::new("slot_count", "must be in 1..=2^32-1"));
        }
        if self.slab_size == 0 || self.slab_size > u32::MAX as usize {
            return Err(ConfigError::new("slab_size", "must be in 1..=2^32-1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("address {0} outside the slab store")]
    BadAddress(u32),
    #[error("value of {0} bytes exceeds the slab size")]
    TooLarge(u32),
    #[error("read of {requested} bytes from a slot holding {stored}")]
    LengthMismatch { requested: u32, stored: u32 },
}

/// Fixed-size slots; a slot's memory is allocated on first write.
#[derive(Debug)]
pub struct SlabStore {
    slab_size: usize,
    slabs: Vec<Option<Box<[u8]>>>,
    lengths: Vec<u32>,
    accesses: u64,
}

impl SlabStore {
    pub fn new(cfg: StoreConfig) -> Self {
        SlabStore {
            slab_size: cfg.slab_size,
            slabs: vec![None; cfg.slot_count],
            lengths: vec![0; cfg.slot_count],
            accesses: 0,
        }
    }

    pub fn slot_count(&self) -> usize {
        self.slabs.len()
    }

    pub fn slab_size(&self) -> usize {
        self.slab_size
    }

    /// Number of read and write operations performed so far.
    pub fn accesses(&self) -> u64 {
        self.accesses
    }

    pub fn stored_length(&self, address: u32) -> Option<u32> {
        self.lengths.get(address as usize).copied()
    }

    fn check_write(&self, address: u32, value_length: u32) -> Result<(), StoreError> {
        if address as usize >= self.slabs.len() {
            return Err(StoreError::BadAddress(address));
        }
        if value_length as usize > self.slab_size {
            return Err(StoreError::TooLarge(value_length));
        }
        Ok(())
    }

    fn write_word(&mut self, address: u32, index: usize, w: &StreamWord) {
        let size = self.slab_size;
        let slab = self.slabs[address as usize].get_or_insert_with(|| vec![0; size].into_boxed_slice());
        let at = index * WORD_BYTES;
        slab[at..at + w.len()].copy_from_slice(w.bytes());
    }

    fn check_read(&self, address: u32, value_length: u32) -> Result<(), StoreError> {
        let stored = self.stored_length(address).ok_or(StoreError::BadAddress(address))?;
        if stored != value_length {
            return Err(StoreError::LengthMismatch { requested: value_length, stored });
        }
        Ok(())
    }

    fn read_word(&self, address: u32, index: usize, value_length: u32) -> StreamWord {
        let len = value_length as usize;
        let at = index * WORD_BYTES;
        let n = (len - at).min(WORD_BYTES);
        let mut data = [0; WORD_BYTES];
        if let Some(slab) = &self.slabs[address as usize] {
            data[..n].copy_from_slice(&slab[at..at + n]);
        }
        StreamWord { data, keep: keep_mask(n), last: at + n == len }
    }

    /// Stores `value` at `address`. Nothing is written on error.
    pub fn vs_write(&mut self, address: u32, value: &[StreamWord], value_length: u32) -> Result<(), StoreError> {
        self.check_write(address, value_length)?;
        self.accesses += 1;
        for (i, w) in value.iter().enumerate() {
            self.write_word(address, i, w);
        }
        self.lengths[address as usize] = value_length;
        Ok(())
    }

    /// Reads the value at `address`; `value_length` must match what was stored.
    pub fn vs_read(&mut self, address: u32, value_length: u32) -> Result<Vec<StreamWord>, StoreError> {
        self.check_read(address, value_length)?;
        self.accesses += 1;
        Ok((0..words_for(value_length as usize)).map(|i| self.read_word(address, i, value_length)).collect())
    }
}

#[derive(Debug)]
enum State {
    Idle,
    /// Absorbing value words into a slot. `ok` is false when the value is
    /// being discarded.
    Writing {
        head: ResponseHead,
        address: u32,
        index: usize,
        ok: bool,
    },
    /// Sending a head and then `remaining` words read from `address`.
    Sending {
        head: Option<ResponseHead>,
        address: u32,
        index: usize,
        remaining: usize,
    },
}

fn response(h: StoreHead) -> ResponseHead {
    ResponseHead { meta: h.meta, key: h.key, status: h.status, fault: h.fault }
}

/// The dispatch FSM: one token in or out per clock, in arrival order.
#[derive(Debug)]
pub struct StoreCore {
    store: SlabStore,
    state: State,
}

impl StoreCore {
    pub fn new(cfg: StoreConfig) -> Self {
        StoreCore { store: SlabStore::new(cfg), state: State::Idle }
    }

    pub fn store(&self) -> &SlabStore {
        &self.store
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.state, State::Idle)
    }

    pub fn cycle(&mut self, input: &Consumer<StoreToken>, output: &Producer<ResponseToken>) -> bool {
        match std::mem::replace(&mut self.state, State::Idle) {
            State::Idle => match input.try_read() {
                None => false,
                Some(Token::Head(h)) => {
                    self.dispatch(h);
                    true
                }
                Some(Token::Word(_)) => panic!("value word without a write command"),
            },
            State::Writing { mut head, address, index, ok } => {
                let Some(tok) = input.try_read() else {
                    self.state = State::Writing { head, address, index, ok };
                    return false;
                };
                let Token::Word(w) = tok else {
                    panic!("write command ended before its value");
                };
                if ok {
                    self.store.write_word(address, index, &w);
                }
                if w.last {
                    let written = index * WORD_BYTES + w.len();
                    assert_eq!(written, head.meta.value_length as usize, "value length differs from its header");
                    if ok {
                        self.store.lengths[address as usize] = head.meta.value_length;
                    } else {
                        head.status = Status::Error;
                    }
                    self.state = State::Sending { head: Some(head), address, index: 0, remaining: 0 };
                } else {
                    self.state = State::Writing { head, address, index: index + 1, ok };
                }
                true
            }
            State::Sending { head: Some(head), address, index, remaining } => match output.try_write(Token::Head(head))
            {
                Ok(()) => {
                    if remaining > 0 {
                        self.state = State::Sending { head: None, address, index, remaining };
                    }
                    true
                }
                Err(Token::Head(head)) => {
                    self.state = State::Sending { head: Some(head), address, index, remaining };
                    false
                }
                Err(Token::Word(_)) => unreachable!(),
            },
            State::Sending { head: None, address, index, remaining } => {
                let len = self.store.lengths[address as usize];
                let w = self.store.read_word(address, index, len);
                if output.try_write(Token::Word(w)).is_err() {
                    self.state = State::Sending { head: None, address, index, remaining };
                    return false;
                }
                if remaining > 1 {
                    self.state = State::Sending { head: None, address, index: index + 1, remaining: remaining - 1 };
                }
                true
            }
        }
    }

    fn dispatch(&mut self, h: StoreHead) {
        let op = h.op;
        let mut head = response(h);
        let len = head.meta.value_length;
        self.state = match op {
            StoreOp::Write { address } => {
                let ok = match self.store.check_write(address, len) {
                    Ok(()) => true,
                    Err(StoreError::TooLarge(_)) => {
                        head.fault = Some(Fault { kind: FaultKind::TooLarge, wire_opcode: head.meta.opcode.wire() });
                        false
                    }
                    Err(e) => panic!("hash table and value store disagree: {e}"),
                };
                if ok {
                    self.store.accesses += 1;
                }
                if len == 0 {
                    if ok {
                        self.store.lengths[address as usize] = 0;
                    } else {
                        head.status = Status::Error;
                    }
                    State::Sending { head: Some(head), address, index: 0, remaining: 0 }
                } else {
                    State::Writing { head, address, index: 0, ok }
                }
            }
            StoreOp::Read { address } => {
                if let Err(e) = self.store.check_read(address, len) {
                    panic!("hash table and value store disagree: {e}");
                }
                self.store.accesses += 1;
                State::Sending { head: Some(head), address, index: 0, remaining: words_for(len as usize) }
            }
            StoreOp::Pass => State::Sending { head: Some(head), address: 0, index: 0, remaining: 0 },
        };
    }
}

/// The value store stage with its channel ends.
pub struct ValueStoreStage {
    core: StoreCore,
    input: Consumer<StoreToken>,
    output: Producer<ResponseToken>,
}

impl ValueStoreStage {
    pub fn new(cfg: StoreConfig, input: Consumer<StoreToken>, output: Producer<ResponseToken>) -> Self {
        ValueStoreStage { core: StoreCore::new(cfg), input, output }
    }

    pub fn poll(&mut self) -> bool {
        self.core.cycle(&self.input, &self.output)
    }

    pub fn core(&self) -> &StoreCore {
        &self.core
    }

    pub fn is_idle(&self) -> bool {
        self.core.is_idle()
    }

    pub fn input(&self) -> &Consumer<StoreToken> {
        &self.input
    }

    pub fn output(&self) -> &Producer<ResponseToken> {
        &self.output
    }
}
