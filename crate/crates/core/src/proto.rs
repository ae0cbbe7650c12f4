//! Internal pipeline format exchanged by the four stages, plus the memcached
//! binary header layout shared by the parser, the formatter and the client.

use std::fmt;
use std::ops::Deref;

use thiserror::Error;

use crate::wordstream::{unpack, StreamWord};

/// Longest key accepted by default (memcached convention).
pub const MAX_KEY_LEN: usize = 250;
/// Largest value accepted by default.
pub const DEFAULT_MAX_VALUE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Get,
    Set,
    Delete,
    Flush,
}

impl Opcode {
    pub const ALL: [Opcode; 4] = [Opcode::Get, Opcode::Set, Opcode::Delete, Opcode::Flush];

    /// Binary protocol opcode byte.
    pub const fn wire(self) -> u8 {
        match self {
            Opcode::Get => 0x00,
            Opcode::Set => 0x01,
            Opcode::Delete => 0x04,
            Opcode::Flush => 0x08,
        }
    }

    pub const fn from_wire(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(Opcode::Get),
            0x01 => Some(Opcode::Set),
            0x04 => Some(Opcode::Delete),
            0x08 => Some(Opcode::Flush),
            _ => None,
        }
    }

    /// SET and DELETE go through the hash table's critical section.
    pub const fn is_write(self) -> bool {
        matches!(self, Opcode::Set | Opcode::Delete)
    }

    pub const fn name(self) -> &'static str {
        match self {
            Opcode::Get => "get",
            Opcode::Set => "set",
            Opcode::Delete => "delete",
            Opcode::Flush => "flush",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Binary,
    Ascii,
}

impl Protocol {
    pub const fn name(self) -> &'static str {
        match self {
            Protocol::Binary => "binary",
            Protocol::Ascii => "ascii",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Size limits enforced by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_key: usize,
    pub max_value: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_key: MAX_KEY_LEN, max_value: DEFAULT_MAX_VALUE }
    }
}

/// Request metadata extracted by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestMeta {
    pub opcode: Opcode,
    pub protocol: Protocol,
    pub key_length: u16,
    pub value_length: u32,
    pub flags: u32,
    pub expiration: u32,
    /// Binary protocol echo token; 0 for ASCII.
    pub opaque: u32,
    /// Issued by the parser in arrival order.
    pub request_id: u64,
}

impl RequestMeta {
    pub fn new(opcode: Opcode, protocol: Protocol) -> Self {
        RequestMeta {
            opcode,
            protocol,
            key_length: 0,
            value_length: 0,
            flags: 0,
            expiration: 0,
            opaque: 0,
            request_id: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetaViolation {
    #[error("key_length")]
    KeyLength,
    #[error("value_length")]
    ValueLength,
}

/// Checks the metadata invariants and returns the first one violated.
pub fn validate_meta(meta: &RequestMeta, limits: &Limits) -> Result<(), MetaViolation> {
    let key_len = meta.key_length as usize;
    let key_ok = match meta.opcode {
        Opcode::Flush => key_len == 0,
        _ => key_len > 0 && key_len <= limits.max_key,
    };
    if !key_ok {
        return Err(MetaViolation::KeyLength);
    }
    let value_ok = match meta.opcode {
        Opcode::Set => meta.value_length as usize <= limits.max_value,
        _ => meta.value_length == 0,
    };
    if !value_ok {
        return Err(MetaViolation::ValueLength);
    }
    Ok(())
}

/// A key carried whole through the pipeline.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Key(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl Deref for Key {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl From<&[u8]> for Key {
    fn from(b: &[u8]) -> Self {
        Key(b.to_vec())
    }
}

impl From<&str> for Key {
    fn from(s: &str) -> Self {
        Key(s.as_bytes().to_vec())
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", String::from_utf8_lossy(&self.0))
    }
}

/// Why a request could not be served normally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    /// Command word or opcode byte not supported.
    UnknownCommand,
    /// A field is syntactically wrong (non-digit, missing, key too long).
    Malformed,
    /// Message boundaries disagree with declared lengths or terminators.
    Framing,
    /// Declared value exceeds the configured maximum.
    TooLarge,
    /// No room in the bucket or in the value store.
    OutOfMemory,
    /// Binary request without the 0x80 magic.
    BadMagic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub kind: FaultKind,
    /// Opcode byte to echo in a binary error response.
    pub wire_opcode: u8,
}

/// A stream item: a message header followed by its value words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token<H> {
    Head(H),
    Word(StreamWord),
}

/// Parser output head. `meta.value_length` bytes of value words follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestHead {
    pub meta: RequestMeta,
    pub key: Key,
    pub fault: Option<Fault>,
}

pub type RequestToken = Token<RequestHead>;

/// Outcome of a request as seen by the formatter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Stored,
    NotStored,
    Found,
    NotFound,
    Deleted,
    Flushed,
    Error,
}

/// Value-store output head. For `Found`, `meta.value_length` bytes of value
/// words follow; nothing follows any other status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseHead {
    pub meta: RequestMeta,
    pub key: Key,
    pub status: Status,
    pub fault: Option<Fault>,
}

impl ResponseHead {
    pub fn carries_value(&self) -> bool {
        self.status == Status::Found
    }
}

pub type ResponseToken = Token<ResponseHead>;

/// What the value store does with a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOp {
    /// Store the following `meta.value_length` bytes at `address`.
    Write { address: u32 },
    /// Read `meta.value_length` bytes from `address`.
    Read { address: u32 },
    /// Forward the status untouched.
    Pass,
}

/// Hash table output head. Value words follow only for [`StoreOp::Write`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreHead {
    pub meta: RequestMeta,
    pub key: Key,
    pub status: Status,
    pub fault: Option<Fault>,
    pub op: StoreOp,
}

pub type StoreToken = Token<StoreHead>;

/// A parsed request collected into one value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineRequest {
    pub meta: RequestMeta,
    pub key: Key,
    pub value: Vec<StreamWord>,
}

impl PipelineRequest {
    pub fn value_bytes(&self) -> Vec<u8> {
        unpack(&self.value)
    }

    /// Key and value sizes agree with the metadata.
    pub fn is_consistent(&self) -> bool {
        self.key.len() == self.meta.key_length as usize
            && self.value.iter().map(|w| w.len()).sum::<usize>() == self.meta.value_length as usize
    }
}

/// A response collected into one value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineResponse {
    pub meta: RequestMeta,
    pub key: Key,
    pub status: Status,
    pub fault: Option<Fault>,
    pub value: Option<Vec<StreamWord>>,
}

impl PipelineResponse {
    pub fn head(&self) -> ResponseHead {
        ResponseHead { meta: self.meta, key: self.key.clone(), status: self.status, fault: self.fault }
    }
}

/// Memcached binary protocol header (24 bytes, multi-byte fields big-endian).
pub mod binary {
    pub const HEADER_LEN: usize = 24;
    pub const REQUEST_MAGIC: u8 = 0x80;
    pub const RESPONSE_MAGIC: u8 = 0x81;

    pub const STATUS_OK: u16 = 0x0000;
    pub const STATUS_KEY_NOT_FOUND: u16 = 0x0001;
    pub const STATUS_VALUE_TOO_LARGE: u16 = 0x0003;
    pub const STATUS_INVALID_ARGUMENTS: u16 = 0x0004;
    pub const STATUS_ITEM_NOT_STORED: u16 = 0x0005;
    pub const STATUS_UNKNOWN_COMMAND: u16 = 0x0081;
    pub const STATUS_OUT_OF_MEMORY: u16 = 0x0082;
    pub const STATUS_INTERNAL_ERROR: u16 = 0x0084;

    /// Header fields. `reserved` is the vbucket id in requests and the
    /// status in responses.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct BinaryHeader {
        pub magic: u8,
        pub opcode: u8,
        pub key_length: u16,
        pub extras_length: u8,
        pub data_type: u8,
        pub reserved: u16,
        pub total_body_length: u32,
        pub opaque: u32,
        pub cas: u64,
    }

    impl BinaryHeader {
        pub fn encode(&self) -> [u8; HEADER_LEN] {
            let mut b = [0u8; HEADER_LEN];
            b[0] = self.magic;
            b[1] = self.opcode;
            b[2..4].copy_from_slice(&self.key_length.to_be_bytes());
            b[4] = self.extras_length;
            b[5] = self.data_type;
            b[6..8].copy_from_slice(&self.reserved.to_be_bytes());
            b[8..12].copy_from_slice(&self.total_body_length.to_be_bytes());
            b[12..16].copy_from_slice(&self.opaque.to_be_bytes());
            b[16..24].copy_from_slice(&self.cas.to_be_bytes());
            b
        }

        pub fn decode(b: &[u8; HEADER_LEN]) -> Self {
            BinaryHeader {
                magic: b[0],
                opcode: b[1],
                key_length: u16::from_be_bytes([b[2], b[3]]),
                extras_length: b[4],
                data_type: b[5],
                reserved: u16::from_be_bytes([b[6], b[7]]),
                total_body_length: u32::from_be_bytes([b[8], b[9], b[10], b[11]]),
                opaque: u32::from_be_bytes([b[12], b[13], b[14], b[15]]),
                cas: u64::from_be_bytes([b[16], b[17], b[18], b[19], b[20], b[21], b[22], b[23]]),
            }
        }

        /// Value bytes implied by the header, if the lengths are consistent.
        pub fn value_length(&self) -> Option<u32> {
            self.total_body_length.checked_sub(self.extras_length as u32)?.checked_sub(self.key_length as u32)
        }
    }
}
