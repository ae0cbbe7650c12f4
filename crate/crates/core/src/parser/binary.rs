//! Binary protocol lane: a field extractor and an output formatter joined by
//! an intermediate buffer.
//!
//! The extractor places every byte by its offset from the 24-byte header;
//! the formatter decodes extras and builds the internal request.

use crate::fifo::Fifo;
use crate::proto::binary::{BinaryHeader, HEADER_LEN, REQUEST_MAGIC};
use crate::proto::{Fault, FaultKind, Key, Limits, Opcode, Protocol, RequestMeta};
use crate::wordstream::{StreamWord, WordPacker};

use super::Parsed;

const LANE_DEPTH: usize = 2;

/// Raw fields of one message as left by the extractor.
#[derive(Debug)]
struct BinaryFields {
    header: BinaryHeader,
    extras: Vec<u8>,
    key: Vec<u8>,
    value: Vec<StreamWord>,
    fault: Option<FaultKind>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    extras_end: usize,
    key_end: usize,
    body_end: usize,
}

#[derive(Debug)]
struct FieldExtractor {
    limits: Limits,
    pos: usize,
    raw_header: [u8; HEADER_LEN],
    header: BinaryHeader,
    layout: Option<Layout>,
    extras: Vec<u8>,
    key: Vec<u8>,
    value: WordPacker,
    fault: Option<FaultKind>,
}

impl FieldExtractor {
    fn new(limits: Limits) -> Self {
        FieldExtractor {
            limits,
            pos: 0,
            raw_header: [0; HEADER_LEN],
            header: BinaryHeader::default(),
            layout: None,
            extras: Vec::new(),
            key: Vec::new(),
            value: WordPacker::new(),
            fault: None,
        }
    }

    fn fail(&mut self, kind: FaultKind) {
        self.fault.get_or_insert(kind);
    }

    fn on_header(&mut self) {
        let h = BinaryHeader::decode(&self.raw_header);
        self.header = h;
        if h.magic != REQUEST_MAGIC {
            return self.fail(FaultKind::BadMagic);
        }
        let Some(op) = Opcode::from_wire(h.opcode) else {
            return self.fail(FaultKind::UnknownCommand);
        };
        let Some(value_len) = h.value_length() else {
            return self.fail(FaultKind::Framing);
        };
        let key_len = h.key_length as usize;
        let extras_ok = match op {
            Opcode::Set => h.extras_length == 8,
            Opcode::Flush => h.extras_length == 0 || h.extras_length == 4,
            Opcode::Get | Opcode::Delete => h.extras_length == 0,
        };
        let key_ok = match op {
            Opcode::Flush => key_len == 0,
            _ => key_len > 0 && key_len <= self.limits.max_key,
        };
        let value_ok = op == Opcode::Set || value_len == 0;
        if !(extras_ok && key_ok && value_ok) {
            return self.fail(FaultKind::Malformed);
        }
        if value_len as usize > self.limits.max_value {
            return self.fail(FaultKind::TooLarge);
        }
        let extras_end = h.extras_length as usize;
        let key_end = extras_end + key_len;
        self.layout = Some(Layout { extras_end, key_end, body_end: h.total_body_length as usize });
    }

    fn absorb(&mut self, mut bytes: &[u8]) {
        while !bytes.is_empty() {
            if self.pos < HEADER_LEN {
                let n = (HEADER_LEN - self.pos).min(bytes.len());
                self.raw_header[self.pos..self.pos + n].copy_from_slice(&bytes[..n]);
                self.pos += n;
                bytes = &bytes[n..];
                if self.pos == HEADER_LEN {
                    self.on_header();
                }
                continue;
            }
            let Some(layout) = self.layout.filter(|_| self.fault.is_none()) else {
                // skip the rest of a rejected message
                self.pos += bytes.len();
                return;
            };
            let body = self.pos - HEADER_LEN;
            let (end, n) = if body < layout.extras_end {
                let n = (layout.extras_end - body).min(bytes.len());
                self.extras.extend_from_slice(&bytes[..n]);
                (layout.extras_end, n)
            } else if body < layout.key_end {
                let n = (layout.key_end - body).min(bytes.len());
                self.key.extend_from_slice(&bytes[..n]);
                (layout.key_end, n)
            } else if body < layout.body_end {
                let n = (layout.body_end - body).min(bytes.len());
                self.value.push(&bytes[..n]);
                (layout.body_end, n)
            } else {
                self.fail(FaultKind::Framing);
                continue;
            };
            debug_assert!(body + n <= end);
            self.pos += n;
            bytes = &bytes[n..];
        }
    }

    fn finish(&mut self) -> BinaryFields {
        if self.fault.is_none() {
            match self.layout {
                Some(l) if self.pos == HEADER_LEN + l.body_end => {}
                _ => self.fail(FaultKind::Framing),
            }
        }
        self.value.finish();
        let fields = BinaryFields {
            header: self.header,
            extras: std::mem::take(&mut self.extras),
            key: std::mem::take(&mut self.key),
            value: if self.fault.is_none() { self.value.drain().collect() } else { Vec::new() },
            fault: self.fault.take(),
        };
        self.value.drain().for_each(drop);
        self.pos = 0;
        self.layout = None;
        self.header = BinaryHeader::default();
        fields
    }
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

/// Second FSM: intermediate fields to the internal request format.
fn format_request(f: BinaryFields) -> Parsed {
    let h = f.header;
    let opcode = Opcode::from_wire(h.opcode).unwrap_or(Opcode::Get);
    let mut meta = RequestMeta { opaque: h.opaque, ..RequestMeta::new(opcode, Protocol::Binary) };
    if let Some(kind) = f.fault {
        return Parsed {
            meta,
            key: Key::default(),
            value: Vec::new(),
            fault: Some(Fault { kind, wire_opcode: h.opcode }),
        };
    }
    meta.key_length = h.key_length;
    meta.value_length = h.value_length().expect("validated by extractor");
    match opcode {
        Opcode::Set => {
            meta.flags = be32(&f.extras[0..4]);
            meta.expiration = be32(&f.extras[4..8]);
        }
        Opcode::Flush if f.extras.len() == 4 => meta.expiration = be32(&f.extras),
        _ => {}
    }
    Parsed { meta, key: Key::new(f.key), value: f.value, fault: None }
}

/// The binary parser lane.
#[derive(Debug)]
pub(crate) struct BinaryLane {
    input: Fifo<StreamWord>,
    extractor: FieldExtractor,
    buffer: Fifo<BinaryFields>,
    ready: Fifo<Parsed>,
}

impl BinaryLane {
    pub fn new(limits: Limits) -> Self {
        BinaryLane {
            input: Fifo::new(LANE_DEPTH),
            extractor: FieldExtractor::new(limits),
            buffer: Fifo::new(LANE_DEPTH),
            ready: Fifo::new(LANE_DEPTH),
        }
    }

    pub fn can_accept(&self) -> bool {
        self.input.has_room()
    }

    pub fn accept(&mut self, w: StreamWord) {
        self.input.push(w);
    }

    pub fn take_ready(&mut self) -> Option<Parsed> {
        self.ready.pop()
    }

    pub fn is_idle(&self) -> bool {
        self.input.is_empty() && self.buffer.is_empty() && self.ready.is_empty()
    }

    /// One clock of both FSMs, output side first.
    pub fn cycle(&mut self) -> bool {
        let mut progress = false;
        if self.ready.has_room() {
            if let Some(f) = self.buffer.pop() {
                self.ready.push(format_request(f));
                progress = true;
            }
        }
        if let Some(w) = self.input.front().copied() {
            if !w.last || self.buffer.has_room() {
                self.input.pop();
                self.extractor.absorb(w.bytes());
                if w.last {
                    let fields = self.extractor.finish();
                    self.buffer.push(fields);
                }
                progress = true;
            }
        }
        progress
    }
}
