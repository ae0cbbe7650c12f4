//! ASCII protocol lane.
//!
//! Grammar: `command SP key [SP flags SP expiration SP value_length] CRLF
//! [value CRLF]` with commands `get`, `set`, `delete` and `flush_all`
//! (case-insensitive).
//!
//! Six extractor stages run in sequence, one per field. Every stage runs the
//! same scanning code: it starts at the byte offset the previous stage left
//! behind, extracts exactly one field and forwards the rest of the word, so a
//! single word can carry the ends of up to three fields through three
//! stages. Numeric stages run their field through [`ascii_to_uint`], whose
//! result appears [`CONVERT_LATENCY`] clocks later; the length stage holds
//! the value bytes back until then. Each stage also writes one result per
//! message into a buffer read by the output formatter once the end of the
//! message has passed the last stage.

use crate::fifo::Fifo;
use crate::proto::{Fault, FaultKind, Key, Limits, Opcode, Protocol, RequestMeta};
use crate::wordstream::{StreamWord, WordPacker};

use super::convert::{ascii_to_uint, CONVERT_LATENCY};
use super::search::{find_delimiter, SearchVariant, NOT_FOUND};
use super::Parsed;

const SP: u8 = b' ';
const CR: u8 = b'\r';
const LF: u8 = b'\n';

const SEGMENT_DEPTH: usize = 2;
const RESULT_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Command,
    Key,
    Flags,
    Expiration,
    ValueLength,
    Value,
}

const FIELDS: [Field; 6] =
    [Field::Command, Field::Key, Field::Flags, Field::Expiration, Field::ValueLength, Field::Value];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    Space,
    CrLf,
}

/// Per-message sideband carried with every segment.
#[derive(Debug, Clone, Copy)]
struct MsgCtx {
    seq: u64,
    command: Option<Opcode>,
    value_length: u32,
    fault: Option<FaultKind>,
}

/// The unconsumed tail of a word, starting at `offset`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    word: StreamWord,
    offset: usize,
    /// Word index within the message.
    index: usize,
    ctx: MsgCtx,
}

impl Segment {
    fn is_marker(&self) -> bool {
        self.offset >= self.word.len()
    }
}

#[derive(Debug)]
enum FieldResult {
    Absent,
    Text(Vec<u8>),
    Number(u32),
    Value(Vec<StreamWord>),
}

/// A numeric result still inside the converter.
#[derive(Debug)]
struct Converting {
    result: FieldResult,
    wait: u32,
    /// Segment held back until the value length is known.
    held: Option<Segment>,
}

#[derive(Debug)]
enum Scan {
    Line,
    LineLf(Term),
    Value { remaining: u32 },
    ValueCr,
    ValueLf,
    Done,
}

fn parse_command(name: &[u8]) -> Option<Opcode> {
    const NAMES: [(&[u8], Opcode); 4] =
        [(b"get", Opcode::Get), (b"set", Opcode::Set), (b"delete", Opcode::Delete), (b"flush_all", Opcode::Flush)];
    NAMES.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|&(_, op)| op)
}

#[derive(Debug)]
struct FieldStage {
    field: Field,
    input: Fifo<Segment>,
    results: Fifo<FieldResult>,
    seq: Option<u64>,
    ctx: MsgCtx,
    state: Scan,
    result_pushed: bool,
    buf: Vec<u8>,
    value: WordPacker,
    converter: Option<Converting>,
}

impl FieldStage {
    fn new(field: Field) -> Self {
        FieldStage {
            field,
            input: Fifo::new(SEGMENT_DEPTH),
            results: Fifo::new(RESULT_DEPTH),
            seq: None,
            ctx: MsgCtx { seq: 0, command: None, value_length: 0, fault: None },
            state: Scan::Done,
            result_pushed: false,
            buf: Vec::new(),
            value: WordPacker::new(),
            converter: None,
        }
    }

    fn start(&mut self, ctx: MsgCtx) {
        self.seq = Some(ctx.seq);
        self.ctx = ctx;
        self.buf.clear();
        self.result_pushed = false;
        let active = match self.field {
            Field::Command => true,
            _ if ctx.fault.is_some() => false,
            Field::Key => ctx.command != Some(Opcode::Flush),
            _ => ctx.command == Some(Opcode::Set),
        };
        self.state = if !active {
            self.push_result(FieldResult::Absent);
            Scan::Done
        } else if self.field == Field::Value {
            Scan::Value { remaining: ctx.value_length }
        } else {
            Scan::Line
        };
    }

    fn push_result(&mut self, r: FieldResult) {
        if !self.result_pushed {
            self.results.push(r);
            self.result_pushed = true;
        }
    }

    fn fail(&mut self, kind: FaultKind) {
        self.ctx.fault.get_or_insert(kind);
        self.push_result(FieldResult::Absent);
        self.state = Scan::Done;
    }

    /// Interprets a completed line field.
    fn complete_line(&mut self, term: Term, limits: &Limits) {
        let expected = match (self.field, self.ctx.command) {
            (Field::Command, _) => {
                let Some(op) = parse_command(&self.buf) else {
                    return self.fail(FaultKind::UnknownCommand);
                };
                self.ctx.command = Some(op);
                if op == Opcode::Flush {
                    Term::CrLf
                } else {
                    Term::Space
                }
            }
            (Field::Key, Some(Opcode::Set)) => Term::Space,
            (Field::Key, _) => Term::CrLf,
            (Field::Flags | Field::Expiration, _) => Term::Space,
            (Field::ValueLength, _) => Term::CrLf,
            (Field::Value, _) => unreachable!("value is not a line field"),
        };
        if term != expected {
            return self.fail(FaultKind::Malformed);
        }
        let result = match self.field {
            Field::Command => FieldResult::Absent,
            Field::Key => {
                if self.buf.is_empty() || self.buf.len() > limits.max_key {
                    return self.fail(FaultKind::Malformed);
                }
                FieldResult::Text(std::mem::take(&mut self.buf))
            }
            _ => {
                let Ok(n) = ascii_to_uint(&self.buf) else {
                    return self.fail(FaultKind::Malformed);
                };
                if self.field == Field::ValueLength {
                    if n as usize > limits.max_value {
                        return self.fail(FaultKind::TooLarge);
                    }
                    self.ctx.value_length = n;
                }
                self.converter = Some(Converting { result: FieldResult::Number(n), wait: CONVERT_LATENCY, held: None });
                self.result_pushed = true;
                self.state = Scan::Done;
                return;
            }
        };
        self.push_result(result);
        self.state = Scan::Done;
    }

    /// Runs this stage's field over one segment. Returns the offset where the
    /// stage stopped consuming.
    fn consume(&mut self, seg: &Segment, variant: SearchVariant, limits: &Limits, max_line: usize) -> usize {
        let bytes = seg.word.bytes();
        let valid = bytes.len();
        let base = seg.index * 8;
        let mut off = seg.offset;
        while off < valid {
            match self.state {
                Scan::Done => break,
                Scan::Line => {
                    let sp = find_delimiter(&seg.word.data, off, SP, variant);
                    let cr = find_delimiter(&seg.word.data, off, CR, variant);
                    let rel = sp.min(cr);
                    if rel == NOT_FOUND || off + rel >= valid {
                        if base + valid + 2 > max_line {
                            self.fail(FaultKind::Framing);
                        } else {
                            self.buf.extend_from_slice(&bytes[off..]);
                        }
                        off = valid;
                        continue;
                    }
                    let at = off + rel;
                    self.buf.extend_from_slice(&bytes[off..at]);
                    off = at + 1;
                    if base + at + 2 > max_line {
                        self.fail(FaultKind::Framing);
                    } else if sp < cr {
                        self.complete_line(Term::Space, limits);
                    } else {
                        self.state = Scan::LineLf(Term::CrLf);
                    }
                }
                Scan::LineLf(term) => {
                    if bytes[off] != LF {
                        self.fail(FaultKind::Malformed);
                        continue;
                    }
                    off += 1;
                    self.complete_line(term, limits);
                }
                Scan::Value { remaining } => {
                    let n = (remaining as usize).min(valid - off);
                    self.value.push(&bytes[off..off + n]);
                    off += n;
                    let left = remaining - n as u32;
                    self.state = if left == 0 { Scan::ValueCr } else { Scan::Value { remaining: left } };
                }
                Scan::ValueCr | Scan::ValueLf => {
                    let want = if matches!(self.state, Scan::ValueCr) { CR } else { LF };
                    if bytes[off] != want {
                        self.value.finish();
                        self.value.drain().for_each(drop);
                        self.fail(FaultKind::Framing);
                        continue;
                    }
                    off += 1;
                    if want == CR {
                        self.state = Scan::ValueLf;
                    } else {
                        self.value.finish();
                        let words = self.value.drain().collect();
                        self.push_result(FieldResult::Value(words));
                        self.state = Scan::Done;
                    }
                }
            }
        }
        // zero-length values finish without consuming a byte
        if let Scan::Value { remaining: 0 } = self.state {
            self.state = Scan::ValueCr;
        }
        off
    }

    /// One clock: take one segment, emit at most one segment downstream.
    fn cycle(&mut self, out: &mut Fifo<Segment>, variant: SearchVariant, limits: &Limits, max_line: usize) -> bool {
        let mut progress = false;
        if let Some(c) = self.converter.as_mut() {
            c.wait = c.wait.saturating_sub(1);
            progress = true;
            if c.wait == 0 && self.results.has_room() && (c.held.is_none() || out.has_room()) {
                let c = self.converter.take().expect("checked");
                self.results.push(c.result);
                if let Some(seg) = c.held {
                    out.push(seg);
                }
            }
        }
        if self.converter.is_some() {
            let next_is_new = self.input.front().is_some_and(|s| Some(s.ctx.seq) != self.seq);
            if self.field == Field::ValueLength || next_is_new {
                return progress;
            }
        }
        if !out.has_room() || !self.results.has_room() {
            return progress;
        }
        let Some(seg) = self.input.pop() else {
            return progress;
        };
        if self.seq != Some(seg.ctx.seq) {
            self.start(seg.ctx);
        }
        let off = self.consume(&seg, variant, limits, max_line);
        if seg.word.last && !matches!(self.state, Scan::Done) {
            if matches!(self.state, Scan::Value { .. } | Scan::ValueCr | Scan::ValueLf) {
                self.value.finish();
                self.value.drain().for_each(drop);
            }
            // message ended inside this field
            self.fail(FaultKind::Framing);
        }
        if off < seg.word.len() || seg.word.last {
            let seg = Segment { offset: off, ctx: self.ctx, ..seg };
            match self.converter.as_mut() {
                Some(c) if self.field == Field::ValueLength => c.held = Some(seg),
                _ => out.push(seg),
            }
        }
        true
    }
}

/// The ASCII parser lane: six extractor stages and an output formatter.
#[derive(Debug)]
pub(crate) struct AsciiLane {
    variant: SearchVariant,
    limits: Limits,
    max_line: usize,
    stages: Vec<FieldStage>,
    tail: Fifo<Segment>,
    ready: Fifo<Parsed>,
    next_seq: u64,
    word_index: usize,
    extra_bytes: bool,
}

impl AsciiLane {
    pub fn new(variant: SearchVariant, limits: Limits, max_line: usize) -> Self {
        AsciiLane {
            variant,
            limits,
            max_line,
            stages: FIELDS.into_iter().map(FieldStage::new).collect(),
            tail: Fifo::new(SEGMENT_DEPTH),
            ready: Fifo::new(SEGMENT_DEPTH),
            next_seq: 0,
            word_index: 0,
            extra_bytes: false,
        }
    }

    pub fn can_accept(&self) -> bool {
        self.stages[0].input.has_room()
    }

    pub fn accept(&mut self, word: StreamWord) {
        let ctx = MsgCtx { seq: self.next_seq, command: None, value_length: 0, fault: None };
        self.stages[0].input.push(Segment { word, offset: 0, index: self.word_index, ctx });
        if word.last {
            self.next_seq += 1;
            self.word_index = 0;
        } else {
            self.word_index += 1;
        }
    }

    pub fn take_ready(&mut self) -> Option<Parsed> {
        self.ready.pop()
    }

    pub fn is_idle(&self) -> bool {
        self.stages.iter().all(|s| s.input.is_empty() && s.converter.is_none())
            && self.tail.is_empty()
            && self.ready.is_empty()
    }

    /// One clock of the lane, output side first.
    pub fn cycle(&mut self) -> bool {
        let mut progress = self.format_output();
        for i in (0..self.stages.len()).rev() {
            let (head, rest) = self.stages.split_at_mut(i + 1);
            let out = match rest.first_mut() {
                Some(next) => &mut next.input,
                None => &mut self.tail,
            };
            progress |= head[i].cycle(out, self.variant, &self.limits, self.max_line);
        }
        progress
    }

    /// Output formatter: waits for the end of a message to leave the last
    /// extractor, then collects one result from every stage.
    fn format_output(&mut self) -> bool {
        if !self.ready.has_room() {
            return false;
        }
        let Some(seg) = self.tail.front().copied() else {
            return false;
        };
        if seg.word.last && self.stages.iter().any(|s| s.results.is_empty()) {
            return false;
        }
        self.tail.pop();
        if !seg.is_marker() && seg.ctx.fault.is_none() {
            self.extra_bytes = true;
        }
        if !seg.word.last {
            return true;
        }
        let results: Vec<FieldResult> = self.stages.iter_mut().map(|s| s.results.pop().expect("checked")).collect();
        let mut fault = seg.ctx.fault;
        if std::mem::take(&mut self.extra_bytes) {
            fault.get_or_insert(FaultKind::Framing);
        }
        let opcode = seg.ctx.command.unwrap_or(Opcode::Get);
        let meta = RequestMeta::new(opcode, Protocol::Ascii);
        let parsed = if let Some(kind) = fault {
            Parsed {
                meta,
                key: Key::default(),
                value: Vec::new(),
                fault: Some(Fault { kind, wire_opcode: opcode.wire() }),
            }
        } else {
            let mut meta = meta;
            let mut key = Key::default();
            let mut value = Vec::new();
            for (field, r) in FIELDS.iter().zip(results) {
                match (field, r) {
                    (Field::Key, FieldResult::Text(k)) => key = Key::new(k),
                    (Field::Flags, FieldResult::Number(n)) => meta.flags = n,
                    (Field::Expiration, FieldResult::Number(n)) => meta.expiration = n,
                    (Field::Value, FieldResult::Value(v)) => value = v,
                    _ => {}
                }
            }
            meta.key_length = key.len() as u16;
            meta.value_length = seg.ctx.value_length;
            Parsed { meta, key, value, fault: None }
        };
        self.ready.push(parsed);
        true
    }
}
