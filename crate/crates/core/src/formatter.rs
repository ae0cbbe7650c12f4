//! Response formatter stage.
//!
//! An ASCII response is assembled from five sections written one after the
//! other at a running byte offset: the header text, the key, the flags text,
//! the length text, and the value with its terminators. Binary responses have
//! fixed offsets: a 24-byte header, optional 4-byte flags, then the value.

use std::borrow::Cow;

use crate::parser::CONVERT_LATENCY;
use crate::proto::binary::*;
use crate::proto::{FaultKind, Opcode, PipelineResponse, Protocol, ResponseHead, ResponseToken, Status, Token};
use crate::wordstream::{Consumer, Producer, StreamWord, WordPacker};

/// Decimal digits of a `u32`, without leading zeros.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Digits {
    buf: [u8; 10],
    start: usize,
}

impl std::ops::Deref for Digits {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.buf[self.start..]
    }
}

impl std::fmt::Debug for Digits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(std::str::from_utf8(self).expect("ascii digits"))
    }
}

pub fn uint_to_ascii(mut n: u32) -> Digits {
    let mut buf = [0u8; 10];
    let mut start = buf.len();
    loop {
        start -= 1;
        buf[start] = b'0' + (n % 10) as u8;
        n /= 10;
        if n == 0 {
            return Digits { buf, start };
        }
    }
}

pub const ASCII_ERROR: &[u8] = b"ERROR\r\n";
pub const ASCII_BAD_FORMAT: &[u8] = b"CLIENT_ERROR bad command line format\r\n";
pub const ASCII_BAD_CHUNK: &[u8] = b"CLIENT_ERROR bad data chunk\r\n";
pub const ASCII_TOO_LARGE: &[u8] = b"SERVER_ERROR object too large for cache\r\n";
pub const ASCII_OUT_OF_MEMORY: &[u8] = b"SERVER_ERROR out of memory\r\n";

fn ascii_error(fault: Option<FaultKind>) -> &'static [u8] {
    match fault {
        Some(FaultKind::UnknownCommand | FaultKind::BadMagic) => ASCII_ERROR,
        Some(FaultKind::Malformed) => ASCII_BAD_FORMAT,
        Some(FaultKind::Framing) => ASCII_BAD_CHUNK,
        Some(FaultKind::TooLarge) => ASCII_TOO_LARGE,
        Some(FaultKind::OutOfMemory) | None => ASCII_OUT_OF_MEMORY,
    }
}

pub fn binary_status(h: &ResponseHead) -> u16 {
    match h.status {
        Status::Stored | Status::Found | Status::Deleted | Status::Flushed => STATUS_OK,
        Status::NotFound => STATUS_KEY_NOT_FOUND,
        Status::NotStored => STATUS_ITEM_NOT_STORED,
        Status::Error => match h.fault.map(|f| f.kind) {
            Some(FaultKind::UnknownCommand) => STATUS_UNKNOWN_COMMAND,
            Some(FaultKind::Malformed | FaultKind::Framing) => STATUS_INVALID_ARGUMENTS,
            Some(FaultKind::TooLarge) => STATUS_VALUE_TOO_LARGE,
            Some(FaultKind::BadMagic) => STATUS_INTERNAL_ERROR,
            Some(FaultKind::OutOfMemory) | None => STATUS_OUT_OF_MEMORY,
        },
    }
}

/// Bytes around the value, one entry per section.
struct Layout {
    sections: Vec<Cow<'static, [u8]>>,
    trailer: &'static [u8],
    /// First section that holds converted numbers, if any.
    converted_from: Option<usize>,
}

fn ascii_layout(h: &ResponseHead) -> Layout {
    let fixed =
        |text: &'static [u8]| Layout { sections: vec![Cow::Borrowed(text)], trailer: b"", converted_from: None };
    match (h.status, h.meta.opcode) {
        (Status::Found, _) => {
            let mut flags = b" ".to_vec();
            flags.extend_from_slice(&uint_to_ascii(h.meta.flags));
            let mut length = b" ".to_vec();
            length.extend_from_slice(&uint_to_ascii(h.meta.value_length));
            length.extend_from_slice(b"\r\n");
            Layout {
                sections: vec![
                    Cow::Borrowed(b"VALUE "),
                    Cow::Owned(h.key.to_vec()),
                    Cow::Owned(flags),
                    Cow::Owned(length),
                ],
                trailer: b"\r\nEND\r\n",
                converted_from: Some(2),
            }
        }
        (Status::Stored, _) => fixed(b"STORED\r\n"),
        (Status::NotStored, _) => fixed(b"NOT_STORED\r\n"),
        (Status::NotFound, Opcode::Get) => fixed(b"END\r\n"),
        (Status::NotFound, _) => fixed(b"NOT_FOUND\r\n"),
        (Status::Deleted, _) => fixed(b"DELETED\r\n"),
        (Status::Flushed, _) => fixed(b"OK\r\n"),
        (Status::Error, _) => fixed(ascii_error(h.fault.map(|f| f.kind))),
    }
}

fn binary_layout(h: &ResponseHead) -> Layout {
    let found = h.status == Status::Found;
    let extras_length = if found { 4 } else { 0 };
    let value_length = if found { h.meta.value_length } else { 0 };
    let header = BinaryHeader {
        magic: RESPONSE_MAGIC,
        opcode: h.fault.map_or(h.meta.opcode.wire(), |f| f.wire_opcode),
        extras_length,
        reserved: binary_status(h),
        total_body_length: extras_length as u32 + value_length,
        opaque: h.meta.opaque,
        ..Default::default()
    };
    let mut bytes = header.encode().to_vec();
    if found {
        bytes.extend_from_slice(&h.meta.flags.to_be_bytes());
    }
    Layout { sections: vec![Cow::Owned(bytes)], trailer: b"", converted_from: None }
}

fn layout(h: &ResponseHead) -> Layout {
    match h.meta.protocol {
        Protocol::Ascii => ascii_layout(h),
        Protocol::Binary => binary_layout(h),
    }
}

fn format_with(resp: &PipelineResponse) -> Vec<StreamWord> {
    let l = layout(&resp.head());
    let mut p = WordPacker::new();
    for s in &l.sections {
        p.push(s);
    }
    if resp.status == Status::Found {
        for w in resp.value.iter().flatten() {
            p.push(w.bytes());
        }
    }
    p.push(l.trailer);
    p.finish();
    p.drain().collect()
}

/// Formats an ASCII response.
pub fn format_ascii(resp: &PipelineResponse) -> Vec<StreamWord> {
    debug_assert_eq!(resp.meta.protocol, Protocol::Ascii);
    format_with(resp)
}

/// Formats a binary response.
pub fn format_binary(resp: &PipelineResponse) -> Vec<StreamWord> {
    debug_assert_eq!(resp.meta.protocol, Protocol::Binary);
    format_with(resp)
}

/// Formats a response in the protocol of its request.
pub fn format_response(resp: &PipelineResponse) -> Vec<StreamWord> {
    format_with(resp)
}

/// Output side of one response.
#[derive(Debug)]
struct Current {
    sections: std::vec::IntoIter<Cow<'static, [u8]>>,
    written: usize,
    /// Sections from this index wait for the number converters.
    converted_from: usize,
    convert_wait: u32,
    words_left: usize,
    trailer: &'static [u8],
}

/// The formatter FSM. Each clock it may emit one word and do one unit of
/// assembly: write one section, or take one value word from the input.
/// Flags and length text come out of converters started when the head is
/// read, so those sections wait [`CONVERT_LATENCY`] clocks from then.
#[derive(Debug, Default)]
pub struct FormatterCore {
    packer: WordPacker,
    current: Option<Current>,
    next_id: u64,
    responses: u64,
    out_of_order: u64,
}

impl FormatterCore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none() && !self.packer.has_ready()
    }

    /// Responses fully emitted so far.
    pub fn responses(&self) -> u64 {
        self.responses
    }

    /// Responses whose request id did not follow the previous one.
    pub fn out_of_order(&self) -> u64 {
        self.out_of_order
    }

    pub fn cycle(&mut self, input: &Consumer<ResponseToken>, output: &Producer<StreamWord>) -> bool {
        let mut progress = false;
        if let Some(&w) = self.packer.front() {
            if output.try_write(w).is_ok() {
                self.packer.pop();
                progress = true;
                if w.last {
                    self.responses += 1;
                }
            }
        }
        if self.packer.has_ready() {
            return progress;
        }
        match self.current.as_mut() {
            None => match input.try_read() {
                None => {}
                Some(Token::Head(h)) => {
                    if h.meta.request_id != self.next_id {
                        self.out_of_order += 1;
                    }
                    self.next_id = h.meta.request_id + 1;
                    let l = layout(&h);
                    let words_left =
                        if h.carries_value() { crate::wordstream::words_for(h.meta.value_length as usize) } else { 0 };
                    let (converted_from, convert_wait) = match l.converted_from {
                        Some(i) => (i, CONVERT_LATENCY),
                        None => (usize::MAX, 0),
                    };
                    self.current = Some(Current {
                        sections: l.sections.into_iter(),
                        written: 0,
                        converted_from,
                        convert_wait,
                        words_left,
                        trailer: l.trailer,
                    });
                    progress = true;
                }
                Some(Token::Word(_)) => panic!("response value word without a head"),
            },
            Some(cur) => {
                if cur.convert_wait > 0 {
                    cur.convert_wait -= 1;
                    progress = true;
                }
                if cur.written >= cur.converted_from && cur.convert_wait > 0 {
                    return progress;
                }
                if let Some(s) = cur.sections.next() {
                    self.packer.push(&s);
                    cur.written += 1;
                    progress = true;
                } else if cur.words_left > 0 {
                    match input.try_read() {
                        Some(Token::Word(w)) => {
                            assert_eq!(w.last, cur.words_left == 1, "response value out of step with its head");
                            self.packer.push(w.bytes());
                            cur.words_left -= 1;
                            progress = true;
                        }
                        Some(Token::Head(_)) => panic!("response head arrived inside a value"),
                        None => {}
                    }
                } else {
                    self.packer.push(cur.trailer);
                    self.packer.finish();
                    self.current = None;
                    progress = true;
                }
            }
        }
        progress
    }
}

/// The formatter stage with its channel ends.
pub struct FormatterStage {
    core: FormatterCore,
    input: Consumer<ResponseToken>,
    output: Producer<StreamWord>,
}

impl FormatterStage {
    pub fn new(input: Consumer<ResponseToken>, output: Producer<StreamWord>) -> Self {
        FormatterStage { core: FormatterCore::new(), input, output }
    }

    pub fn poll(&mut self) -> bool {
        self.core.cycle(&self.input, &self.output)
    }

    pub fn core(&self) -> &FormatterCore {
        &self.core
    }

    pub fn is_idle(&self) -> bool {
        self.core.is_idle()
    }

    pub fn input(&self) -> &Consumer<ResponseToken> {
        &self.input
    }

    pub fn output(&self) -> &Producer<StreamWord> {
        &self.output
    }
}
