//! Request parser stage.
//!
//! Words arriving on the ingress channel are routed, one message at a time,
//! to the binary or the ASCII lane according to the first byte of the
//! message. A merger takes finished requests back out of the lanes in
//! arrival order, stamps the request id and streams a head token followed by
//! the value words to the hash table.
//!
//! Malformed requests are consumed whole and leave the parser as a head with
//! a [`Fault`] and no value words.

mod ascii;
mod binary;
pub mod convert;
pub mod search;

use std::collections::VecDeque;

use crate::proto::binary::REQUEST_MAGIC;
use crate::proto::{
    Fault, FaultKind, Key, Limits, PipelineRequest, Protocol, RequestHead, RequestMeta, RequestToken, Token,
};
use crate::wordstream::{Consumer, Producer, StreamWord};

use ascii::AsciiLane;
use binary::BinaryLane;

pub use convert::{ascii_to_uint, ConvertError, CONVERT_LATENCY};
pub use search::{find_delimiter, SearchVariant};

/// Longest accepted ASCII command line including CRLF.
pub const DEFAULT_MAX_LINE: usize = 320;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParserConfig {
    pub variant: SearchVariant,
    pub limits: Limits,
    pub max_line: usize,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig { variant: SearchVariant::default(), limits: Limits::default(), max_line: DEFAULT_MAX_LINE }
    }
}

/// A request as it leaves a lane, before the merger assigns its id.
#[derive(Debug)]
pub(crate) struct Parsed {
    meta: RequestMeta,
    key: Key,
    value: Vec<StreamWord>,
    fault: Option<Fault>,
}

/// The binary magic selects the binary lane; anything else is treated as
/// ASCII and rejected later if it is not.
#[inline]
pub fn detect_protocol(first_byte: u8) -> Protocol {
    if first_byte == REQUEST_MAGIC {
        Protocol::Binary
    } else {
        Protocol::Ascii
    }
}

/// The parser's internal datapath, independent of the channels around it.
#[derive(Debug)]
pub struct ParserCore {
    held: Option<StreamWord>,
    routing: Option<Protocol>,
    route_order: VecDeque<Protocol>,
    binary: BinaryLane,
    ascii: AsciiLane,
    emit: VecDeque<RequestToken>,
    next_id: u64,
}

impl ParserCore {
    pub fn new(cfg: ParserConfig) -> Self {
        ParserCore {
            held: None,
            routing: None,
            route_order: VecDeque::new(),
            binary: BinaryLane::new(cfg.limits),
            ascii: AsciiLane::new(cfg.variant, cfg.limits, cfg.max_line),
            emit: VecDeque::new(),
            next_id: 0,
        }
    }

    /// True when no message is anywhere inside the parser.
    pub fn is_idle(&self) -> bool {
        self.held.is_none()
            && self.route_order.is_empty()
            && self.emit.is_empty()
            && self.binary.is_idle()
            && self.ascii.is_idle()
    }

    /// One clock. Stages are evaluated from the output back to the input so
    /// an item moves at most one step per cycle.
    pub fn cycle(&mut self, input: &Consumer<StreamWord>, output: &Producer<RequestToken>) -> bool {
        let mut progress = self.merge(output);
        progress |= self.binary.cycle();
        progress |= self.ascii.cycle();
        progress |= self.route(input);
        progress
    }

    fn merge(&mut self, output: &Producer<RequestToken>) -> bool {
        if self.emit.is_empty() {
            let Some(&lane) = self.route_order.front() else {
                return false;
            };
            let parsed = match lane {
                Protocol::Binary => self.binary.take_ready(),
                Protocol::Ascii => self.ascii.take_ready(),
            };
            let Some(p) = parsed else {
                return false;
            };
            self.route_order.pop_front();
            let meta = RequestMeta { request_id: self.next_id, ..p.meta };
            self.next_id += 1;
            self.emit.push_back(Token::Head(RequestHead { meta, key: p.key, fault: p.fault }));
            self.emit.extend(p.value.into_iter().map(Token::Word));
        }
        let Some(tok) = self.emit.pop_front() else {
            return false;
        };
        if let Err(tok) = output.try_write(tok) {
            self.emit.push_front(tok);
            return false;
        }
        true
    }

    fn route(&mut self, input: &Consumer<StreamWord>) -> bool {
        let mut progress = false;
        if self.held.is_none() {
            self.held = input.try_read();
            progress = self.held.is_some();
        }
        let Some(w) = self.held else {
            return progress;
        };
        let lane = self.routing.unwrap_or_else(|| detect_protocol(w.data[0]));
        let accepted = match lane {
            Protocol::Binary if self.binary.can_accept() => {
                self.binary.accept(w);
                true
            }
            Protocol::Ascii if self.ascii.can_accept() => {
                self.ascii.accept(w);
                true
            }
            _ => false,
        };
        if accepted {
            if self.routing.is_none() {
                self.route_order.push_back(lane);
            }
            self.routing = if w.last { None } else { Some(lane) };
            self.held = None;
        }
        progress | accepted
    }
}

/// The parser stage with its channel ends.
pub struct RequestParser {
    core: ParserCore,
    input: Consumer<StreamWord>,
    output: Producer<RequestToken>,
}

impl RequestParser {
    pub fn new(cfg: ParserConfig, input: Consumer<StreamWord>, output: Producer<RequestToken>) -> Self {
        RequestParser { core: ParserCore::new(cfg), input, output }
    }

    pub fn poll(&mut self) -> bool {
        self.core.cycle(&self.input, &self.output)
    }

    pub fn is_idle(&self) -> bool {
        self.core.is_idle()
    }

    pub fn input(&self) -> &Consumer<StreamWord> {
        &self.input
    }

    pub fn output(&self) -> &Producer<RequestToken> {
        &self.output
    }
}

fn into_request(p: Parsed) -> Result<PipelineRequest, Fault> {
    match p.fault {
        Some(f) => Err(f),
        None => Ok(PipelineRequest { meta: p.meta, key: p.key, value: p.value }),
    }
}

/// Parses one binary message with a standalone binary lane.
pub fn parse_binary(words: &[StreamWord], cfg: &ParserConfig) -> Result<PipelineRequest, Fault> {
    let mut lane = BinaryLane::new(cfg.limits);
    let mut feed = words.iter().copied().peekable();
    loop {
        if let Some(p) = lane.take_ready() {
            return into_request(p);
        }
        if lane.can_accept() {
            if let Some(w) = feed.next() {
                lane.accept(w);
            }
        }
        if !lane.cycle() && feed.peek().is_none() {
            return Err(Fault { kind: FaultKind::Framing, wire_opcode: 0 });
        }
    }
}

/// Parses one ASCII message with a standalone ASCII lane.
pub fn parse_ascii(words: &[StreamWord], cfg: &ParserConfig) -> Result<PipelineRequest, Fault> {
    let mut lane = AsciiLane::new(cfg.variant, cfg.limits, cfg.max_line);
    let mut feed = words.iter().copied().peekable();
    loop {
        if let Some(p) = lane.take_ready() {
            return into_request(p);
        }
        if lane.can_accept() {
            if let Some(w) = feed.next() {
                lane.accept(w);
            }
        }
        if !lane.cycle() && feed.peek().is_none() {
            return Err(Fault { kind: FaultKind::Framing, wire_opcode: 0 });
        }
    }
}

/// Parses one message of either protocol.
pub fn parse_message(words: &[StreamWord], cfg: &ParserConfig) -> Result<PipelineRequest, Fault> {
    match words.first().map(|w| detect_protocol(w.data[0])) {
        Some(Protocol::Binary) => parse_binary(words, cfg),
        _ => parse_ascii(words, cfg),
    }
}
