//! Pipeline assembly, scheduling and the in-process trace harness.

use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::formatter::FormatterStage;
use crate::hash::{HashTableConfig, HashTableStage};
use crate::parser::{detect_protocol, ParserConfig, RequestParser};
use crate::proto::{Opcode, Protocol};
use crate::store::{StoreConfig, ValueStoreStage};
use crate::wordstream::{channel, pack_into, Consumer, Producer, StreamWord, DEFAULT_CHANNEL_CAPACITY};

/// A configuration value that cannot be used, named by field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {field}: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError { field, reason: reason.into() }
    }
}

/// Capacity of each inter-stage channel, in items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelCapacities {
    pub ingress: usize,
    pub parsed: usize,
    pub hashed: usize,
    pub stored: usize,
    pub egress: usize,
}

impl ChannelCapacities {
    pub fn uniform(n: usize) -> Self {
        ChannelCapacities { ingress: n, parsed: n, hashed: n, stored: n, egress: n }
    }

    fn named(&self) -> [(&'static str, usize); 5] {
        [
            ("channels.ingress", self.ingress),
            ("channels.parsed", self.parsed),
            ("channels.hashed", self.hashed),
            ("channels.stored", self.stored),
            ("channels.egress", self.egress),
        ]
    }
}

impl Default for ChannelCapacities {
    fn default() -> Self {
        ChannelCapacities::uniform(DEFAULT_CHANNEL_CAPACITY)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineConfig {
    pub channels: ChannelCapacities,
    pub parser: ParserConfig,
    pub hash: HashTableConfig,
    pub store: StoreConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, n) in self.channels.named() {
            if n == 0 {
                return Err(ConfigError::new(field, "capacity must be positive"));
            }
        }
        self.hash.validate()?;
        self.store.validate()?;
        if self.hash.slot_count != self.store.slot_count {
            return Err(ConfigError::new(
                "slot_count",
                format!("hash table has {} slots, value store has {}", self.hash.slot_count, self.store.slot_count),
            ));
        }
        let limits = self.parser.limits;
        if limits.max_key == 0 || limits.max_key > crate::proto::MAX_KEY_LEN {
            return Err(ConfigError::new("max_key", format!("must be in 1..={}", crate::proto::MAX_KEY_LEN)));
        }
        if self.store.slab_size < limits.max_value {
            return Err(ConfigError::new("slab_size", "must hold the largest accepted value"));
        }
        if self.parser.max_line < 16 {
            return Err(ConfigError::new("max_line", "must be at least 16"));
        }
        Ok(())
    }
}

/// A poll-driven pipeline stage.
pub trait Stage: Send {
    fn name(&self) -> &'static str;
    /// One clock. Returns true if anything moved.
    fn poll(&mut self) -> bool;
    /// True when no message is held inside the stage.
    fn is_idle(&self) -> bool;
}

impl Stage for RequestParser {
    fn name(&self) -> &'static str {
        "parser"
    }
    fn poll(&mut self) -> bool {
        RequestParser::poll(self)
    }
    fn is_idle(&self) -> bool {
        RequestParser::is_idle(self)
    }
}

impl Stage for HashTableStage {
    fn name(&self) -> &'static str {
        "hash_table"
    }
    fn poll(&mut self) -> bool {
        HashTableStage::poll(self)
    }
    fn is_idle(&self) -> bool {
        HashTableStage::is_idle(self)
    }
}

impl Stage for ValueStoreStage {
    fn name(&self) -> &'static str {
        "value_store"
    }
    fn poll(&mut self) -> bool {
        ValueStoreStage::poll(self)
    }
    fn is_idle(&self) -> bool {
        ValueStoreStage::is_idle(self)
    }
}

impl Stage for FormatterStage {
    fn name(&self) -> &'static str {
        "formatter"
    }
    fn poll(&mut self) -> bool {
        FormatterStage::poll(self)
    }
    fn is_idle(&self) -> bool {
        FormatterStage::is_idle(self)
    }
}

/// Fill level of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelStats {
    pub name: &'static str,
    pub len: usize,
    pub capacity: usize,
    pub high_watermark: usize,
}

/// The four stages, wired together.
pub struct Stages {
    pub parser: RequestParser,
    pub hash: HashTableStage,
    pub store: ValueStoreStage,
    pub formatter: FormatterStage,
}

impl Stages {
    /// One round: every stage polled once, downstream first.
    pub fn round(&mut self) -> bool {
        let mut progress = self.formatter.poll();
        progress |= self.store.poll();
        progress |= self.hash.poll();
        progress | self.parser.poll()
    }

    pub fn is_idle(&self) -> bool {
        self.parser.is_idle()
            && self.hash.is_idle()
            && self.store.is_idle()
            && self.formatter.is_idle()
            && self.parser.input().is_empty()
            && self.hash.input().is_empty()
            && self.store.input().is_empty()
            && self.formatter.input().is_empty()
            && self.formatter.output().is_empty()
    }

    pub fn channel_stats(&self) -> [ChannelStats; 5] {
        let ingress = self.parser.input();
        let parsed = self.hash.input();
        let hashed = self.store.input();
        let stored = self.formatter.input();
        let egress = self.formatter.output();
        [
            ChannelStats {
                name: "ingress",
                len: ingress.len(),
                capacity: ingress.capacity(),
                high_watermark: ingress.high_watermark(),
            },
            ChannelStats {
                name: "parsed",
                len: parsed.len(),
                capacity: parsed.capacity(),
                high_watermark: parsed.high_watermark(),
            },
            ChannelStats {
                name: "hashed",
                len: hashed.len(),
                capacity: hashed.capacity(),
                high_watermark: hashed.high_watermark(),
            },
            ChannelStats {
                name: "stored",
                len: stored.len(),
                capacity: stored.capacity(),
                high_watermark: stored.high_watermark(),
            },
            ChannelStats {
                name: "egress",
                len: egress.len(),
                capacity: egress.capacity(),
                high_watermark: egress.high_watermark(),
            },
        ]
    }

    /// Runs each stage in its own thread until [`StageThreads::stop`].
    pub fn spawn(self) -> StageThreads {
        let stop = Arc::new(AtomicBool::new(false));
        StageThreads {
            parser: spawn_stage(self.parser, &stop),
            hash: spawn_stage(self.hash, &stop),
            store: spawn_stage(self.store, &stop),
            formatter: spawn_stage(self.formatter, &stop),
            stop,
        }
    }
}

/// Idle polls before a stage thread starts yielding, and before it sleeps.
const SPIN_POLLS: u32 = 64;
const YIELD_POLLS: u32 = 4096;

/// Polls `stage` until `stop` is set, backing off while it is idle.
fn drive<S: Stage + ?Sized>(stage: &mut S, stop: &AtomicBool) {
    let mut idle = 0u32;
    while !stop.load(Ordering::Relaxed) {
        if stage.poll() {
            idle = 0;
            continue;
        }
        idle = idle.saturating_add(1);
        if idle > YIELD_POLLS {
            thread::sleep(Duration::from_micros(50));
        } else if idle > SPIN_POLLS {
            thread::yield_now();
        }
    }
}

fn spawn_stage<S: Stage + 'static>(mut stage: S, stop: &Arc<AtomicBool>) -> JoinHandle<S> {
    let stop = Arc::clone(stop);
    thread::Builder::new()
        .name(stage.name().to_string())
        .spawn(move || {
            drive(&mut stage, &stop);
            stage
        })
        .expect("spawn stage thread")
}

/// Stages running concurrently.
pub struct StageThreads {
    parser: JoinHandle<RequestParser>,
    hash: JoinHandle<HashTableStage>,
    store: JoinHandle<ValueStoreStage>,
    formatter: JoinHandle<FormatterStage>,
    stop: Arc<AtomicBool>,
}

impl StageThreads {
    /// Stops every thread and hands the stages back.
    ///
    /// # Panics
    /// If a stage thread panicked.
    pub fn stop(self) -> Stages {
        self.stop.store(true, Ordering::Relaxed);
        Stages {
            parser: self.parser.join().expect("parser thread"),
            hash: self.hash.join().expect("hash table thread"),
            store: self.store.join().expect("value store thread"),
            formatter: self.formatter.join().expect("formatter thread"),
        }
    }
}

/// A built pipeline with its ingress and egress channel ends.
pub struct Pipeline {
    pub ingress: Producer<StreamWord>,
    pub egress: Consumer<StreamWord>,
    pub stages: Stages,
}

pub fn build_pipeline(cfg: &PipelineConfig) -> Result<Pipeline, ConfigError> {
    cfg.validate()?;
    let c = cfg.channels;
    let (ingress, parser_in) = channel(c.ingress).expect("validated");
    let (parser_out, hash_in) = channel(c.parsed).expect("validated");
    let (hash_out, store_in) = channel(c.hashed).expect("validated");
    let (store_out, fmt_in) = channel(c.stored).expect("validated");
    let (fmt_out, egress) = channel(c.egress).expect("validated");
    Ok(Pipeline {
        ingress,
        egress,
        stages: Stages {
            parser: RequestParser::new(cfg.parser, parser_in, parser_out),
            hash: HashTableStage::new(cfg.hash, cfg.parser.limits.max_value, hash_in, hash_out),
            store: ValueStoreStage::new(cfg.store, store_in, store_out),
            formatter: FormatterStage::new(fmt_in, fmt_out),
        },
    })
}

/// How [`run_trace`] drives the stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheduler {
    /// One thread, stages polled round-robin.
    #[default]
    Deterministic,
    /// One thread per stage.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOptions {
    pub scheduler: Scheduler,
    /// Requests allowed between ingress and egress at once.
    pub max_in_flight: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { scheduler: Scheduler::Deterministic, max_in_flight: usize::MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRecord {
    pub request_id: u64,
    /// `None` when the request does not name a supported command.
    pub opcode: Option<Opcode>,
    pub protocol: Protocol,
    /// Nanoseconds from the start of the run to the first request word entering.
    pub ingress_ns: u64,
    /// Nanoseconds from the start of the run to the last response word leaving.
    pub egress_ns: u64,
}

impl LatencyRecord {
    pub fn latency_ns(&self) -> u64 {
        self.egress_ns - self.ingress_ns
    }
}

#[derive(Debug, Clone, Default)]
pub struct TraceResult {
    pub responses: Vec<Vec<u8>>,
    pub latencies: Vec<LatencyRecord>,
    pub elapsed: Duration,
}

/// Protocol and command named by a raw request, without parsing it.
pub fn classify(request: &[u8]) -> (Protocol, Option<Opcode>) {
    let Some(&first) = request.first() else {
        return (Protocol::Ascii, None);
    };
    match detect_protocol(first) {
        Protocol::Binary => (Protocol::Binary, request.get(1).and_then(|&b| Opcode::from_wire(b))),
        Protocol::Ascii => {
            let end = request.iter().position(|&b| b == b' ' || b == b'\r').unwrap_or(request.len());
            let op = match request[..end].to_ascii_lowercase().as_slice() {
                b"get" => Some(Opcode::Get),
                b"set" => Some(Opcode::Set),
                b"delete" => Some(Opcode::Delete),
                b"flush_all" => Some(Opcode::Flush),
                _ => None,
            };
            (Protocol::Ascii, op)
        }
    }
}

/// Pushes requests word by word into `ingress` and collects responses from
/// `egress`. `step` runs the stages for one round and reports progress.
struct Driver<'a> {
    requests: &'a [Vec<u8>],
    words: Vec<StreamWord>,
    next_word: usize,
    /// Index into `words` where each request starts.
    starts: Vec<usize>,
    sent: usize,
    result: TraceResult,
    current: Vec<u8>,
    max_in_flight: usize,
    t0: Instant,
}

impl<'a> Driver<'a> {
    fn new(requests: &'a [Vec<u8>], max_in_flight: usize) -> Self {
        let mut words = Vec::new();
        let mut starts = Vec::with_capacity(requests.len());
        for r in requests {
            starts.push(words.len());
            // A message needs at least one byte; an empty request reads as a
            // bare line terminator and is answered with an error.
            pack_into(if r.is_empty() { b"\r\n" } else { r }, &mut words);
        }
        Driver {
            requests,
            words,
            next_word: 0,
            starts,
            sent: 0,
            result: TraceResult {
                responses: Vec::with_capacity(requests.len()),
                latencies: Vec::with_capacity(requests.len()),
                elapsed: Duration::ZERO,
            },
            current: Vec::new(),
            max_in_flight: max_in_flight.max(1),
            t0: Instant::now(),
        }
    }

    fn done(&self) -> bool {
        self.result.responses.len() == self.requests.len()
    }

    fn now(&self) -> u64 {
        self.t0.elapsed().as_nanos() as u64
    }

    /// Moves at most one word in each direction.
    fn step(&mut self, ingress: &Producer<StreamWord>, egress: &Consumer<StreamWord>) -> bool {
        let mut progress = false;
        if self.next_word < self.words.len() {
            let starting = self.sent < self.starts.len() && self.starts[self.sent] == self.next_word;
            let in_flight = self.sent - self.result.responses.len();
            if (!starting || in_flight < self.max_in_flight) && ingress.try_write(self.words[self.next_word]).is_ok() {
                if starting {
                    let i = self.sent;
                    let (protocol, opcode) = classify(&self.requests[i]);
                    self.result.latencies.push(LatencyRecord {
                        request_id: i as u64,
                        opcode,
                        protocol,
                        ingress_ns: self.now(),
                        egress_ns: 0,
                    });
                    self.sent += 1;
                }
                self.next_word += 1;
                progress = true;
            }
        }
        if let Some(w) = egress.try_read() {
            self.current.extend_from_slice(w.bytes());
            if w.last {
                let i = self.result.responses.len();
                assert!(i < self.sent, "response without a request");
                self.result.latencies[i].egress_ns = self.now();
                self.result.responses.push(std::mem::take(&mut self.current));
            }
            progress = true;
        }
        progress
    }
}

/// Runs `requests` through the pipeline and returns the responses in order,
/// with one latency record per request.
pub fn run_trace(pipeline: &mut Pipeline, requests: &[Vec<u8>], opts: TraceOptions) -> TraceResult {
    let mut d = Driver::new(requests, opts.max_in_flight);
    match opts.scheduler {
        Scheduler::Deterministic => {
            let mut stalled = 0u32;
            while !d.done() {
                let mut progress = d.step(&pipeline.ingress, &pipeline.egress);
                progress |= pipeline.stages.round();
                stalled = if progress { 0 } else { stalled + 1 };
                assert!(
                    stalled < 1000,
                    "pipeline made no progress with {} responses outstanding",
                    d.sent - d.result.responses.len()
                );
            }
        }
        Scheduler::Concurrent => {
            let Pipeline { ingress, egress, stages } = pipeline;
            let stop = AtomicBool::new(false);
            thread::scope(|s| {
                let stop = &stop;
                let handles = [
                    s.spawn(|| drive(&mut stages.parser, stop)),
                    s.spawn(|| drive(&mut stages.hash, stop)),
                    s.spawn(|| drive(&mut stages.store, stop)),
                    s.spawn(|| drive(&mut stages.formatter, stop)),
                ];
                // Stop the stages even if the driver panics.
                struct StopOnDrop<'a>(&'a AtomicBool);
                impl Drop for StopOnDrop<'_> {
                    fn drop(&mut self) {
                        self.0.store(true, Ordering::Relaxed);
                    }
                }
                let _guard = StopOnDrop(stop);
                while !d.done() {
                    if !d.step(ingress, egress) {
                        // A stage that exits early has panicked; the scope re-raises it.
                        if handles.iter().any(|h| h.is_finished()) {
                            break;
                        }
                        std::hint::spin_loop();
                    }
                }
            });
        }
    }
    d.result.elapsed = d.t0.elapsed();
    d.result
}

/// Writes requests as 4-byte big-endian length-prefixed records.
pub fn write_trace(out: &mut impl Write, requests: &[Vec<u8>]) -> io::Result<()> {
    for r in requests {
        let len = u32::try_from(r.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "record too long"))?;
        out.write_all(&len.to_be_bytes())?;
        out.write_all(r)?;
    }
    Ok(())
}

/// Reads records written by [`write_trace`].
pub fn read_trace(input: &mut impl Read) -> io::Result<Vec<Vec<u8>>> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut out = Vec::new();
    let mut rest = data.as_slice();
    while !rest.is_empty() {
        let Some((len, tail)) = rest.split_first_chunk::<4>() else {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated record length"));
        };
        let len = u32::from_be_bytes(*len) as usize;
        if tail.len() < len {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated record"));
        }
        out.push(tail[..len].to_vec());
        rest = &tail[len..];
    }
    Ok(out)
}

/// Writes `request_id,opcode,protocol,latency_ns` rows.
pub fn write_latency_csv(out: impl Write, records: &[LatencyRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["request_id", "opcode", "protocol", "latency_ns"])?;
    for r in records {
        w.write_record([
            r.request_id.to_string(),
            r.opcode.map_or("unknown", Opcode::name).to_string(),
            r.protocol.name().to_string(),
            r.latency_ns().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
