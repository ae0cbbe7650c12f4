//! Load generation, validation and measurement.
//!
//! [`run_bench`] drives either an in-process pipeline or a server over TCP
//! with a generated [`Workload`], optionally checking every response against
//! the [`DictModel`].

pub mod client;
pub mod model;
pub mod workload;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use hdrhistogram::Histogram;

use crate::pipeline::{build_pipeline, run_trace, ConfigError, LatencyRecord, Pipeline, PipelineConfig, TraceOptions};
use crate::proto::{Limits, Opcode, Protocol};
pub use client::{decode_response, Reply, Request};
pub use model::DictModel;
pub use workload::{generate_workload, LengthDist, Mix, ProtocolMix, Workload};

/// Where requests go.
#[derive(Debug, Clone)]
pub enum Target {
    InProcess { config: PipelineConfig, trace: TraceOptions },
    Network(SocketAddr),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

/// First response that differed from the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub index: usize,
    pub expected: Vec<u8>,
    pub actual: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub requests: usize,
    pub completed: usize,
    pub elapsed: Duration,
    pub ops_per_sec: f64,
    /// Keyed by (opcode, protocol) names.
    pub latency: BTreeMap<(&'static str, &'static str), LatencySummary>,
    pub errors: BTreeMap<&'static str, u64>,
    pub bytes_out: u64,
    pub bytes_in: u64,
    pub validated: bool,
    pub mismatches: u64,
    pub first_mismatch: Option<Mismatch>,
    /// Why the run stopped early, if it did.
    pub incomplete: Option<String>,
    pub records: Vec<LatencyRecord>,
}

impl BenchReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches == 0 && self.incomplete.is_none()
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "requests {} completed {} in {:.3} s: {:.0} ops/s",
            self.requests,
            self.completed,
            self.elapsed.as_secs_f64(),
            self.ops_per_sec
        )?;
        writeln!(f, "bytes out {} in {}", self.bytes_out, self.bytes_in)?;
        writeln!(
            f,
            "{:<7} {:<7} {:>8} {:>10} {:>10} {:>10} {:>10}",
            "opcode", "proto", "count", "mean_ns", "p50_ns", "p95_ns", "p99_ns"
        )?;
        for ((op, proto), s) in &self.latency {
            writeln!(
                f,
                "{op:<7} {proto:<7} {:>8} {:>10.0} {:>10} {:>10} {:>10}",
                s.count, s.mean_ns, s.p50_ns, s.p95_ns, s.p99_ns
            )?;
        }
        for (cat, n) in &self.errors {
            writeln!(f, "errors {cat}: {n}")?;
        }
        if self.validated {
            writeln!(f, "validation mismatches: {}", self.mismatches)?;
        }
        if let Some(m) = &self.first_mismatch {
            writeln!(
                f,
                "first mismatch at request {}: expected {:?}, got {:?}",
                m.index,
                String::from_utf8_lossy(&m.expected),
                String::from_utf8_lossy(&m.actual)
            )?;
        }
        if let Some(why) = &self.incomplete {
            writeln!(f, "INCOMPLETE: {why}")?;
        }
        Ok(())
    }
}

/// One answered request.
struct Outcome {
    index: usize,
    ingress_ns: u64,
    egress_ns: u64,
    response: Vec<u8>,
}

fn summarize(
    reqs: &[Request],
    mut outcomes: Vec<Outcome>,
    elapsed: Duration,
    validate: bool,
    incomplete: Option<String>,
) -> BenchReport {
    outcomes.sort_by_key(|o| o.index);
    let mut r = BenchReport {
        requests: reqs.len(),
        completed: outcomes.len(),
        elapsed,
        validated: validate,
        incomplete,
        ..Default::default()
    };
    if !elapsed.is_zero() {
        r.ops_per_sec = outcomes.len() as f64 / elapsed.as_secs_f64();
    }
    let mut hists: BTreeMap<(&'static str, &'static str), (Histogram<u64>, u128)> = BTreeMap::new();
    for o in &outcomes {
        let req = &reqs[o.index];
        let lat = o.egress_ns - o.ingress_ns;
        let (h, sum) = hists
            .entry((req.opcode.name(), req.protocol.name()))
            .or_insert_with(|| (Histogram::new_with_bounds(1, 1 << 40, 3).expect("valid bounds"), 0));
        h.saturating_record(lat.max(1));
        *sum += u128::from(lat);
        r.bytes_out += req.encode().len() as u64;
        r.bytes_in += o.response.len() as u64;
        match decode_response(&o.response) {
            Ok(Some((reply, _))) => {
                if let Some(cat) = reply.error_category() {
                    *r.errors.entry(cat).or_default() += 1;
                }
            }
            _ => *r.errors.entry("undecodable").or_default() += 1,
        }
        r.records.push(LatencyRecord {
            request_id: o.index as u64,
            opcode: Some(req.opcode),
            protocol: req.protocol,
            ingress_ns: o.ingress_ns,
            egress_ns: o.egress_ns,
        });
    }
    r.latency = hists
        .into_iter()
        .map(|(k, (h, sum))| {
            let s = LatencySummary {
                count: h.len(),
                mean_ns: sum as f64 / h.len() as f64,
                p50_ns: h.value_at_quantile(0.50),
                p95_ns: h.value_at_quantile(0.95),
                p99_ns: h.value_at_quantile(0.99),
                max_ns: h.max(),
            };
            (k, s)
        })
        .collect();
    if validate {
        // unanswered requests of an incomplete run still update the model
        let mut model = DictModel::new();
        let mut answered = outcomes.iter().peekable();
        for (i, req) in reqs.iter().enumerate() {
            let expected = model.apply(req);
            let Some(o) = answered.next_if(|o| o.index == i) else {
                continue;
            };
            if o.response != expected {
                r.mismatches += 1;
                r.first_mismatch.get_or_insert_with(|| Mismatch { index: i, expected, actual: o.response.clone() });
            }
        }
    }
    r
}

/// Runs `w` against `target`. Configuration problems are errors; a failure
/// part way through a network run gives a report marked incomplete.
pub fn run_bench(target: &Target, w: &Workload, validate: bool) -> Result<BenchReport, ConfigError> {
    match target {
        Target::InProcess { config, trace } => {
            let mut pipeline = build_pipeline(config)?;
            run_in_process(&mut pipeline, &config.parser.limits, w, *trace, validate)
        }
        Target::Network(addr) => {
            if validate && w.connections > 1 && w.mix.flush > 0.0 {
                return Err(ConfigError::new("mix", "flush cannot be validated across several connections"));
            }
            let reqs = generate_workload(w, &Default::default())?;
            Ok(run_network(*addr, &reqs, w, validate))
        }
    }
}

/// Runs `w` through an already built pipeline.
pub fn run_in_process(
    pipeline: &mut Pipeline,
    limits: &Limits,
    w: &Workload,
    trace: TraceOptions,
    validate: bool,
) -> Result<BenchReport, ConfigError> {
    let reqs = generate_workload(w, limits)?;
    let raw: Vec<Vec<u8>> = reqs.iter().map(Request::encode).collect();
    let t = run_trace(pipeline, &raw, trace);
    let outcomes = t
        .responses
        .into_iter()
        .zip(&t.latencies)
        .enumerate()
        .map(|(index, (response, l))| Outcome { index, ingress_ns: l.ingress_ns, egress_ns: l.egress_ns, response })
        .collect();
    Ok(summarize(&reqs, outcomes, t.elapsed, validate, None))
}

const NETWORK_TIMEOUT: Duration = Duration::from_secs(10);

fn connect(addr: SocketAddr) -> std::io::Result<TcpStream> {
    let s = TcpStream::connect_timeout(&addr, NETWORK_TIMEOUT)?;
    s.set_read_timeout(Some(NETWORK_TIMEOUT))?;
    s.set_nodelay(true)?;
    Ok(s)
}

/// Sends `request` and reads exactly one response.
fn round_trip(s: &mut TcpStream, request: &[u8], buf: &mut Vec<u8>) -> std::io::Result<Vec<u8>> {
    s.write_all(request)?;
    let mut chunk = [0u8; 4096];
    loop {
        match decode_response(buf) {
            Ok(Some((_, used))) => return Ok(buf.drain(..used).collect()),
            Ok(None) => {}
            Err(e) => return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
        }
        let n = s.read(&mut chunk)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

fn run_network(addr: SocketAddr, reqs: &[Request], w: &Workload, validate: bool) -> BenchReport {
    if validate {
        // start from an empty cache so the model's first misses hold
        let flush = Request::new(Opcode::Flush, Protocol::Ascii, "").encode();
        if let Err(e) = connect(addr).and_then(|mut s| round_trip(&mut s, &flush, &mut Vec::new())) {
            return summarize(reqs, Vec::new(), Duration::ZERO, validate, Some(format!("connect {addr}: {e}")));
        }
    }
    let t0 = Instant::now();
    let results: Vec<(Vec<Outcome>, Option<String>)> = thread::scope(|scope| {
        let handles: Vec<_> = (0..w.connections)
            .map(|c| {
                scope.spawn(move || {
                    let mut done = Vec::new();
                    let mut s = match connect(addr) {
                        Ok(s) => s,
                        Err(e) => return (done, Some(format!("connection {c}: {e}"))),
                    };
                    let mut buf = Vec::new();
                    for index in (c..reqs.len()).step_by(w.connections) {
                        let ingress_ns = t0.elapsed().as_nanos() as u64;
                        match round_trip(&mut s, &reqs[index].encode(), &mut buf) {
                            Ok(response) => {
                                let egress_ns = t0.elapsed().as_nanos() as u64;
                                done.push(Outcome { index, ingress_ns, egress_ns, response });
                            }
                            Err(e) => return (done, Some(format!("connection {c}, request {index}: {e}"))),
                        }
                    }
                    (done, None)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("client thread")).collect()
    });
    let elapsed = t0.elapsed();
    let mut outcomes = Vec::new();
    let mut incomplete = None;
    for (done, err) in results {
        outcomes.extend(done);
        incomplete = incomplete.or(err);
    }
    summarize(reqs, outcomes, elapsed, validate, incomplete)
}
