use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kvpipe::bench::{run_bench, LengthDist, Mix, ProtocolMix, Target, Workload};
use kvpipe::frontend::{Server, ServerConfig, DEFAULT_PORT};
use kvpipe::parser::SearchVariant;
use kvpipe::pipeline::{
    build_pipeline, read_trace, run_trace, write_latency_csv, write_trace, ChannelCapacities, PipelineConfig,
    Scheduler, TraceOptions,
};

#[derive(Parser)]
#[command(name = "kvpipe", version, about = "Memcached server built as a streaming dataflow pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve memcached ASCII and binary requests over TCP and UDP.
    Serve(ServeArgs),
    /// Generate load against a server or an in-process pipeline.
    Bench(BenchArgs),
    /// Run a length-prefixed request trace through an in-process pipeline.
    Trace(TraceArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Capacity of every inter-stage channel.
    #[arg(long, default_value_t = 64)]
    channel_capacity: usize,
    #[arg(long, default_value_t = 4096)]
    bucket_count: usize,
    #[arg(long, default_value_t = 8)]
    bucket_slots: usize,
    /// Value slots, shared by the hash table and the value store.
    #[arg(long, default_value_t = 32768)]
    slot_count: usize,
    /// Bytes per value slot; also the largest accepted value.
    #[arg(long, default_value_t = 8192)]
    slab_size: usize,
    #[arg(long, default_value_t = 16)]
    filter_entries: usize,
    /// Delimiter search: shift-reverse, forward-noshift, reverse-noshift or shift-forward.
    #[arg(long, default_value_t = SearchVariant::default())]
    search_variant: SearchVariant,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let mut c =
            PipelineConfig { channels: ChannelCapacities::uniform(self.channel_capacity), ..Default::default() };
        c.hash.bucket_count = self.bucket_count;
        c.hash.bucket_slots = self.bucket_slots;
        c.hash.slot_count = self.slot_count;
        c.hash.filter_entries = self.filter_entries;
        c.store.slot_count = self.slot_count;
        c.store.slab_size = self.slab_size;
        c.parser.limits.max_value = self.slab_size;
        c.parser.variant = self.search_variant;
        c
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    listen: IpAddr,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    udp_port: u16,
    #[arg(long)]
    no_udp: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Server address, host:port.
    #[arg(long, conflicts_with = "in_process", required_unless_present = "in_process")]
    target: Option<String>,
    /// Drive a pipeline inside this process instead of a server.
    #[arg(long)]
    in_process: bool,
    #[arg(long, default_value_t = 10_000)]
    requests: usize,
    #[arg(long, default_value = "get=0.9,set=0.1")]
    mix: Mix,
    #[arg(long, default_value = "ascii")]
    protocol: ProtocolMix,
    #[arg(long, default_value_t = 1)]
    connections: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1024)]
    key_space: u32,
    /// Fixed length or inclusive range, e.g. 11 or 11..40.
    #[arg(long, default_value = "11")]
    key_length: LengthDist,
    #[arg(long, default_value = "1..64")]
    value_length: LengthDist,
    /// Check every response against the dictionary model.
    #[arg(long)]
    validate: bool,
    /// Write per-request latencies here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Run in-process stages on their own threads.
    #[arg(long)]
    concurrent: bool,
    /// Requests allowed in flight in-process; 1 measures unloaded latency.
    #[arg(long)]
    window: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct TraceArgs {
    /// Length-prefixed request records.
    input: PathBuf,
    /// Write length-prefixed response records here.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    concurrent: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn trace_options(concurrent: bool, window: Option<usize>) -> TraceOptions {
    TraceOptions {
        scheduler: if concurrent { Scheduler::Concurrent } else { Scheduler::Deterministic },
        max_in_flight: window.unwrap_or(usize::MAX),
    }
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let cfg = ServerConfig {
        listen: a.listen,
        tcp_port: a.port,
        udp_port: (!a.no_udp).then_some(a.udp_port),
        pipeline: a.pipeline.config(),
        ..Default::default()
    };
    let server = Server::start(&cfg).context("starting server")?;
    match server.udp_addr() {
        Some(u) => log::info!("listening on tcp {} and udp {u}", server.tcp_addr()),
        None => log::info!("listening on tcp {}", server.tcp_addr()),
    }
    loop {
        std::thread::park();
    }
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let w = Workload {
        requests: a.requests,
        mix: a.mix,
        key_space: a.key_space,
        key_length: a.key_length,
        value_length: a.value_length,
        protocol: a.protocol,
        connections: a.connections,
        seed: a.seed,
    };
    let target = match &a.target {
        Some(t) => {
            let addr: SocketAddr =
                t.to_socket_addrs().with_context(|| format!("resolving {t}"))?.next().context("no address")?;
            Target::Network(addr)
        }
        None => Target::InProcess { config: a.pipeline.config(), trace: trace_options(a.concurrent, a.window) },
    };
    let report = run_bench(&target, &w, a.validate)?;
    print!("{report}");
    if let Some(path) = &a.csv {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_latency_csv(BufWriter::new(f), &report.records)?;
    }
    if report.mismatches > 0 {
        return Ok(ExitCode::from(1));
    }
    if report.incomplete.is_some() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn trace(a: TraceArgs) -> Result<ExitCode> {
    let reqs = read_trace(&mut File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?)?;
    let mut p = build_pipeline(&a.pipeline.config())?;
    let r = run_trace(&mut p, &reqs, trace_options(a.concurrent, None));
    match &a.output {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            write_trace(&mut f, &r.responses)?;
            f.flush()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            for resp in &r.responses {
                out.write_all(resp)?;
            }
        }
    }
    if let Some(path) = &a.csv {
        write_latency_csv(BufWriter::new(File::create(path)?), &r.latencies)?;
    }
    if reqs.is_empty() {
        bail!("{} holds no requests", a.input.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench(a),
        Command::Trace(a) => trace(a),
    }
}
