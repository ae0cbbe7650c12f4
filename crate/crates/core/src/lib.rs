//! A memcached server organized as a streaming dataflow pipeline.
//!
//! Requests flow through four stages connected only by bounded channels:
//!
//! ```text
//!  ingress words ─▶ parser ─▶ hash table ─▶ value store ─▶ formatter ─▶ egress words
//! ```
//!
//! Every stage is a poll-driven state machine that moves data at most one
//! step per poll, so the same stages run either round-robin in one thread
//! (deterministic) or each in its own thread.

pub mod bench;
pub mod formatter;
pub mod frontend;
pub mod hash;
pub mod parser;
pub mod pipeline;
pub mod proto;
pub mod store;
pub mod wordstream;

mod fifo;
