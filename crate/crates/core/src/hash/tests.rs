use std::collections::{HashMap, VecDeque};

use proptest::prelude::*;

use super::*;
use crate::proto::{Fault, FaultKind, Opcode, Protocol, RequestHead, RequestMeta, Status, StoreHead, StoreOp, Token};
use crate::wordstream::{channel, pack, unpack, StreamWord};

fn req(opcode: Opcode, key: &str, value: &[u8], flags: u32) -> Vec<crate::proto::RequestToken> {
    let meta = RequestMeta {
        key_length: key.len() as u16,
        value_length: value.len() as u32,
        flags,
        ..RequestMeta::new(opcode, Protocol::Ascii)
    };
    let mut out = vec![Token::Head(RequestHead { meta, key: key.into(), fault: None })];
    out.extend(pack(value).into_iter().map(Token::Word));
    out
}

fn set(key: &str, value: &[u8]) -> Vec<crate::proto::RequestToken> {
    req(Opcode::Set, key, value, 0)
}

fn get(key: &str) -> Vec<crate::proto::RequestToken> {
    req(Opcode::Get, key, b"", 0)
}

/// Feeds every token through a hash table and collects the output messages.
fn run(core: &mut HashCore, tokens: Vec<crate::proto::RequestToken>) -> Vec<(StoreHead, Vec<StreamWord>)> {
    let (in_tx, in_rx) = channel(8).unwrap();
    let (out_tx, out_rx) = channel(8).unwrap();
    let mut feed: VecDeque<_> = tokens.into();
    let mut out: Vec<(StoreHead, Vec<StreamWord>)> = Vec::new();
    let mut quiet = 0;
    while quiet < 4 {
        let mut progress = false;
        if let Some(t) = feed.pop_front() {
            match in_tx.try_write(t) {
                Ok(()) => progress = true,
                Err(t) => feed.push_front(t),
            }
        }
        progress |= core.cycle(&in_rx, &out_tx);
        assert!(core.filter().occupancy() <= core.filter().capacity());
        while let Some(t) = out_rx.try_read() {
            progress = true;
            match t {
                Token::Head(h) => out.push((h, Vec::new())),
                Token::Word(w) => out.last_mut().expect("word before head").1.push(w),
            }
        }
        quiet = if progress || !feed.is_empty() { 0 } else { quiet + 1 };
    }
    assert!(core.is_idle());
    assert!(core.filter().is_empty());
    out
}

fn core() -> HashCore {
    HashCore::new(HashTableConfig::default(), 8192)
}

fn address(op: StoreOp) -> u32 {
    match op {
        StoreOp::Write { address } | StoreOp::Read { address } => address,
        StoreOp::Pass => panic!("no address"),
    }
}

#[test]
fn store_then_load() {
    let mut c = core();
    let mut tokens = set("k", b"value");
    tokens.extend(get("k"));
    let out = run(&mut c, tokens);
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].0.status, Status::Stored);
    assert_eq!(unpack(&out[0].1), b"value");
    assert_eq!(out[1].0.status, Status::Found);
    assert_eq!(out[1].0.meta.value_length, 5);
    assert_eq!(address(out[1].0.op), address(out[0].0.op));
    assert!(out[1].1.is_empty());
}

#[test]
fn miss() {
    let out = run(&mut core(), get("never"));
    assert_eq!(out[0].0.status, Status::NotFound);
    assert_eq!(out[0].0.op, StoreOp::Pass);
}

#[test]
fn overwrite_reuses_address() {
    let mut c = core();
    let mut tokens = req(Opcode::Set, "k", b"v1", 1);
    tokens.extend(req(Opcode::Set, "k", b"v2-longer", 2));
    tokens.extend(get("k"));
    let out = run(&mut c, tokens);
    let a = address(out[0].0.op);
    assert_eq!(address(out[1].0.op), a);
    assert_eq!(out[2].0.status, Status::Found);
    assert_eq!((out[2].0.meta.value_length, out[2].0.meta.flags), (9, 2));
    assert_eq!(address(out[2].0.op), a);
    assert_eq!(c.valid_entries().count(), 1);
}

#[test]
fn delete_and_flush() {
    let mut c = core();
    let mut tokens = set("a", b"1");
    tokens.extend(set("b", b"2"));
    tokens.extend(req(Opcode::Delete, "a", b"", 0));
    tokens.extend(req(Opcode::Delete, "a", b"", 0));
    tokens.extend(get("a"));
    tokens.extend(get("b"));
    tokens.extend(req(Opcode::Flush, "", b"", 0));
    tokens.extend(get("b"));
    let statuses: Vec<Status> = run(&mut c, tokens).into_iter().map(|(h, _)| h.status).collect();
    use Status::*;
    assert_eq!(statuses, [Stored, Stored, Deleted, NotFound, NotFound, Found, Flushed, NotFound]);
    assert_eq!(c.free_slots(), c.config().slot_count);
    assert!(c.addresses_unique());
}

#[test]
fn full_bucket_reports_out_of_memory() {
    let cfg = HashTableConfig { bucket_count: 1, bucket_slots: 2, ..Default::default() };
    let mut c = HashCore::new(cfg, 64);
    let mut tokens = set("a", b"1");
    tokens.extend(set("b", b"2"));
    tokens.extend(set("c", b"a value spanning words"));
    tokens.extend(get("c"));
    tokens.extend(set("a", b"still fits"));
    let out = run(&mut c, tokens);
    assert_eq!(out[2].0.status, Status::Error);
    assert_eq!(out[2].0.fault.unwrap().kind, FaultKind::OutOfMemory);
    assert!(out[2].1.is_empty(), "rejected value must not be forwarded");
    assert_eq!(out[3].0.status, Status::NotFound);
    assert_eq!(out[4].0.status, Status::Stored);
    assert_eq!(c.free_slots(), cfg.slot_count - 2);
}

#[test]
fn exhausted_free_list_reports_out_of_memory() {
    let cfg = HashTableConfig { slot_count: 1, ..Default::default() };
    let mut c = HashCore::new(cfg, 64);
    let mut tokens = set("a", b"1");
    tokens.extend(set("b", b"2"));
    tokens.extend(req(Opcode::Delete, "a", b"", 0));
    tokens.extend(set("b", b"2"));
    let out: Vec<Status> = run(&mut c, tokens).into_iter().map(|(h, _)| h.status).collect();
    assert_eq!(out, [Status::Stored, Status::Error, Status::Deleted, Status::Stored]);
}

#[test]
fn faulted_request_passes_through() {
    let meta = RequestMeta::new(Opcode::Get, Protocol::Binary);
    let fault = Fault { kind: FaultKind::UnknownCommand, wire_opcode: 0x05 };
    let out = run(&mut core(), vec![Token::Head(RequestHead { meta, key: Default::default(), fault: Some(fault) })]);
    assert_eq!(out[0].0.status, Status::Error);
    assert_eq!(out[0].0.fault, Some(fault));
}

#[test]
fn pipelined_writes_are_visible_to_following_reads() {
    let mut c = core();
    let mut tokens = Vec::new();
    for i in 0..200u32 {
        let v = vec![b'x'; (i % 40) as usize + 1];
        tokens.extend(req(Opcode::Set, "hot", &v, i));
        tokens.extend(get("hot"));
    }
    let out = run(&mut c, tokens);
    for (i, pair) in out.chunks(2).enumerate() {
        assert_eq!(pair[1].0.status, Status::Found);
        assert_eq!(pair[1].0.meta.flags, i as u32);
        assert_eq!(pair[1].0.meta.value_length, (i % 40) as u32 + 1);
    }
    assert!(c.filter().high_watermark() >= 1);
}

#[test]
fn filter_bounds_writes_in_flight() {
    let cfg = HashTableConfig { filter_entries: 2, bucket_count: 1024, ..Default::default() };
    let mut c = HashCore::new(cfg, 64);
    let tokens = (0..100).flat_map(|i| set(&format!("k{i}"), b"v")).collect();
    let out = run(&mut c, tokens);
    assert!(out.iter().all(|(h, _)| h.status == Status::Stored));
    assert!(c.filter().high_watermark() <= 2);
}

#[test]
fn dump_lists_valid_entries() {
    let cfg = HashTableConfig { bucket_count: 1, bucket_slots: 4, ..Default::default() };
    let mut c = HashCore::new(cfg, 64);
    run(&mut c, set("ab", b"xyz"));
    let mut text = Vec::new();
    c.dump(&mut text).unwrap();
    assert_eq!(String::from_utf8(text).unwrap(), "0 0 6162 0 3\n");
}

#[test]
fn config_validation() {
    let bad = |cfg: HashTableConfig| cfg.validate().unwrap_err().field;
    let d = HashTableConfig::default();
    assert!(d.validate().is_ok());
    assert_eq!(bad(HashTableConfig { bucket_count: 1000, ..d }), "bucket_count");
    assert_eq!(bad(HashTableConfig { bucket_slots: 0, ..d }), "bucket_slots");
    assert_eq!(bad(HashTableConfig { filter_entries: 0, ..d }), "filter_entries");
    assert_eq!(bad(HashTableConfig { slot_count: 0, ..d }), "slot_count");
}

#[derive(Debug, Clone)]
enum Cmd {
    Set(u8, u8, u32),
    Get(u8),
    Delete(u8),
    Flush,
}

fn cmd() -> impl Strategy<Value = Cmd> {
    prop_oneof![
        6 => (0u8..24, 0u8..30, any::<u32>()).prop_map(|(k, n, f)| Cmd::Set(k, n, f)),
        6 => (0u8..24).prop_map(Cmd::Get),
        2 => (0u8..24).prop_map(Cmd::Delete),
        1 => Just(Cmd::Flush),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // A tiny table so buckets collide and fill up.
    #[test]
    fn matches_dictionary_model(cmds in proptest::collection::vec(cmd(), 1..150)) {
        let cfg = HashTableConfig { bucket_count: 4, bucket_slots: 3, filter_entries: 4, slot_count: 10, seed: 0 };
        let mut c = HashCore::new(cfg, 64);
        let mut tokens = Vec::new();
        for cmd in &cmds {
            tokens.extend(match *cmd {
                Cmd::Set(k, n, f) => req(Opcode::Set, &format!("k{k}"), &vec![b'v'; n as usize], f),
                Cmd::Get(k) => get(&format!("k{k}")),
                Cmd::Delete(k) => req(Opcode::Delete, &format!("k{k}"), b"", 0),
                Cmd::Flush => req(Opcode::Flush, "", b"", 0),
            });
        }
        let out = run(&mut c, tokens);
        prop_assert_eq!(out.len(), cmds.len());
        let mut model: HashMap<u8, (u32, u32)> = HashMap::new();
        // The model cannot predict capacity failures, so it learns them.
        for (cmd, (head, words)) in cmds.iter().zip(&out) {
            match *cmd {
                Cmd::Set(k, n, f) => {
                    if head.status == Status::Stored {
                        prop_assert_eq!(words.len(), crate::wordstream::words_for(n as usize));
                        model.insert(k, (n as u32, f));
                    } else {
                        prop_assert_eq!(head.status, Status::Error);
                        prop_assert!(!model.contains_key(&k), "update of a present key must not fail");
                    }
                }
                Cmd::Get(k) => match model.get(&k) {
                    Some(&(n, f)) => {
                        prop_assert_eq!(head.status, Status::Found);
                        prop_assert_eq!((head.meta.value_length, head.meta.flags), (n, f));
                    }
                    None => prop_assert_eq!(head.status, Status::NotFound),
                },
                Cmd::Delete(k) => {
                    let expect = if model.remove(&k).is_some() { Status::Deleted } else { Status::NotFound };
                    prop_assert_eq!(head.status, expect);
                }
                Cmd::Flush => {
                    model.clear();
                    prop_assert_eq!(head.status, Status::Flushed);
                }
            }
        }
        prop_assert_eq!(c.valid_entries().count(), model.len());
        prop_assert!(c.addresses_unique());
    }
}
