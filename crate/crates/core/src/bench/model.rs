//! The dictionary model: a plain map applied to requests in order, producing
//! the exact bytes a memcached server should answer with.
//!
//! Responses are spelled out here with `format!` and hand-packed headers so
//! the model shares no formatting code with the server.

use std::collections::HashMap;

use super::client::Request;
use crate::proto::{Opcode, Protocol};

#[derive(Debug, Clone, Default)]
pub struct DictModel {
    items: HashMap<Vec<u8>, (u32, Vec<u8>)>,
}

impl DictModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, key: &[u8]) -> Option<(u32, &[u8])> {
        self.items.get(key).map(|(f, v)| (*f, v.as_slice()))
    }

    /// Applies one well-formed request and returns the expected response.
    pub fn apply(&mut self, r: &Request) -> Vec<u8> {
        let outcome = match r.opcode {
            Opcode::Set => {
                self.items.insert(r.key.clone(), (r.flags, r.value.clone()));
                Outcome::Stored
            }
            Opcode::Get => match self.items.get(&r.key) {
                Some((flags, value)) => Outcome::Found(*flags, value.clone()),
                None => Outcome::Miss,
            },
            Opcode::Delete => match self.items.remove(&r.key) {
                Some(_) => Outcome::Deleted,
                None => Outcome::Miss,
            },
            Opcode::Flush => {
                self.items.clear();
                Outcome::Flushed
            }
        };
        match r.protocol {
            Protocol::Ascii => ascii_reply(r, outcome),
            Protocol::Binary => binary_reply(r, outcome),
        }
    }
}

enum Outcome {
    Stored,
    Found(u32, Vec<u8>),
    Miss,
    Deleted,
    Flushed,
}

fn ascii_reply(r: &Request, o: Outcome) -> Vec<u8> {
    match o {
        Outcome::Stored => b"STORED\r\n".to_vec(),
        Outcome::Found(flags, value) => {
            let mut out =
                format!("VALUE {} {} {}\r\n", String::from_utf8_lossy(&r.key), flags, value.len()).into_bytes();
            out.extend_from_slice(&value);
            out.extend_from_slice(b"\r\nEND\r\n");
            out
        }
        Outcome::Miss if r.opcode == Opcode::Get => b"END\r\n".to_vec(),
        Outcome::Miss => b"NOT_FOUND\r\n".to_vec(),
        Outcome::Deleted => b"DELETED\r\n".to_vec(),
        Outcome::Flushed => b"OK\r\n".to_vec(),
    }
}

fn binary_reply(r: &Request, o: Outcome) -> Vec<u8> {
    let (status, body): (u16, Vec<u8>) = match o {
        Outcome::Found(flags, value) => (0, [flags.to_be_bytes().as_slice(), &value].concat()),
        Outcome::Miss => (1, Vec::new()),
        _ => (0, Vec::new()),
    };
    let extras = if body.is_empty() { 0 } else { 4 };
    let mut out = vec![0x81, r.opcode.wire(), 0, 0, extras, 0];
    out.extend_from_slice(&status.to_be_bytes());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&r.opaque.to_be_bytes());
    out.extend_from_slice(&[0; 8]);
    out.extend_from_slice(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_session() {
        let mut m = DictModel::new();
        let get = Request::new(Opcode::Get, Protocol::Ascii, "foo");
        assert_eq!(m.apply(&get), b"END\r\n");
        assert_eq!(m.apply(&Request::set(Protocol::Ascii, "foo", 7, "bar")), b"STORED\r\n");
        assert_eq!(m.apply(&get), b"VALUE foo 7 3\r\nbar\r\nEND\r\n");
        assert_eq!(m.apply(&Request::new(Opcode::Delete, Protocol::Ascii, "foo")), b"DELETED\r\n");
        assert_eq!(m.apply(&Request::new(Opcode::Delete, Protocol::Ascii, "foo")), b"NOT_FOUND\r\n");
        m.apply(&Request::set(Protocol::Ascii, "a", 0, ""));
        assert_eq!(m.apply(&Request::new(Opcode::Flush, Protocol::Ascii, "")), b"OK\r\n");
        assert!(m.is_empty());
    }

    #[test]
    fn binary_hit_and_miss() {
        let mut m = DictModel::new();
        let get = Request { opaque: 0xAABBCCDD, ..Request::new(Opcode::Get, Protocol::Binary, "foo") };
        let miss = m.apply(&get);
        assert_eq!(miss.len(), 24);
        assert_eq!(&miss[..8], &[0x81, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(&miss[12..16], &[0xAA, 0xBB, 0xCC, 0xDD]);
        m.apply(&Request::set(Protocol::Binary, "foo", 7, "bar"));
        let hit = m.apply(&get);
        assert_eq!(&hit[4..12], &[4, 0, 0, 0, 0, 0, 0, 7]);
        assert_eq!(&hit[24..], &[0, 0, 0, 7, b'b', b'a', b'r']);
    }
}
