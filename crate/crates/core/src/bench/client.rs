//! Minimal memcached client codec: request encoders and a response decoder.
//!
//! Written against the wire grammar only, so it can check the server from
//! the outside.

use thiserror::Error;

use crate::proto::binary::{BinaryHeader, HEADER_LEN, REQUEST_MAGIC, RESPONSE_MAGIC};
use crate::proto::{Opcode, Protocol};

/// A request in client terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub opcode: Opcode,
    pub protocol: Protocol,
    pub key: Vec<u8>,
    pub flags: u32,
    pub expiration: u32,
    pub value: Vec<u8>,
    /// Echo token for binary requests.
    pub opaque: u32,
}

impl Request {
    pub fn new(opcode: Opcode, protocol: Protocol, key: impl Into<Vec<u8>>) -> Self {
        Request { opcode, protocol, key: key.into(), flags: 0, expiration: 0, value: Vec::new(), opaque: 0 }
    }

    pub fn set(protocol: Protocol, key: impl Into<Vec<u8>>, flags: u32, value: impl Into<Vec<u8>>) -> Self {
        Request { flags, value: value.into(), ..Request::new(Opcode::Set, protocol, key) }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self.protocol {
            Protocol::Ascii => encode_ascii(self),
            Protocol::Binary => encode_binary(self),
        }
    }
}

pub fn encode_ascii(r: &Request) -> Vec<u8> {
    let key = String::from_utf8_lossy(&r.key);
    match r.opcode {
        Opcode::Get => format!("get {key}\r\n").into_bytes(),
        Opcode::Delete => format!("delete {key}\r\n").into_bytes(),
        Opcode::Flush => b"flush_all\r\n".to_vec(),
        Opcode::Set => {
            let mut out = format!("set {key} {} {} {}\r\n", r.flags, r.expiration, r.value.len()).into_bytes();
            out.extend_from_slice(&r.value);
            out.extend_from_slice(b"\r\n");
            out
        }
    }
}

pub fn encode_binary(r: &Request) -> Vec<u8> {
    let (extras, key, value): (Vec<u8>, &[u8], &[u8]) = match r.opcode {
        Opcode::Set => {
            let mut e = r.flags.to_be_bytes().to_vec();
            e.extend_from_slice(&r.expiration.to_be_bytes());
            (e, &r.key, &r.value)
        }
        Opcode::Get | Opcode::Delete => (Vec::new(), &r.key, &[]),
        Opcode::Flush => (Vec::new(), &[], &[]),
    };
    let h = BinaryHeader {
        magic: REQUEST_MAGIC,
        opcode: r.opcode.wire(),
        key_length: key.len() as u16,
        extras_length: extras.len() as u8,
        total_body_length: (extras.len() + key.len() + value.len()) as u32,
        opaque: r.opaque,
        ..Default::default()
    };
    let mut out = h.encode().to_vec();
    out.extend_from_slice(&extras);
    out.extend_from_slice(key);
    out.extend_from_slice(value);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsciiReply {
    Stored,
    NotStored,
    Deleted,
    NotFound,
    /// `END` alone: a GET miss.
    End,
    Ok,
    Value {
        key: Vec<u8>,
        flags: u32,
        value: Vec<u8>,
    },
    /// `ERROR`, `CLIENT_ERROR ...` or `SERVER_ERROR ...`, without CRLF.
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryReply {
    pub opcode: u8,
    pub status: u16,
    pub opaque: u32,
    pub flags: Option<u32>,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ascii(AsciiReply),
    Binary(BinaryReply),
}

impl Reply {
    pub fn protocol(&self) -> Protocol {
        match self {
            Reply::Ascii(_) => Protocol::Ascii,
            Reply::Binary(_) => Protocol::Binary,
        }
    }

    /// Error category for reporting, `None` for normal outcomes.
    pub fn error_category(&self) -> Option<&'static str> {
        match self {
            Reply::Ascii(AsciiReply::Error(line)) if line.starts_with("CLIENT_ERROR") => Some("client_error"),
            Reply::Ascii(AsciiReply::Error(line)) if line.starts_with("SERVER_ERROR") => Some("server_error"),
            Reply::Ascii(AsciiReply::Error(_)) => Some("error"),
            Reply::Binary(b) if b.status != 0 && b.status != 1 => Some("binary_status"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unrecognised response line {0:?}")]
    BadLine(String),
    #[error("bad response magic {0:#04x}")]
    BadMagic(u8),
    #[error("value block not terminated by CRLF END CRLF")]
    BadTerminator,
}

fn line_end(buf: &[u8]) -> Option<usize> {
    buf.windows(2).position(|w| w == b"\r\n")
}

/// Decodes one response from the front of `buf`. Returns `Ok(None)` when
/// more bytes are needed, else the reply and the bytes it used.
pub fn decode_response(buf: &[u8]) -> Result<Option<(Reply, usize)>, DecodeError> {
    match buf.first() {
        None => Ok(None),
        Some(&RESPONSE_MAGIC) => decode_binary(buf),
        Some(&b) if b >= 0x80 => Err(DecodeError::BadMagic(b)),
        Some(_) => decode_ascii(buf),
    }
}

fn decode_binary(buf: &[u8]) -> Result<Option<(Reply, usize)>, DecodeError> {
    let Some(h) = buf.first_chunk::<HEADER_LEN>() else {
        return Ok(None);
    };
    let h = BinaryHeader::decode(h);
    let total = HEADER_LEN + h.total_body_length as usize;
    if buf.len() < total {
        return Ok(None);
    }
    let body = &buf[HEADER_LEN..total];
    let extras = &body[..h.extras_length as usize];
    let key_end = h.extras_length as usize + h.key_length as usize;
    let reply = BinaryReply {
        opcode: h.opcode,
        status: h.reserved,
        opaque: h.opaque,
        flags: extras.first_chunk::<4>().map(|b| u32::from_be_bytes(*b)),
        key: body[h.extras_length as usize..key_end].to_vec(),
        value: body[key_end..].to_vec(),
    };
    Ok(Some((Reply::Binary(reply), total)))
}

fn decode_ascii(buf: &[u8]) -> Result<Option<(Reply, usize)>, DecodeError> {
    let Some(end) = line_end(buf) else {
        return Ok(None);
    };
    let line = &buf[..end];
    let used = end + 2;
    let simple = |r: AsciiReply| Ok(Some((Reply::Ascii(r), used)));
    match line {
        b"STORED" => simple(AsciiReply::Stored),
        b"NOT_STORED" => simple(AsciiReply::NotStored),
        b"DELETED" => simple(AsciiReply::Deleted),
        b"NOT_FOUND" => simple(AsciiReply::NotFound),
        b"END" => simple(AsciiReply::End),
        b"OK" => simple(AsciiReply::Ok),
        _ if line == b"ERROR" || line.starts_with(b"CLIENT_ERROR ") || line.starts_with(b"SERVER_ERROR ") => {
            simple(AsciiReply::Error(String::from_utf8_lossy(line).into_owned()))
        }
        _ if line.starts_with(b"VALUE ") => {
            let bad = || DecodeError::BadLine(String::from_utf8_lossy(line).into_owned());
            let text = std::str::from_utf8(&line[6..]).map_err(|_| bad())?;
            let mut parts = text.split(' ');
            let (Some(key), Some(flags), Some(len), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            let flags: u32 = flags.parse().map_err(|_| bad())?;
            let len: usize = len.parse().map_err(|_| bad())?;
            let total = used + len + b"\r\nEND\r\n".len();
            if buf.len() < total {
                return Ok(None);
            }
            if &buf[used + len..total] != b"\r\nEND\r\n" {
                return Err(DecodeError::BadTerminator);
            }
            let value = buf[used..used + len].to_vec();
            Ok(Some((Reply::Ascii(AsciiReply::Value { key: key.as_bytes().to_vec(), flags, value }), total)))
        }
        _ => Err(DecodeError::BadLine(String::from_utf8_lossy(line).into_owned())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_encoding() {
        assert_eq!(Request::set(Protocol::Ascii, "foo", 7, "bar").encode(), b"set foo 7 0 3\r\nbar\r\n");
        assert_eq!(Request::new(Opcode::Get, Protocol::Ascii, "k").encode(), b"get k\r\n");
        assert_eq!(Request::new(Opcode::Flush, Protocol::Ascii, "").encode(), b"flush_all\r\n");
    }

    #[test]
    fn binary_encoding() {
        let r = Request { opaque: 9, ..Request::set(Protocol::Binary, "k", 7, "v") };
        let bytes = r.encode();
        assert_eq!(bytes.len(), 24 + 8 + 2);
        assert_eq!(&bytes[..2], &[0x80, 0x01]);
        assert_eq!(&bytes[24..32], &[0, 0, 0, 7, 0, 0, 0, 0]);
        assert_eq!(&bytes[32..], b"kv");
    }

    #[test]
    fn decode_ascii_replies() {
        let buf = b"STORED\r\nVALUE foo 7 3\r\nbar\r\nEND\r\nEND\r\n";
        let (r, n) = decode_response(buf).unwrap().unwrap();
        assert_eq!((r, n), (Reply::Ascii(AsciiReply::Stored), 8));
        let (r, m) = decode_response(&buf[n..]).unwrap().unwrap();
        assert_eq!(r, Reply::Ascii(AsciiReply::Value { key: b"foo".to_vec(), flags: 7, value: b"bar".to_vec() }));
        assert_eq!(decode_response(&buf[n + m..]).unwrap().unwrap().0, Reply::Ascii(AsciiReply::End));
        assert_eq!(decode_response(b"VALUE foo 7 3\r\nba").unwrap(), None);
        assert!(decode_response(b"VALUE foo 7 3\r\nbarXXEND\r\n").is_err());
        assert!(decode_response(b"WHAT\r\n").is_err());
        let (r, _) = decode_response(b"SERVER_ERROR out of memory\r\n").unwrap().unwrap();
        assert_eq!(r.error_category(), Some("server_error"));
    }

    #[test]
    fn decode_binary_reply() {
        let mut buf = vec![0x81, 0x00, 0, 0, 4, 0, 0, 0, 0, 0, 0, 7, 0, 0, 0, 5, 0, 0, 0, 0, 0, 0, 0, 0];
        buf.extend_from_slice(&[0, 0, 0, 9]);
        buf.extend_from_slice(b"bar");
        assert_eq!(decode_response(&buf[..26]).unwrap(), None);
        let (r, n) = decode_response(&buf).unwrap().unwrap();
        assert_eq!(n, buf.len());
        let Reply::Binary(b) = r else { panic!() };
        assert_eq!((b.status, b.opaque, b.flags, b.value.as_slice()), (0, 5, Some(9), &b"bar"[..]));
    }
}
