//! Request boundaries in a TCP byte stream, and the UDP frame header.

use crate::formatter::ASCII_TOO_LARGE;
use crate::proto::binary::{BinaryHeader, HEADER_LEN, REQUEST_MAGIC, RESPONSE_MAGIC, STATUS_VALUE_TOO_LARGE};
use crate::proto::Limits;

/// What the front of a connection buffer holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Not enough bytes to know yet.
    Incomplete,
    /// A whole request of this many bytes.
    Request(usize),
    /// No request boundary can be found. Forward this many bytes so the
    /// pipeline answers with an error, then close the connection.
    Unframeable(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLimits {
    pub limits: Limits,
    pub max_line: usize,
}

/// Largest binary body a valid request can have: SET extras, key and value.
fn max_binary_body(l: &FrameLimits) -> usize {
    8 + l.limits.max_key + l.limits.max_value
}

/// Finds the first request in `buf`. Binary requests end where the header's
/// total body length says; ASCII requests end at the first CRLF, plus the
/// value block a `set` line declares.
pub fn frame_request(buf: &[u8], l: &FrameLimits) -> Frame {
    match buf.first() {
        None => Frame::Incomplete,
        Some(&REQUEST_MAGIC) => frame_binary(buf, l),
        Some(_) => frame_ascii(buf, l),
    }
}

fn frame_binary(buf: &[u8], l: &FrameLimits) -> Frame {
    let Some(h) = buf.first_chunk::<HEADER_LEN>() else {
        return Frame::Incomplete;
    };
    let body = BinaryHeader::decode(h).total_body_length as usize;
    if body > max_binary_body(l) {
        return Frame::Unframeable(HEADER_LEN);
    }
    if buf.len() < HEADER_LEN + body {
        Frame::Incomplete
    } else {
        Frame::Request(HEADER_LEN + body)
    }
}

fn frame_ascii(buf: &[u8], l: &FrameLimits) -> Frame {
    let window = &buf[..buf.len().min(l.max_line)];
    let Some(cr) = window.windows(2).position(|w| w == b"\r\n") else {
        return if buf.len() >= l.max_line { Frame::Unframeable(l.max_line) } else { Frame::Incomplete };
    };
    let line_end = cr + 2;
    let mut tokens = buf[..cr].split(|&b| b == b' ');
    if !tokens.next().is_some_and(|t| t.eq_ignore_ascii_case(b"set")) {
        return Frame::Request(line_end);
    }
    // an unreadable length is the parser's to reject; frame the line alone
    let Some(len) = tokens.nth(3).and_then(parse_decimal) else {
        return Frame::Request(line_end);
    };
    if len > l.limits.max_value {
        return Frame::Unframeable(line_end);
    }
    let total = line_end + len + 2;
    if buf.len() < total {
        Frame::Incomplete
    } else {
        Frame::Request(total)
    }
}

fn parse_decimal(t: &[u8]) -> Option<usize> {
    if t.is_empty() || t.len() > 10 || !t.iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(t).ok()?.parse().ok()
}

pub const UDP_HEADER_LEN: usize = 8;

/// Largest datagram the server sends, header included.
pub const UDP_MAX_DATAGRAM: usize = 1400;

/// The 8-byte frame header in front of every memcached UDP datagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UdpFrameHeader {
    pub request_id: u16,
    pub sequence: u16,
    pub total_datagrams: u16,
    pub reserved: u16,
}

impl UdpFrameHeader {
    pub fn encode(&self) -> [u8; UDP_HEADER_LEN] {
        let mut b = [0u8; UDP_HEADER_LEN];
        b[0..2].copy_from_slice(&self.request_id.to_be_bytes());
        b[2..4].copy_from_slice(&self.sequence.to_be_bytes());
        b[4..6].copy_from_slice(&self.total_datagrams.to_be_bytes());
        b[6..8].copy_from_slice(&self.reserved.to_be_bytes());
        b
    }

    pub fn decode(b: &[u8; UDP_HEADER_LEN]) -> Self {
        UdpFrameHeader {
            request_id: u16::from_be_bytes([b[0], b[1]]),
            sequence: u16::from_be_bytes([b[2], b[3]]),
            total_datagrams: u16::from_be_bytes([b[4], b[5]]),
            reserved: u16::from_be_bytes([b[6], b[7]]),
        }
    }
}

/// Splits a request datagram into its header and payload. `None` means the
/// datagram is dropped.
pub fn parse_datagram(d: &[u8]) -> Option<(UdpFrameHeader, &[u8])> {
    let (h, payload) = d.split_first_chunk::<UDP_HEADER_LEN>()?;
    let h = UdpFrameHeader::decode(h);
    if payload.is_empty() || h.total_datagrams != 1 || h.reserved != 0 {
        return None;
    }
    Some((h, payload))
}

/// Builds the response datagram for `request_id`. A response that does not
/// fit is replaced by a too-large error in the same protocol.
pub fn response_datagram(request_id: u16, response: &[u8]) -> Vec<u8> {
    let h = UdpFrameHeader { request_id, sequence: 0, total_datagrams: 1, reserved: 0 };
    let mut out = h.encode().to_vec();
    if UDP_HEADER_LEN + response.len() <= UDP_MAX_DATAGRAM {
        out.extend_from_slice(response);
    } else if let Some(rh) = response.first_chunk::<HEADER_LEN>().filter(|b| b[0] == RESPONSE_MAGIC) {
        let rh = BinaryHeader::decode(rh);
        let err = BinaryHeader {
            magic: RESPONSE_MAGIC,
            opcode: rh.opcode,
            reserved: STATUS_VALUE_TOO_LARGE,
            opaque: rh.opaque,
            ..Default::default()
        };
        out.extend_from_slice(&err.encode());
    } else {
        out.extend_from_slice(ASCII_TOO_LARGE);
    }
    out
}
