//! Word-oriented stream model shared by every pipeline stage.
//!
//! A message travels as a run of [`StreamWord`]s: eight data bytes, a
//! left-packed byte-validity mask and an end-of-message flag. Byte 0 of a
//! message is byte 0 of the first word's `data`.

mod channel;
mod counter;

pub use channel::{channel, ChannelError, Consumer, Producer};
pub use counter::{count_message_words, MessageCounter};

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Width of one data beat in bytes.
pub const WORD_BYTES: usize = 8;

/// Default depth of an inter-stage channel, in items.
pub const DEFAULT_CHANNEL_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WordError {
    #[error("keep mask is zero")]
    Empty,
    #[error("keep mask {0:#04x} is not left-packed")]
    NotLeftPacked(u8),
    #[error("non-final word is partial (keep {0:#04x})")]
    PartialNotLast(u8),
}

/// One 64-bit beat of a message.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamWord {
    pub data: [u8; WORD_BYTES],
    pub keep: u8,
    pub last: bool,
}

/// Keep mask with the low `n` bits set (`n` clamped to 8).
#[inline]
pub const fn keep_mask(n: usize) -> u8 {
    if n >= WORD_BYTES {
        0xFF
    } else {
        ((1u16 << n) - 1) as u8
    }
}

/// Number of words a message of `len` bytes occupies.
#[inline]
pub const fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BYTES)
}

impl StreamWord {
    /// A word with all eight bytes valid.
    pub const fn full(data: [u8; WORD_BYTES], last: bool) -> Self {
        StreamWord { data, keep: 0xFF, last }
    }

    /// Builds a word from 1..=8 bytes; returns `None` for an empty or
    /// oversized slice.
    pub fn from_slice(bytes: &[u8], last: bool) -> Option<Self> {
        if bytes.is_empty() || bytes.len() > WORD_BYTES {
            return None;
        }
        let mut data = [0u8; WORD_BYTES];
        data[..bytes.len()].copy_from_slice(bytes);
        Some(StreamWord { data, keep: keep_mask(bytes.len()), last })
    }

    /// Number of valid bytes. Assumes a left-packed mask.
    #[inline]
    pub fn len(&self) -> usize {
        self.keep.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.keep == 0
    }

    /// The valid bytes of this word.
    #[inline]
    pub fn bytes(&self) -> &[u8] {
        &self.data[..self.len()]
    }

    /// Checks the framing invariants of a single word.
    pub fn check(&self) -> Result<(), WordError> {
        if self.keep == 0 {
            return Err(WordError::Empty);
        }
        // left-packed masks are exactly 2^n - 1
        if self.keep & self.keep.wrapping_add(1) != 0 {
            return Err(WordError::NotLeftPacked(self.keep));
        }
        if !self.last && self.keep != 0xFF {
            return Err(WordError::PartialNotLast(self.keep));
        }
        Ok(())
    }
}

impl fmt::Debug for StreamWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StreamWord({:02x?}, keep={:#04x}", self.bytes(), self.keep)?;
        if self.last {
            write!(f, ", last")?;
        }
        write!(f, ")")
    }
}

/// Serializes a message into words. An empty slice yields no words.
pub fn pack(bytes: &[u8]) -> Vec<StreamWord> {
    let mut out = Vec::with_capacity(words_for(bytes.len()));
    pack_into(bytes, &mut out);
    out
}

/// Appends the words of `bytes` to `out`.
pub fn pack_into(bytes: &[u8], out: &mut Vec<StreamWord>) {
    let n = words_for(bytes.len());
    for (i, chunk) in bytes.chunks(WORD_BYTES).enumerate() {
        out.push(StreamWord::from_slice(chunk, i + 1 == n).expect("chunk is 1..=8 bytes"));
    }
}

/// Concatenates the valid bytes of `words`.
pub fn unpack(words: &[StreamWord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(words.len() * WORD_BYTES);
    for w in words {
        out.extend_from_slice(w.bytes());
    }
    out
}

/// Checks a whole message: every word well formed, `last` only on the final one.
pub fn check_message(words: &[StreamWord]) -> Result<(), WordError> {
    for (i, w) in words.iter().enumerate() {
        w.check()?;
        if w.last != (i + 1 == words.len()) {
            return Err(WordError::PartialNotLast(w.keep));
        }
    }
    Ok(())
}

/// Re-aligns an arbitrary byte stream onto word boundaries.
///
/// Bytes are appended at a running offset; full words are released as soon
/// as it is known they are not the final word of the message, and
/// [`WordPacker::finish`] closes the message by marking the last word.
#[derive(Debug, Default)]
pub struct WordPacker {
    buf: [u8; WORD_BYTES],
    fill: usize,
    held: Option<[u8; WORD_BYTES]>,
    ready: VecDeque<StreamWord>,
    total: usize,
}

impl WordPacker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, mut bytes: &[u8]) {
        self.total += bytes.len();
        while !bytes.is_empty() {
            let n = (WORD_BYTES - self.fill).min(bytes.len());
            self.buf[self.fill..self.fill + n].copy_from_slice(&bytes[..n]);
            self.fill += n;
            bytes = &bytes[n..];
            if self.fill == WORD_BYTES {
                if let Some(h) = self.held.take() {
                    self.ready.push_back(StreamWord::full(h, false));
                }
                self.held = Some(self.buf);
                self.fill = 0;
            }
        }
    }

    /// Ends the current message. A message with no bytes produces no words.
    pub fn finish(&mut self) {
        if self.fill > 0 {
            if let Some(h) = self.held.take() {
                self.ready.push_back(StreamWord::full(h, false));
            }
            let w = StreamWord::from_slice(&self.buf[..self.fill], true).expect("1..=7 bytes");
            self.ready.push_back(w);
        } else if let Some(h) = self.held.take() {
            self.ready.push_back(StreamWord::full(h, true));
        }
        self.fill = 0;
        self.total = 0;
    }

    /// Bytes pushed since the last `finish`.
    pub fn pushed(&self) -> usize {
        self.total
    }

    pub fn pop(&mut self) -> Option<StreamWord> {
        self.ready.pop_front()
    }

    /// The next released word, left in place.
    pub fn front(&self) -> Option<&StreamWord> {
        self.ready.front()
    }

    pub fn has_ready(&self) -> bool {
        !self.ready.is_empty()
    }

    /// Drains every released word.
    pub fn drain(&mut self) -> impl Iterator<Item = StreamWord> + '_ {
        self.ready.drain(..)
    }
}
