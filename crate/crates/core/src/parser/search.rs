//! Delimiter search within one data word.
//!
//! All four variants return the index, relative to `offset`, of the first
//! byte equal to the delimiter at or after `offset`, or 8 when there is none.
//! They differ only in how the loop is shaped: shift the word so the field
//! starts at byte 0 or index from `offset` directly, and scan forward with an
//! early exit or backwards letting the lowest match overwrite higher ones.

use std::fmt;
use std::str::FromStr;

use crate::wordstream::WORD_BYTES;

/// Sentinel returned when the delimiter is absent.
pub const NOT_FOUND: usize = WORD_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SearchVariant {
    #[default]
    ShiftReverse,
    ForwardNoShift,
    ReverseNoShift,
    ShiftForward,
}

impl SearchVariant {
    pub const ALL: [SearchVariant; 4] = [
        SearchVariant::ShiftReverse,
        SearchVariant::ForwardNoShift,
        SearchVariant::ReverseNoShift,
        SearchVariant::ShiftForward,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            SearchVariant::ShiftReverse => "shift-reverse",
            SearchVariant::ForwardNoShift => "forward-noshift",
            SearchVariant::ReverseNoShift => "reverse-noshift",
            SearchVariant::ShiftForward => "shift-forward",
        }
    }
}

impl fmt::Display for SearchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SearchVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SearchVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown search variant {s:?}"))
    }
}

/// Finds `delimiter` in `word` starting at `offset` (0..=7).
#[inline]
pub fn find_delimiter(word: &[u8; WORD_BYTES], offset: usize, delimiter: u8, variant: SearchVariant) -> usize {
    debug_assert!(offset < WORD_BYTES);
    match variant {
        SearchVariant::ShiftReverse => shift_reverse(word, offset, delimiter),
        SearchVariant::ForwardNoShift => forward_noshift(word, offset, delimiter),
        SearchVariant::ReverseNoShift => reverse_noshift(word, offset, delimiter),
        SearchVariant::ShiftForward => shift_forward(word, offset, delimiter),
    }
}

#[inline]
fn shifted(word: &[u8; WORD_BYTES], offset: usize) -> u64 {
    u64::from_le_bytes(*word) >> (offset * 8)
}

#[inline]
fn byte_at(sh: u64, i: usize) -> u8 {
    (sh >> (8 * i)) as u8
}

fn shift_reverse(word: &[u8; WORD_BYTES], offset: usize, delimiter: u8) -> usize {
    let sh = shifted(word, offset);
    let mut loc = NOT_FOUND;
    // bytes shifted in from above are not part of the word
    for i in (0..WORD_BYTES - offset).rev() {
        if byte_at(sh, i) == delimiter {
            loc = i;
        }
    }
    loc
}

fn shift_forward(word: &[u8; WORD_BYTES], offset: usize, delimiter: u8) -> usize {
    let sh = shifted(word, offset);
    let mut loc = NOT_FOUND;
    for i in 0..WORD_BYTES - offset {
        if byte_at(sh, i) == delimiter {
            loc = i;
            break;
        }
    }
    loc
}

fn forward_noshift(word: &[u8; WORD_BYTES], offset: usize, delimiter: u8) -> usize {
    let mut loc = NOT_FOUND;
    for (i, &b) in word.iter().enumerate().skip(offset) {
        if b == delimiter {
            loc = i - offset;
            break;
        }
    }
    loc
}

fn reverse_noshift(word: &[u8; WORD_BYTES], offset: usize, delimiter: u8) -> usize {
    let mut loc = NOT_FOUND;
    for i in (offset..WORD_BYTES).rev() {
        if word[i] == delimiter {
            loc = i - offset;
        }
    }
    loc
}
