//! ASCII decimal to binary conversion for the numeric request fields.

use thiserror::Error;

/// Clock cycles from a number entering a converter, in either direction,
/// to its result being available.
pub const CONVERT_LATENCY: u32 = 5;

/// Most digits a 32-bit field can have.
pub const MAX_DIGITS: usize = 10;

const POW10: [u64; MAX_DIGITS] =
    [1, 10, 100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000, 100_000_000, 1_000_000_000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConvertError {
    #[error("empty numeric field")]
    Empty,
    #[error("numeric field longer than {MAX_DIGITS} digits")]
    TooLong,
    #[error("non-digit byte {0:#04x} in numeric field")]
    NotDigit(u8),
    #[error("value does not fit in 32 bits")]
    Overflow,
}

/// Converts 1..=10 ASCII digits to their value. Each digit is weighted by
/// its power of ten counted from the right, as a fixed ten-lane sum.
pub fn ascii_to_uint(digits: &[u8]) -> Result<u32, ConvertError> {
    if digits.is_empty() {
        return Err(ConvertError::Empty);
    }
    if digits.len() > MAX_DIGITS {
        return Err(ConvertError::TooLong);
    }
    let mut sum: u64 = 0;
    for (i, &b) in digits.iter().rev().enumerate() {
        let d = b.wrapping_sub(b'0');
        if d > 9 {
            return Err(ConvertError::NotDigit(b));
        }
        sum += d as u64 * POW10[i];
    }
    u32::try_from(sum).map_err(|_| ConvertError::Overflow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(ascii_to_uint(b"0"), Ok(0));
        assert_eq!(ascii_to_uint(b"123"), Ok(123));
        assert_eq!(ascii_to_uint(b"4294967295"), Ok(u32::MAX));
    }

    #[test]
    fn errors() {
        assert_eq!(ascii_to_uint(b""), Err(ConvertError::Empty));
        assert_eq!(ascii_to_uint(b"12a"), Err(ConvertError::NotDigit(b'a')));
        assert_eq!(ascii_to_uint(b"-1"), Err(ConvertError::NotDigit(b'-')));
        assert_eq!(ascii_to_uint(b"4294967296"), Err(ConvertError::Overflow));
        assert_eq!(ascii_to_uint(b"9999999999"), Err(ConvertError::Overflow));
        assert_eq!(ascii_to_uint(b"00000000001"), Err(ConvertError::TooLong));
    }

    #[test]
    fn leading_zeros() {
        assert_eq!(ascii_to_uint(b"007"), Ok(7));
        assert_eq!(ascii_to_uint(b"0000000000"), Ok(0));
    }

    #[test]
    fn matches_std_parse() {
        for n in [1u32, 9, 10, 99, 100, 65_535, 1_000_000_007, u32::MAX - 1] {
            assert_eq!(ascii_to_uint(n.to_string().as_bytes()), Ok(n));
        }
    }
}
