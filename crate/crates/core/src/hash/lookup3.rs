//! Bob Jenkins' lookup3 `hashlittle`, byte-at-a-time form.
//!
//! Reading the key bytewise keeps the result independent of alignment and
//! host endianness; it equals the C routine on little-endian machines.

#[inline(always)]
fn mix(a: &mut u32, b: &mut u32, c: &mut u32) {
    *a = a.wrapping_sub(*c);
    *a ^= c.rotate_left(4);
    *c = c.wrapping_add(*b);
    *b = b.wrapping_sub(*a);
    *b ^= a.rotate_left(6);
    *a = a.wrapping_add(*c);
    *c = c.wrapping_sub(*b);
    *c ^= b.rotate_left(8);
    *b = b.wrapping_add(*a);
    *a = a.wrapping_sub(*c);
    *a ^= c.rotate_left(16);
    *c = c.wrapping_add(*b);
    *b = b.wrapping_sub(*a);
    *b ^= a.rotate_left(19);
    *a = a.wrapping_add(*c);
    *c = c.wrapping_sub(*b);
    *c ^= b.rotate_left(4);
    *b = b.wrapping_add(*a);
}

#[inline(always)]
fn final_mix(a: &mut u32, b: &mut u32, c: &mut u32) {
    *c ^= *b;
    *c = c.wrapping_sub(b.rotate_left(14));
    *a ^= *c;
    *a = a.wrapping_sub(c.rotate_left(11));
    *b ^= *a;
    *b = b.wrapping_sub(a.rotate_left(25));
    *c ^= *b;
    *c = c.wrapping_sub(b.rotate_left(16));
    *a ^= *c;
    *a = a.wrapping_sub(c.rotate_left(4));
    *b ^= *a;
    *b = b.wrapping_sub(a.rotate_left(14));
    *c ^= *b;
    *c = c.wrapping_sub(b.rotate_left(24));
}

/// Little-endian load of up to four bytes.
#[inline(always)]
fn le(bytes: &[u8]) -> u32 {
    bytes.iter().rev().fold(0, |acc, &b| (acc << 8) | b as u32)
}

/// `hashlittle(key, len, initval)`.
pub fn bj_hash(key: &[u8], init: u32) -> u32 {
    let seed = 0xdead_beef_u32.wrapping_add(key.len() as u32).wrapping_add(init);
    let (mut a, mut b, mut c) = (seed, seed, seed);
    let mut k = key;
    while k.len() > 12 {
        a = a.wrapping_add(le(&k[0..4]));
        b = b.wrapping_add(le(&k[4..8]));
        c = c.wrapping_add(le(&k[8..12]));
        mix(&mut a, &mut b, &mut c);
        k = &k[12..];
    }
    if k.is_empty() {
        return c;
    }
    a = a.wrapping_add(le(&k[..k.len().min(4)]));
    if k.len() > 4 {
        b = b.wrapping_add(le(&k[4..k.len().min(8)]));
    }
    if k.len() > 8 {
        c = c.wrapping_add(le(&k[8..]));
    }
    final_mix(&mut a, &mut b, &mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::bj_hash;
    use proptest::prelude::*;

    #[test]
    fn driver_vectors() {
        assert_eq!(bj_hash(b"", 0), 0xdeadbeef);
        assert_eq!(bj_hash(b"", 0xdeadbeef), 0xbd5b7dde);
        assert_eq!(bj_hash(b"Four score and seven years ago", 0), 0x17770551);
        assert_eq!(bj_hash(b"Four score and seven years ago", 1), 0xcd628161);
    }

    #[test]
    fn every_tail_length_matches_reference() {
        let key: Vec<u8> = (0u8..=40).map(|i| i.wrapping_mul(37)).collect();
        for n in 0..key.len() {
            assert_eq!(bj_hash(&key[..n], 0), lookup3_ref::hashlittle(&key[..n], 0), "len {n}");
        }
        assert_eq!(bj_hash(b"foo", 0), lookup3_ref::hashlittle(b"foo", 0));
    }

    proptest! {
        #[test]
        fn matches_reference(key in proptest::collection::vec(any::<u8>(), 1..=250), seed in any::<u32>()) {
            prop_assert_eq!(bj_hash(&key, seed), lookup3_ref::hashlittle(&key, seed));
        }
    }
}
