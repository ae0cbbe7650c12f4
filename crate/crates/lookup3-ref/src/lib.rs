//! Safe wrapper around the C reference `hashlittle()`, used only as a test oracle.

use std::os::raw::c_void;

extern "C" {
    fn ref_hashlittle(key: *const c_void, length: usize, initval: u32) -> u32;
}

/// Hash `key` with the reference C implementation.
pub fn hashlittle(key: &[u8], initval: u32) -> u32 {
    // SAFETY: the C routine only reads `length` bytes starting at `key`.
    unsafe { ref_hashlittle(key.as_ptr().cast(), key.len(), initval) }
}

#[cfg(test)]
mod tests {
    use super::hashlittle;

    // Values printed by the self-test driver shipped with lookup3.c.
    #[test]
    fn driver_vectors() {
        assert_eq!(hashlittle(b"", 0), 0xdeadbeef);
        assert_eq!(hashlittle(b"", 0xdeadbeef), 0xbd5b7dde);
        assert_eq!(hashlittle(b"Four score and seven years ago", 0), 0x17770551);
        assert_eq!(hashlittle(b"Four score and seven years ago", 1), 0xcd628161);
    }
}
