//! Hash table stage: key hashing, concurrency control and address lookup.

pub mod filter;
pub mod lookup3;
mod table;

pub use filter::{ConcurrencyFilter, FilterEntry, DEFAULT_FILTER_ENTRIES};
pub use lookup3::bj_hash;
pub use table::{HashCore, HashTableConfig, HashTableEntry, HashTableStage, MAX_BUCKET_SLOTS};

#[cfg(test)]
mod tests;
