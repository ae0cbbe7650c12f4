//! Seeded request generation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::client::Request;
use crate::pipeline::ConfigError;
use crate::proto::{Limits, Opcode, Protocol};

/// Fractions of each opcode, summing to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mix {
    pub get: f64,
    pub set: f64,
    pub delete: f64,
    pub flush: f64,
}

impl Mix {
    fn weights(&self) -> [(Opcode, f64); 4] {
        [(Opcode::Get, self.get), (Opcode::Set, self.set), (Opcode::Delete, self.delete), (Opcode::Flush, self.flush)]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = self.weights();
        if w.iter().any(|(_, f)| !(0.0..=1.0).contains(f)) {
            return Err(ConfigError::new("mix", "each fraction must be within 0..=1"));
        }
        let sum: f64 = w.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new("mix", format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    fn pick(&self, rng: &mut impl Rng) -> Opcode {
        let mut x: f64 = rng.gen();
        for (op, f) in self.weights() {
            if x < f {
                return op;
            }
            x -= f;
        }
        // rounding leftovers go to the last non-zero entry
        self.weights().iter().rev().find(|(_, f)| *f > 0.0).map_or(Opcode::Get, |(op, _)| *op)
    }
}

impl Default for Mix {
    fn default() -> Self {
        Mix { get: 0.9, set: 0.1, delete: 0.0, flush: 0.0 }
    }
}

/// Parses `get=0.9,set=0.1`. Missing opcodes get 0.
impl FromStr for Mix {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let mut m = Mix { get: 0.0, set: 0.0, delete: 0.0, flush: 0.0 };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || ConfigError::new("mix", format!("cannot parse {part:?}"));
            let (name, frac) = part.split_once('=').ok_or_else(bad)?;
            let frac: f64 = frac.trim().parse().map_err(|_| bad())?;
            let slot = match name.trim().to_ascii_lowercase().as_str() {
                "get" => &mut m.get,
                "set" => &mut m.set,
                "delete" => &mut m.delete,
                "flush" | "flush_all" => &mut m.flush,
                _ => return Err(bad()),
            };
            *slot = frac;
        }
        m.validate()?;
        Ok(m)
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "get={},set={},delete={},flush={}", self.get, self.set, self.delete, self.flush)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthDist {
    Fixed(usize),
    /// Inclusive range.
    Uniform {
        min: usize,
        max: usize,
    },
}

impl LengthDist {
    pub fn min(&self) -> usize {
        match *self {
            LengthDist::Fixed(n) => n,
            LengthDist::Uniform { min, .. } => min,
        }
    }

    pub fn max(&self) -> usize {
        match *self {
            LengthDist::Fixed(n) => n,
            LengthDist::Uniform { max, .. } => max,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(self.min()..=self.max())
    }
}

/// Parses `16` or `4..64`.
impl FromStr for LengthDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
        match s.split_once("..") {
            None => Ok(LengthDist::Fixed(num(s)?)),
            Some((a, b)) => {
                let (min, max) = (num(a)?, num(b)?);
                if min > max {
                    return Err(format!("empty range {s}"));
                }
                Ok(LengthDist::Uniform { min, max })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProtocolMix {
    #[default]
    Ascii,
    Binary,
    /// Each request picks a protocol at random.
    Mixed,
}

impl FromStr for ProtocolMix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ascii" => Ok(ProtocolMix::Ascii),
            "binary" => Ok(ProtocolMix::Binary),
            "mixed" => Ok(ProtocolMix::Mixed),
            _ => Err(format!("unknown protocol {s:?}, expected ascii, binary or mixed")),
        }
    }
}

/// Length of `key%08d`, the shortest generated key.
pub const KEY_PREFIX_LEN: usize = 11;

/// Chance that a GET goes to a key known to be stored.
const WARM_GET_BIAS: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub requests: usize,
    pub mix: Mix,
    pub key_space: u32,
    pub key_length: LengthDist,
    pub value_length: LengthDist,
    pub protocol: ProtocolMix,
    /// Client connections. Request `i` belongs to connection `i % connections`,
    /// and each connection draws keys from its own residue class.
    pub connections: usize,
    pub seed: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            requests: 10_000,
            mix: Mix::default(),
            key_space: 1024,
            key_length: LengthDist::Fixed(KEY_PREFIX_LEN),
            value_length: LengthDist::Uniform { min: 1, max: 64 },
            protocol: ProtocolMix::Ascii,
            connections: 1,
            seed: 1,
        }
    }
}

impl Workload {
    pub fn validate(&self, limits: &Limits) -> Result<(), ConfigError> {
        self.mix.validate()?;
        if self.key_space == 0 || self.key_space > 100_000_000 {
            return Err(ConfigError::new("key_space", "must be within 1..=100000000"));
        }
        if self.key_length.min() < KEY_PREFIX_LEN || self.key_length.max() > limits.max_key {
            return Err(ConfigError::new(
                "key_length",
                format!("must lie within {KEY_PREFIX_LEN}..={}", limits.max_key),
            ));
        }
        if self.value_length.max() > limits.max_value {
            return Err(ConfigError::new("value_length", format!("must not exceed {}", limits.max_value)));
        }
        if self.connections == 0 || self.connections as u64 > self.key_space as u64 {
            return Err(ConfigError::new("connections", "must be within 1..=key_space"));
        }
        Ok(())
    }

    pub fn connection_of(&self, index: usize) -> usize {
        index % self.connections
    }

    /// The key for key index `k`: `key%08d` padded to a length that depends
    /// only on `k`.
    pub fn key(&self, k: u32) -> Vec<u8> {
        let mut key = format!("key{k:08}").into_bytes();
        let span = (self.key_length.max() - self.key_length.min() + 1) as u64;
        let len = self.key_length.min() + (u64::from(k).wrapping_mul(0x9E37_79B9) % span) as usize;
        key.resize(len.max(key.len()), b'a' + (k % 26) as u8);
        key
    }
}

/// Generates the request sequence for `w`. The same workload always gives
/// the same sequence.
pub fn generate_workload(w: &Workload, limits: &Limits) -> Result<Vec<Request>, ConfigError> {
    w.validate(limits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(w.seed);
    // Keys stored per connection, with positions for O(1) removal.
    let mut live: Vec<Vec<u32>> = vec![Vec::new(); w.connections];
    let mut slot: Vec<Option<usize>> = vec![None; w.key_space as usize];
    let conns = w.connections as u32;
    let mut out = Vec::with_capacity(w.requests);
    for i in 0..w.requests {
        let c = w.connection_of(i);
        let protocol = match w.protocol {
            ProtocolMix::Ascii => Protocol::Ascii,
            ProtocolMix::Binary => Protocol::Binary,
            ProtocolMix::Mixed => *[Protocol::Ascii, Protocol::Binary].choose(&mut rng).expect("non-empty"),
        };
        let op = w.mix.pick(&mut rng);
        // keys of connection c are c, c + conns, c + 2 * conns, ...
        let per_conn = (w.key_space - c as u32).div_ceil(conns);
        let any_key = |rng: &mut ChaCha8Rng| c as u32 + rng.gen_range(0..per_conn) * conns;
        let k = match op {
            Opcode::Get if !live[c].is_empty() && rng.gen_bool(WARM_GET_BIAS) => {
                *live[c].choose(&mut rng).expect("non-empty")
            }
            _ => any_key(&mut rng),
        };
        let key = if op == Opcode::Flush { Vec::new() } else { w.key(k) };
        let mut r = Request::new(op, protocol, key);
        r.opaque = i as u32;
        match op {
            Opcode::Set => {
                r.flags = rng.gen::<u16>() as u32;
                let len = w.value_length.sample(&mut rng);
                r.value = (0..len).map(|_| rng.sample(rand::distributions::Alphanumeric)).collect();
                if slot[k as usize].is_none() {
                    slot[k as usize] = Some(live[c].len());
                    live[c].push(k);
                }
            }
            Opcode::Delete => {
                if let Some(pos) = slot[k as usize].take() {
                    live[c].swap_remove(pos);
                    if let Some(&moved) = live[c].get(pos) {
                        slot[moved as usize] = Some(pos);
                    }
                }
            }
            Opcode::Flush => {
                for l in &mut live {
                    for k in l.drain(..) {
                        slot[k as usize] = None;
                    }
                }
            }
            Opcode::Get => {}
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::model::DictModel;

    fn limits() -> Limits {
        Limits::default()
    }

    #[test]
    fn same_seed_same_sequence() {
        let w = Workload { requests: 500, protocol: ProtocolMix::Mixed, ..Default::default() };
        let a = generate_workload(&w, &limits()).unwrap();
        assert_eq!(a, generate_workload(&w, &limits()).unwrap());
        let b = generate_workload(&Workload { seed: 2, ..w }, &limits()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn set_only_mix() {
        let w = Workload { requests: 200, mix: "set=1.0".parse().unwrap(), ..Default::default() };
        assert!(generate_workload(&w, &limits()).unwrap().iter().all(|r| r.opcode == Opcode::Set));
    }

    #[test]
    fn mix_counts_within_five_percent() {
        let w = Workload { requests: 1000, mix: "get=0.9,set=0.1".parse().unwrap(), ..Default::default() };
        let reqs = generate_workload(&w, &limits()).unwrap();
        let gets = reqs.iter().filter(|r| r.opcode == Opcode::Get).count() as f64;
        let sets = reqs.iter().filter(|r| r.opcode == Opcode::Set).count() as f64;
        // 4 standard deviations of a binomial(1000, 0.1) is about 38
        assert!((gets - 900.0).abs() <= 50.0, "{gets}");
        assert!((sets - 100.0).abs() <= 50.0, "{sets}");
    }

    #[test]
    fn warm_gets_mostly_hit() {
        let w = Workload {
            requests: 20_000,
            key_space: 512,
            mix: "get=0.5,set=0.5".parse().unwrap(),
            ..Default::default()
        };
        let reqs = generate_workload(&w, &limits()).unwrap();
        let mut m = DictModel::new();
        let (mut gets, mut hits) = (0, 0);
        for (i, r) in reqs.iter().enumerate() {
            if i > 2000 && r.opcode == Opcode::Get {
                gets += 1;
                hits += m.get(&r.key).is_some() as u32;
            }
            m.apply(r);
        }
        assert!(hits as f64 >= 0.9 * gets as f64, "{hits}/{gets}");
    }

    #[test]
    fn mix_parsing() {
        let m: Mix = "get=0.5, set=0.25,delete=0.2,flush=0.05".parse().unwrap();
        assert_eq!(m.flush, 0.05);
        assert_eq!("get=0.5".parse::<Mix>().unwrap_err().field, "mix");
        assert!("get=0.5,put=0.5".parse::<Mix>().is_err());
        assert!("get=1.5,set=-0.5".parse::<Mix>().is_err());
    }

    #[test]
    fn keys_respect_length_and_space() {
        let w = Workload {
            key_length: "11..40".parse().unwrap(),
            key_space: 64,
            connections: 4,
            mix: "get=0.3,set=0.4,delete=0.3".parse().unwrap(),
            ..Default::default()
        };
        for (i, r) in generate_workload(&w, &limits()).unwrap().iter().enumerate() {
            assert!((11..=40).contains(&r.key.len()));
            assert!(!r.key.iter().any(|&b| b == b' ' || b == b'\r' || b == b'\n'));
            let k: u32 = std::str::from_utf8(&r.key[3..11]).unwrap().parse().unwrap();
            assert!(k < 64);
            assert_eq!(k as usize % 4, w.connection_of(i));
            assert_eq!(r.key, w.key(k));
        }
    }

    #[test]
    fn invalid_workloads_rejected() {
        let bad = |w: Workload| generate_workload(&w, &limits()).unwrap_err().field;
        let d = Workload::default();
        assert_eq!(bad(Workload { key_length: LengthDist::Fixed(5), ..d.clone() }), "key_length");
        assert_eq!(bad(Workload { key_length: LengthDist::Fixed(251), ..d.clone() }), "key_length");
        assert_eq!(bad(Workload { value_length: LengthDist::Fixed(10_000), ..d.clone() }), "value_length");
        assert_eq!(bad(Workload { key_space: 0, ..d.clone() }), "key_space");
        assert_eq!(bad(Workload { connections: 0, ..d }), "connections");
    }

    #[test]
    fn empty_workload() {
        let w = Workload { requests: 0, ..Default::default() };
        assert!(generate_workload(&w, &limits()).unwrap().is_empty());
    }
}
