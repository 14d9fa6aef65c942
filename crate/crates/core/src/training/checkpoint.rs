//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "DIWA" | version u32 | config hash u64 | entry count u32 | entries...
//! entry: name length u32 | UTF-8 name | dtype u8 (0 f64, 1 u64, 2 u8) | ndim u32 | dims u64[ndim] | payload
//! ```
//!
//! Entries are sorted by name, so a given state has exactly one encoding.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{LossStats, Moments, TrainState};
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::rng::{Rng, RNG_STATE_WORDS};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DIWA";
pub const CHECKPOINT_VERSION: u32 = 1;

/// First 8 bytes (little-endian) of the SHA-256 of canonical config text.
pub fn config_hash(canonical_text: &str) -> u64 {
    let digest = Sha256::digest(canonical_text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    /// Canonical text of the configuration the state was trained with.
    pub config_text: String,
}

impl Checkpoint {
    pub fn config_hash(&self) -> u64 {
        config_hash(&self.config_text)
    }
}

enum Payload {
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

struct Entry {
    dims: Vec<usize>,
    payload: Payload,
}

fn f64_entry(t: &Tensor) -> Entry {
    Entry {
        dims: t.shape().to_vec(),
        payload: Payload::F64(t.data().to_vec()),
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let s = &ck.state;
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let text = ck.config_text.as_bytes().to_vec();
    entries.insert(
        "config".into(),
        Entry {
            dims: vec![text.len()],
            payload: Payload::U8(text),
        },
    );
    let scalar_u64 = |v: u64| Entry {
        dims: vec![1],
        payload: Payload::U64(vec![v]),
    };
    let scalar_f64 = |v: f64| Entry {
        dims: vec![1],
        payload: Payload::F64(vec![v]),
    };
    entries.insert("loss.count".into(), scalar_u64(s.loss_stats.count));
    entries.insert("loss.last".into(), scalar_f64(s.loss_stats.last));
    entries.insert("loss.sum".into(), scalar_f64(s.loss_stats.sum));
    entries.insert("step".into(), scalar_u64(s.step));
    entries.insert(
        "rng".into(),
        Entry {
            dims: vec![RNG_STATE_WORDS],
            payload: Payload::U64(s.rng.state().to_vec()),
        },
    );
    for (name, t) in s.params.iter() {
        entries.insert(format!("param/{name}"), f64_entry(t));
    }
    for (name, t) in &s.moments.m {
        entries.insert(format!("moment1/{name}"), f64_entry(t));
    }
    for (name, t) in &s.moments.v {
        entries.insert(format!("moment2/{name}"), f64_entry(t));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&ck.config_hash().to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, e) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let tag: u8 = match e.payload {
            Payload::F64(_) => 0,
            Payload::U64(_) => 1,
            Payload::U8(_) => 2,
        };
        out.push(tag);
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for &d in &e.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &e.payload {
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
    }
    out
}

/// Writes atomically: to a sibling temp file first, then renamed into place.
pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(ck))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!(
                "truncated file while reading {what} at byte {}",
                self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn entry_error(name: &str, msg: &str) -> Error {
    Error::Checkpoint(format!("entry {name}: {msg}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes (not a checkpoint file)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_hash = r.u64("config hash")?;
    let count = r.u32("entry count")?;

    let mut entries = BTreeMap::new();
    let mut prev: Option<String> = None;
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        if prev.as_ref().is_some_and(|p| *p >= name) {
            return Err(entry_error(&name, "entries are not strictly sorted"));
        }
        let tag = r.take(1, "dtype")?[0];
        let ndim = r.u32("ndim")? as usize;
        let dims = (0..ndim)
            .map(|_| r.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| entry_error(&name, "dims overflow"))?;
        let width = match tag {
            0 | 1 => 8,
            2 => 1,
            t => return Err(entry_error(&name, &format!("unknown dtype tag {t}"))),
        };
        let raw = r.take(
            numel
                .checked_mul(width)
                .ok_or_else(|| entry_error(&name, "size overflow"))?,
            &name,
        )?;
        let payload = match tag {
            0 => Payload::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                    .collect(),
            ),
            1 => Payload::U64(
                raw.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().expect("8")))
                    .collect(),
            ),
            _ => Payload::U8(raw.to_vec()),
        };
        prev = Some(name.clone());
        entries.insert(name, Entry { dims, payload });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut take = |name: &str| entries.remove(name).ok_or_else(|| entry_error(name, "missing"));
    let config_text = match take("config")?.payload {
        Payload::U8(v) => String::from_utf8(v).map_err(|_| entry_error("config", "not UTF-8"))?,
        _ => return Err(entry_error("config", "expected u8 data")),
    };
    if config_hash(&config_text) != header_hash {
        return Err(Error::Checkpoint("header hash does not match the stored config".into()));
    }
    let u64s = |e: Entry, name: &str, n: usize| match e.payload {
        Payload::U64(v) if v.len() == n => Ok(v),
        _ => Err(entry_error(name, &format!("expected {n} u64 values"))),
    };
    let f64_scalar = |e: Entry, name: &str| match e.payload {
        Payload::F64(v) if v.len() == 1 => Ok(v[0]),
        _ => Err(entry_error(name, "expected one f64 value")),
    };
    let step = u64s(take("step")?, "step", 1)?[0];
    let rng_words = u64s(take("rng")?, "rng", RNG_STATE_WORDS)?;
    let loss_stats = LossStats {
        count: u64s(take("loss.count")?, "loss.count", 1)?[0],
        sum: f64_scalar(take("loss.sum")?, "loss.sum")?,
        last: f64_scalar(take("loss.last")?, "loss.last")?,
    };

    let mut groups: [BTreeMap<String, Tensor>; 3] = Default::default();
    for (name, e) in entries {
        let (slot, key) = if let Some(k) = name.strip_prefix("param/") {
            (0, k)
        } else if let Some(k) = name.strip_prefix("moment1/") {
            (1, k)
        } else if let Some(k) = name.strip_prefix("moment2/") {
            (2, k)
        } else {
            return Err(entry_error(&name, "unknown entry"));
        };
        let Payload::F64(data) = e.payload else {
            return Err(entry_error(&name, "expected f64 data"));
        };
        let t = Tensor::new(&e.dims, data).map_err(|err| entry_error(&name, &err.to_string()))?;
        groups[slot].insert(key.to_string(), t);
    }
    let [params, m, v] = groups;
    for (name, p) in &params {
        for (label, store) in [("moment1", &m), ("moment2", &v)] {
            match store.get(name) {
                Some(t) if t.shape() == p.shape() => {}
                _ => return Err(entry_error(name, &format!("{label} missing or mis-shaped"))),
            }
        }
    }
    if m.len() != params.len() || v.len() != params.len() {
        return Err(Error::Checkpoint(
            "optimizer moments without matching parameters".into(),
        ));
    }
    Ok(Checkpoint {
        state: TrainState {
            params: ModelParams::from_map(params),
            moments: Moments { m, v },
            step,
            rng: Rng::from_state(rng_words.try_into().expect("length checked")),
            loss_stats,
        },
        config_text,
    })
}

/// Reads a checkpoint. When `expected_hash` is given and differs from the
/// stored config, loading fails unless `allow_mismatch` is set, in which case
/// only a warning is logged.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_hash: Option<u64>, allow_mismatch: bool) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let ck = decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if let Some(expected) = expected_hash {
        let found = ck.config_hash();
        if found != expected {
            if !allow_mismatch {
                return Err(Error::ConfigHashMismatch { expected, found });
            }
            log::warn!(
                "{}: config hash {found:#018x} differs from requested {expected:#018x}; continuing",
                path.display()
            );
        }
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            channel_mults: vec![1, 2],
            n_blocks: 1,
            predictor_layers: 2,
            ..ModelConfig::desk()
        };
        let mut state = TrainState::new(ModelParams::init(&cfg, 3).unwrap(), 4);
        state.step = 17;
        state.rng.normal();
        state.loss_stats.record(0.25);
        for t in state.moments.m.values_mut() {
            t.data_mut()[0] = 0.5;
        }
        Checkpoint {
            state,
            config_text: "seed = 4\n".into(),
        }
    }

    #[test]
    fn byte_identical_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample_checkpoint();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&a, &ck).unwrap();
        let loaded = load_checkpoint(&a, Some(ck.config_hash()), false).unwrap();
        assert_eq!(loaded, ck);
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&sample_checkpoint());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(m)) if m.contains("version")));
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(m)) if m.contains("truncated")));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }

    #[test]
    fn hash_mismatch_needs_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let ck = sample_checkpoint();
        save_checkpoint(&path, &ck).unwrap();
        let other = config_hash("seed = 5\n");
        assert!(matches!(
            load_checkpoint(&path, Some(other), false),
            Err(Error::ConfigHashMismatch { .. })
        ));
        assert_eq!(load_checkpoint(&path, Some(other), true).unwrap(), ck);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("a = 1\n"), config_hash("a = 1\n"));
        assert_ne!(config_hash("a = 1\n"), config_hash("a = 2\n"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn decode_inverts_encode(step in proptest::prelude::any::<u64>(), draws in 0usize..5, loss in -1e3f64..1e3, text in "[a-z_]{1,8} = [0-9]{1,4}\n") {
            let mut ck = sample_checkpoint();
            ck.state.step = step;
            for _ in 0..draws {
                ck.state.rng.normal();
            }
            ck.state.loss_stats.record(loss);
            ck.config_text = text;
            let bytes = encode_checkpoint(&ck);
            let back = decode_checkpoint(&bytes).unwrap();
            proptest::prop_assert_eq!(encode_checkpoint(&back), bytes);
            proptest::prop_assert_eq!(back, ck);
        }

        #[test]
        fn truncation_is_rejected(cut in 1usize..64) {
            let bytes = encode_checkpoint(&sample_checkpoint());
            proptest::prop_assert!(decode_checkpoint(&bytes[..bytes.len() - cut]).is_err());
        }
    }
}
