//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DCLN" | version: u32 | config_len: u32 | config: UTF-8 bytes
//! param_count: u32 | param records
//! state_count: u32 | optimizer state records
//! step: u64
//! record = name_len: u32 | name: UTF-8 | rank: u32 | dims: u64 × rank | payload: f64 × numel
//! ```
//!
//! Optimizer state records carry the first moments (`m1/<name>`) followed by
//! the second moments (`m2/<name>`), in parameter order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{AdamState, NumError, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"DCLN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Opaque configuration blob (the model config, serialized by the caller).
    pub config: String,
    pub params: Vec<(String, Tensor)>,
    pub state: Vec<(String, Tensor)>,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_training(config: String, params: &ParamStore, adam: &AdamState) -> Self {
        let params_out = params.entries().iter().map(|e| (e.name.clone(), e.value.clone())).collect();
        let mut state = Vec::with_capacity(2 * params.len());
        for (e, m) in params.entries().iter().zip(&adam.first_moment) {
            state.push((format!("m1/{}", e.name), m.clone()));
        }
        for (e, v) in params.entries().iter().zip(&adam.second_moment) {
            state.push((format!("m2/{}", e.name), v.clone()));
        }
        Self { config, params: params_out, state, step: adam.step }
    }

    /// Copies stored values into `params` (which fixes names, order and
    /// shapes) and rebuilds the optimizer state.
    pub fn restore_into(&self, params: &mut ParamStore) -> Result<AdamState, NumError> {
        if self.params.len() != params.len() {
            return Err(NumError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((name, value), entry) in self.params.iter().zip(params.entries_mut()) {
            if *name != entry.name || value.shape() != entry.value.shape() {
                return Err(NumError::Checkpoint(format!(
                    "parameter {name} {:?} does not match model parameter {} {:?}",
                    value.shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
            entry.value = value.clone();
        }
        let n = params.len();
        if self.state.len() != 2 * n {
            return Err(NumError::Checkpoint(format!("expected {} state records, found {}", 2 * n, self.state.len())));
        }
        let take = |prefix: &str, offset: usize| -> Result<Vec<Tensor>, NumError> {
            params
                .entries()
                .iter()
                .zip(&self.state[offset..offset + n])
                .map(|(e, (name, t))| {
                    if *name != format!("{prefix}/{}", e.name) || t.shape() != e.value.shape() {
                        Err(NumError::Checkpoint(format!("unexpected state record {name}")))
                    } else {
                        Ok(t.clone())
                    }
                })
                .collect()
        };
        Ok(AdamState { first_moment: take("m1", 0)?, second_moment: take("m2", n)?, step: self.step })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_bytes(&mut out, self.config.as_bytes());
        for records in [&self.params, &self.state] {
            out.extend_from_slice(&(records.len() as u32).to_le_bytes());
            for (name, t) in records {
                write_bytes(&mut out, name.as_bytes());
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumError> {
        let mut r = Reader { buf: bytes };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(NumError::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NumError::Checkpoint(format!("unsupported format version {version}")));
        }
        let config = r.string()?;
        let params = r.records()?;
        let state = r.records()?;
        let step = r.u64()?;
        if !r.buf.is_empty() {
            return Err(NumError::Checkpoint(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self { config, params, state, step })
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), NumError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn truncated(_: io::Error) -> NumError {
    NumError::Checkpoint("truncated checkpoint".into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Read for Reader<'_> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        self.buf.read(out)
    }
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32, NumError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64, NumError> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b).map_err(truncated)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String, NumError> {
        let len = self.u32()? as usize;
        if len > self.buf.len() {
            return Err(NumError::Checkpoint("truncated checkpoint".into()));
        }
        let (s, rest) = self.buf.split_at(len);
        self.buf = rest;
        String::from_utf8(s.to_vec()).map_err(|_| NumError::Checkpoint("name is not UTF-8".into()))
    }

    fn records(&mut self) -> Result<Vec<(String, Tensor)>, NumError> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(self.u64()? as usize);
            }
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = match numel {
                Some(n) if n.checked_mul(8).is_some_and(|b| b <= self.buf.len()) => n,
                _ => return Err(NumError::Checkpoint(format!("record {name}: payload exceeds file"))),
            };
            let (payload, rest) = self.buf.split_at(numel * 8);
            self.buf = rest;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            out.push((name, Tensor::new(&dims, data)?));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::new(&[2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25]).unwrap(), true).unwrap();
        store.insert("emb", Tensor::new(&[1], vec![0.125]).unwrap(), false).unwrap();
        let mut adam = AdamState::new(&store);
        adam.step = 17;
        adam.first_moment[0].data_mut()[1] = 0.5;
        Checkpoint::from_training("{\"d\":4}".into(), &store, &adam)
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"DCLN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()), 17);
    }

    #[test]
    fn restore_rebuilds_params_and_state() {
        let ck = sample();
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::zeros(&[2, 3]), true).unwrap();
        store.insert("emb", Tensor::zeros(&[1]), false).unwrap();
        let adam = ck.restore_into(&mut store).unwrap();
        assert_eq!(adam.step, 17);
        assert_eq!(adam.first_moment[0].data()[1], 0.5);
        assert_eq!(store.get("emb").unwrap().data(), &[0.125]);

        let mut wrong = ParamStore::new();
        wrong.insert("a.w", Tensor::zeros(&[3, 2]), true).unwrap();
        wrong.insert("emb", Tensor::zeros(&[1]), false).unwrap();
        assert!(ck.restore_into(&mut wrong).is_err());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().to_bytes(), ck.to_bytes());
        assert!(!path.with_extension("tmp").exists());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bitwise(
            vals in proptest::collection::vec(proptest::num::f64::ANY, 1..40),
            step in any::<u64>(),
            cfg in ".{0,40}",
        ) {
            let n = vals.len();
            let ck = Checkpoint {
                config: cfg,
                params: vec![("p".into(), Tensor::new(&[n], vals.clone()).unwrap())],
                state: vec![("m1/p".into(), Tensor::new(&[1, n], vals).unwrap())],
                step,
            };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
