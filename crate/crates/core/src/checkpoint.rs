//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"FKAN"  u32 version
//! u32 header_len, header_len bytes of UTF-8 JSON (configs, counters, RNG)
//! u32 array_count
//! array_count x { u32 rows, u32 cols, u64 len, len x f64 }
//! ```
//!
//! Arrays appear in declaration order: model parameters, then Adam first
//! moments, then Adam second moments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::layers::{Model, ModelConfig};
use crate::optim::AdamState;
use crate::train::{RngState, TrainConfig, TrainReport, TrainState};

pub const MAGIC: &[u8; 4] = b"FKAN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train_config: Option<TrainConfig>,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: Option<TrainConfig>,
    step: u64,
    adam_step_count: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    rng: RngState,
    elapsed_seconds: f64,
    report: TrainReport,
    param_arrays: usize,
}

impl Checkpoint {
    /// Checkpoint of an untrained model with fresh optimizer state.
    pub fn from_model(model: Model, lr: f64) -> Self {
        use rand::SeedableRng;
        let adam = AdamState::new(&model.params(), lr);
        let rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Checkpoint {
            train_config: None,
            state: TrainState {
                model,
                adam,
                step: 0,
                rng: RngState::capture(&rng),
                elapsed_seconds: 0.0,
                report: TrainReport::default(),
            },
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.state;
        let params = s.model.params();
        let header = Header {
            model_config: s.model.config.clone(),
            train_config: self.train_config.clone(),
            step: s.step,
            adam_step_count: s.adam.step_count,
            lr: s.adam.lr,
            beta1: s.adam.beta1,
            beta2: s.adam.beta2,
            epsilon: s.adam.epsilon,
            rng: s.rng.clone(),
            elapsed_seconds: s.elapsed_seconds,
            report: s.report.clone(),
            param_arrays: params.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let arrays: Vec<&Array2> = params
            .into_iter()
            .chain(s.adam.m.iter())
            .chain(s.adam.v.iter())
            .collect();

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(json.len())?.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&u32_len(arrays.len())?.to_le_bytes());
        for a in arrays {
            out.extend_from_slice(&u32_len(a.rows())?.to_le_bytes());
            out.extend_from_slice(&u32_len(a.cols())?.to_le_bytes());
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("missing FKAN magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = r.u64()? as usize;
            if rows.checked_mul(cols) != Some(len) {
                return Err(Error::Checkpoint(format!(
                    "array {i}: {rows}x{cols} does not hold {len} values"
                )));
            }
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint(format!("array {i} length overflows")))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(Array2::from_vec(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        let np = header.param_arrays;
        if count != 3 * np {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays for {np} parameters, found {count}",
                3 * np
            )));
        }
        let mut model = Model::zeros(header.model_config.clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let mut it = arrays.into_iter();
        {
            let mut slots = model.params_mut();
            if slots.len() != np {
                return Err(Error::Checkpoint(format!(
                    "config implies {} parameter arrays, header says {np}",
                    slots.len()
                )));
            }
            for (i, slot) in slots.iter_mut().enumerate() {
                let a = it.next().unwrap();
                if a.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {i}: expected {}x{}, found {}x{}",
                        slot.rows(),
                        slot.cols(),
                        a.rows(),
                        a.cols()
                    )));
                }
                **slot = a;
            }
        }
        let m: Vec<Array2> = it.by_ref().take(np).collect();
        let v: Vec<Array2> = it.collect();
        for (i, (p, (mi, vi))) in model.params().iter().zip(m.iter().zip(&v)).enumerate() {
            if mi.shape() != p.shape() || vi.shape() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "optimizer moments for parameter {i} have the wrong shape"
                )));
            }
        }
        let adam = AdamState {
            m,
            v,
            step_count: header.adam_step_count,
            lr: header.lr,
            beta1: header.beta1,
            beta2: header.beta2,
            epsilon: header.epsilon,
        };
        header.rng.restore()?;
        Ok(Checkpoint {
            train_config: header.train_config,
            state: TrainState {
                model,
                adam,
                step: header.step,
                rng: header.rng,
                elapsed_seconds: header.elapsed_seconds,
                report: header.report,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
