//! Binary checkpoint: magic, tensor table, non-linear flag bitmap, config.
//!
//! ```text
//! "SLSTM1"
//! u32 tensor count
//! per tensor: u16 name length, name (UTF-8), u8 rank, u32 dims..., f64 values...
//! ceil(cells / 8) bytes of flags, least significant bit first
//! u32 length, config as key=value lines
//! ```
//! All integers and floats are little-endian.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::eval::{ModelPredictor, Predictor};
use crate::model::{ModelError, ModelWeights};
use crate::scenegrid::{GridBank, Variant};

use super::{ConfigError, TrainConfig};

pub const MAGIC: &[u8; 6] = b"SLSTM1";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_STEP: &str = "adam.step";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version `{0}`")]
    VersionMismatch(String),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(String),
    #[error("checkpoint tensor name is not UTF-8")]
    BadName,
    #[error("duplicate tensor `{0}`")]
    DuplicateTensor(String),
    #[error("tensor `{name}`: {reason}")]
    Tensor { name: String, reason: String },
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0} trailing bytes after checkpoint")]
    Trailing(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub weights: ModelWeights,
    pub flags: Vec<bool>,
    pub adam: Option<AdamState>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    let name_bytes = name.as_bytes();
    out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(name_bytes);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Number of grid cells implied by the `scene.<j>.` tensor names.
fn cells_from_names<'a>(names: impl Iterator<Item = &'a str>) -> usize {
    let cells: BTreeSet<usize> = names
        .filter_map(|n| n.strip_prefix("scene."))
        .filter_map(|rest| rest.split('.').next()?.parse().ok())
        .collect();
    cells.len()
}

impl Checkpoint {
    pub fn new(config: TrainConfig, weights: ModelWeights, flags: Vec<bool>) -> Self {
        Checkpoint {
            config,
            weights,
            flags,
            adam: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let store = &self.weights.store;
        let mut count = store.len();
        if self.adam.is_some() {
            count += 2 * store.len() + 1;
        }
        let mut out = Vec::with_capacity(16 + store.num_values() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (_, name, t) in store.iter() {
            write_tensor(&mut out, name, t);
        }
        if let Some(adam) = &self.adam {
            for (id, name, _) in store.iter() {
                write_tensor(&mut out, &format!("{ADAM_M}{name}"), &adam.m[id.0]);
            }
            for (id, name, _) in store.iter() {
                write_tensor(&mut out, &format!("{ADAM_V}{name}"), &adam.v[id.0]);
            }
            write_tensor(&mut out, ADAM_STEP, &Tensor::scalar(adam.step as f64));
        }
        let mut bitmap = vec![0u8; self.flags.len().div_ceil(8)];
        for (j, &f) in self.flags.iter().enumerate() {
            if f {
                bitmap[j / 8] |= 1 << (j % 8);
            }
        }
        out.extend_from_slice(&bitmap);
        let text = self.config.render();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic").map_err(|_| CheckpointError::BadMagic)?;
        if magic != MAGIC {
            if magic.starts_with(b"SLSTM") {
                return Err(CheckpointError::VersionMismatch(String::from_utf8_lossy(magic).into_owned()));
            }
            return Err(CheckpointError::BadMagic);
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for k in 0..count {
            let what = format!("tensor {k}");
            let len = r.u16(&what)? as usize;
            let name = std::str::from_utf8(r.take(len, &what)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let rank = r.u8(&name)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&name)? as usize);
            }
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|b| b > bytes.len() - r.pos) {
                return Err(CheckpointError::Truncated(name));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64(&name)?);
            }
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Tensor {
                name: name.clone(),
                reason: e.to_string(),
            })?;
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::DuplicateTensor(name));
            }
            tensors.push((name, t));
        }

        let n_cells = cells_from_names(tensors.iter().map(|(n, _)| n.as_str()).filter(|n| !n.starts_with("adam.")));
        let bitmap = r.take(n_cells.div_ceil(8), "flag bitmap")?;
        let flags: Vec<bool> = (0..n_cells).map(|j| bitmap[j / 8] >> (j % 8) & 1 == 1).collect();
        let text_len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(text_len, "config")?)
            .map_err(|_| ConfigError::Invalid("config is not UTF-8".into()))?;
        let config = TrainConfig::parse_text(text)?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }

        let dims = config.dims()?;
        if n_cells != dims.grid.num_cells() {
            return Err(ConfigError::Invalid(format!(
                "{n_cells} scene cells stored but grid {} needs {}",
                config.grid,
                dims.grid.num_cells()
            ))
            .into());
        }
        let mut store = ParamStore::new();
        let mut moments_m = Vec::new();
        let mut moments_v = Vec::new();
        let mut step = None;
        for (name, t) in tensors {
            if let Some(base) = name.strip_prefix(ADAM_M) {
                moments_m.push((base.to_string(), t));
            } else if let Some(base) = name.strip_prefix(ADAM_V) {
                moments_v.push((base.to_string(), t));
            } else if name == ADAM_STEP {
                step = Some(t.item() as u64);
            } else {
                store.add(name, t).expect("names checked unique");
            }
        }
        let weights = ModelWeights::from_store(dims, store).map_err(|e| match e {
            ModelError::Layout { name, reason } => CheckpointError::Tensor { name, reason },
            other => other.into(),
        })?;

        let adam = match step {
            None if moments_m.is_empty() && moments_v.is_empty() => None,
            None => {
                return Err(CheckpointError::Tensor {
                    name: ADAM_STEP.into(),
                    reason: "missing".into(),
                })
            }
            Some(step) => {
                let store = &weights.store;
                let mut adam = AdamState::new(
                    store,
                    AdamConfig {
                        lr: config.lr,
                        ..AdamConfig::default()
                    },
                );
                adam.step = step;
                for (prefix, moments, slot) in [(ADAM_M, moments_m, &mut adam.m), (ADAM_V, moments_v, &mut adam.v)] {
                    if moments.len() != store.len() {
                        return Err(CheckpointError::Tensor {
                            name: format!("{prefix}*"),
                            reason: format!("expected {} moment tensors, found {}", store.len(), moments.len()),
                        });
                    }
                    for (base, t) in moments {
                        let id = store.id(&base).ok_or_else(|| CheckpointError::Tensor {
                            name: format!("{prefix}{base}"),
                            reason: "unknown tensor".into(),
                        })?;
                        if t.shape() != store.get(id).shape() {
                            return Err(CheckpointError::Tensor {
                                name: format!("{prefix}{base}"),
                                reason: "shape mismatch".into(),
                            });
                        }
                        slot[id.0] = t;
                    }
                }
                Some(adam)
            }
        };
        Ok(Checkpoint {
            config,
            weights,
            flags,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Switches the checkpoint to `variant`. Returns `true` (and warns)
    /// when this changes the hard-filter vectors.
    pub fn reconcile_variant(&mut self, variant: Variant) -> bool {
        if self.config.variant == variant {
            return false;
        }
        log::warn!(
            "checkpoint was trained as variant {}; running as variant {}, hard-filter vectors recomputed",
            self.config.variant,
            variant
        );
        self.config.variant = variant;
        true
    }

    /// A bank with zeroed memories and hard filters built from the stored flags.
    pub fn grid_bank(&self) -> GridBank {
        let dims = self.weights.dims;
        let mut bank = GridBank::new(dims.grid, dims.hidden, self.config.variant);
        bank.set_flags(&self.flags);
        bank
    }

    /// Forecaster over the stored weights and flags, decoding by mean unless
    /// `sample` is set.
    pub fn predictor(&self, sample: bool) -> Predictor<'_> {
        Predictor::Model(ModelPredictor {
            weights: &self.weights,
            flags: self.flags.clone(),
            variant: self.config.variant,
            scene: self.config.model.scene_use(),
            sample,
            peephole_ct: self.config.peephole_ct,
        })
    }

    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}
