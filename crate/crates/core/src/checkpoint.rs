//! Binary checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"GTCKPT01"
//! u64 metadata length, metadata JSON
//! u64 tensor count
//! per tensor: u32 name length, UTF-8 name, u64 rows, u64 cols, rows·cols f64
//! ```
//!
//! Model tensors use the names of [`ModelParams::named_tensors`]. Optimizer
//! moments are stored as `adam.m.<name>` / `adam.v.<name>` and the best
//! parameters so far as `best.<name>`, both optional.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adamw::AdamwState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor2;
use crate::trainer::EpochRecord;

pub const MAGIC: &[u8; 8] = b"GTCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub seed: u64,
    pub epochs_completed: usize,
    #[serde(default)]
    pub optimizer_step: Option<u64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub best_loss: Option<f64>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
    pub optimizer: Option<AdamwState>,
    pub best: Option<ModelParams>,
}

impl Checkpoint {
    /// A checkpoint holding only weights.
    pub fn weights_only(params: ModelParams, seed: u64, epochs_completed: usize) -> Self {
        Self {
            meta: CheckpointMeta {
                model: params.config,
                seed,
                epochs_completed,
                optimizer_step: None,
                best_epoch: None,
                best_loss: None,
                history: Vec::new(),
            },
            params,
            optimizer: None,
            best: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.meta.clone();
        meta.model = self.params.config;
        meta.optimizer_step = self.optimizer.as_ref().map(AdamwState::step_count);
        let meta_json = serde_json::to_vec(&meta)?;

        let mut tensors: Vec<(String, &Tensor2)> = self.params.named_tensors();
        let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
        if let Some(opt) = &self.optimizer {
            if opt.first_moments().len() != names.len() {
                return Err(Error::Checkpoint(format!(
                    "optimizer holds {} moments for {} tensors",
                    opt.first_moments().len(),
                    names.len()
                )));
            }
            for (name, m) in names.iter().zip(opt.first_moments()) {
                tensors.push((format!("adam.m.{name}"), m));
            }
            for (name, v) in names.iter().zip(opt.second_moments()) {
                tensors.push((format!("adam.v.{name}"), v));
            }
        }
        if let Some(best) = &self.best {
            for (name, t) in best.named_tensors() {
                tensors.push((format!("best.{name}"), t));
            }
        }

        let payload: usize = tensors.iter().map(|(n, t)| 4 + n.len() + 16 + 8 * t.len()).sum();
        let mut out = Vec::with_capacity(8 + 8 + meta_json.len() + 8 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_json);
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let meta_len = r.len_u64()?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let count = r.u64()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.len_u64()?;
            let cols = r.len_u64()?;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let data = r
                .take(n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let t = Tensor2::from_vec(rows, cols, data)?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let params = ModelParams::from_named(meta.model, &tensors)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let optimizer = match meta.optimizer_step {
            Some(step) => {
                let pick = |prefix: &str| -> Result<Vec<Tensor2>> {
                    names
                        .iter()
                        .map(|n| {
                            tensors
                                .get(&format!("{prefix}{n}"))
                                .cloned()
                                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{prefix}{n}`")))
                        })
                        .collect()
                };
                let state = AdamwState::from_parts(pick("adam.m.")?, pick("adam.v.")?, step)
                    .map_err(|e| Error::Checkpoint(format!("optimizer state: {e}")))?;
                for (m, p) in state.first_moments().iter().zip(params.named_tensors()) {
                    if m.shape() != p.1.shape() {
                        return Err(Error::Checkpoint(format!("optimizer moment for `{}` has wrong shape", p.0)));
                    }
                }
                Some(state)
            }
            None => None,
        };
        let best = if tensors.keys().any(|k| k.starts_with("best.")) {
            let stripped: BTreeMap<String, Tensor2> = tensors
                .iter()
                .filter_map(|(k, t)| k.strip_prefix("best.").map(|n| (n.to_string(), t.clone())))
                .collect();
            Some(ModelParams::from_named(meta.model, &stripped)?)
        } else {
            None
        };
        Ok(Self {
            meta,
            params,
            optimizer,
            best,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// The best parameters if recorded, otherwise the current ones.
    pub fn best_params(&self) -> &ModelParams {
        self.best.as_ref().unwrap_or(&self.params)
    }
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, AblationMode};

    fn full(mode: AblationMode) -> Checkpoint {
        let params = init_params(ModelConfig::with_mode(mode), 11);
        let mut opt = AdamwState::new(params.named_tensors().into_iter().map(|(_, t)| t));
        opt.step = 7;
        opt.first[0].values_mut()[0] = 0.25;
        let mut ckpt = Checkpoint::weights_only(params.clone(), 11, 3);
        ckpt.optimizer = Some(opt);
        ckpt.best = Some(init_params(ModelConfig::with_mode(mode), 12));
        ckpt.meta.optimizer_step = Some(7);
        ckpt.meta.best_epoch = Some(1);
        ckpt.meta.best_loss = Some(0.1 + 0.2);
        ckpt.meta.history = vec![EpochRecord {
            epoch: 0,
            train_loss: 1.0 / 3.0,
            train_loss_sum: 12.5,
            val_loss: Some(0.3),
            lr: 1e-3,
        }];
        ckpt
    }

    #[test]
    fn round_trip_is_exact() {
        for mode in AblationMode::ALL {
            let ckpt = full(mode);
            let bytes = ckpt.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ckpt);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn weights_only_round_trip() {
        let ckpt = Checkpoint::weights_only(init_params(ModelConfig::default(), 2), 2, 0);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert!(back.optimizer.is_none() && back.best.is_none());
        assert_eq!(back.best_params(), &ckpt.params);
    }

    #[test]
    fn truncation_and_corruption_are_reported() {
        let bytes = full(AblationMode::LocalLut).to_bytes().unwrap();
        for cut in [0, 5, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let ckpt = Checkpoint::weights_only(init_params(ModelConfig::with_mode(AblationMode::GlobalLut), 1), 1, 0);
        let bytes = ckpt.to_bytes().unwrap();
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut meta = ckpt.meta.clone();
        meta.model.mode = AblationMode::LocalLut;
        let meta_json = serde_json::to_vec(&meta).unwrap();
        let mut spliced = MAGIC.to_vec();
        spliced.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        spliced.extend_from_slice(&meta_json);
        spliced.extend_from_slice(&bytes[16 + meta_len..]);
        let err = Checkpoint::from_bytes(&spliced).unwrap_err();
        assert!(err.to_string().contains("fc.w0"), "{err}");
    }
}
