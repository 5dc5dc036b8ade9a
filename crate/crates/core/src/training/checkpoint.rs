use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adadelta::OptimizerState;
use super::config::TrainConfig;
use super::trainer::TrainingState;
use crate::autograd::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::{ModelConfig, Seq2Seq, VocabSizes, Vocabs};
use crate::subword::MergeTable;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MNMTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to decode with a model or resume its training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocabs: Vocabs,
    /// Merge operations the source side was segmented with, if any.
    pub merges: Option<MergeTable>,
    /// Free-form provenance (processing mode and the like).
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub state: TrainingState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocabs: Vocabs,
    merges: Option<String>,
    meta: BTreeMap<String, String>,
    params: Vec<(String, Vec<usize>)>,
    has_optimizer: bool,
    state: TrainingState,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Seq2Seq<f32>> {
        Seq2Seq::from_params(self.model_config.clone(), VocabSizes::of(&self.vocabs), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dtype: "f32".into(),
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            vocabs: self.vocabs.clone(),
            merges: self.merges.as_ref().map(MergeTable::to_file_string),
            meta: self.meta.clone(),
            params: self.params.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect(),
            has_optimizer: self.optimizer.is_some(),
            state: self.state.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::State(format!("cannot encode checkpoint header: {e}")))?;
        let scalars = self.params.num_scalars() * if self.optimizer.is_some() { 3 } else { 1 };
        let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + 4 * scalars);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (_, _, t) in self.params.iter() {
            put(t.data());
        }
        if let Some(opt) = &self.optimizer {
            opt.sq_grad.iter().chain(&opt.sq_update).for_each(|v| put(v));
        }
        Ok(out)
    }

    /// Parses a checkpoint; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, m);
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a morphnmt checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.dtype != "f32" {
            return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
        }
        let mut data = body[hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if (body.len() - hlen) % 4 != 0 {
            return Err(bad("data block is not a whole number of f32 values".into()));
        }
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let v: Vec<f32> = data.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(bad("truncated data block".into()))
            }
        };
        let mut params = ParamSet::new();
        let mut sizes = Vec::new();
        for (name, shape) in &header.params {
            let n = shape.iter().product();
            sizes.push(n);
            params.add(name.clone(), Tensor::new(shape, take(n)?)?)?;
        }
        let optimizer = if header.has_optimizer {
            let sq_grad = sizes.iter().map(|&n| take(n)).collect::<Result<_>>()?;
            let sq_update = sizes.iter().map(|&n| take(n)).collect::<Result<_>>()?;
            Some(OptimizerState { sq_grad, sq_update })
        } else {
            None
        };
        if data.next().is_some() {
            return Err(bad("trailing data after parameters".into()));
        }
        let merges = header
            .merges
            .as_deref()
            .map(|m| MergeTable::from_file_string(m, path))
            .transpose()?;
        let ckpt = Checkpoint {
            model_config: header.model_config,
            train_config: header.train_config,
            vocabs: header.vocabs,
            merges,
            meta: header.meta,
            params,
            optimizer,
            state: header.state,
        };
        ckpt.model().map_err(|e| bad(format!("parameters do not match the model config: {e}")))?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
