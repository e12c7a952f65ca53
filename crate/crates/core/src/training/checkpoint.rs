//! Binary checkpoint container.
//!
//! Layout: magic `BFCK`, `u32` version, `u64` header length, a JSON header
//! (configs, vocabulary, epoch, best validation loss, tensor names and
//! shapes), then every tensor's data as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Vocabulary;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

use super::{TrainConfig, TrainError};

const MAGIC: &[u8; 4] = b"BFCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub vocab: Vocabulary,
    pub epoch: usize,
    pub best_valid_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    model_config: ModelConfig,
    vocab: Vocabulary,
    epoch: usize,
    best_valid_loss: Option<f64>,
    tensors: Vec<(String, Vec<usize>)>,
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        let header = Header {
            config: self.config.clone(),
            model_config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            epoch: self.epoch,
            best_valid_loss: self.best_valid_loss,
            tensors: self
                .model
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let io = |e: std::io::Error| bad(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes())
            .map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for (_, t) in self.model.params.iter() {
            let mut bytes = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TrainError> {
        let io = |e: std::io::Error| bad(format!("truncated or unreadable checkpoint: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(io)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;

        let mut params = ParamStore::new();
        for (name, shape) in header.tensors {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(io)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            params.insert(name, t);
        }
        let expected = header.model_config.param_shapes();
        for (name, shape) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                _ => return Err(bad(format!("parameter `{name}` missing or misshapen"))),
            }
        }
        Ok(Checkpoint {
            config: header.config,
            model: Model {
                config: header.model_config,
                params,
            },
            vocab: header.vocab,
            epoch: header.epoch,
            best_valid_loss: header.best_valid_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let file = File::create(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file = File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::read_from(BufReader::new(file))
    }
}
