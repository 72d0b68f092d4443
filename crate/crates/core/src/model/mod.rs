//! A small encoder-decoder transformer with hand-written backpropagation,
//! generic over its real type.

mod net;
mod optim;
mod params;
mod scalar;
pub mod tokenizer;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use net::Example;
pub use optim::{AdamW, AdamWConfig, Schedule};
pub use params::{Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, ModelConfig, Params, Tensor};
pub use scalar::Scalar;
pub use tokenizer::{detokenize, tokenize, TokenizeError, Vocab};
pub use train::{batch_loss, train, LossReport, Stage, StepLog, Tagged, TrainConfig, TrainError};

use crate::data::Task;
use crate::generator::Generator;
use crate::rng;
use crate::sampler::TrainingInstance;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// Config, vocabulary and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq<S> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params<S>,
}

impl<S: Scalar> Seq2Seq<S> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let params = Params::init(&config, vocab.len(), &mut rng::keyed(seed, "model-init", 0));
        Ok(Self { config, vocab, params })
    }

    pub fn example(&self, prompt: &str, input: &str, target: &str) -> Result<Example, TokenizeError> {
        Ok(Example {
            src: self.vocab.encode_input(prompt, input, self.config.max_src_len)?,
            tgt: self.vocab.encode_target(target, self.config.max_tgt_len)?,
        })
    }

    pub fn tagged(&self, id: &str, task: Task, prompt: &str, input: &str, target: &str) -> Result<Tagged, TokenizeError> {
        Ok(Tagged { id: id.to_string(), task, example: self.example(prompt, input, target)? })
    }

    /// Encodes instances into training units: consecutive instances with the
    /// same non-empty id share a unit.
    pub fn units(&self, instances: &[TrainingInstance]) -> Result<Vec<Vec<Tagged>>, TokenizeError> {
        instances
            .chunk_by(|a, b| !a.id.is_empty() && a.id == b.id)
            .enumerate()
            .map(|(u, group)| {
                group
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let id = if x.id.is_empty() { format!("#{u}.{j}") } else { format!("{}.{j}", x.id) };
                        self.tagged(&id, x.task, &x.prompt, &x.input, &x.target)
                    })
                    .collect()
            })
            .collect()
    }

    /// Loss of a batch of units without gradients.
    pub fn loss(&self, units: &[&[Tagged]]) -> Result<LossReport, TrainError> {
        Ok(batch_loss(&self.params, self.config.heads, units, 1, 1, false)?.0)
    }

    /// Loss of a batch of units and the gradient of its total.
    pub fn loss_and_grads(&self, units: &[&[Tagged]]) -> Result<(LossReport, Params<S>), TrainError> {
        let (l, g) = batch_loss(&self.params, self.config.heads, units, 1, 1, true)?;
        Ok((l, g.expect("gradients requested")))
    }

    pub fn train(&mut self, units: &[Vec<Tagged>], cfg: &TrainConfig, on_step: impl FnMut(&StepLog, &Params<S>)) -> Result<Vec<StepLog>, TrainError> {
        train::train(&mut self.params, self.config.heads, units, cfg, on_step)
    }

    /// Greedy token ids for an input, including the final `[EOS]` if reached.
    pub fn generate_ids(&self, prompt: &str, input: &str, max_len: usize) -> Result<Vec<u32>, TokenizeError> {
        let src = self.vocab.encode_input(prompt, input, self.config.max_src_len)?;
        Ok(net::greedy(&self.params, self.config.heads, &src, max_len, tokenizer::EOS_ID))
    }

    pub fn generate(&self, prompt: &str, input: &str, max_len: usize) -> Result<String, TokenizeError> {
        Ok(self.vocab.decode(&self.generate_ids(prompt, input, max_len)?))
    }

    /// Next-token distribution after `prefix` (target ids without `[EOS]`).
    pub fn next_token_probs(&self, prompt: &str, input: &str, prefix: &[u32]) -> Result<Vec<S>, TokenizeError> {
        let src = self.vocab.encode_input(prompt, input, self.config.max_src_len)?;
        let segs = [net::Seg { start: 0, len: src.len() }];
        let pos: Vec<usize> = (0..src.len()).collect();
        let enc = net::encode(&self.params, self.config.heads, &src, &pos, &segs);
        let mut dec_ids = vec![tokenizer::PAD_ID];
        dec_ids.extend(prefix);
        let n = dec_ids.len();
        let dpos: Vec<usize> = (0..n).collect();
        let dec = net::decode(&self.params, self.config.heads, &enc.memory, &segs, &dec_ids, &dpos, &[net::Seg { start: 0, len: n }]);
        let d = self.config.d_model;
        let mut p = net::logits(&self.params, &dec.hidden[(n - 1) * d..]);
        net::softmax_rows(&mut p, self.vocab.len());
        Ok(p)
    }

    pub fn to_checkpoint(&self) -> Value {
        let tensors: Vec<Value> = self
            .params
            .named()
            .into_iter()
            .map(|(name, t)| serde_json::json!({"name": name, "shape": t.shape, "data": t.data}))
            .collect();
        serde_json::json!({
            "version": CHECKPOINT_VERSION,
            "precision": S::PRECISION,
            "config": self.config,
            "vocab": self.vocab,
            "tensors": tensors,
        })
    }

    /// Rebuilds a model from a checkpoint, converting from the stored
    /// precision if it differs.
    pub fn from_checkpoint(v: &Value) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let header: Header = serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        if !["f32", "f64"].contains(&header.precision.as_str()) {
            return Err(bad(format!("unknown precision {:?}", header.precision)));
        }
        header.config.validate().map_err(ModelError::Config)?;
        let mut model = Self::new(header.config, header.vocab, 0)?;
        let stored = v
            .get("tensors")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing tensors".into()))?;
        let names: Vec<(String, Vec<usize>)> = model.params.named().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        if stored.len() != names.len() {
            return Err(bad(format!("expected {} tensors, found {}", names.len(), stored.len())));
        }
        for ((dst, (name, shape)), src) in model.params.tensors_mut().into_iter().zip(names).zip(stored) {
            let t: StoredTensor = serde_json::from_value(src.clone()).map_err(|e| bad(e.to_string()))?;
            if t.name != name || t.shape != shape || t.data.len() != dst.data.len() {
                return Err(bad(format!("tensor {:?} does not match {name:?} with shape {shape:?}", t.name)));
            }
            for (d, x) in dst.data.iter_mut().zip(t.data) {
                *d = S::lit(x);
            }
        }
        if !model.params.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&v)
    }
}

#[derive(Deserialize)]
struct Header {
    version: u32,
    precision: String,
    config: ModelConfig,
    vocab: Vocab,
}

#[derive(Deserialize, Serialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Precision declared by a checkpoint file.
pub fn checkpoint_precision(path: &Path) -> Result<String, ModelError> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    v.get("precision")
        .and_then(Value::as_str)
        .map(String::from)
        .ok_or_else(|| ModelError::Checkpoint("missing precision".into()))
}

impl<S: Scalar> Generator for Seq2Seq<S> {
    fn generate(&self, prompt: &str, input: &str) -> String {
        // over-long inputs yield no output rather than a fault
        Seq2Seq::generate(self, prompt, input, self.config.max_tgt_len).unwrap_or_default()
    }
}
