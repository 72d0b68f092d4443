//! Parameter tensors of the encoder-decoder.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Longest accepted input, in tokens.
    pub max_src_len: usize,
    /// Longest target, in tokens including `[EOS]`.
    pub max_tgt_len: usize,
    /// Standard deviation of the normal weight initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            d_ff: 256,
            max_src_len: 256,
            max_tgt_len: 256,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 || self.layers == 0 {
            return Err("dimensions, heads and layers must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return Err(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.max_src_len == 0 || self.max_tgt_len == 0 {
            return Err("length caps must be positive".into());
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err("init_std must be positive".into());
        }
        Ok(())
    }

    pub fn max_positions(&self) -> usize {
        self.max_src_len.max(self.max_tgt_len)
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    fn normal(shape: &[usize], std: f64, rng: &mut StreamRng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| S::lit(std * rng.sample::<f64, _>(StandardNormal))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LayerNorm<S> {
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Attention<S> {
    pub wq: Tensor<S>,
    pub bq: Tensor<S>,
    pub wk: Tensor<S>,
    pub bk: Tensor<S>,
    pub wv: Tensor<S>,
    pub bv: Tensor<S>,
    pub wo: Tensor<S>,
    pub bo: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FeedForward<S> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EncoderLayer<S> {
    pub ln1: LayerNorm<S>,
    pub attn: Attention<S>,
    pub ln2: LayerNorm<S>,
    pub ffn: FeedForward<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DecoderLayer<S> {
    pub ln1: LayerNorm<S>,
    pub self_attn: Attention<S>,
    pub ln2: LayerNorm<S>,
    pub cross_attn: Attention<S>,
    pub ln3: LayerNorm<S>,
    pub ffn: FeedForward<S>,
}

/// All trainable tensors. Token embeddings are shared by encoder and
/// decoder inputs; the output projection is separate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Params<S> {
    pub tok_emb: Tensor<S>,
    pub pos_emb: Tensor<S>,
    pub encoder: Vec<EncoderLayer<S>>,
    pub enc_ln: LayerNorm<S>,
    pub decoder: Vec<DecoderLayer<S>>,
    pub dec_ln: LayerNorm<S>,
    pub out_w: Tensor<S>,
    pub out_b: Tensor<S>,
}

impl<S: Scalar> LayerNorm<S> {
    fn new(d: usize) -> Self {
        Self {
            gain: Tensor::filled(&[d], S::one()),
            bias: Tensor::zeros(&[d]),
        }
    }

    fn visit<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{p}.gain"), &self.gain));
        out.push((format!("{p}.bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        out.extend([&mut self.gain, &mut self.bias]);
    }
}

impl<S: Scalar> Attention<S> {
    fn new(d: usize, std: f64, rng: &mut StreamRng) -> Self {
        Self {
            wq: Tensor::normal(&[d, d], std, rng),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::normal(&[d, d], std, rng),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::normal(&[d, d], std, rng),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::normal(&[d, d], std, rng),
            bo: Tensor::zeros(&[d]),
        }
    }

    fn visit<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        for (n, t) in [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
        ] {
            out.push((format!("{p}.{n}"), t));
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        out.extend([
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]);
    }
}

impl<S: Scalar> FeedForward<S> {
    fn new(d: usize, ff: usize, std: f64, rng: &mut StreamRng) -> Self {
        Self {
            w1: Tensor::normal(&[d, ff], std, rng),
            b1: Tensor::zeros(&[ff]),
            w2: Tensor::normal(&[ff, d], std, rng),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn visit<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{p}.w1"), &self.w1));
        out.push((format!("{p}.b1"), &self.b1));
        out.push((format!("{p}.w2"), &self.w2));
        out.push((format!("{p}.b2"), &self.b2));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
    }
}

impl<S: Scalar> Params<S> {
    pub fn init(cfg: &ModelConfig, vocab_size: usize, rng: &mut StreamRng) -> Self {
        let (d, std) = (cfg.d_model, cfg.init_std);
        let tok_emb = Tensor::normal(&[vocab_size, d], std, rng);
        let pos_emb = Tensor::normal(&[cfg.max_positions(), d], std, rng);
        let encoder = (0..cfg.layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::new(d),
                attn: Attention::new(d, std, rng),
                ln2: LayerNorm::new(d),
                ffn: FeedForward::new(d, cfg.d_ff, std, rng),
            })
            .collect();
        let decoder = (0..cfg.layers)
            .map(|_| DecoderLayer {
                ln1: LayerNorm::new(d),
                self_attn: Attention::new(d, std, rng),
                ln2: LayerNorm::new(d),
                cross_attn: Attention::new(d, std, rng),
                ln3: LayerNorm::new(d),
                ffn: FeedForward::new(d, cfg.d_ff, std, rng),
            })
            .collect();
        Self {
            tok_emb,
            pos_emb,
            encoder,
            enc_ln: LayerNorm::new(d),
            decoder,
            dec_ln: LayerNorm::new(d),
            out_w: Tensor::normal(&[d, vocab_size], std, rng),
            out_b: Tensor::zeros(&[vocab_size]),
        }
    }

    /// A same-shaped parameter set of zeros, used for gradients and
    /// optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = S::zero());
        }
        z
    }

    /// Tensors with stable dotted names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (i, l) in self.encoder.iter().enumerate() {
            l.ln1.visit(&format!("enc.{i}.ln1"), &mut out);
            l.attn.visit(&format!("enc.{i}.attn"), &mut out);
            l.ln2.visit(&format!("enc.{i}.ln2"), &mut out);
            l.ffn.visit(&format!("enc.{i}.ffn"), &mut out);
        }
        self.enc_ln.visit("enc_ln", &mut out);
        for (i, l) in self.decoder.iter().enumerate() {
            l.ln1.visit(&format!("dec.{i}.ln1"), &mut out);
            l.self_attn.visit(&format!("dec.{i}.self_attn"), &mut out);
            l.ln2.visit(&format!("dec.{i}.ln2"), &mut out);
            l.cross_attn.visit(&format!("dec.{i}.cross_attn"), &mut out);
            l.ln3.visit(&format!("dec.{i}.ln3"), &mut out);
            l.ffn.visit(&format!("dec.{i}.ffn"), &mut out);
        }
        self.dec_ln.visit("dec_ln", &mut out);
        out.push(("out_w".to_string(), &self.out_w));
        out.push(("out_b".to_string(), &self.out_b));
        out
    }

    /// Same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.encoder {
            l.ln1.visit_mut(&mut out);
            l.attn.visit_mut(&mut out);
            l.ln2.visit_mut(&mut out);
            l.ffn.visit_mut(&mut out);
        }
        self.enc_ln.visit_mut(&mut out);
        for l in &mut self.decoder {
            l.ln1.visit_mut(&mut out);
            l.self_attn.visit_mut(&mut out);
            l.ln2.visit_mut(&mut out);
            l.cross_attn.visit_mut(&mut out);
            l.ln3.visit_mut(&mut out);
            l.ffn.visit_mut(&mut out);
        }
        self.dec_ln.visit_mut(&mut out);
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Adds `other` element-wise.
    pub fn add_assign(&mut self, other: &Params<S>) {
        let src = other.named();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.data.iter_mut().zip(&s.data) {
                *a += *b;
            }
        }
    }

    /// Converts every tensor to another precision.
    pub fn cast<T: Scalar>(&self) -> Params<T> {
        let conv = |t: &Tensor<S>| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|x| T::lit(x.to_f64().expect("finite"))).collect(),
        };
        let ln = |l: &LayerNorm<S>| LayerNorm { gain: conv(&l.gain), bias: conv(&l.bias) };
        let attn = |a: &Attention<S>| Attention {
            wq: conv(&a.wq),
            bq: conv(&a.bq),
            wk: conv(&a.wk),
            bk: conv(&a.bk),
            wv: conv(&a.wv),
            bv: conv(&a.bv),
            wo: conv(&a.wo),
            bo: conv(&a.bo),
        };
        let ffn = |f: &FeedForward<S>| FeedForward { w1: conv(&f.w1), b1: conv(&f.b1), w2: conv(&f.w2), b2: conv(&f.b2) };
        Params {
            tok_emb: conv(&self.tok_emb),
            pos_emb: conv(&self.pos_emb),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer { ln1: ln(&l.ln1), attn: attn(&l.attn), ln2: ln(&l.ln2), ffn: ffn(&l.ffn) })
                .collect(),
            enc_ln: ln(&self.enc_ln),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    ln1: ln(&l.ln1),
                    self_attn: attn(&l.self_attn),
                    ln2: ln(&l.ln2),
                    cross_attn: attn(&l.cross_attn),
                    ln3: ln(&l.ln3),
                    ffn: ffn(&l.ffn),
                })
                .collect(),
            dec_ln: ln(&self.dec_ln),
            out_w: conv(&self.out_w),
            out_b: conv(&self.out_b),
        }
    }
}
