//! Forward and backward passes of the pre-norm encoder-decoder transformer.
//!
//! A batch is packed: the token rows of all sequences are stacked into one
//! matrix so the dense layers run as single matrix products, while attention
//! runs per sequence over its own row segment.

use super::params::{Attention, FeedForward, LayerNorm, Params, Tensor};
use super::scalar::{gemm, Scalar, View, ViewMut};
use super::tokenizer::PAD_ID;

const LN_EPS: f64 = 1e-5;

/// Rows `start..start + len` of a packed matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Seg {
    pub start: usize,
    pub len: usize,
}

fn segments(lens: impl IntoIterator<Item = usize>) -> Vec<Seg> {
    let mut start = 0;
    lens.into_iter()
        .map(|len| {
            let s = Seg { start, len };
            start += len;
            s
        })
        .collect()
}

/// One teacher-forced training sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    /// Target ids ending with `[EOS]`.
    pub tgt: Vec<u32>,
}

/// Packed batch with a loss weight per target row.
pub(crate) struct Packed<S> {
    pub src_segs: Vec<Seg>,
    pub tgt_segs: Vec<Seg>,
    pub src_ids: Vec<u32>,
    pub src_pos: Vec<usize>,
    pub dec_ids: Vec<u32>,
    pub dec_pos: Vec<usize>,
    pub tgt_ids: Vec<u32>,
    pub weights: Vec<S>,
}

impl<S: Scalar> Packed<S> {
    /// `weights[i]` applies to every target token of `examples[i]`.
    pub fn new(examples: &[&Example], weights: &[S]) -> Self {
        let mut p = Packed {
            src_segs: segments(examples.iter().map(|e| e.src.len())),
            tgt_segs: segments(examples.iter().map(|e| e.tgt.len())),
            src_ids: Vec::new(),
            src_pos: Vec::new(),
            dec_ids: Vec::new(),
            dec_pos: Vec::new(),
            tgt_ids: Vec::new(),
            weights: Vec::new(),
        };
        for (e, &w) in examples.iter().zip(weights) {
            p.src_ids.extend(&e.src);
            p.src_pos.extend(0..e.src.len());
            p.dec_ids.push(PAD_ID);
            p.dec_ids.extend(&e.tgt[..e.tgt.len().saturating_sub(1)]);
            p.dec_pos.extend(0..e.tgt.len());
            p.tgt_ids.extend(&e.tgt);
            p.weights.extend(std::iter::repeat_n(w, e.tgt.len()));
        }
        p
    }
}

fn linear<S: Scalar>(x: &[S], rows: usize, w: &Tensor<S>, b: &Tensor<S>) -> Vec<S> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(&b.data);
    }
    gemm(S::one(), View::rm(x, 0, rows, din), View::rm(&w.data, 0, din, dout), S::one(), ViewMut::rm(&mut y, 0, rows, dout));
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
fn linear_backward<S: Scalar>(
    x: &[S],
    rows: usize,
    w: &Tensor<S>,
    dy: &[S],
    gw: &mut Tensor<S>,
    gb: &mut Tensor<S>,
) -> Vec<S> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    gemm(S::one(), View::rm(x, 0, rows, din).t(), View::rm(dy, 0, rows, dout), S::one(), ViewMut::rm(&mut gw.data, 0, din, dout));
    for r in 0..rows {
        for (g, d) in gb.data.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
            *g += *d;
        }
    }
    let mut dx = vec![S::zero(); rows * din];
    gemm(S::one(), View::rm(dy, 0, rows, dout), View::rm(&w.data, 0, din, dout).t(), S::zero(), ViewMut::rm(&mut dx, 0, rows, din));
    dx
}

struct LnCache<S> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
}

fn layer_norm<S: Scalar>(p: &LayerNorm<S>, x: &[S], d: usize) -> (Vec<S>, LnCache<S>) {
    let rows = x.len() / d;
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let dn = S::lit(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<S>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let is = S::one() / (var + S::lit(LN_EPS)).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * p.gain.data[j] + p.bias.data[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward<S: Scalar>(p: &LayerNorm<S>, c: &LnCache<S>, dy: &[S], d: usize, g: &mut LayerNorm<S>) -> Vec<S> {
    let rows = dy.len() / d;
    let mut dx = vec![S::zero(); dy.len()];
    let dn = S::lit(d as f64);
    for r in 0..rows {
        let mut sum_dh = S::zero();
        let mut sum_dh_h = S::zero();
        for j in 0..d {
            let i = r * d + j;
            let dh = dy[i] * p.gain.data[j];
            g.gain.data[j] += dy[i] * c.xhat[i];
            g.bias.data[j] += dy[i];
            sum_dh += dh;
            sum_dh_h += dh * c.xhat[i];
        }
        let (mean_dh, mean_dh_h) = (sum_dh / dn, sum_dh_h / dn);
        for j in 0..d {
            let i = r * d + j;
            let dh = dy[i] * p.gain.data[j];
            dx[i] = c.inv_std[r] * (dh - mean_dh - c.xhat[i] * mean_dh_h);
        }
    }
    dx
}

fn gelu<S: Scalar>(x: S) -> S {
    let k = S::lit(0.797_884_560_802_865_4); // sqrt(2 / pi)
    let u = k * (x + S::lit(0.044715) * x * x * x);
    S::lit(0.5) * x * (S::one() + u.tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let k = S::lit(0.797_884_560_802_865_4);
    let u = k * (x + S::lit(0.044715) * x * x * x);
    let t = u.tanh();
    let du = k * (S::one() + S::lit(3.0 * 0.044715) * x * x);
    S::lit(0.5) * (S::one() + t) + S::lit(0.5) * x * (S::one() - t * t) * du
}

struct FfnCache<S> {
    x: Vec<S>,
    pre: Vec<S>,
    act: Vec<S>,
}

fn feed_forward<S: Scalar>(p: &FeedForward<S>, x: Vec<S>, rows: usize) -> (Vec<S>, FfnCache<S>) {
    let pre = linear(&x, rows, &p.w1, &p.b1);
    let act: Vec<S> = pre.iter().map(|&v| gelu(v)).collect();
    let y = linear(&act, rows, &p.w2, &p.b2);
    (y, FfnCache { x, pre, act })
}

fn feed_forward_backward<S: Scalar>(p: &FeedForward<S>, c: &FfnCache<S>, dy: &[S], rows: usize, g: &mut FeedForward<S>) -> Vec<S> {
    let mut dact = linear_backward(&c.act, rows, &p.w2, dy, &mut g.w2, &mut g.b2);
    for (da, &u) in dact.iter_mut().zip(&c.pre) {
        *da *= gelu_grad(u);
    }
    linear_backward(&c.x, rows, &p.w1, &dact, &mut g.w1, &mut g.b1)
}

struct AttnCache<S> {
    xq: Vec<S>,
    xkv: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    /// Attention probabilities per (sequence, head), concatenated.
    probs: Vec<S>,
    o: Vec<S>,
}

/// Multi-head attention of query rows `q_segs[i]` over key rows `kv_segs[i]`.
/// With `causal`, query row `r` of a segment sees key rows `0..=r`.
#[allow(clippy::too_many_arguments)]
fn attention<S: Scalar>(
    p: &Attention<S>,
    heads: usize,
    xq: Vec<S>,
    q_segs: &[Seg],
    xkv: Vec<S>,
    kv_segs: &[Seg],
    causal: bool,
) -> (Vec<S>, AttnCache<S>) {
    let d = p.wq.shape[0];
    let dh = d / heads;
    let scale = S::one() / S::lit(dh as f64).sqrt();
    let (nq_rows, nkv_rows) = (xq.len() / d, xkv.len() / d);
    let q = linear(&xq, nq_rows, &p.wq, &p.bq);
    let k = linear(&xkv, nkv_rows, &p.wk, &p.bk);
    let v = linear(&xkv, nkv_rows, &p.wv, &p.bv);
    let mut o = vec![S::zero(); nq_rows * d];
    let mut probs = Vec::new();
    for (qs, ks) in q_segs.iter().zip(kv_segs) {
        for h in 0..heads {
            let base = probs.len();
            probs.resize(base + qs.len * ks.len, S::zero());
            let scores = &mut probs[base..];
            gemm(
                scale,
                View::block(&q, qs.start, h * dh, qs.len, dh, d),
                View::block(&k, ks.start, h * dh, ks.len, dh, d).t(),
                S::zero(),
                ViewMut::rm(scores, 0, qs.len, ks.len),
            );
            for r in 0..qs.len {
                let row = &mut scores[r * ks.len..(r + 1) * ks.len];
                let visible = if causal { (r + 1).min(ks.len) } else { ks.len };
                let max = row[..visible].iter().copied().fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for x in row[..visible].iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                for x in row[..visible].iter_mut() {
                    *x /= sum;
                }
                for x in row[visible..].iter_mut() {
                    *x = S::zero();
                }
            }
            gemm(
                S::one(),
                View::rm(&probs, base, qs.len, ks.len),
                View::block(&v, ks.start, h * dh, ks.len, dh, d),
                S::zero(),
                ViewMut::block(&mut o, qs.start, h * dh, qs.len, dh, d),
            );
        }
    }
    let out = linear(&o, nq_rows, &p.wo, &p.bo);
    (out, AttnCache { xq, xkv, q, k, v, probs, o })
}

/// Returns gradients with respect to the query input and the key/value input.
fn attention_backward<S: Scalar>(
    p: &Attention<S>,
    heads: usize,
    c: &AttnCache<S>,
    q_segs: &[Seg],
    kv_segs: &[Seg],
    dout: &[S],
    g: &mut Attention<S>,
) -> (Vec<S>, Vec<S>) {
    let d = p.wq.shape[0];
    let dh = d / heads;
    let scale = S::one() / S::lit(dh as f64).sqrt();
    let (nq_rows, nkv_rows) = (c.xq.len() / d, c.xkv.len() / d);
    let d_o = linear_backward(&c.o, nq_rows, &p.wo, dout, &mut g.wo, &mut g.bo);
    let mut dq = vec![S::zero(); nq_rows * d];
    let mut dk = vec![S::zero(); nkv_rows * d];
    let mut dv = vec![S::zero(); nkv_rows * d];
    let mut base = 0;
    let mut ds = Vec::new();
    for (qs, ks) in q_segs.iter().zip(kv_segs) {
        for h in 0..heads {
            let n = qs.len * ks.len;
            let pr = &c.probs[base..base + n];
            ds.clear();
            ds.resize(n, S::zero());
            // dP = dO_h V_h^T
            gemm(
                S::one(),
                View::block(&d_o, qs.start, h * dh, qs.len, dh, d),
                View::block(&c.v, ks.start, h * dh, ks.len, dh, d).t(),
                S::zero(),
                ViewMut::rm(&mut ds, 0, qs.len, ks.len),
            );
            // dV_h += P^T dO_h
            gemm(
                S::one(),
                View::rm(&c.probs, base, qs.len, ks.len).t(),
                View::block(&d_o, qs.start, h * dh, qs.len, dh, d),
                S::one(),
                ViewMut::block(&mut dv, ks.start, h * dh, ks.len, dh, d),
            );
            for r in 0..qs.len {
                let row_p = &pr[r * ks.len..(r + 1) * ks.len];
                let row_d = &mut ds[r * ks.len..(r + 1) * ks.len];
                let dot: S = row_p.iter().zip(row_d.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &pv) in row_d.iter_mut().zip(row_p) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            gemm(
                S::one(),
                View::rm(&ds, 0, qs.len, ks.len),
                View::block(&c.k, ks.start, h * dh, ks.len, dh, d),
                S::one(),
                ViewMut::block(&mut dq, qs.start, h * dh, qs.len, dh, d),
            );
            gemm(
                S::one(),
                View::rm(&ds, 0, qs.len, ks.len).t(),
                View::block(&c.q, qs.start, h * dh, qs.len, dh, d),
                S::one(),
                ViewMut::block(&mut dk, ks.start, h * dh, ks.len, dh, d),
            );
            base += n;
        }
    }
    let dxq = linear_backward(&c.xq, nq_rows, &p.wq, &dq, &mut g.wq, &mut g.bq);
    let mut dxkv = linear_backward(&c.xkv, nkv_rows, &p.wk, &dk, &mut g.wk, &mut g.bk);
    let dxv = linear_backward(&c.xkv, nkv_rows, &p.wv, &dv, &mut g.wv, &mut g.bv);
    add_into(&mut dxkv, &dxv);
    (dxq, dxkv)
}

fn add_into<S: Scalar>(acc: &mut [S], x: &[S]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn embed<S: Scalar>(p: &Params<S>, ids: &[u32], pos: &[usize]) -> Vec<S> {
    let d = p.tok_emb.shape[1];
    let mut x = Vec::with_capacity(ids.len() * d);
    for (&id, &ps) in ids.iter().zip(pos) {
        let t = &p.tok_emb.data[id as usize * d..(id as usize + 1) * d];
        let q = &p.pos_emb.data[ps * d..(ps + 1) * d];
        x.extend(t.iter().zip(q).map(|(&a, &b)| a + b));
    }
    x
}

fn embed_backward<S: Scalar>(g: &mut Params<S>, ids: &[u32], pos: &[usize], dx: &[S]) {
    let d = g.tok_emb.shape[1];
    for (r, (&id, &ps)) in ids.iter().zip(pos).enumerate() {
        let row = &dx[r * d..(r + 1) * d];
        add_into(&mut g.tok_emb.data[id as usize * d..(id as usize + 1) * d], row);
        add_into(&mut g.pos_emb.data[ps * d..(ps + 1) * d], row);
    }
}

struct EncCache<S> {
    ln1: LnCache<S>,
    attn: AttnCache<S>,
    ln2: LnCache<S>,
    ffn: FfnCache<S>,
}

struct DecCache<S> {
    ln1: LnCache<S>,
    self_attn: AttnCache<S>,
    ln2: LnCache<S>,
    cross: AttnCache<S>,
    ln3: LnCache<S>,
    ffn: FfnCache<S>,
}

/// Encoder output for a packed source.
pub(crate) struct Encoded<S> {
    pub memory: Vec<S>,
    layers: Vec<EncCache<S>>,
    final_ln: LnCache<S>,
}

pub(crate) fn encode<S: Scalar>(p: &Params<S>, heads: usize, ids: &[u32], pos: &[usize], segs: &[Seg]) -> Encoded<S> {
    let d = p.tok_emb.shape[1];
    let rows = ids.len();
    let mut x = embed(p, ids, pos);
    let mut layers = Vec::with_capacity(p.encoder.len());
    for l in &p.encoder {
        let (h1, ln1) = layer_norm(&l.ln1, &x, d);
        let (a, attn) = attention(&l.attn, heads, h1.clone(), segs, h1, segs, false);
        add_into(&mut x, &a);
        let (h2, ln2) = layer_norm(&l.ln2, &x, d);
        let (f, ffn) = feed_forward(&l.ffn, h2, rows);
        add_into(&mut x, &f);
        layers.push(EncCache { ln1, attn, ln2, ffn });
    }
    let (memory, final_ln) = layer_norm(&p.enc_ln, &x, d);
    Encoded { memory, layers, final_ln }
}

pub(crate) struct Decoded<S> {
    /// Final hidden states, one row per decoder position.
    pub hidden: Vec<S>,
    layers: Vec<DecCache<S>>,
    final_ln: LnCache<S>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn decode<S: Scalar>(
    p: &Params<S>,
    heads: usize,
    memory: &[S],
    src_segs: &[Seg],
    ids: &[u32],
    pos: &[usize],
    segs: &[Seg],
) -> Decoded<S> {
    let d = p.tok_emb.shape[1];
    let rows = ids.len();
    let mut y = embed(p, ids, pos);
    let mut layers = Vec::with_capacity(p.decoder.len());
    for l in &p.decoder {
        let (h1, ln1) = layer_norm(&l.ln1, &y, d);
        let (a, self_attn) = attention(&l.self_attn, heads, h1.clone(), segs, h1, segs, true);
        add_into(&mut y, &a);
        let (h2, ln2) = layer_norm(&l.ln2, &y, d);
        let (cx, cross) = attention(&l.cross_attn, heads, h2, segs, memory.to_vec(), src_segs, false);
        add_into(&mut y, &cx);
        let (h3, ln3) = layer_norm(&l.ln3, &y, d);
        let (f, ffn) = feed_forward(&l.ffn, h3, rows);
        add_into(&mut y, &f);
        layers.push(DecCache { ln1, self_attn, ln2, cross, ln3, ffn });
    }
    let (hidden, final_ln) = layer_norm(&p.dec_ln, &y, d);
    Decoded { hidden, layers, final_ln }
}

pub(crate) fn logits<S: Scalar>(p: &Params<S>, hidden: &[S]) -> Vec<S> {
    let d = p.out_w.shape[0];
    linear(hidden, hidden.len() / d, &p.out_w, &p.out_b)
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows<S: Scalar>(x: &mut [S], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Result of a teacher-forced pass.
pub(crate) struct Pass<S> {
    /// Unweighted cross-entropy of every target row.
    pub row_loss: Vec<S>,
    pub grads: Option<Params<S>>,
}

/// Teacher-forced cross-entropy over a packed batch. The scalar objective is
/// `sum_i weights[i] * row_loss[i]`; gradients of that objective are returned
/// when `with_grads`.
pub(crate) fn forward_backward<S: Scalar>(p: &Params<S>, heads: usize, b: &Packed<S>, with_grads: bool) -> Pass<S> {
    let d = p.tok_emb.shape[1];
    let vocab = p.out_w.shape[1];
    let enc = encode(p, heads, &b.src_ids, &b.src_pos, &b.src_segs);
    let dec = decode(p, heads, &enc.memory, &b.src_segs, &b.dec_ids, &b.dec_pos, &b.tgt_segs);
    let mut probs = logits(p, &dec.hidden);
    softmax_rows(&mut probs, vocab);
    let rows = b.tgt_ids.len();
    let row_loss: Vec<S> = (0..rows)
        .map(|r| -probs[r * vocab + b.tgt_ids[r] as usize].max(S::min_positive_value()).ln())
        .collect();
    if !with_grads {
        return Pass { row_loss, grads: None };
    }

    let mut g = p.zeros_like();
    // d(weighted CE)/d logits = w * (softmax - onehot)
    let mut dlogits = probs;
    for r in 0..rows {
        dlogits[r * vocab + b.tgt_ids[r] as usize] -= S::one();
        let w = b.weights[r];
        for v in &mut dlogits[r * vocab..(r + 1) * vocab] {
            *v *= w;
        }
    }
    let dhidden = linear_backward(&dec.hidden, rows, &p.out_w, &dlogits, &mut g.out_w, &mut g.out_b);
    let mut dy = layer_norm_backward(&p.dec_ln, &dec.final_ln, &dhidden, d, &mut g.dec_ln);
    let mut dmemory = vec![S::zero(); enc.memory.len()];
    for (i, (l, c)) in p.decoder.iter().zip(&dec.layers).enumerate().rev() {
        let gl = &mut g.decoder[i];
        let dh3 = feed_forward_backward(&l.ffn, &c.ffn, &dy, rows, &mut gl.ffn);
        add_into(&mut dy, &layer_norm_backward(&l.ln3, &c.ln3, &dh3, d, &mut gl.ln3));
        let (dh2, dmem) = attention_backward(&l.cross_attn, heads, &c.cross, &b.tgt_segs, &b.src_segs, &dy, &mut gl.cross_attn);
        add_into(&mut dmemory, &dmem);
        add_into(&mut dy, &layer_norm_backward(&l.ln2, &c.ln2, &dh2, d, &mut gl.ln2));
        let (dq, dkv) = attention_backward(&l.self_attn, heads, &c.self_attn, &b.tgt_segs, &b.tgt_segs, &dy, &mut gl.self_attn);
        let mut dh1 = dq;
        add_into(&mut dh1, &dkv);
        add_into(&mut dy, &layer_norm_backward(&l.ln1, &c.ln1, &dh1, d, &mut gl.ln1));
    }
    embed_backward(&mut g, &b.dec_ids, &b.dec_pos, &dy);

    let src_rows = b.src_ids.len();
    let mut dx = layer_norm_backward(&p.enc_ln, &enc.final_ln, &dmemory, d, &mut g.enc_ln);
    for (i, (l, c)) in p.encoder.iter().zip(&enc.layers).enumerate().rev() {
        let gl = &mut g.encoder[i];
        let dh2 = feed_forward_backward(&l.ffn, &c.ffn, &dx, src_rows, &mut gl.ffn);
        add_into(&mut dx, &layer_norm_backward(&l.ln2, &c.ln2, &dh2, d, &mut gl.ln2));
        let (dq, dkv) = attention_backward(&l.attn, heads, &c.attn, &b.src_segs, &b.src_segs, &dx, &mut gl.attn);
        let mut dh1 = dq;
        add_into(&mut dh1, &dkv);
        add_into(&mut dx, &layer_norm_backward(&l.ln1, &c.ln1, &dh1, d, &mut gl.ln1));
    }
    embed_backward(&mut g, &b.src_ids, &b.src_pos, &dx);
    Pass { row_loss, grads: Some(g) }
}

/// Greedy decoding: argmax at every step, ties to the lowest id, until
/// `[EOS]` or `max_len` tokens.
pub(crate) fn greedy<S: Scalar>(p: &Params<S>, heads: usize, src: &[u32], max_len: usize, eos: u32) -> Vec<u32> {
    let src_segs = [Seg { start: 0, len: src.len() }];
    let src_pos: Vec<usize> = (0..src.len()).collect();
    let enc = encode(p, heads, src, &src_pos, &src_segs);
    let max_pos = p.pos_emb.shape[0];
    let mut dec_ids = vec![PAD_ID];
    let mut out = Vec::new();
    while out.len() < max_len && dec_ids.len() <= max_pos {
        let n = dec_ids.len();
        let pos: Vec<usize> = (0..n).collect();
        let dec = decode(p, heads, &enc.memory, &src_segs, &dec_ids, &pos, &[Seg { start: 0, len: n }]);
        let d = p.out_w.shape[0];
        let last = logits(p, &dec.hidden[(n - 1) * d..]);
        let mut best = 0;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        let id = best as u32;
        out.push(id);
        if id == eos {
            break;
        }
        dec_ids.push(id);
    }
    out
}
