//! Brute-force references the library is checked against.

use std::collections::HashMap;

use conceptner::data::{tid, AnnotatedSentence, Sentence, Task, TargetPair, TypeId, TypedMention};
use conceptner::locate::SpanPrediction;
use conceptner::model::{batch_loss, Example, ModelConfig, StepLog, Tagged, Vocab};
use conceptner::rng::keyed;
use conceptner::{Params64, Seq2Seq64};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// All greedy non-overlapping occurrences of `surface`, as char spans.
pub fn occurrences(text: &[char], surface: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + surface.len() <= text.len() {
        if &text[i..i + surface.len()] == surface {
            out.push((i, i + surface.len()));
            i += surface.len();
        } else {
            i += 1;
        }
    }
    out
}

/// The k-th appearance of a surface takes its k-th occurrence.
pub fn locate_oracle(text: &str, pairs: &[TargetPair]) -> Vec<SpanPrediction> {
    let chars: Vec<char> = text.chars().collect();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for p in pairs {
        let k = seen.entry(p.surface.as_str()).or_insert(0);
        let surface: Vec<char> = p.surface.chars().collect();
        if let Some(&(s, e)) = occurrences(&chars, &surface).get(*k) {
            out.push(SpanPrediction { surface: p.surface.clone(), type_id: p.labels[0].clone(), start: s, end: e });
        }
        *k += 1;
    }
    out
}

const PIECES: &[&str] = &["Paris", "Paris Hilton", "aa", "aaa", "abab", "Zürich", "東京", "New York", "York", "is", "the", "a"];

/// A sentence of overlapping, repeated and multi-byte pieces with pairs that
/// are mostly planted and sometimes absent.
pub fn random_locate_case(rng: &mut impl Rng) -> (String, Vec<TargetPair>) {
    let n = rng.random_range(1..12);
    let words: Vec<&str> = (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect();
    let sep = if rng.random_bool(0.2) { "" } else { " " };
    let text = words.join(sep) + ".";
    let pairs = (0..rng.random_range(0..8))
        .map(|_| {
            let s = if rng.random_bool(0.85) { *words.choose(rng).unwrap() } else { *PIECES.choose(rng).unwrap() };
            TargetPair::new(s, vec![tid(["person", "GPE", "date"].choose(rng).unwrap())])
        })
        .collect();
    (text, pairs)
}

/// Pairwise co-occurrence: `(t, u)` for every ordered pair of distinct real
/// types inside one mention, listed per key in first-seen order.
pub fn cooccurrence_oracle(corpus: &[AnnotatedSentence]) -> Vec<(TypeId, Vec<TypeId>)> {
    let mut keys: Vec<TypeId> = Vec::new();
    let mut pairs: Vec<(TypeId, TypeId)> = Vec::new();
    for m in corpus.iter().flat_map(|s| &s.mentions) {
        for t in &m.types {
            if t.is_other() {
                continue;
            }
            if !keys.contains(t) {
                keys.push(t.clone());
            }
            for u in &m.types {
                if u != t && !u.is_other() && !pairs.contains(&(t.clone(), u.clone())) {
                    pairs.push((t.clone(), u.clone()));
                }
            }
        }
    }
    keys.into_iter()
        .map(|t| {
            let cs = pairs.iter().filter(|(a, _)| *a == t).map(|(_, b)| b.clone()).collect();
            (t, cs)
        })
        .collect()
}

pub fn type_pool() -> Vec<TypeId> {
    ["person", "writer", "actor", "city", "capital", "other", "GPE", "human"].iter().map(|t| tid(t)).collect()
}

/// Sentences `p{i}` whose mentions carry the given type lists.
pub fn typed_corpus(sentences: Vec<Vec<Vec<TypeId>>>) -> Vec<AnnotatedSentence> {
    sentences
        .into_iter()
        .enumerate()
        .map(|(i, mentions)| {
            let surfaces: Vec<String> = (0..mentions.len()).map(|j| format!("m{i}x{j}")).collect();
            let text = if surfaces.is_empty() { "nothing".to_string() } else { surfaces.join(" ") };
            let ms = mentions.into_iter().zip(&surfaces).map(|(types, s)| TypedMention::new(s.clone(), types).unwrap()).collect();
            AnnotatedSentence::ordered(Sentence::new(format!("p{i}"), text).unwrap(), ms).unwrap()
        })
        .collect()
}

/// Up to `max_sentences` sentences of zero to three mentions, each with one
/// to four shuffled types.
pub fn random_typed_corpus(rng: &mut impl Rng, max_sentences: usize) -> Vec<AnnotatedSentence> {
    let pool = type_pool();
    let sentences = (0..rng.random_range(0..=max_sentences))
        .map(|_| {
            (0..rng.random_range(0..4))
                .map(|_| {
                    let mut types = pool.clone();
                    types.shuffle(rng);
                    types.truncate(rng.random_range(1..=4));
                    types
                })
                .collect()
        })
        .collect();
    typed_corpus(sentences)
}

/// The gradient-check model: d=8, one layer, double precision.
pub fn gradcheck_model() -> Seq2Seq64 {
    let cfg = ModelConfig { d_model: 8, layers: 1, heads: 2, d_ff: 16, max_src_len: 12, max_tgt_len: 8, init_std: 0.3 };
    let words: Vec<String> = (0..15).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::build([words.join(" ").as_str()]);
    Seq2Seq64::new(cfg, vocab, 11).unwrap()
}

/// Three units, each one random sequence per task.
pub fn gradcheck_batch(model: &Seq2Seq64, seed: u64) -> Vec<Vec<Tagged>> {
    let mut rng = keyed(seed, "gradcheck", 0);
    let v = model.vocab.len() as u32;
    let mut seq = |lo: usize, hi: usize, eos: bool| -> Vec<u32> {
        let n = rng.random_range(lo..=hi);
        let mut s: Vec<u32> = (0..n).map(|_| rng.random_range(1..v)).collect();
        if eos {
            s.push(2);
        }
        s
    };
    (0..3)
        .map(|i| {
            vec![
                Tagged { id: format!("{i}/md"), task: Task::MentionDescribing, example: Example { src: seq(2, 10, false), tgt: seq(0, 5, true) } },
                Tagged { id: format!("{i}/eg"), task: Task::EntityGeneration, example: Example { src: seq(2, 10, false), tgt: seq(0, 5, true) } },
            ]
        })
        .collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative error `|analytic - numeric| / max(|analytic|, |numeric|)` of every
/// parameter tensor against central differences, as `(tensor, error)`.
pub fn gradient_errors(model: &Seq2Seq64, units: &[Vec<Tagged>]) -> Vec<(String, f64)> {
    let refs: Vec<&[Tagged]> = units.iter().map(Vec::as_slice).collect();
    let (_, grads) = model.loss_and_grads(&refs).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.named().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.params.tensors_mut()[ti].data[i];
            probe.params.tensors_mut()[ti].data[i] = orig + h;
            let up = probe.loss(&refs).unwrap().total;
            probe.params.tensors_mut()[ti].data[i] = orig - h;
            let down = probe.loss(&refs).unwrap().total;
            probe.params.tensors_mut()[ti].data[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        // key biases get an exactly zero gradient (softmax is shift invariant),
        // so their difference is pure rounding noise; floor the denominator
        let scale = norm(a).max(norm(&numeric)).max(1e-5);
        out.push((name.clone(), norm(&diff) / scale));
    }
    out
}

/// Relative gap between a logged step loss and the sum of its two task
/// terms, each rebuilt from per-sequence passes weighted by target length.
pub fn loss_decomposition_gap(entry: &StepLog, params: &Params64, heads: usize, units: &[Vec<Tagged>]) -> f64 {
    let (mut md, mut n_md, mut eg, mut n_eg) = (0.0, 0usize, 0.0, 0usize);
    for seq in entry.batch.iter().flat_map(|&u| &units[u]) {
        let one: &[Tagged] = std::slice::from_ref(seq);
        let (l, _) = batch_loss(params, heads, &[one], 1, 1, false).unwrap();
        let n = seq.example.tgt.len();
        match seq.task {
            Task::MentionDescribing => (md += l.total * n as f64, n_md += n),
            Task::EntityGeneration => (eg += l.total * n as f64, n_eg += n),
        };
    }
    let mut expected = 0.0;
    if n_md > 0 {
        expected += md / n_md as f64;
    }
    if n_eg > 0 {
        expected += eg / n_eg as f64;
    }
    (entry.loss.total - expected).abs() / expected.abs()
}
