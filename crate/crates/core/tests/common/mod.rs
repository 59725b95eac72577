//! Toy corpora and models shared by the integration tests.
#![allow(dead_code)]

use mmt::data::EOS;
use mmt::decoding::greedy;
use mmt::models::{ModelConfig, Seq2Seq, SequenceModel, TranslationExample, TranslationInput};
use mmt::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// First id available to ordinary words.
pub const FIRST_WORD: usize = 4;

/// Source/target id sequences where the target is the source reversed with
/// every id shifted within the word range. Targets end with EOS.
pub fn toy_pairs(n: usize, words: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    while out.len() < n {
        let len = rng.random_range(3..=6);
        let src: Vec<usize> = (0..len)
            .map(|_| FIRST_WORD + rng.random_range(0..words))
            .collect();
        if out.iter().any(|(s, _)| *s == src) {
            continue;
        }
        let mut tgt: Vec<usize> = src
            .iter()
            .rev()
            .map(|&t| FIRST_WORD + (t - FIRST_WORD + 3) % words)
            .collect();
        tgt.push(EOS);
        out.push((src, tgt));
    }
    out
}

pub fn text_examples<T: Scalar>(pairs: &[(Vec<usize>, Vec<usize>)]) -> Vec<TranslationExample<T>> {
    pairs
        .iter()
        .map(|(s, t)| TranslationExample {
            input: TranslationInput::text(s.clone()),
            target: t.clone(),
        })
        .collect()
}

/// Fraction of examples whose greedy output reproduces the target exactly.
pub fn greedy_accuracy<T: Scalar>(model: &Seq2Seq<T>, examples: &[TranslationExample<T>]) -> f64 {
    let hits = examples
        .iter()
        .filter(|ex| {
            greedy(model, &ex.input, ex.target.len() + 3)
                .map(|h| h.tokens[1..] == ex.target[..])
                .unwrap_or(false)
        })
        .count();
    hits as f64 / examples.len() as f64
}

/// Tiny text-only model.
pub fn tiny_textual<T: Scalar>(vocab: usize, width: usize, seed: u64) -> Seq2Seq<T> {
    Seq2Seq::new(ModelConfig::textual(vocab, vocab).with_width(width), seed).unwrap()
}

/// A random `[rows, cols]` matrix in `[-1, 1)`.
pub fn random_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| T::of(rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

/// Log-probability of `tokens` by teacher forcing, accumulated in 64-bit.
pub fn sequence_log_prob<T: Scalar, M: SequenceModel<T>>(
    model: &M,
    input: &M::Input,
    tokens: &[usize],
) -> f64 {
    let mut g = mmt::Graph::new(model.store());
    let logits = mmt::models::forward_logits(model, &mut g, input, tokens).unwrap();
    let v = model.vocab_size();
    let vals = g.value(logits);
    tokens
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let row: Vec<f64> = vals[t * v..(t + 1) * v].iter().map(|x| x.f64()).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            row[y] - m - z.ln()
        })
        .sum()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}
