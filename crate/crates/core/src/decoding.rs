//! Greedy, sampled and beam decoding, beam rescoring and oracle selection.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{corpus_bleu, sentence_bleu};
use crate::models::SequenceModel;
use crate::tensor::{Graph, Scalar};

/// `((5 + length) / 6)^alpha`.
pub fn length_penalty(length: usize, alpha: f64) -> Result<f64> {
    if length == 0 {
        return Err(Error::InvalidArgument(
            "length penalty of an empty hypothesis".into(),
        ));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "length penalty exponent must be non-negative, got {alpha}"
        )));
    }
    Ok(((5.0 + length as f64) / 6.0).powf(alpha))
}

/// Longest output produced for a source of `source_len` tokens unless overridden.
pub fn default_max_len(source_len: usize) -> usize {
    3 * source_len + 5
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    pub alpha: f64,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 10,
            alpha: 1.0,
            max_len: 50,
        }
    }
}

/// A decoded sequence. `tokens[0]` is the start token (BOS or a language id).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / length_penalty(generated length)`.
    pub score: f64,
    /// The last token is EOS.
    pub finished: bool,
    /// Cut off at the length limit without producing EOS.
    pub forced: bool,
}

impl Hypothesis {
    /// Number of generated tokens, EOS included.
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generated tokens without the start token and the closing EOS.
    pub fn output(&self) -> &[usize] {
        let body = &self.tokens[1..];
        if self.finished {
            &body[..body.len() - 1]
        } else {
            body
        }
    }
}

/// Finished hypotheses ranked by penalized score, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    pub hypotheses: Vec<Hypothesis>,
}

impl BeamResult {
    pub fn top(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

/// Log-softmax of one row of scores, in 64-bit.
fn log_softmax_row<T: Scalar>(row: &[T]) -> Result<Vec<f64>> {
    let xs: Vec<f64> = row.iter().map(|x| x.f64()).collect();
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("decoder scores"));
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    Ok(xs.into_iter().map(|x| x - lse).collect())
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn finish(tokens: Vec<usize>, log_prob: f64, eos: usize, alpha: f64) -> Result<Hypothesis> {
    let finished = tokens.len() > 1 && *tokens.last().expect("non-empty") == eos;
    let len = tokens.len() - 1;
    Ok(Hypothesis {
        score: log_prob / length_penalty(len, alpha)?,
        tokens,
        log_prob,
        finished,
        forced: !finished,
    })
}

/// Picks the most probable token at every step, ties to the lowest id.
pub fn greedy<T: Scalar, M: SequenceModel<T>>(
    model: &M,
    input: &M::Input,
    max_len: usize,
) -> Result<Hypothesis> {
    decode_with(model, input, max_len, |lp| Ok(argmax(lp)))
}

/// Draws every token from `softmax(scores / temperature)`.
pub fn sample<T: Scalar, M: SequenceModel<T>, R: Rng>(
    model: &M,
    input: &M::Input,
    max_len: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Hypothesis> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sampling temperature must be positive, got {temperature}"
        )));
    }
    decode_with(model, input, max_len, |lp| {
        let scaled: Vec<f64> = lp.iter().map(|x| x / temperature).collect();
        let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = scaled.iter().map(|x| (x - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, &wi) in w.iter().enumerate() {
            if u < wi {
                return Ok(i);
            }
            u -= wi;
        }
        Ok(argmax(&w))
    })
}

fn decode_with<T: Scalar, M: SequenceModel<T>>(
    model: &M,
    input: &M::Input,
    max_len: usize,
    mut choose: impl FnMut(&[f64]) -> Result<usize>,
) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let eos = model.eos();
    let mut g = Graph::new(model.store());
    let (mut state, first) = model.start(&mut g, input)?;
    let mut tokens = vec![first];
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (logits, next) = model.step(&mut g, &state, *tokens.last().expect("non-empty"))?;
        let lp = log_softmax_row(g.value(logits))?;
        let y = choose(&lp)?;
        log_prob += lp[y];
        tokens.push(y);
        state = next;
        if y == eos {
            break;
        }
    }
    finish(tokens, log_prob, eos, 0.0)
}

struct Active<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
}

struct Candidate {
    log_prob: f64,
    parent: usize,
    token: usize,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Beam search with length-penalized final ranking.
///
/// Extensions of all active hypotheses are ranked together. EOS extensions
/// ranked within the best `width` retire into the finished pool; the `width`
/// best non-EOS extensions stay active, so retired hypotheses never occupy an
/// expansion slot. Search ends at `max_len`, when nothing is active, or once
/// `width` hypotheses have finished and no active one can still beat the
/// `width`-th best finished score. Active hypotheses left at `max_len` are
/// returned with `forced` set.
pub fn beam_search<T: Scalar, M: SequenceModel<T>>(
    model: &M,
    input: &M::Input,
    cfg: &BeamConfig,
) -> Result<BeamResult> {
    if cfg.width == 0 {
        return Err(Error::InvalidArgument(
            "beam width must be at least 1".into(),
        ));
    }
    if cfg.max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let lp_max = length_penalty(cfg.max_len, cfg.alpha)?;
    let eos = model.eos();
    let mut g = Graph::new(model.store());
    let (s0, first) = model.start(&mut g, input)?;
    let mut active = vec![Active {
        tokens: vec![first],
        log_prob: 0.0,
        state: s0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut states = Vec::with_capacity(active.len());
        let mut candidates = Vec::new();
        for (parent, h) in active.iter().enumerate() {
            let (logits, next) =
                model.step(&mut g, &h.state, *h.tokens.last().expect("non-empty"))?;
            states.push(next);
            let lp = log_softmax_row(g.value(logits))?;
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            let mut kept = 0;
            for token in order {
                if token != eos {
                    if kept == cfg.width {
                        continue;
                    }
                    kept += 1;
                }
                candidates.push(Candidate {
                    log_prob: h.log_prob + lp[token],
                    parent,
                    token,
                });
            }
        }
        candidates.sort_by(candidate_order);
        let mut next_active = Vec::with_capacity(cfg.width);
        for (rank, c) in candidates.into_iter().enumerate() {
            if rank >= cfg.width && next_active.len() == cfg.width {
                break;
            }
            let mut tokens = active[c.parent].tokens.clone();
            tokens.push(c.token);
            if c.token == eos {
                if rank < cfg.width {
                    finished.push(finish(tokens, c.log_prob, eos, cfg.alpha)?);
                }
            } else if next_active.len() < cfg.width {
                next_active.push(Active {
                    tokens,
                    log_prob: c.log_prob,
                    state: states[c.parent].clone(),
                });
            }
        }
        active = next_active;
        if active.is_empty() {
            break;
        }
        if finished.len() >= cfg.width {
            let mut scores: Vec<f64> = finished.iter().map(|h| h.score).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let kth = scores[cfg.width - 1];
            let bound = active
                .iter()
                .map(|h| h.log_prob / lp_max)
                .fold(f64::NEG_INFINITY, f64::max);
            if bound <= kth {
                active.clear();
                break;
            }
        }
    }
    for h in active {
        finished.push(finish(h.tokens, h.log_prob, eos, cfg.alpha)?);
    }
    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    finished.truncate(cfg.width);
    Ok(BeamResult {
        hypotheses: finished,
    })
}

/// Beam search over many inputs; results are in input order.
pub fn beam_search_all<T: Scalar, M: SequenceModel<T>>(
    model: &M,
    inputs: &[M::Input],
    cfg: &BeamConfig,
    exec: Execution,
) -> Vec<Result<BeamResult>> {
    exec.map(inputs, |_, x| beam_search(model, x, cfg))
}

/// Index of the hypothesis the scorer rates highest; ties go to the better beam rank.
pub fn rescore_beam<F>(beam: &BeamResult, mut scorer: F) -> Result<usize>
where
    F: FnMut(&Hypothesis) -> Result<f64>,
{
    if beam.is_empty() {
        return Err(Error::EmptyInput("beam"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, h) in beam.hypotheses.iter().enumerate() {
        let s = scorer(h)?;
        if s.is_nan() {
            return Err(Error::NonFinite("rescoring score"));
        }
        if i == 0 || s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Hypothesis with the highest sentence-BLEU against `reference`, and its
/// sentence-BLEU gain over the top of the beam.
pub fn oracle_select<'b>(
    beam: &'b BeamResult,
    reference: &[usize],
) -> Result<(&'b Hypothesis, f64)> {
    let i = rescore_beam(beam, |h| Ok(sentence_bleu(h.output(), reference)))?;
    let chosen = &beam.hypotheses[i];
    let gain = sentence_bleu(chosen.output(), reference)
        - sentence_bleu(beam.hypotheses[0].output(), reference);
    Ok((chosen, gain))
}

/// Corpus BLEU of beam tops and of oracle choices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub default_bleu: f64,
    pub oracle_bleu: f64,
}

impl OracleReport {
    pub fn gain(&self) -> f64 {
        self.oracle_bleu - self.default_bleu
    }
}

pub fn oracle_report(beams: &[BeamResult], references: &[Vec<usize>]) -> Result<OracleReport> {
    if beams.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} beams but {} references",
            beams.len(),
            references.len()
        )));
    }
    let mut tops = Vec::with_capacity(beams.len());
    let mut oracles = Vec::with_capacity(beams.len());
    for (b, r) in beams.iter().zip(references) {
        tops.push(b.top().ok_or(Error::EmptyInput("beam"))?.output().to_vec());
        oracles.push(oracle_select(b, r)?.0.output().to_vec());
    }
    Ok(OracleReport {
        default_bleu: corpus_bleu(&tops, references)?,
        oracle_bleu: corpus_bleu(&oracles, references)?,
    })
}
