//! Sentence- and corpus-level evaluation metrics.
//!
//! BLEU and GLEU work on token sequences of any hashable type (string slices
//! or vocabulary ids); chrF3 works on raw strings.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
pub const CHRF_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 3.0;

/// Counts of all n-grams with `1 <= n <= max_order`.
#[derive(Clone, Debug)]
pub struct NgramCounts<'a, T> {
    counts: HashMap<&'a [T], usize>,
    totals: Vec<usize>,
}

impl<'a, T: Eq + Hash> NgramCounts<'a, T> {
    pub fn new(tokens: &'a [T], max_order: usize) -> Self {
        let mut counts = HashMap::new();
        let mut totals = vec![0; max_order];
        for n in 1..=max_order {
            for w in tokens.windows(n) {
                *counts.entry(w).or_insert(0) += 1;
                totals[n - 1] += 1;
            }
        }
        NgramCounts { counts, totals }
    }

    pub fn count(&self, ngram: &[T]) -> usize {
        self.counts.get(ngram).copied().unwrap_or(0)
    }

    /// Number of n-grams of order `n` (= max(0, len − n + 1)).
    pub fn total(&self, n: usize) -> usize {
        self.totals[n - 1]
    }

    /// Clipped matches of order `n` between `self` (hypothesis) and `reference`.
    pub fn matches(&self, reference: &NgramCounts<'_, T>, n: usize) -> usize {
        self.counts
            .iter()
            .filter(|(g, _)| g.len() == n)
            .map(|(g, &c)| c.min(reference.count(g)))
            .sum()
    }
}

/// Sufficient statistics for BLEU of one sentence pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let h = NgramCounts::new(hyp, MAX_ORDER);
        let r = NgramCounts::new(reference, MAX_ORDER);
        let mut s = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            s.matches[n - 1] = h.matches(&r, n);
            s.totals[n - 1] = h.total(n);
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64)
            .min(0.0)
            .exp()
    }

    /// Geometric mean of precisions times brevity penalty. With `smooth`,
    /// orders ≥ 2 use (m + 1) / (c + 1).
    pub fn score(&self, smooth: bool) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, c) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if smooth && n > 0 {
                (m + 1.0) / (c + 1.0)
            } else if c == 0.0 || m == 0.0 {
                return 0.0;
            } else {
                m / c
            };
            log_sum += p.ln();
        }
        (log_sum / MAX_ORDER as f64).exp() * self.brevity_penalty()
    }
}

/// Smoothed sentence-level BLEU in `[0, 1]`: add-one smoothing on orders 2–4.
pub fn sentence_bleu<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    BleuStats::new(hyp, reference).score(true)
}

/// Sentence BLEU without smoothing.
pub fn sentence_bleu_unsmoothed<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    BleuStats::new(hyp, reference).score(false)
}

/// Corpus BLEU over pooled counts, single reference, no smoothing.
pub fn corpus_bleu<T, S>(hyps: &[S], refs: &[S]) -> Result<f64>
where
    T: Eq + Hash,
    S: AsRef<[T]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::new(h.as_ref(), r.as_ref()));
    }
    Ok(total.score(false))
}

/// Whitespace-tokenized corpus BLEU over lines of text.
pub fn corpus_bleu_lines<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    let h: Vec<Vec<&str>> = hyps
        .iter()
        .map(|s| s.as_ref().split_ascii_whitespace().collect())
        .collect();
    let r: Vec<Vec<&str>> = refs
        .iter()
        .map(|s| s.as_ref().split_ascii_whitespace().collect())
        .collect();
    corpus_bleu(&h, &r)
}

/// GLEU: min(precision, recall) over n-gram counts pooled across orders 1–4.
pub fn gleu<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    let s = BleuStats::new(hyp, reference);
    let matches: usize = s.matches.iter().sum();
    let hyp_total: usize = s.totals.iter().sum();
    let ref_total: usize = (1..=MAX_ORDER)
        .map(|n| reference.len().saturating_sub(n - 1))
        .sum();
    if hyp_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let precision = matches as f64 / hyp_total as f64;
    let recall = matches as f64 / ref_total as f64;
    precision.min(recall)
}

/// Per-order character n-gram statistics for chrF.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub matches: [usize; CHRF_ORDER],
    pub hyp_totals: [usize; CHRF_ORDER],
    pub ref_totals: [usize; CHRF_ORDER],
}

impl ChrfStats {
    pub fn new(hyp: &str, reference: &str) -> Self {
        let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        let hc = NgramCounts::new(&h, CHRF_ORDER);
        let rc = NgramCounts::new(&r, CHRF_ORDER);
        let mut s = ChrfStats::default();
        for n in 1..=CHRF_ORDER {
            s.matches[n - 1] = hc.matches(&rc, n);
            s.hyp_totals[n - 1] = hc.total(n);
            s.ref_totals[n - 1] = rc.total(n);
        }
        s
    }

    pub fn add(&mut self, other: &ChrfStats) {
        for n in 0..CHRF_ORDER {
            self.matches[n] += other.matches[n];
            self.hyp_totals[n] += other.hyp_totals[n];
            self.ref_totals[n] += other.ref_totals[n];
        }
    }

    /// F_β averaged over the orders for which either side has n-grams, × 100.
    pub fn score(&self, beta: f64) -> f64 {
        let effective: Vec<usize> = (0..CHRF_ORDER)
            .filter(|&n| self.hyp_totals[n] > 0 || self.ref_totals[n] > 0)
            .collect();
        if effective.is_empty() {
            // both sides empty after removing whitespace
            return 100.0;
        }
        if self.matches.iter().all(|&m| m == 0) {
            return 0.0;
        }
        let b2 = beta * beta;
        let sum: f64 = effective
            .iter()
            .map(|&n| {
                let m = self.matches[n] as f64;
                let p = if self.hyp_totals[n] > 0 {
                    m / self.hyp_totals[n] as f64
                } else {
                    0.0
                };
                let r = if self.ref_totals[n] > 0 {
                    m / self.ref_totals[n] as f64
                } else {
                    0.0
                };
                let denom = b2 * p + r;
                if denom > 0.0 {
                    (1.0 + b2) * p * r / denom
                } else {
                    0.0
                }
            })
            .sum();
        100.0 * sum / effective.len() as f64
    }
}

/// Character n-gram F-score (orders 1–6, β = 3, whitespace removed) in `[0, 100]`.
pub fn chrf3(hyp: &str, reference: &str) -> f64 {
    ChrfStats::new(hyp, reference).score(CHRF_BETA)
}

/// chrF3 over statistics pooled across the corpus.
pub fn corpus_chrf3<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(
            "hypothesis/reference count mismatch".into(),
        ));
    }
    let mut total = ChrfStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&ChrfStats::new(h.as_ref(), r.as_ref()));
    }
    Ok(total.score(CHRF_BETA))
}

/// Mean sentence GLEU over a corpus.
pub fn corpus_gleu<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(
            "hypothesis/reference count mismatch".into(),
        ));
    }
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| {
            let h: Vec<&str> = h.as_ref().split_ascii_whitespace().collect();
            let r: Vec<&str> = r.as_ref().split_ascii_whitespace().collect();
            gleu(&h, &r)
        })
        .sum();
    Ok(sum / hyps.len() as f64)
}
