//! In-domain data selection: character-LM ranking, rule filtering and
//! back-translation.

use std::fmt;

use crate::data::{ParallelCorpus, Vocabulary, EOS};
use crate::decoding::{beam_search, BeamConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{CharLm, Modality, Seq2Seq, TranslationInput};
use crate::tensor::Scalar;

/// Filter rules, in evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    Length,
    Punctuation,
    Numbers,
    Acronyms,
    NamedEntities,
    Tense,
    Oov,
}

impl Rule {
    pub const ORDER: [Rule; 7] = [
        Rule::Length,
        Rule::Punctuation,
        Rule::Numbers,
        Rule::Acronyms,
        Rule::NamedEntities,
        Rule::Tense,
        Rule::Oov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Length => "length",
            Rule::Punctuation => "punctuation",
            Rule::Numbers => "numbers",
            Rule::Acronyms => "acronyms",
            Rule::NamedEntities => "named-entities",
            Rule::Tense => "tense",
            Rule::Oov => "oov",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterRuleSet {
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Characters that are neither alphanumeric nor whitespace and are still allowed.
    pub punctuation: Vec<char>,
    pub reject_multi_digit: bool,
    pub reject_acronyms: bool,
    pub named_entities: bool,
    /// Endings that mark a capitalised OOV token as a common noun.
    pub common_noun_suffixes: Vec<String>,
    pub present_tense: bool,
    /// Finite past-tense auxiliaries, compared case-insensitively.
    pub past_auxiliaries: Vec<String>,
    /// Participle prefix; lower-case tokens `<prefix>…t` or `<prefix>…en` of at
    /// least five characters count as participles.
    pub participle_prefix: String,
    pub max_oov: f64,
    /// Reference vocabulary for the OOV and named-entity rules; both pass without one.
    pub vocabulary: Option<Vocabulary>,
}

impl Default for FilterRuleSet {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        FilterRuleSet {
            min_tokens: 2,
            max_tokens: 30,
            punctuation: vec!['.', ',', '!', '?', '\'', '"', '-'],
            reject_multi_digit: true,
            reject_acronyms: true,
            named_entities: true,
            common_noun_suffixes: strings(&["ung", "heit", "keit", "schaft", "chen", "lein"]),
            present_tense: true,
            past_auxiliaries: strings(&["war", "waren", "hatte", "hatten", "wurde", "wurden"]),
            participle_prefix: "ge".into(),
            max_oov: 0.15,
            vocabulary: None,
        }
    }
}

/// Outcome of every rule, with the first failure named.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub outcomes: Vec<(Rule, bool)>,
    pub failed: Option<Rule>,
}

fn has_run<F: Fn(char) -> bool>(token: &str, pred: F) -> bool {
    let mut prev = false;
    for c in token.chars() {
        let cur = pred(c);
        if cur && prev {
            return true;
        }
        prev = cur;
    }
    false
}

impl FilterRuleSet {
    pub fn validate(&self) -> Result<()> {
        if self.min_tokens > self.max_tokens {
            return Err(Error::InvalidArgument(format!(
                "min_tokens {} exceeds max_tokens {}",
                self.min_tokens, self.max_tokens
            )));
        }
        if !(0.0..=1.0).contains(&self.max_oov) {
            return Err(Error::InvalidArgument(format!(
                "max_oov {} outside [0, 1]",
                self.max_oov
            )));
        }
        Ok(())
    }

    fn passes(&self, rule: Rule, tokens: &[&str]) -> bool {
        match rule {
            Rule::Length => (self.min_tokens..=self.max_tokens).contains(&tokens.len()),
            Rule::Punctuation => tokens
                .iter()
                .flat_map(|t| t.chars())
                .all(|c| c.is_alphanumeric() || self.punctuation.contains(&c)),
            Rule::Numbers => {
                !self.reject_multi_digit
                    || !tokens.iter().any(|t| has_run(t, |c| c.is_ascii_digit()))
            }
            Rule::Acronyms => {
                !self.reject_acronyms || !tokens.iter().any(|t| has_run(t, char::is_uppercase))
            }
            Rule::NamedEntities => {
                let (true, Some(vocab)) = (self.named_entities, &self.vocabulary) else {
                    return true;
                };
                !tokens.iter().enumerate().skip(1).any(|(_, t)| {
                    t.chars().next().is_some_and(char::is_uppercase)
                        && !vocab.contains(t)
                        && !self
                            .common_noun_suffixes
                            .iter()
                            .any(|s| t.ends_with(s.as_str()))
                })
            }
            Rule::Tense => !self.present_tense || !tokens.iter().any(|t| self.is_past(t)),
            Rule::Oov => {
                let Some(vocab) = &self.vocabulary else {
                    return true;
                };
                if tokens.is_empty() {
                    return true;
                }
                let unknown = tokens.iter().filter(|t| !vocab.contains(t)).count();
                unknown as f64 / tokens.len() as f64 <= self.max_oov
            }
        }
    }

    fn is_past(&self, token: &str) -> bool {
        let lower = token.to_lowercase();
        if self
            .past_auxiliaries
            .iter()
            .any(|a| a.to_lowercase() == lower)
        {
            return true;
        }
        let p = self.participle_prefix.as_str();
        !p.is_empty()
            && token.starts_with(p)
            && token.chars().count() >= 5
            && (token.ends_with('t') || token.ends_with("en"))
    }

    /// Applies every rule to a whitespace-tokenised sentence.
    pub fn apply(&self, sentence: &str) -> FilterVerdict {
        let tokens: Vec<&str> = sentence.split_ascii_whitespace().collect();
        let outcomes: Vec<(Rule, bool)> = Rule::ORDER
            .iter()
            .map(|&r| (r, self.passes(r, &tokens)))
            .collect();
        let failed = outcomes.iter().find(|(_, ok)| !ok).map(|(r, _)| *r);
        FilterVerdict {
            accepted: failed.is_none(),
            outcomes,
            failed,
        }
    }
}

pub fn apply_rules(sentence: &str, rules: &FilterRuleSet) -> FilterVerdict {
    rules.apply(sentence)
}

/// Scores every sentence with the LM; input order is kept.
pub fn lm_scores<T: Scalar, S: AsRef<str> + Sync>(
    lm: &CharLm<T>,
    sentences: &[S],
    exec: Execution,
) -> Result<Vec<f64>> {
    exec.try_map(sentences, |_, s| lm.score(s.as_ref()))
}

/// Indices of `scores` by descending score; equal scores keep input order.
pub fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// `(index, score)` pairs by descending LM score, stable.
pub fn rank_by_lm<T: Scalar, S: AsRef<str> + Sync>(
    lm: &CharLm<T>,
    sentences: &[S],
    exec: Execution,
) -> Result<Vec<(usize, f64)>> {
    let scores = lm_scores(lm, sentences, exec)?;
    Ok(rank_indices(&scores)
        .into_iter()
        .map(|i| (i, scores[i]))
        .collect())
}

/// The `n` best-scoring sentences, best first.
pub fn top_n<T: Scalar, S: AsRef<str> + Sync>(
    lm: &CharLm<T>,
    sentences: &[S],
    n: usize,
    exec: Execution,
) -> Result<Vec<usize>> {
    let ranked = rank_by_lm(lm, sentences, exec)?;
    Ok(ranked.into_iter().take(n).map(|(i, _)| i).collect())
}

/// One line of the selection report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub index: usize,
    pub score: f64,
    pub verdict: FilterVerdict,
}

impl ReportRow {
    /// `line-index \t score \t accepted|rejected \t failing-rule-or-dash`
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{}\t{}",
            self.index,
            self.score,
            if self.verdict.accepted {
                "accepted"
            } else {
                "rejected"
            },
            self.verdict.failed.map_or("-", Rule::name)
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Chosen line indices, best LM score first.
    pub indices: Vec<usize>,
    pub corpus: ParallelCorpus,
    /// One row per input line, in input order.
    pub report: Vec<ReportRow>,
}

/// Rule-passing pairs (rules and LM applied to the target side), top `n` by LM score.
pub fn select_parallel<T: Scalar>(
    corpus: &ParallelCorpus,
    lm: &CharLm<T>,
    rules: &FilterRuleSet,
    n: usize,
    exec: Execution,
) -> Result<Selection> {
    rules.validate()?;
    let scores = lm_scores(lm, &corpus.target, exec)?;
    let verdicts = exec.map(&corpus.target, |_, s| rules.apply(s));
    let passing: Vec<usize> = rank_indices(&scores)
        .into_iter()
        .filter(|&i| verdicts[i].accepted)
        .collect();
    if n > passing.len() {
        log::warn!(
            "requested {n} pairs but only {} pass the rules",
            passing.len()
        );
    }
    let indices: Vec<usize> = passing.into_iter().take(n).collect();
    let source = indices.iter().map(|&i| corpus.source[i].clone()).collect();
    let target = indices.iter().map(|&i| corpus.target[i].clone()).collect();
    let report = verdicts
        .into_iter()
        .enumerate()
        .map(|(index, verdict)| ReportRow {
            index,
            score: scores[index],
            verdict,
        })
        .collect();
    Ok(Selection {
        indices,
        corpus: ParallelCorpus {
            source,
            target,
            images: None,
        },
        report,
    })
}

/// Synthetic parallel data produced from monolingual target-side text.
#[derive(Clone, Debug, PartialEq)]
pub struct Backtranslation {
    pub corpus: ParallelCorpus,
    /// Input line of each output pair.
    pub origin: Vec<usize>,
    /// Skipped input lines and the reason.
    pub skipped: Vec<(usize, String)>,
}

impl Backtranslation {
    /// `output-line \t input-line \t synthetic` per pair.
    pub fn manifest(&self) -> String {
        self.origin
            .iter()
            .enumerate()
            .map(|(out, inp)| format!("{out}\t{inp}\tsynthetic\n"))
            .collect()
    }
}

/// Translates each target-language line back into the source language with a
/// text-only reverse model. Lines that fail to decode are dropped on both sides.
pub fn backtranslate<T: Scalar>(
    reverse: &Seq2Seq<T>,
    input_vocab: &Vocabulary,
    output_vocab: &Vocabulary,
    lines: &[String],
    beam: &BeamConfig,
    exec: Execution,
) -> Result<Backtranslation> {
    if reverse.config().modalities != [Modality::Text] {
        return Err(Error::InvalidArgument(
            "back-translation needs a text-only reverse model".into(),
        ));
    }
    let decoded = exec.map(lines, |_, line| -> Result<String> {
        let input = TranslationInput::text(input_vocab.encode(line));
        let result = beam_search(reverse, &input, beam)?;
        let top = result.top().ok_or(Error::EmptyInput("beam"))?;
        let text = output_vocab.decode_sentence(top.output())?;
        if text.is_empty() {
            return Err(Error::EmptyInput("decoded sentence"));
        }
        Ok(text)
    });
    let mut out = Backtranslation {
        corpus: ParallelCorpus {
            source: Vec::new(),
            target: Vec::new(),
            images: None,
        },
        origin: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, r) in decoded.into_iter().enumerate() {
        match r {
            Ok(src) => {
                out.corpus.source.push(src);
                out.corpus.target.push(lines[i].clone());
                out.origin.push(i);
            }
            Err(e) => {
                log::warn!("back-translation skipped line {i}: {e}");
                out.skipped.push((i, e.to_string()));
            }
        }
    }
    Ok(out)
}

/// Target ids for training: the encoded sentence followed by EOS.
pub fn encode_target(vocab: &Vocabulary, sentence: &str) -> Vec<usize> {
    let mut ids = vocab.encode(sentence);
    ids.push(EOS);
    ids
}
