use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::Vocabulary;
use crate::error::{Error, Result};

/// Corpora are pre-tokenized; tokens are separated by ASCII whitespace.
pub fn tokenize(line: &str) -> Vec<&str> {
    line.split_ascii_whitespace().collect()
}

/// Reads a one-sentence-per-line UTF-8 corpus. Empty lines are rejected.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Data(format!("{}: not valid UTF-8 ({e})", path.display())))?;
    parse_corpus(&text).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_corpus(text: &str) -> Result<Vec<String>> {
    let text = text.strip_suffix('\n').unwrap_or(text);
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            return Err(Error::Data(format!("line {}: empty sentence", i + 1)));
        }
        out.push(line.to_string());
    }
    Ok(out)
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Line-aligned source/target sentences with optional per-line image features.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub images: Option<Vec<Option<PathBuf>>>,
}

impl ParallelCorpus {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::Data(format!(
                "parallel corpus sides differ in length: {} vs {}",
                source.len(),
                target.len()
            )));
        }
        if let Some(i) = source
            .iter()
            .chain(&target)
            .position(|l| l.trim().is_empty())
        {
            return Err(Error::Data(format!("empty sentence at position {i}")));
        }
        Ok(ParallelCorpus {
            source,
            target,
            images: None,
        })
    }

    pub fn load(source: impl AsRef<Path>, target: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_corpus(source)?, read_corpus(target)?)
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn with_manifest(mut self, manifest: &BTreeMap<usize, PathBuf>) -> Result<Self> {
        if let Some((&line, _)) = manifest.range(self.len()..).next() {
            return Err(Error::Data(format!(
                "manifest refers to line {line} beyond corpus end"
            )));
        }
        self.images = Some((0..self.len()).map(|i| manifest.get(&i).cloned()).collect());
        Ok(self)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.source
            .iter()
            .map(String::as_str)
            .zip(self.target.iter().map(String::as_str))
    }
}

/// Reads an image manifest: `<line-index>\t<feature-path>` per line, 0-based
/// indices, relative paths resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<BTreeMap<usize, PathBuf>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(idx), Some(file)) = (parts.next(), parts.next()) else {
            return Err(Error::Data(format!(
                "{}:{}: expected `<line>\\t<path>`",
                path.display(),
                i + 1
            )));
        };
        let idx: usize = idx.trim().parse().map_err(|_| {
            Error::Data(format!(
                "{}:{}: bad line index `{idx}`",
                path.display(),
                i + 1
            ))
        })?;
        let file = PathBuf::from(file.trim());
        let file = if file.is_relative() {
            base.join(file)
        } else {
            file
        };
        if out.insert(idx, file).is_some() {
            return Err(Error::Data(format!(
                "{}:{}: duplicate line index {idx}",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(out)
}

/// Sentence and token counts of a tokenized corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl CorpusStats {
    pub fn mean_len(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.tokens as f64 / self.sentences as f64
        }
    }

    pub fn merge(&self, other: &CorpusStats) -> CorpusStats {
        if self.sentences == 0 {
            return *other;
        }
        if other.sentences == 0 {
            return *self;
        }
        CorpusStats {
            sentences: self.sentences + other.sentences,
            tokens: self.tokens + other.tokens,
            min_len: self.min_len.min(other.min_len),
            max_len: self.max_len.max(other.max_len),
        }
    }

    /// One-line report: sentences, tokens, mean, range.
    pub fn report(&self) -> String {
        format!(
            "sentences={} tokens={} avg={:.1} range={}-{}",
            self.sentences,
            self.tokens,
            self.mean_len(),
            self.min_len,
            self.max_len
        )
    }
}

pub fn corpus_stats<S: AsRef<str>>(lines: &[S]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for line in lines {
        let n = line.as_ref().split_ascii_whitespace().count();
        stats = stats.merge(&CorpusStats {
            sentences: 1,
            tokens: n,
            min_len: n,
            max_len: n,
        });
    }
    stats
}

/// Fraction of tokens not present in `vocab`.
pub fn oov_rate<S: AsRef<str>>(lines: &[S], vocab: &Vocabulary) -> Result<f64> {
    let mut total = 0usize;
    let mut unknown = 0usize;
    for line in lines {
        for tok in line.as_ref().split_ascii_whitespace() {
            total += 1;
            if !vocab.contains(tok) {
                unknown += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("oov_rate text"));
    }
    Ok(unknown as f64 / total as f64)
}
