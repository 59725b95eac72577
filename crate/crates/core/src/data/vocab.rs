use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

/// Literal forms of the reserved ids, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

pub const DEFAULT_MAX_SIZE: usize = 30_000;

/// Token ↔ id bijection. Ids `0..4` are the reserved tokens, followed by any
/// extra special tokens (e.g. language identifiers), followed by corpus
/// tokens by descending frequency with ties in first-occurrence order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    freqs: Vec<usize>,
}

impl Vocabulary {
    /// Builds a vocabulary of at most `max_size` corpus tokens (plus reserved ids).
    pub fn build<'a, I>(sentences: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        Self::build_with_specials(sentences, max_size, &[])
    }

    pub fn build_with_specials<'a, I>(
        sentences: I,
        max_size: usize,
        specials: &[&str],
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut first_seen: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for line in sentences {
            for tok in line.split_ascii_whitespace() {
                let entry = first_seen.entry(tok).or_insert_with(|| {
                    order += 1;
                    (order, 0)
                });
                entry.1 += 1;
            }
        }
        if first_seen.is_empty() {
            return Err(Error::EmptyInput("vocabulary corpus"));
        }
        let mut vocab = Self::reserved_only(specials)?;
        let mut ranked: Vec<(&str, usize, usize)> = first_seen
            .into_iter()
            .filter(|(tok, _)| !vocab.index.contains_key(*tok))
            .map(|(tok, (first, count))| (tok, first, count))
            .collect();
        ranked.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)));
        for (tok, _, count) in ranked.into_iter().take(max_size) {
            vocab.push(tok.to_string(), count);
        }
        Ok(vocab)
    }

    fn reserved_only(specials: &[&str]) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            freqs: Vec::new(),
        };
        for tok in RESERVED.iter().chain(specials) {
            if v.index.contains_key(*tok) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate special token `{tok}`"
                )));
            }
            v.push(tok.to_string(), 0);
        }
        Ok(v)
    }

    fn push(&mut self, tok: String, freq: usize) {
        self.index.insert(tok.clone(), self.tokens.len());
        self.tokens.push(tok);
        self.freqs.push(freq);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Corpus frequency recorded at build time (0 for special tokens or loaded vocabularies).
    pub fn frequency(&self, id: usize) -> usize {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace-tokenizes and maps unknown tokens to UNK.
    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence
            .split_ascii_whitespace()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&id| {
                self.token(id).ok_or(Error::TokenOutOfRange {
                    id,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// Space-joined output text; stops at EOS and drops PAD/BOS.
    pub fn decode_sentence(&self, ids: &[usize]) -> Result<String> {
        let body: Vec<usize> = ids
            .iter()
            .copied()
            .take_while(|&id| id != EOS)
            .filter(|&id| id != PAD && id != BOS)
            .collect();
        Ok(self.decode(&body)?.join(" "))
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            freqs: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if i < RESERVED.len() && line != RESERVED[i] {
                return Err(Error::Data(format!(
                    "vocabulary line {}: expected reserved token `{}`, found `{line}`",
                    i + 1,
                    RESERVED[i]
                )));
            }
            if line.is_empty() || line.contains(|c: char| c.is_ascii_whitespace()) {
                return Err(Error::Data(format!(
                    "vocabulary line {}: invalid token `{line}`",
                    i + 1
                )));
            }
            if v.index.contains_key(line) {
                return Err(Error::Data(format!(
                    "vocabulary line {}: duplicate token `{line}`",
                    i + 1
                )));
            }
            v.push(line.to_string(), 0);
        }
        if v.len() < RESERVED.len() {
            return Err(Error::Data(
                "vocabulary file is missing reserved tokens".into(),
            ));
        }
        Ok(v)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
