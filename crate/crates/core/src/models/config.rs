use std::fmt;
use std::str::FromStr;

use crate::data::vocab::{DEFAULT_MAX_SIZE, RESERVED};
use crate::error::{Error, Result};
use crate::layers::{AttentionParams, GruParams, HierarchicalParams, Linear};

/// Upper bound on special ids (language identifiers and the like) beyond the reserved four.
pub const MAX_SPECIALS: usize = 16;

pub const MAX_VOCAB: usize = DEFAULT_MAX_SIZE + RESERVED.len() + MAX_SPECIALS;

/// Source modalities, declared in their fixed combination order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(Error::InvalidArgument(format!(
                "unknown modality `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Text only; the context passes through a single learned projection.
    Textual,
    Concat,
    Hierarchical,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textual" => Ok(Strategy::Textual),
            "concat" => Ok(Strategy::Concat),
            "hierarchical" => Ok(Strategy::Hierarchical),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Textual => "textual",
            Strategy::Concat => "concat",
            Strategy::Hierarchical => "hierarchical",
        })
    }
}

/// Architecture of a translation or captioning model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embedding_dim: usize,
    /// Units per encoder direction.
    pub encoder_units: usize,
    pub decoder_units: usize,
    pub attention_dim: usize,
    /// Output width of the hierarchical and textual context projections.
    pub fused_dim: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    /// Width of the image states after the linear projection.
    pub image_proj_dim: usize,
    pub modalities: Vec<Modality>,
    pub strategy: Strategy,
    /// Consume a language-identifier token instead of BOS at the first step.
    pub multilingual: bool,
    /// Reserved; must be zero.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            src_vocab: DEFAULT_MAX_SIZE + RESERVED.len(),
            tgt_vocab: DEFAULT_MAX_SIZE + RESERVED.len(),
            embedding_dim: 300,
            encoder_units: 500,
            decoder_units: 500,
            attention_dim: 500,
            fused_dim: 1000,
            image_height: 14,
            image_width: 14,
            image_channels: 512,
            image_proj_dim: 512,
            modalities: vec![Modality::Text],
            strategy: Strategy::Textual,
            multilingual: false,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn textual(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            ..Default::default()
        }
    }

    pub fn multimodal(src_vocab: usize, tgt_vocab: usize, strategy: Strategy) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            modalities: vec![Modality::Text, Modality::Image],
            strategy,
            ..Default::default()
        }
    }

    /// Image-only attentive captioner.
    pub fn captioner(tgt_vocab: usize, multilingual: bool) -> Self {
        ModelConfig {
            src_vocab: 0,
            tgt_vocab,
            modalities: vec![Modality::Image],
            strategy: Strategy::Hierarchical,
            multilingual,
            ..Default::default()
        }
    }

    /// Shrinks every width to `d`, keeping vocabularies and modalities.
    pub fn with_width(mut self, d: usize) -> Self {
        self.embedding_dim = d;
        self.encoder_units = d;
        self.decoder_units = d;
        self.attention_dim = d;
        self.fused_dim = 2 * d;
        self.image_proj_dim = d;
        self
    }

    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("encoder_units", self.encoder_units),
            ("decoder_units", self.decoder_units),
            ("attention_dim", self.attention_dim),
            ("fused_dim", self.fused_dim),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("image_channels", self.image_channels),
            ("image_proj_dim", self.image_proj_dim),
            ("tgt_vocab", self.tgt_vocab),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        if self.modalities.windows(2).any(|w| w[0] >= w[1]) {
            return bad("modalities must be distinct and listed as text, image".into());
        }
        if self.has(Modality::Text) && self.src_vocab == 0 {
            return bad("src_vocab must be positive when the text modality is used".into());
        }
        if self.src_vocab > MAX_VOCAB || self.tgt_vocab > MAX_VOCAB {
            return bad(format!("vocabulary sizes are capped at {MAX_VOCAB}"));
        }
        if self.strategy == Strategy::Textual && self.modalities != [Modality::Text] {
            return bad("the textual strategy takes exactly the text modality".into());
        }
        if self.dropout != 0.0 {
            return bad("dropout is not supported".into());
        }
        Ok(())
    }

    pub fn context_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Text => 2 * self.encoder_units,
            Modality::Image => self.image_proj_dim,
        }
    }

    pub fn context_dims(&self) -> Vec<usize> {
        self.modalities
            .iter()
            .map(|&m| self.context_dim(m))
            .collect()
    }

    /// Width of the vector fed to the second decoder GRU.
    pub fn fused_context_dim(&self) -> usize {
        match self.strategy {
            Strategy::Concat => self.context_dims().iter().sum(),
            Strategy::Textual | Strategy::Hierarchical => self.fused_dim,
        }
    }

    pub fn image_positions(&self) -> usize {
        self.image_height * self.image_width
    }

    /// Closed-form count of scalar parameters.
    pub fn num_params(&self) -> usize {
        let (e, d, s, a) = (
            self.embedding_dim,
            self.encoder_units,
            self.decoder_units,
            self.attention_dim,
        );
        let mut n = 0;
        if self.has(Modality::Text) {
            n += self.src_vocab * e + 2 * GruParams::num_params(e, d);
        }
        if self.has(Modality::Image) {
            n += Linear::num_params(self.image_channels, self.image_proj_dim, true);
        }
        n += self.tgt_vocab * e;
        n += Linear::num_params(self.context_dim(self.modalities[0]), s, true);
        n += GruParams::num_params(e, s);
        let ks = self.context_dims();
        n += ks
            .iter()
            .map(|&k| AttentionParams::num_params(s, k, a))
            .sum::<usize>();
        if self.strategy != Strategy::Concat {
            n += HierarchicalParams::num_params(&ks, s, self.fused_dim, a);
        }
        n += GruParams::num_params(self.fused_context_dim(), s);
        n + Linear::num_params(s, self.tgt_vocab, true)
    }
}
