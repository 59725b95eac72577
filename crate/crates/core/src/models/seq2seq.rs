use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Modality, ModelConfig, Strategy};
use super::SequenceModel;
use crate::data::{Checkpoint, FeatureGrid, BOS};
use crate::error::{Error, Result};
use crate::layers::{
    bidir_encode, cond_gru_step, prepare_attention, AttentionMemory, AttentionParams, Combiner,
    CondGruOutput, CondGruParams, GruParams, HierarchicalParams, Linear,
};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Source side of one translation or captioning request.
#[derive(Clone, Debug, Default)]
pub struct TranslationInput<T> {
    pub source: Vec<usize>,
    /// Spatial image states as `[H·W, C]` rows.
    pub image: Option<Tensor<T>>,
    /// Language-identifier token, consumed at the first step in multilingual mode.
    pub lang: Option<usize>,
}

impl<T: Scalar> TranslationInput<T> {
    pub fn text(source: Vec<usize>) -> Self {
        TranslationInput {
            source,
            image: None,
            lang: None,
        }
    }

    pub fn with_grid(mut self, grid: &FeatureGrid) -> Self {
        self.image = Some(grid.to_rows());
        self
    }

    pub fn with_image(mut self, rows: Tensor<T>) -> Self {
        self.image = Some(rows);
        self
    }

    pub fn with_lang(mut self, lang: usize) -> Self {
        self.lang = Some(lang);
        self
    }
}

/// A source paired with its target ids (EOS included).
#[derive(Clone, Debug)]
pub struct TranslationExample<T> {
    pub input: TranslationInput<T>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    /// Prepared attention memory per modality, in modality order.
    pub memories: Vec<AttentionMemory>,
}

#[derive(Clone, Debug)]
struct TextEncoder {
    embed: ParamId,
    fwd: GruParams,
    bwd: GruParams,
}

/// Attentive encoder-decoder with a conditional GRU decoder over one or more
/// source modalities.
#[derive(Clone, Debug)]
pub struct Seq2Seq<T: Scalar> {
    config: ModelConfig,
    store: ParamStore<T>,
    text: Option<TextEncoder>,
    image_proj: Option<Linear>,
    tgt_embed: ParamId,
    init: Linear,
    decoder: CondGruParams,
    output: Linear,
}

impl<T: Scalar> Seq2Seq<T> {
    /// Fresh model; parameter values are a pure function of `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (e, s, a) = (
            config.embedding_dim,
            config.decoder_units,
            config.attention_dim,
        );
        let text = if config.has(Modality::Text) {
            let embed = store.add_init("src.embed", &[config.src_vocab, e], rng)?;
            let fwd = GruParams::new(&mut store, "enc.fwd", e, config.encoder_units, rng)?;
            let bwd = GruParams::new(&mut store, "enc.bwd", e, config.encoder_units, rng)?;
            Some(TextEncoder { embed, fwd, bwd })
        } else {
            None
        };
        let image_proj = if config.has(Modality::Image) {
            Some(Linear::new(
                &mut store,
                "img.proj",
                config.image_channels,
                config.image_proj_dim,
                true,
                rng,
            )?)
        } else {
            None
        };
        let tgt_embed = store.add_init("tgt.embed", &[config.tgt_vocab, e], rng)?;
        let init = Linear::new(
            &mut store,
            "dec.init",
            config.context_dim(config.modalities[0]),
            s,
            true,
            rng,
        )?;
        let first = GruParams::new(&mut store, "dec.gru1", e, s, rng)?;
        let mut attention = Vec::new();
        for &m in &config.modalities {
            let prefix = format!("dec.att.{}", m.name());
            attention.push(AttentionParams::new(
                &mut store,
                &prefix,
                s,
                config.context_dim(m),
                a,
                rng,
            )?);
        }
        let combiner = match config.strategy {
            Strategy::Concat => Combiner::Concat,
            Strategy::Textual | Strategy::Hierarchical => {
                let names: Vec<&str> = config.modalities.iter().map(|m| m.name()).collect();
                Combiner::Hierarchical(HierarchicalParams::new(
                    &mut store,
                    "dec.combine",
                    &names,
                    &config.context_dims(),
                    s,
                    config.fused_dim,
                    a,
                    rng,
                )?)
            }
        };
        let second = GruParams::new(&mut store, "dec.gru2", config.fused_context_dim(), s, rng)?;
        let output = Linear::new(&mut store, "dec.out", s, config.tgt_vocab, true, rng)?;
        Ok(Seq2Seq {
            config,
            store,
            text,
            image_proj,
            tgt_embed,
            init,
            decoder: CondGruParams {
                first,
                second,
                attention,
                combiner,
            },
            output,
        })
    }

    pub fn from_checkpoint(config: ModelConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        checkpoint.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn first_token(&self, input: &TranslationInput<T>) -> Result<usize> {
        if !self.config.multilingual {
            return Ok(BOS);
        }
        let lang = input
            .lang
            .ok_or(Error::MissingInput("language identifier"))?;
        if lang >= self.config.tgt_vocab {
            return Err(Error::TokenOutOfRange {
                id: lang,
                size: self.config.tgt_vocab,
            });
        }
        Ok(lang)
    }

    /// Encodes every modality and computes the initial decoder state.
    pub fn encode(
        &self,
        g: &mut Graph<'_, T>,
        input: &TranslationInput<T>,
    ) -> Result<DecoderState> {
        let mut states = Vec::with_capacity(self.config.modalities.len());
        for &m in &self.config.modalities {
            states.push(match m {
                Modality::Text => {
                    let enc = self
                        .text
                        .as_ref()
                        .expect("text encoder exists for text modality");
                    if let Some(&id) = input.source.iter().find(|&&id| id >= self.config.src_vocab)
                    {
                        return Err(Error::TokenOutOfRange {
                            id,
                            size: self.config.src_vocab,
                        });
                    }
                    bidir_encode(g, &input.source, enc.embed, &enc.fwd, &enc.bwd)?.states
                }
                Modality::Image => {
                    let rows = input
                        .image
                        .as_ref()
                        .ok_or(Error::MissingInput("image features"))?;
                    let expected = [self.config.image_positions(), self.config.image_channels];
                    if rows.shape() != expected {
                        return Err(Error::shape("image features", rows.shape(), &expected));
                    }
                    let x = g.constant(rows.clone());
                    self.image_proj
                        .as_ref()
                        .expect("image projection exists")
                        .forward(g, x)?
                }
            });
        }
        let pooled = g.mean_rows(states[0])?;
        let pre = self.init.forward(g, pooled)?;
        let hidden = g.tanh(pre);
        let memories = states
            .iter()
            .zip(&self.decoder.attention)
            .map(|(&h, p)| prepare_attention(g, h, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(DecoderState { hidden, memories })
    }

    /// One decoder transition, also returning attention weights.
    pub fn step_detailed(
        &self,
        g: &mut Graph<'_, T>,
        state: &DecoderState,
        prev: usize,
    ) -> Result<(Var, DecoderState, CondGruOutput)> {
        let table = g.param(self.tgt_embed);
        let y = g.gather_rows(table, &[prev])?;
        let out = cond_gru_step(g, y, state.hidden, &state.memories, &self.decoder)?;
        let logits = self.output.forward(g, out.state)?;
        let next = DecoderState {
            hidden: out.state,
            memories: state.memories.clone(),
        };
        Ok((logits, next, out))
    }
}

impl<T: Scalar> SequenceModel<T> for Seq2Seq<T> {
    type Input = TranslationInput<T>;
    type State = DecoderState;

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn vocab_size(&self) -> usize {
        self.config.tgt_vocab
    }

    fn start(
        &self,
        g: &mut Graph<'_, T>,
        input: &TranslationInput<T>,
    ) -> Result<(DecoderState, usize)> {
        let first = self.first_token(input)?;
        Ok((self.encode(g, input)?, first))
    }

    fn step(
        &self,
        g: &mut Graph<'_, T>,
        state: &DecoderState,
        prev: usize,
    ) -> Result<(Var, DecoderState)> {
        let (logits, next, _) = self.step_detailed(g, state, prev)?;
        Ok((logits, next))
    }
}
