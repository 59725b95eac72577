use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::layers::{attend, bidir_encode, AttentionParams, BiEncoding, GruParams, Linear};
use crate::metrics::{chrf3, sentence_bleu};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressorArch {
    /// Terminal encoder states and the mean image vector, concatenated.
    TerminalConcat,
    /// Each encoder pooled by attention queried from the other inputs.
    AttentivePool,
}

impl FromStr for RegressorArch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal-concat" => Ok(RegressorArch::TerminalConcat),
            "attentive-pool" => Ok(RegressorArch::AttentivePool),
            other => Err(Error::InvalidArgument(format!(
                "unknown regressor architecture `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMetric {
    SentenceBleu,
    /// chrF3 divided by 100.
    Chrf3,
}

impl TargetMetric {
    pub fn value(self, hyp: &[&str], reference: &[&str]) -> f64 {
        match self {
            TargetMetric::SentenceBleu => sentence_bleu(hyp, reference),
            TargetMetric::Chrf3 => chrf3(&hyp.join(" "), &reference.join(" ")) / 100.0,
        }
    }
}

impl FromStr for TargetMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu" => Ok(TargetMetric::SentenceBleu),
            "chrf3" => Ok(TargetMetric::Chrf3),
            other => Err(Error::InvalidArgument(format!(
                "unknown target metric `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegressorConfig {
    pub src_vocab: usize,
    pub hyp_vocab: usize,
    pub embedding_dim: usize,
    pub encoder_units: usize,
    pub image_dim: usize,
    pub hidden_units: usize,
    pub arch: RegressorArch,
    pub target: TargetMetric,
}

impl RegressorConfig {
    pub fn new(
        src_vocab: usize,
        hyp_vocab: usize,
        arch: RegressorArch,
        target: TargetMetric,
    ) -> Self {
        RegressorConfig {
            src_vocab,
            hyp_vocab,
            embedding_dim: 300,
            encoder_units: 500,
            image_dim: 512,
            hidden_units: 300,
            arch,
            target,
        }
    }

    /// Width of the vector entering the output head.
    pub fn head_input_dim(&self) -> usize {
        2 * (2 * self.encoder_units) + self.image_dim
    }

    pub fn num_params(&self) -> usize {
        let (e, d) = (self.embedding_dim, self.encoder_units);
        let mut n = (self.src_vocab + self.hyp_vocab) * e + 4 * GruParams::num_params(e, d);
        if self.arch == RegressorArch::AttentivePool {
            n += 2 * AttentionParams::num_params(2 * d, 2 * d, self.hidden_units)
                + AttentionParams::num_params(4 * d, self.image_dim, self.hidden_units);
        }
        n + Linear::num_params(self.head_input_dim(), self.hidden_units, true)
            + Linear::num_params(self.hidden_units, 1, true)
    }
}

#[derive(Clone, Debug)]
pub struct RegressorExample<T> {
    pub source: Vec<usize>,
    pub hypothesis: Vec<usize>,
    /// `[R, image_dim]`; a flat vector is the case `R = 1`.
    pub image: Tensor<T>,
    pub target: f64,
}

#[derive(Clone, Debug)]
struct Pooling {
    src: AttentionParams,
    hyp: AttentionParams,
    image: AttentionParams,
}

/// Pooling weights of the attentive architecture, each `[T, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct PoolingWeights {
    pub source: Var,
    pub hypothesis: Var,
    pub image: Var,
}

/// Estimates a translation quality metric from source, hypothesis and image.
#[derive(Clone, Debug)]
pub struct ScoreRegressor<T: Scalar> {
    config: RegressorConfig,
    store: ParamStore<T>,
    src_embed: ParamId,
    src_enc: (GruParams, GruParams),
    hyp_embed: ParamId,
    hyp_enc: (GruParams, GruParams),
    pooling: Option<Pooling>,
    hidden: Linear,
    output: Linear,
}

impl<T: Scalar> ScoreRegressor<T> {
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self> {
        let c = config;
        if [
            c.src_vocab,
            c.hyp_vocab,
            c.embedding_dim,
            c.encoder_units,
            c.image_dim,
            c.hidden_units,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidArgument(
                "regressor dimensions must be positive".into(),
            ));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (e, d) = (c.embedding_dim, c.encoder_units);
        let src_embed = store.add_init("reg.src.embed", &[c.src_vocab, e], rng)?;
        let src_enc = (
            GruParams::new(&mut store, "reg.src.fwd", e, d, rng)?,
            GruParams::new(&mut store, "reg.src.bwd", e, d, rng)?,
        );
        let hyp_embed = store.add_init("reg.hyp.embed", &[c.hyp_vocab, e], rng)?;
        let hyp_enc = (
            GruParams::new(&mut store, "reg.hyp.fwd", e, d, rng)?,
            GruParams::new(&mut store, "reg.hyp.bwd", e, d, rng)?,
        );
        let pooling = match c.arch {
            RegressorArch::TerminalConcat => None,
            RegressorArch::AttentivePool => Some(Pooling {
                src: AttentionParams::new(
                    &mut store,
                    "reg.pool.src",
                    2 * d,
                    2 * d,
                    c.hidden_units,
                    rng,
                )?,
                hyp: AttentionParams::new(
                    &mut store,
                    "reg.pool.hyp",
                    2 * d,
                    2 * d,
                    c.hidden_units,
                    rng,
                )?,
                image: AttentionParams::new(
                    &mut store,
                    "reg.pool.img",
                    4 * d,
                    c.image_dim,
                    c.hidden_units,
                    rng,
                )?,
            }),
        };
        let hidden = Linear::new(
            &mut store,
            "reg.hidden",
            c.head_input_dim(),
            c.hidden_units,
            true,
            rng,
        )?;
        let output = Linear::new(&mut store, "reg.out", c.hidden_units, 1, true, rng)?;
        Ok(ScoreRegressor {
            config,
            store,
            src_embed,
            src_enc,
            hyp_embed,
            hyp_enc,
            pooling,
            hidden,
            output,
        })
    }

    pub fn from_checkpoint(config: RegressorConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        checkpoint.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn config(&self) -> RegressorConfig {
        self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn encode(
        &self,
        g: &mut Graph<'_, T>,
        source: &[usize],
        hyp: &[usize],
    ) -> Result<(BiEncoding, BiEncoding)> {
        let s = bidir_encode(g, source, self.src_embed, &self.src_enc.0, &self.src_enc.1)?;
        let h = bidir_encode(g, hyp, self.hyp_embed, &self.hyp_enc.0, &self.hyp_enc.1)?;
        Ok((s, h))
    }

    /// The head input vector and, for the attentive architecture, its pooling weights.
    pub fn features(
        &self,
        g: &mut Graph<'_, T>,
        source: &[usize],
        hyp: &[usize],
        image: &Tensor<T>,
    ) -> Result<(Var, Option<PoolingWeights>)> {
        if image.shape().len() != 2
            || image.shape()[1] != self.config.image_dim
            || image.shape()[0] == 0
        {
            return Err(Error::shape(
                "regressor image",
                image.shape(),
                &[1, self.config.image_dim],
            ));
        }
        let (s, h) = self.encode(g, source, hyp)?;
        let img = g.constant(image.clone());
        match &self.pooling {
            None => {
                let img_vec = g.mean_rows(img)?;
                Ok((g.concat_last(&[s.terminal, h.terminal, img_vec])?, None))
            }
            Some(p) => {
                let (src_ctx, src_w) = attend(g, h.terminal, s.states, &p.src)?;
                let (hyp_ctx, hyp_w) = attend(g, s.terminal, h.states, &p.hyp)?;
                let q = g.concat_last(&[s.terminal, h.terminal])?;
                let (img_ctx, img_w) = attend(g, q, img, &p.image)?;
                let weights = PoolingWeights {
                    source: src_w,
                    hypothesis: hyp_w,
                    image: img_w,
                };
                Ok((g.concat_last(&[src_ctx, hyp_ctx, img_ctx])?, Some(weights)))
            }
        }
    }

    /// `[1, 1]` estimate.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        source: &[usize],
        hyp: &[usize],
        image: &Tensor<T>,
    ) -> Result<Var> {
        let (x, _) = self.features(g, source, hyp, image)?;
        let pre = self.hidden.forward(g, x)?;
        let a = g.tanh(pre);
        self.output.forward(g, a)
    }

    /// Squared error against the example's target.
    pub fn loss(&self, g: &mut Graph<'_, T>, example: &RegressorExample<T>) -> Result<Var> {
        let y = self.forward(g, &example.source, &example.hypothesis, &example.image)?;
        let t = g.constant(Tensor::full(&[1, 1], T::of(example.target)));
        let diff = g.sub(y, t)?;
        let sq = g.mul(diff, diff)?;
        Ok(g.sum(sq))
    }

    pub fn predict(&self, source: &[usize], hyp: &[usize], image: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let y = self.forward(&mut g, source, hyp, image)?;
        Ok(g.value(y)[0].f64())
    }
}
