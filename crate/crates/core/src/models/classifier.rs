use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::layers::{bidir_encode, GruParams, Linear};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub vocab: usize,
    pub embedding_dim: usize,
    pub encoder_units: usize,
    /// Width of the flat image vector.
    pub image_dim: usize,
    pub hidden_units: usize,
}

impl ClassifierConfig {
    pub fn new(vocab: usize) -> Self {
        ClassifierConfig {
            vocab,
            embedding_dim: 300,
            encoder_units: 500,
            image_dim: 4096,
            hidden_units: 300,
        }
    }

    pub fn num_params(&self) -> usize {
        self.vocab * self.embedding_dim
            + 2 * GruParams::num_params(self.embedding_dim, self.encoder_units)
            + Linear::num_params(
                self.image_dim + 2 * self.encoder_units,
                self.hidden_units,
                true,
            )
            + Linear::num_params(self.hidden_units, 1, true)
    }
}

/// An image vector, a tokenised sentence and whether the sentence captions the image.
#[derive(Clone, Debug)]
pub struct ClassifierExample<T> {
    /// `[1, image_dim]`
    pub image: Tensor<T>,
    pub tokens: Vec<usize>,
    pub label: bool,
}

/// Predicts whether a sentence is a suitable caption for an image.
#[derive(Clone, Debug)]
pub struct SuitabilityClassifier<T: Scalar> {
    config: ClassifierConfig,
    store: ParamStore<T>,
    embed: ParamId,
    fwd: GruParams,
    bwd: GruParams,
    hidden: Linear,
    output: Linear,
}

impl<T: Scalar> SuitabilityClassifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        let c = config;
        if [
            c.vocab,
            c.embedding_dim,
            c.encoder_units,
            c.image_dim,
            c.hidden_units,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidArgument(
                "classifier dimensions must be positive".into(),
            ));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embed = store.add_init("cls.embed", &[c.vocab, c.embedding_dim], rng)?;
        let fwd = GruParams::new(&mut store, "cls.fwd", c.embedding_dim, c.encoder_units, rng)?;
        let bwd = GruParams::new(&mut store, "cls.bwd", c.embedding_dim, c.encoder_units, rng)?;
        let hidden = Linear::new(
            &mut store,
            "cls.hidden",
            c.image_dim + 2 * c.encoder_units,
            c.hidden_units,
            true,
            rng,
        )?;
        let output = Linear::new(&mut store, "cls.out", c.hidden_units, 1, true, rng)?;
        Ok(SuitabilityClassifier {
            config,
            store,
            embed,
            fwd,
            bwd,
            hidden,
            output,
        })
    }

    pub fn from_checkpoint(config: ClassifierConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        checkpoint.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn config(&self) -> ClassifierConfig {
        self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// `[1, 2]` log-probabilities of (unsuitable, suitable).
    pub fn log_probs(
        &self,
        g: &mut Graph<'_, T>,
        image: &Tensor<T>,
        tokens: &[usize],
    ) -> Result<Var> {
        if image.shape() != [1, self.config.image_dim] {
            return Err(Error::shape(
                "classifier image",
                image.shape(),
                &[1, self.config.image_dim],
            ));
        }
        let enc = bidir_encode(g, tokens, self.embed, &self.fwd, &self.bwd)?;
        let img = g.constant(image.clone());
        let x = g.concat_last(&[img, enc.terminal])?;
        let pre = self.hidden.forward(g, x)?;
        let h = g.tanh(pre);
        let z = self.output.forward(g, h)?;
        let zero = g.constant(Tensor::zeros(&[1, 1]));
        let pair = g.concat_last(&[zero, z])?;
        g.log_softmax(pair, 1)
    }

    /// Negative log-likelihood of the example's label.
    pub fn loss(&self, g: &mut Graph<'_, T>, example: &ClassifierExample<T>) -> Result<Var> {
        let lp = self.log_probs(g, &example.image, &example.tokens)?;
        let picked = g.pick(lp, &[example.label as usize])?;
        let s = g.sum(picked);
        Ok(g.scale(s, -T::one()))
    }

    pub fn probability(&self, image: &Tensor<T>, tokens: &[usize]) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let lp = self.log_probs(&mut g, image, tokens)?;
        Ok(g.value(lp)[1].f64().exp())
    }
}
