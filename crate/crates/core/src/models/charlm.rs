use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::layers::{gru_cell, GruParams, Linear};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

pub const BOUNDARY: usize = 0;
pub const UNKNOWN_CHAR: usize = 1;

const INVENTORY_PARAM: &str = "charlm.inventory";

/// Character ↔ id map. Id 0 marks sentence boundaries, id 1 unknown
/// characters, the rest are the training characters in code-point order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharInventory {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharInventory {
    pub fn from_text<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Self {
        let set: BTreeSet<char> = lines.into_iter().flat_map(str::chars).collect();
        Self::from_chars(set.into_iter().collect())
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        CharInventory { chars, index }
    }

    /// Number of symbols including the boundary and unknown symbols.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNKNOWN_CHAR)
    }

    pub fn encode(&self, s: &str) -> Vec<usize> {
        s.chars().map(|c| self.id(c)).collect()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharLmConfig {
    pub hidden_units: usize,
    pub embedding_dim: usize,
}

impl Default for CharLmConfig {
    fn default() -> Self {
        CharLmConfig {
            hidden_units: 512,
            embedding_dim: 128,
        }
    }
}

impl CharLmConfig {
    pub fn num_params(&self, inventory: usize) -> usize {
        inventory * self.embedding_dim
            + GruParams::num_params(self.embedding_dim, self.hidden_units)
            + Linear::num_params(self.hidden_units, inventory, true)
    }
}

/// Character-level GRU language model.
#[derive(Clone, Debug)]
pub struct CharLm<T: Scalar> {
    config: CharLmConfig,
    inventory: CharInventory,
    store: ParamStore<T>,
    embed: ParamId,
    gru: GruParams,
    output: Linear,
}

impl<T: Scalar> CharLm<T> {
    pub fn new(config: CharLmConfig, inventory: CharInventory, seed: u64) -> Result<Self> {
        if config.hidden_units == 0 || config.embedding_dim == 0 {
            return Err(Error::InvalidArgument(
                "char LM dimensions must be positive".into(),
            ));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let codes = inventory
            .chars
            .iter()
            .map(|&c| T::of(c as u32 as f64))
            .collect();
        store.add_frozen(INVENTORY_PARAM, Tensor::row(codes))?;
        let n = inventory.len();
        let embed = store.add_init("charlm.embed", &[n, config.embedding_dim], rng)?;
        let gru = GruParams::new(
            &mut store,
            "charlm.gru",
            config.embedding_dim,
            config.hidden_units,
            rng,
        )?;
        let output = Linear::new(&mut store, "charlm.out", config.hidden_units, n, true, rng)?;
        Ok(CharLm {
            config,
            inventory,
            store,
            embed,
            gru,
            output,
        })
    }

    /// All trainable weights zero: every prediction is uniform.
    pub fn zeros(config: CharLmConfig, inventory: CharInventory) -> Result<Self> {
        let mut lm = Self::new(config, inventory, 0)?;
        let ids: Vec<ParamId> = lm
            .store
            .ids()
            .filter(|&id| lm.store.requires_grad(id))
            .collect();
        for id in ids {
            lm.store.get_mut(id).data_mut().fill(T::zero());
        }
        Ok(lm)
    }

    /// Rebuilds a model from a checkpoint written by [`CharLm::checkpoint`].
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let inv = checkpoint
            .get(INVENTORY_PARAM)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks `{INVENTORY_PARAM}`")))?;
        let chars = inv
            .values
            .iter()
            .map(|&x| char::from_u32(x as u32).filter(|_| x.fract() == 0.0 && x >= 0.0))
            .collect::<Option<Vec<char>>>()
            .ok_or_else(|| Error::Data("invalid character inventory".into()))?;
        let embed = checkpoint
            .get("charlm.embed")
            .ok_or_else(|| Error::Data("checkpoint lacks `charlm.embed`".into()))?;
        let gru_u = checkpoint
            .get("charlm.gru.u_z")
            .ok_or_else(|| Error::Data("checkpoint lacks `charlm.gru.u_z`".into()))?;
        let config = CharLmConfig {
            hidden_units: gru_u.shape[0],
            embedding_dim: embed.shape[1],
        };
        let mut lm = Self::new(config, CharInventory::from_chars(chars), 0)?;
        checkpoint.load_into(&mut lm.store)?;
        Ok(lm)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn config(&self) -> CharLmConfig {
        self.config
    }

    pub fn inventory(&self) -> &CharInventory {
        &self.inventory
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Mean log-probability per prediction, the closing boundary included.
    /// Returned as a `[1]` node so it can be differentiated.
    pub fn mean_log_prob(&self, g: &mut Graph<'_, T>, sentence: &str) -> Result<Var> {
        if sentence.is_empty() {
            return Err(Error::EmptyInput("char LM sentence"));
        }
        let mut inputs = vec![BOUNDARY];
        inputs.extend(self.inventory.encode(sentence));
        let mut targets = inputs[1..].to_vec();
        targets.push(BOUNDARY);
        let table = g.param(self.embed);
        let emb = g.gather_rows(table, &inputs)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.config.hidden_units]));
        let mut states = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let x = g.row(emb, t)?;
            h = gru_cell(g, x, h, &self.gru)?;
            states.push(h);
        }
        let hs = g.concat(&states, 0)?;
        let logits = self.output.forward(g, hs)?;
        let logp = g.log_softmax(logits, 1)?;
        let picked = g.pick(logp, &targets)?;
        Ok(g.mean(picked))
    }

    /// Length-normalised log-probability of `sentence`.
    pub fn score(&self, sentence: &str) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let v = self.mean_log_prob(&mut g, sentence)?;
        Ok(g.scalar_value(v).f64())
    }
}
