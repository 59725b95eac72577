//! Model assemblies: translation and captioning decoders, the character-level
//! language model, the caption-suitability classifier and the score regressor.

pub mod charlm;
pub mod classifier;
pub mod config;
pub mod regressor;
pub mod seq2seq;

pub use charlm::{CharInventory, CharLm, CharLmConfig};
pub use classifier::{ClassifierConfig, ClassifierExample, SuitabilityClassifier};
pub use config::{Modality, ModelConfig, Strategy};
pub use regressor::{
    RegressorArch, RegressorConfig, RegressorExample, ScoreRegressor, TargetMetric,
};
pub use seq2seq::{DecoderState, Seq2Seq, TranslationExample, TranslationInput};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Scalar, Var};

/// Anything that emits a token distribution one step at a time.
///
/// Graphs passed to `start` and `step` must be built over [`SequenceModel::store`].
pub trait SequenceModel<T: Scalar>: Sync {
    type Input: Sync;
    type State: Clone;

    fn store(&self) -> &ParamStore<T>;

    fn vocab_size(&self) -> usize;

    fn eos(&self) -> usize {
        crate::data::EOS
    }

    /// Encodes `input`; returns the initial decoder state and the first decoder input token.
    fn start(&self, g: &mut Graph<'_, T>, input: &Self::Input) -> Result<(Self::State, usize)>;

    /// One decoder transition. Returns `[1, V]` unnormalised scores and the next state.
    fn step(
        &self,
        g: &mut Graph<'_, T>,
        state: &Self::State,
        prev: usize,
    ) -> Result<(Var, Self::State)>;
}

/// Teacher-forced scores: row `t` is the distribution over `target[t]` given
/// the start token and `target[..t]`. Shape `[target.len(), V]`.
pub fn forward_logits<T: Scalar, M: SequenceModel<T>>(
    model: &M,
    g: &mut Graph<'_, T>,
    input: &M::Input,
    target: &[usize],
) -> Result<Var> {
    if target.is_empty() {
        return Err(Error::EmptyInput("target prefix"));
    }
    let v = model.vocab_size();
    if let Some(&id) = target.iter().find(|&&id| id >= v) {
        return Err(Error::TokenOutOfRange { id, size: v });
    }
    let (mut state, mut prev) = model.start(g, input)?;
    let mut rows = Vec::with_capacity(target.len());
    for &y in target {
        let (logits, next) = model.step(g, &state, prev)?;
        rows.push(logits);
        state = next;
        prev = y;
    }
    g.concat(&rows, 0)
}
