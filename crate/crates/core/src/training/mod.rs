//! Losses, optimisation and the training loop.

pub mod loss;
pub mod optim;
pub mod scst;
pub mod trainer;

pub use loss::xe_loss;
pub use optim::{Adam, AdamConfig};
pub use scst::{scst_loss, LambdaSchedule, Reward, ScstConfig, ScstObjective, ScstTerms};
pub use trainer::{train, EarlyStop, EvalRecord, StopVerdict, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{
    forward_logits, CharLm, ClassifierExample, RegressorExample, ScoreRegressor, Seq2Seq,
    SuitabilityClassifier, TranslationExample,
};
use crate::tensor::{GradientMap, Graph, ParamStore, Scalar, Var};

/// A model together with a per-example differentiable loss.
pub trait Objective<T: Scalar>: Sync {
    type Example: Sync;

    fn store(&self) -> &ParamStore<T>;

    fn store_mut(&mut self) -> &mut ParamStore<T>;

    /// Scalar loss of one example. `seed` is a per-(step, example) value for
    /// objectives that sample.
    fn loss(&self, g: &mut Graph<'_, T>, example: &Self::Example, seed: u64) -> Result<Var>;

    /// Called with the 1-based step number before each update.
    fn on_step(&mut self, _step: usize) {}

    /// Length used for bucketing.
    fn example_len(&self, _example: &Self::Example) -> usize {
        1
    }
}

/// Mean loss and mean gradient over `batch`. Per-example work may run in
/// parallel; the reduction is sequential in batch order.
pub fn batch_gradient<T: Scalar, O: Objective<T>>(
    objective: &O,
    batch: &[&O::Example],
    seeds: &[u64],
    exec: Execution,
) -> Result<(f64, GradientMap<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    debug_assert_eq!(batch.len(), seeds.len());
    let parts = exec.try_map(batch, |i, ex| {
        let mut g = Graph::new(objective.store());
        let l = objective.loss(&mut g, ex, seeds[i])?;
        let value = g.scalar_value(l).f64();
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        Ok((value, g.backward(l)?))
    })?;
    let mut total = 0.0;
    let mut grads = GradientMap::zeros_for(Some(objective.store()));
    for (value, g) in &parts {
        total += value;
        grads.add_assign(g);
    }
    let n = batch.len() as f64;
    grads.scale(T::of(1.0 / n));
    Ok((total / n, grads))
}

impl<T: Scalar> Objective<T> for Seq2Seq<T> {
    type Example = TranslationExample<T>;

    fn store(&self) -> &ParamStore<T> {
        Seq2Seq::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        Seq2Seq::store_mut(self)
    }

    fn loss(&self, g: &mut Graph<'_, T>, ex: &TranslationExample<T>, _seed: u64) -> Result<Var> {
        let logits = forward_logits(self, g, &ex.input, &ex.target)?;
        xe_loss(g, logits, &ex.target)
    }

    fn example_len(&self, ex: &TranslationExample<T>) -> usize {
        ex.target.len()
    }
}

impl<T: Scalar> Objective<T> for CharLm<T> {
    type Example = String;

    fn store(&self) -> &ParamStore<T> {
        CharLm::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        CharLm::store_mut(self)
    }

    fn loss(&self, g: &mut Graph<'_, T>, sentence: &String, _seed: u64) -> Result<Var> {
        let lp = self.mean_log_prob(g, sentence)?;
        Ok(g.scale(lp, -T::one()))
    }

    fn example_len(&self, sentence: &String) -> usize {
        sentence.chars().count()
    }
}

impl<T: Scalar> Objective<T> for SuitabilityClassifier<T> {
    type Example = ClassifierExample<T>;

    fn store(&self) -> &ParamStore<T> {
        SuitabilityClassifier::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        SuitabilityClassifier::store_mut(self)
    }

    fn loss(&self, g: &mut Graph<'_, T>, ex: &ClassifierExample<T>, _seed: u64) -> Result<Var> {
        SuitabilityClassifier::loss(self, g, ex)
    }

    fn example_len(&self, ex: &ClassifierExample<T>) -> usize {
        ex.tokens.len()
    }
}

impl<T: Scalar> Objective<T> for ScoreRegressor<T> {
    type Example = RegressorExample<T>;

    fn store(&self) -> &ParamStore<T> {
        ScoreRegressor::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        ScoreRegressor::store_mut(self)
    }

    fn loss(&self, g: &mut Graph<'_, T>, ex: &RegressorExample<T>, _seed: u64) -> Result<Var> {
        ScoreRegressor::loss(self, g, ex)
    }

    fn example_len(&self, ex: &RegressorExample<T>) -> usize {
        ex.hypothesis.len()
    }
}
