use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{xe_loss, Objective};
use crate::data::EOS;
use crate::decoding::{greedy, sample, Hypothesis};
use crate::error::{Error, Result};
use crate::metrics::{gleu, sentence_bleu};
use crate::models::{forward_logits, Seq2Seq, SequenceModel, TranslationExample};
use crate::tensor::{Graph, ParamStore, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reward {
    SentenceBleu,
    Gleu,
}

impl Reward {
    pub fn score(self, hyp: &[usize], reference: &[usize]) -> Result<f64> {
        let r = match self {
            Reward::SentenceBleu => sentence_bleu(hyp, reference),
            Reward::Gleu => gleu(hyp, reference),
        };
        if r.is_finite() {
            Ok(r)
        } else {
            Err(Error::Reward(format!("{self:?} returned {r}")))
        }
    }
}

impl FromStr for Reward {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu" => Ok(Reward::SentenceBleu),
            "gleu" => Ok(Reward::Gleu),
            other => Err(Error::InvalidArgument(format!(
                "unknown reward `{other}` (expected bleu or gleu)"
            ))),
        }
    }
}

/// Weight of the cross-entropy term as a function of the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// Linear from `from` at step 0 to `to` at `steps`, constant afterwards.
    Linear {
        from: f64,
        to: f64,
        steps: usize,
    },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        let valid = match *self {
            LambdaSchedule::Constant(l) => ok(l),
            LambdaSchedule::Linear { from, to, steps } => ok(from) && ok(to) && steps > 0,
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid mixing schedule {self:?}; λ must lie in [0, 1]"
            )))
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LambdaSchedule::Constant(l) => l,
            LambdaSchedule::Linear { from, to, steps } => {
                let t = (step.min(steps) as f64) / steps as f64;
                from + (to - from) * t
            }
        }
    }
}

/// `0.3` or `linear:<from>:<to>:<steps>`.
impl FromStr for LambdaSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad λ schedule `{s}`"));
        let sched = if let Some(rest) = s.strip_prefix("linear:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let [from, to, steps] = parts[..] else {
                return Err(bad());
            };
            LambdaSchedule::Linear {
                from: from.parse().map_err(|_| bad())?,
                to: to.parse().map_err(|_| bad())?,
                steps: steps.parse().map_err(|_| bad())?,
            }
        } else {
            LambdaSchedule::Constant(s.parse().map_err(|_| bad())?)
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScstConfig {
    pub reward: Reward,
    pub lambda: LambdaSchedule,
    pub temperature: f64,
    pub max_len: usize,
}

impl Default for ScstConfig {
    fn default() -> Self {
        ScstConfig {
            reward: Reward::SentenceBleu,
            lambda: LambdaSchedule::Constant(0.5),
            temperature: 1.0,
            max_len: 50,
        }
    }
}

/// The pieces of one self-critical loss evaluation.
#[derive(Clone, Debug)]
pub struct ScstTerms {
    pub loss: Var,
    pub xe: Var,
    /// Absent when λ = 1.
    pub reinforce: Option<Var>,
    pub sampled: Hypothesis,
    pub greedy: Hypothesis,
    pub sample_reward: f64,
    pub greedy_reward: f64,
}

impl ScstTerms {
    pub fn advantage(&self) -> f64 {
        self.sample_reward - self.greedy_reward
    }
}

fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.split_last() {
        Some((&EOS, body)) => body,
        _ => tokens,
    }
}

/// `λ · XE(target) + (1 − λ) · −(r(ŷˢ) − r(ŷᵍ)) · Σ_t log p(ŷˢ_t)`, with ŷˢ
/// sampled and ŷᵍ greedy-decoded from the current model.
pub fn scst_loss<T: Scalar, M: SequenceModel<T>, R: Rng>(
    model: &M,
    g: &mut Graph<'_, T>,
    input: &M::Input,
    target: &[usize],
    cfg: &ScstConfig,
    lambda: f64,
    rng: &mut R,
) -> Result<ScstTerms> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "λ must lie in [0, 1], got {lambda}"
        )));
    }
    let logits = forward_logits(model, g, input, target)?;
    let xe = xe_loss(g, logits, target)?;
    let sampled = sample(model, input, cfg.max_len, cfg.temperature, rng)?;
    let greedy = greedy(model, input, cfg.max_len)?;
    let reference = strip_eos(target);
    let sample_reward = cfg.reward.score(sampled.output(), reference)?;
    let greedy_reward = cfg.reward.score(greedy.output(), reference)?;
    if lambda == 1.0 {
        return Ok(ScstTerms {
            loss: xe,
            xe,
            reinforce: None,
            sampled,
            greedy,
            sample_reward,
            greedy_reward,
        });
    }
    let ys = &sampled.tokens[1..];
    let s_logits = forward_logits(model, g, input, ys)?;
    let logp = g.log_softmax(s_logits, 1)?;
    let picked = g.pick(logp, ys)?;
    let total = g.sum(picked);
    let reinforce = g.scale(total, T::of(-(sample_reward - greedy_reward)));
    let loss = if lambda == 0.0 {
        reinforce
    } else {
        let a = g.scale(xe, T::of(lambda));
        let b = g.scale(reinforce, T::of(1.0 - lambda));
        g.add(a, b)?
    };
    Ok(ScstTerms {
        loss,
        xe,
        reinforce: Some(reinforce),
        sampled,
        greedy,
        sample_reward,
        greedy_reward,
    })
}

/// Self-critical fine-tuning of a translation model.
#[derive(Clone, Debug)]
pub struct ScstObjective<T: Scalar> {
    pub model: Seq2Seq<T>,
    pub config: ScstConfig,
    step: usize,
}

impl<T: Scalar> ScstObjective<T> {
    pub fn new(model: Seq2Seq<T>, config: ScstConfig) -> Result<Self> {
        config.lambda.validate()?;
        Ok(ScstObjective {
            model,
            config,
            step: 0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda.at(self.step)
    }
}

impl<T: Scalar> Objective<T> for ScstObjective<T> {
    type Example = TranslationExample<T>;

    fn store(&self) -> &ParamStore<T> {
        self.model.store()
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.model.store_mut()
    }

    fn loss(&self, g: &mut Graph<'_, T>, ex: &TranslationExample<T>, seed: u64) -> Result<Var> {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let terms = scst_loss(
            &self.model,
            g,
            &ex.input,
            &ex.target,
            &self.config,
            self.lambda(),
            rng,
        )?;
        Ok(terms.loss)
    }

    fn on_step(&mut self, step: usize) {
        self.step = step;
    }

    fn example_len(&self, ex: &TranslationExample<T>) -> usize {
        ex.target.len()
    }
}
