use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_gradient, Adam, AdamConfig, Objective};
use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::tensor::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience-based stopping on a validation score (higher is better).
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub best: f64,
    pub best_step: usize,
    pub since_improvement: usize,
    /// Where the best checkpoint is written, if anywhere.
    pub best_path: Option<PathBuf>,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: f64::NEG_INFINITY,
            best_step: 0,
            since_improvement: 0,
            best_path: None,
        }
    }

    pub fn observe(&mut self, step: usize, score: f64) -> StopVerdict {
        if score > self.best {
            self.best = score;
            self.best_step = step;
            self.since_improvement = 0;
            StopVerdict::Improved
        } else {
            self.since_improvement += 1;
            if self.since_improvement > self.patience {
                StopVerdict::Stop
            } else {
                StopVerdict::NoImprovement
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    /// Evaluate every this many steps; 0 means once per epoch.
    pub eval_every: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop as soon as the validation score reaches this value.
    pub target_score: Option<f64>,
    pub best_path: Option<PathBuf>,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_steps: 100_000,
            eval_every: 1000,
            patience: 5,
            clip_norm: 1.0,
            seed: 1,
            adam: AdamConfig::default(),
            target_score: None,
            best_path: None,
            exec: Execution::default(),
        }
    }
}

/// One validation event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean training loss since the previous evaluation.
    pub xe: f64,
    pub score: f64,
    pub best: f64,
}

impl EvalRecord {
    pub fn log_line(&self) -> String {
        format!(
            "step={} xe={:.6} bleu={:.6} best={:.6}",
            self.step, self.xe, self.score, self.best
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_score: f64,
    pub best_step: usize,
    pub steps: usize,
    pub history: Vec<EvalRecord>,
    /// Set when validation failed; the best state seen before the failure is kept.
    pub aborted: Option<String>,
}

fn example_seed(seed: u64, step: usize, index: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Length-bucketed batches in a seeded random order.
fn epoch_batches<T: Scalar, O: Objective<T>>(
    objective: &O,
    examples: &[O::Example],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| objective.example_len(&examples[i]));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Trains with Adam and global-norm clipping, evaluating `eval` on a schedule.
///
/// On return the objective holds the parameters of the best evaluation.
pub fn train<T, O, F>(
    objective: &mut O,
    examples: &[O::Example],
    cfg: &TrainConfig,
    mut eval: F,
) -> Result<TrainOutcome>
where
    T: Scalar,
    O: Objective<T>,
    F: FnMut(&O) -> Result<f64>,
{
    if examples.is_empty() {
        return Err(Error::EmptyInput("training examples"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut stop = EarlyStop::new(cfg.patience);
    stop.best_path = cfg.best_path.clone();
    let mut best_store: ParamStore<T> = objective.store().clone();
    let mut history = Vec::new();
    let mut aborted = None;
    let (mut step, mut loss_sum, mut loss_count) = (0usize, 0.0, 0usize);
    'outer: while step < cfg.max_steps {
        let batches = epoch_batches(objective, examples, cfg.batch_size, &mut rng);
        let n_batches = batches.len();
        for (b, batch) in batches.into_iter().enumerate() {
            step += 1;
            objective.on_step(step);
            let refs: Vec<&O::Example> = batch.iter().map(|&i| &examples[i]).collect();
            let seeds: Vec<u64> = batch
                .iter()
                .map(|&i| example_seed(cfg.seed, step, i))
                .collect();
            let (loss, mut grads) = batch_gradient(objective, &refs, &seeds, cfg.exec)?;
            grads.clip_global_norm(T::of(cfg.clip_norm));
            adam.step(objective.store_mut(), &grads)?;
            loss_sum += loss;
            loss_count += 1;
            let due = if cfg.eval_every == 0 {
                b + 1 == n_batches
            } else {
                step % cfg.eval_every == 0
            };
            if !(due || step == cfg.max_steps) {
                continue;
            }
            let score = match eval(objective) {
                Ok(s) if s.is_finite() => s,
                Ok(s) => {
                    aborted = Some(format!("validation returned {s} at step {step}"));
                    break 'outer;
                }
                Err(e) => {
                    aborted = Some(format!("validation failed at step {step}: {e}"));
                    break 'outer;
                }
            };
            let verdict = stop.observe(step, score);
            if verdict == StopVerdict::Improved {
                best_store = objective.store().clone();
                if let Some(path) = &stop.best_path {
                    Checkpoint::from_store(&best_store).write(path)?;
                }
            }
            let record = EvalRecord {
                step,
                xe: loss_sum / loss_count as f64,
                score,
                best: stop.best,
            };
            log::info!("{}", record.log_line());
            history.push(record);
            loss_sum = 0.0;
            loss_count = 0;
            if verdict == StopVerdict::Stop
                || cfg.target_score.is_some_and(|t| score >= t)
                || step >= cfg.max_steps
            {
                break 'outer;
            }
        }
    }
    if let Some(msg) = &aborted {
        log::warn!("{msg}; keeping the best checkpoint so far");
    }
    *objective.store_mut() = best_store;
    Ok(TrainOutcome {
        best: Checkpoint::from_store(objective.store()),
        best_score: stop.best,
        best_step: stop.best_step,
        steps: step,
        history,
        aborted,
    })
}
