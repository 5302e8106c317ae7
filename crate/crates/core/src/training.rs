//! Dataset splitting, mixed-task batching, Adam with early stopping, and the
//! epoch loop.

use std::ops::ControlFlow;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{ManifestRecord, QASample, Split, Task};
use crate::model::{Model, ModelError, Parameters, PatchGrid, TokenSequence};

/// Per-batch gradients are reduced over this many fixed chunks regardless of
/// the thread count, so results do not depend on parallelism.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("non-finite {what} in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, what: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience: 5,
            max_epochs: 200,
            split_fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1");
        }
        Ok(())
    }
}

/// Assigns every video to train/val/test. Counts are `round(f * n)` for
/// train and val, the remainder goes to test.
pub fn split_dataset(
    videos: &[ManifestRecord],
    fractions: [f64; 3],
    seed: u64,
) -> Result<Vec<ManifestRecord>, TrainError> {
    if videos.len() < 10 {
        return Err(TrainError::Data(format!("need at least 10 videos to split, got {}", videos.len())));
    }
    let n = videos.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut out = videos.to_vec();
    for (rank, &i) in order.iter().enumerate() {
        out[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Shuffled batches of sample indices in which every full batch holds both
/// tasks whenever the data allows it.
pub fn make_batches(tasks: &[Task], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut det: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i] == Task::Detection).collect();
    let mut cnt: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i] == Task::Counting).collect();
    det.shuffle(&mut rng);
    cnt.shuffle(&mut rng);
    let (nd, nc) = (det.len(), cnt.len());

    // Proportional interleave keeps the task mix even across the epoch.
    let mut order = Vec::with_capacity(tasks.len());
    let (mut i, mut j) = (0, 0);
    while i < nd || j < nc {
        if j >= nc || (i < nd && i * nc <= j * nd) {
            order.push(det[i]);
            i += 1;
        } else {
            order.push(cnt[j]);
            j += 1;
        }
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();

    if batch_size < 2 || nd == 0 || nc == 0 {
        if !tasks.is_empty() {
            log::warn!("mixed-task batches impossible (batch size {batch_size}, {nd} detection, {nc} counting)");
        }
        return batches;
    }
    for task in [Task::Detection, Task::Counting] {
        for b in 0..batches.len() {
            if batches[b].len() < batch_size || batches[b].iter().any(|&s| tasks[s] == task) {
                continue;
            }
            let donor = (0..batches.len())
                .find(|&c| c != b && batches[c].iter().filter(|&&s| tasks[s] == task).count() >= 2);
            match donor {
                Some(c) => {
                    let from = batches[c].iter().position(|&s| tasks[s] == task).expect("donor holds task");
                    let taken = batches[c][from];
                    batches[c][from] = batches[b][0];
                    batches[b][0] = taken;
                }
                None => log::warn!("not enough {task} samples to place one in every batch"),
            }
        }
    }
    batches
}

/// Parameters plus Adam moments and the early-stopping bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Parameters,
    pub m: Parameters,
    pub v: Parameters,
    pub step: u64,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(params: Parameters) -> Self {
        let m = zeros_like(&params);
        TrainState {
            v: m.clone(),
            m,
            params,
            step: 0,
            epoch: 0,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    /// Records a validation loss; returns true when it is a new best.
    pub fn record_validation(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.epochs_since_improvement >= patience
    }
}

fn zeros_like(p: &Parameters) -> Parameters {
    let mut z = p.clone();
    z.zero_();
    z
}

/// One bias-corrected Adam update. Non-finite gradients abort before any
/// parameter changes.
pub fn adam_step(state: &mut TrainState, grads: &Parameters, cfg: &TrainConfig) -> Result<(), TrainError> {
    if let Some(name) = grads.first_non_finite() {
        return Err(TrainError::Diverged {
            epoch: state.epoch + 1,
            what: "gradient".into(),
            detail: format!("tensor {name}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let g_all = grads.named();
    let m_all = state.m.named_mut();
    let v_all = state.v.named_mut();
    let p_all = state.params.named_mut();
    for (((p, m), v), g) in p_all.into_iter().zip(m_all).zip(v_all).zip(g_all) {
        for k in 0..p.1.data.len() {
            let gk = g.1.data[k];
            let mk = b1 * m.1.data[k] + (1.0 - b1) * gk;
            let vk = b2 * v.1.data[k] + (1.0 - b2) * gk * gk;
            m.1.data[k] = mk;
            v.1.data[k] = vk;
            p.1.data[k] -= cfg.learning_rate * (mk / c1) / ((vk / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// One QA sample ready for the model.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub video_id: String,
    pub patches: Arc<PatchGrid>,
    pub tokens: TokenSequence,
    pub qa: QASample,
}

impl TrainingSample {
    pub fn task(&self) -> Task {
        self.qa.task
    }
}

/// Mean loss of `model` over `samples` with an order-fixed reduction.
pub fn mean_loss(model: &Model, samples: &[TrainingSample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses = samples
        .par_iter()
        .map(|s| {
            let logits = model.forward(&s.patches, &s.tokens)?;
            crate::model::loss(&logits, &s.qa.target)
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Summed loss and summed gradient over one batch.
fn batch_gradient(model: &Model, samples: &[TrainingSample], batch: &[usize]) -> Result<(f64, Parameters), TrainError> {
    let chunk = batch.len().div_ceil(GRAD_CHUNKS).max(1);
    let partials = batch
        .par_chunks(chunk)
        .map(|idx| {
            let mut g = Parameters::zeros(&model.config);
            let mut loss = 0.0;
            for &i in idx {
                let s = &samples[i];
                loss += model.accumulate_gradients(&s.patches, &s.tokens, &s.qa.target, &mut g)?.0;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let mut parts = partials.into_iter();
    let (mut loss, mut grads) = parts.next().expect("batch is nonempty");
    for (l, g) in parts {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Observer,
}

/// Passed to the per-epoch observer after validation.
pub struct EpochReport<'a> {
    pub stats: EpochStats,
    pub model: &'a Model,
    pub is_best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters after the last completed epoch.
    pub last: Model,
    pub history: Vec<EpochStats>,
    pub stop_reason: StopReason,
}

/// Writes the history as `epoch,train_loss,val_loss` CSV text.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for s in history {
        out.push_str(&format!("{},{:.17e},{:.17e}\n", s.epoch, s.train_loss, s.val_loss));
    }
    out
}

/// Trains `model` in place of a copy. When `val` is empty the training loss
/// is monitored instead.
pub fn train(
    model: Model,
    train_set: &[TrainingSample],
    val: &[TrainingSample],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochReport<'_>) -> ControlFlow<()>,
) -> Result<TrainOutcome, TrainError> {
    cfg.check()?;
    if train_set.is_empty() {
        return Err(TrainError::Data("training split is empty".into()));
    }
    if val.is_empty() {
        log::warn!("validation split is empty; early stopping monitors the training loss");
    }
    let tasks: Vec<Task> = train_set.iter().map(TrainingSample::task).collect();
    let config = model.config.clone();
    let mut state = TrainState::new(model.params);
    let mut current = Model { config: config.clone(), params: Parameters::zeros(&config) };
    let mut best = None;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let mut epoch_loss = 0.0;
        for batch in make_batches(&tasks, cfg.batch_size, cfg.seed, epoch) {
            std::mem::swap(&mut current.params, &mut state.params);
            let result = batch_gradient(&current, train_set, &batch);
            std::mem::swap(&mut current.params, &mut state.params);
            let (loss, mut grads) = result?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, what: "training loss".into(), detail: format!("{loss}") });
            }
            epoch_loss += loss;
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut state, &grads, cfg)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        current.params.clone_from(&state.params);
        let val_loss = if val.is_empty() { mean_loss(&current, train_set)? } else { mean_loss(&current, val)? };
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, what: "validation loss".into(), detail: format!("{val_loss}") });
        }
        let is_best = state.record_validation(val_loss);
        if is_best {
            best = Some(state.params.clone());
            best_epoch = epoch;
        }
        let stats = EpochStats { epoch, train_loss, val_loss };
        history.push(stats);
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}{}", if is_best { " *" } else { "" });

        if observer(&EpochReport { stats, model: &current, is_best }).is_break() {
            stop_reason = StopReason::Observer;
            break;
        }
        if state.should_stop(cfg.patience) {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }

    Ok(TrainOutcome {
        best: Model { config: config.clone(), params: best.expect("at least one epoch ran") },
        best_epoch,
        best_val_loss: state.best_val_loss,
        last: current,
        history,
        stop_reason,
    })
}
