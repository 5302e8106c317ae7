//! Compact vision-language transformer over motion images and questions.

mod checkpoint;
mod params;
mod tensor;
mod tokenizer;
mod transformer;

use thiserror::Error;

use crate::labels::{TargetVector, Vocabulary};
use crate::motion_image::MotionImage;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use params::{LayerParams, ModelConfig, Parameters};
pub use tensor::Tensor;
pub use tokenizer::{tokenize, words_of, Lexicon, TokenSequence, PAD_ID, START_ID, UNK_ID};
pub use transformer::{backward_from_cache, forward_with_cache, ForwardCache, PatchGrid};

/// Detection confidence threshold.
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Model {
    /// Freshly initialized model (seeded by `config.seed`).
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.check()?;
        let params = Parameters::init(&config);
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Self, ModelError> {
        config.check()?;
        params.check_shapes(&config)?;
        Ok(Model { config, params })
    }

    pub fn patches(&self, image: &MotionImage) -> Result<PatchGrid, ModelError> {
        PatchGrid::from_image(image, &self.config)
    }

    pub fn forward(&self, patches: &PatchGrid, tokens: &TokenSequence) -> Result<Vec<f64>, ModelError> {
        Ok(forward_with_cache(&self.config, &self.params, patches, tokens)?.logits)
    }

    pub fn forward_image(&self, image: &MotionImage, tokens: &TokenSequence) -> Result<Vec<f64>, ModelError> {
        self.forward(&self.patches(image)?, tokens)
    }

    /// Loss of one sample; its parameter gradient is added into `grads`.
    /// Returns the loss and the logits.
    pub fn accumulate_gradients(
        &self,
        patches: &PatchGrid,
        tokens: &TokenSequence,
        target: &TargetVector,
        grads: &mut Parameters,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let cache = forward_with_cache(&self.config, &self.params, patches, tokens)?;
        let (value, dlogits) = loss_and_grad(&cache.logits, target)?;
        if dlogits.iter().any(|&g| g != 0.0) {
            backward_from_cache(&self.config, &self.params, patches, tokens, &cache, &dlogits, grads);
        }
        Ok((value, cache.logits))
    }

    /// Exact gradient of the loss of one sample with respect to every parameter.
    pub fn backward(
        &self,
        image: &MotionImage,
        tokens: &TokenSequence,
        target: &TargetVector,
    ) -> Result<Parameters, ModelError> {
        let mut grads = Parameters::zeros(&self.config);
        self.accumulate_gradients(&self.patches(image)?, tokens, target, &mut grads)?;
        Ok(grads)
    }
}

/// `log softmax(z)` with the max-shift stabilization.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Weighted cross-entropy `-sum_j y_j log softmax(z)_j`.
pub fn loss(logits: &[f64], target: &TargetVector) -> Result<f64, ModelError> {
    loss_and_grad(logits, target).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the logits, `(sum y) softmax(z) - y`.
pub fn loss_and_grad(logits: &[f64], target: &TargetVector) -> Result<(f64, Vec<f64>), ModelError> {
    if logits.len() != target.values.len() {
        return Err(ModelError::Config(format!(
            "{} logits for a target of {} classes",
            logits.len(),
            target.values.len()
        )));
    }
    let total = target.total();
    if total == 0.0 {
        log::warn!("all-zero target; loss and gradient are zero");
        return Ok((0.0, vec![0.0; logits.len()]));
    }
    let logp = log_softmax(logits);
    let value = -target.values.iter().zip(&logp).map(|(y, lp)| if *y == 0.0 { 0.0 } else { y * lp }).sum::<f64>();
    let grad = logp.iter().zip(&target.values).map(|(lp, y)| total * lp.exp() - y).collect();
    Ok((value, grad))
}

/// Softmax probabilities over the vocabulary classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    pub probs: Vec<f64>,
}

impl PredictionDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        PredictionDistribution { probs: softmax(logits) }
    }

    /// Index of the most probable class; the lowest index wins ties.
    pub fn top_class(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Classes with probability at least `tau`, most confident first.
pub fn predict_detection(dist: &PredictionDistribution, vocab: &Vocabulary, tau: f64) -> Vec<(String, f64)> {
    let mut out: Vec<(usize, f64)> =
        dist.probs.iter().copied().enumerate().filter(|&(_, p)| p >= tau).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.into_iter().map(|(i, p)| (vocab.class(i).to_string(), p)).collect()
}

/// Most probable integer class; ties go to the smaller integer.
pub fn predict_count(dist: &PredictionDistribution, vocab: &Vocabulary) -> u32 {
    let mut best: Option<(u32, f64)> = None;
    for idx in vocab.count_indices() {
        let p = dist.probs[idx];
        let n = vocab.count_value(idx).expect("count index");
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((n, p));
        }
    }
    best.map(|(n, _)| n).unwrap_or(1)
}

/// Argmax over all classes; `None` when the winner is a word class.
pub fn predict_count_unrestricted(dist: &PredictionDistribution, vocab: &Vocabulary) -> Option<u32> {
    vocab.count_value(dist.top_class())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{build_vocabulary, CategoryTable, Label};

    fn vocab() -> Vocabulary {
        let labels = [
            Label { words: vec!["slow".into(), "squat".into()] },
            Label { words: vec!["lunge".into()] },
        ];
        build_vocabulary(&labels, &CategoryTable::default())
    }

    fn dist_with(v: &Vocabulary, entries: &[(&str, f64)]) -> PredictionDistribution {
        let mut probs = vec![0.0; v.len()];
        let used: f64 = entries.iter().map(|e| e.1).sum();
        let rest = (1.0 - used) / (v.len() - entries.len()) as f64;
        probs.iter_mut().for_each(|p| *p = rest);
        for (c, p) in entries {
            probs[v.index_of(c).unwrap()] = *p;
        }
        PredictionDistribution { probs }
    }

    #[test]
    fn uniform_logits_loss_is_log_classes() {
        let mut values = vec![0.0; 471];
        values[3] = 1.0;
        let l = loss(&vec![0.25; 471], &TargetVector { values }).unwrap();
        assert!((l - (471f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logit_drives_loss_to_zero() {
        let target = TargetVector { values: vec![1.0, 0.0, 0.0] };
        let l = loss(&[80.0, 0.0, 0.0], &target).unwrap();
        assert!(l < 1e-30);
    }

    #[test]
    fn zero_target_has_zero_loss_and_gradient() {
        let (l, g) = loss_and_grad(&[1.0, 2.0], &TargetVector { values: vec![0.0, 0.0] }).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [1.0, -3.0, 0.5, 7.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 1000.0).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn detection_threshold() {
        let v = vocab();
        let d = dist_with(&v, &[("squat", 0.6), ("slow", 0.07)]);
        let words: Vec<String> = predict_detection(&d, &v, 0.05).into_iter().map(|w| w.0).collect();
        assert_eq!(words, ["squat", "slow"]);
        assert_eq!(predict_detection(&d, &v, 0.0).len(), v.len());
    }

    #[test]
    fn uniform_distribution_predicts_nothing() {
        let d = PredictionDistribution { probs: vec![1.0 / 471.0; 471] };
        let labels: Vec<Label> = (0..441).map(|i| Label { words: vec![format!("w{i}")] }).collect();
        let v = build_vocabulary(&labels, &CategoryTable::default());
        assert_eq!(v.len(), 471);
        assert!(predict_detection(&d, &v, 0.05).is_empty());
    }

    #[test]
    fn count_prediction() {
        let v = vocab();
        assert_eq!(predict_count(&dist_with(&v, &[("7", 0.4)]), &v), 7);
        assert_eq!(predict_count(&dist_with(&v, &[("5", 0.3), ("6", 0.3)]), &v), 5);
        let d = dist_with(&v, &[("squat", 0.9), ("10", 0.05)]);
        assert_eq!(predict_count(&d, &v), 10);
        assert_eq!(predict_count_unrestricted(&d, &v), None);
    }
}
