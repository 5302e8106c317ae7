//! Off-by-one accuracy, MAE, partial-credit detection accuracy and the
//! breakdown tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{GroundTruth, Label, Task, Vocabulary};
use crate::model::{predict_count, predict_detection, Model, ModelError, PredictionDistribution};
use crate::training::TrainingSample;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {gt} ground truths, {pred} predictions")]
    Length { gt: usize, pred: usize },
    #[error("no records to score")]
    Empty,
    #[error("record {0} has a distribution of the wrong size")]
    Distribution(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("plot error: {0}")]
    Plot(#[from] image::ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_lengths(gt: &[u32], pred: &[u32]) -> Result<(), MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::Length { gt: gt.len(), pred: pred.len() });
    }
    if gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Fraction of pairs with `|gt - pred| <= 1`.
pub fn obo(gt: &[u32], pred: &[u32]) -> Result<f64, MetricsError> {
    check_lengths(gt, pred)?;
    let hits = gt.iter().zip(pred).filter(|(g, p)| g.abs_diff(**p) <= 1).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Mean absolute count error.
pub fn mae(gt: &[u32], pred: &[u32]) -> Result<f64, MetricsError> {
    check_lengths(gt, pred)?;
    let total: u64 = gt.iter().zip(pred).map(|(g, p)| g.abs_diff(*p) as u64).sum();
    Ok(total as f64 / gt.len() as f64)
}

/// `|P ∩ G| / |G|` over distinct words; extra predicted words are not penalized.
pub fn partial_credit_sets(predicted: &BTreeSet<String>, gt: &Label) -> f64 {
    let g: BTreeSet<&str> = gt.unique_words().into_iter().collect();
    if g.is_empty() {
        return 0.0;
    }
    g.iter().filter(|w| predicted.contains(**w)).count() as f64 / g.len() as f64
}

/// Partial credit of the classes with probability at least `tau`.
pub fn partial_credit(dist: &PredictionDistribution, gt: &Label, vocab: &Vocabulary, tau: f64) -> f64 {
    partial_credit_sets(&predicted_set(dist, vocab, tau), gt)
}

pub fn predicted_set(dist: &PredictionDistribution, vocab: &Vocabulary, tau: f64) -> BTreeSet<String> {
    predict_detection(dist, vocab, tau).into_iter().map(|(w, _)| w).collect()
}

/// Word-level F1 between prediction and label. A diagnostic only: unlike
/// partial credit it penalizes spurious words.
pub fn f1_diagnostic(predicted: &BTreeSet<String>, gt: &Label) -> f64 {
    let g: BTreeSet<&str> = gt.unique_words().into_iter().collect();
    let hits = g.iter().filter(|w| predicted.contains(**w)).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / predicted.len() as f64;
    let recall = hits / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Whole-label string match, 1.0 or 0.0.
pub fn exact_match(pred_label: &str, gt_label: &str) -> f64 {
    if pred_label == gt_label {
        1.0
    } else {
        0.0
    }
}

/// Mean that does not depend on the order of `values`.
fn order_free_mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// The model's answer to one QA sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub video_id: String,
    pub task: Task,
    pub question: String,
    pub ground_truth: GroundTruth,
    /// Softmax probabilities in vocabulary order.
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_words: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_count: Option<u32>,
    /// Unrestricted top-1 class.
    pub top_class: String,
}

impl EvalRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sample_id: String,
        video_id: String,
        task: Task,
        question: String,
        ground_truth: GroundTruth,
        dist: PredictionDistribution,
        vocab: &Vocabulary,
        tau: f64,
    ) -> Self {
        let top_class = vocab.class(dist.top_class()).to_string();
        let mut r = EvalRecord {
            sample_id,
            video_id,
            task,
            question,
            ground_truth,
            probs: dist.probs,
            predicted_words: None,
            predicted_count: None,
            top_class,
        };
        r.rescore(vocab, tau);
        r
    }

    /// Recomputes the prediction for this task at threshold `tau`.
    pub fn rescore(&mut self, vocab: &Vocabulary, tau: f64) {
        let dist = PredictionDistribution { probs: self.probs.clone() };
        match self.task {
            Task::Detection => {
                self.predicted_words = Some(predicted_set(&dist, vocab, tau).into_iter().collect());
                self.predicted_count = None;
            }
            Task::Counting => {
                self.predicted_count = Some(predict_count(&dist, vocab));
                self.predicted_words = None;
            }
        }
    }

    /// Whether the unrestricted top-1 class has the kind the question asks for.
    pub fn task_consistent(&self, vocab: &Vocabulary) -> bool {
        let is_integer = vocab.index_of(&self.top_class).and_then(|i| vocab.count_value(i)).is_some();
        is_integer == (self.task == Task::Counting)
    }
}

/// Runs the model on every sample (in parallel, output in input order).
pub fn evaluate(
    model: &Model,
    samples: &[TrainingSample],
    vocab: &Vocabulary,
    tau: f64,
) -> Result<Vec<EvalRecord>, MetricsError> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let logits = model.forward(&s.patches, &s.tokens)?;
            Ok(EvalRecord::new(
                format!("{}#{i}", s.video_id),
                s.video_id.clone(),
                s.qa.task,
                s.qa.question.clone(),
                s.qa.ground_truth.clone(),
                PredictionDistribution::from_logits(&logits),
                vocab,
                tau,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub words: usize,
    pub samples: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub count: u32,
    pub samples: usize,
    pub obo: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau: f64,
    pub num_records: usize,
    pub num_detection: usize,
    pub num_counting: usize,
    /// Mean partial credit; absent without detection records.
    pub detection_accuracy: Option<f64>,
    /// Word-level F1 diagnostic (penalizes extra words).
    pub detection_f1: Option<f64>,
    pub obo: Option<f64>,
    pub mae: Option<f64>,
    /// Fraction of records whose unrestricted top-1 class matches the task kind.
    pub task_consistency: f64,
    pub accuracy_by_label_length: Vec<LengthRow>,
    /// Rows: ground-truth label length 1..=max; columns: predicted set size 0..=max.
    pub word_count_confusion: Vec<Vec<usize>>,
    pub per_count: Vec<CountRow>,
}

/// Aggregates records; the result does not depend on record order.
pub fn build_report(records: &[EvalRecord], vocab: &Vocabulary, tau: f64) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut credits = Vec::new();
    let mut f1s = Vec::new();
    let mut by_len: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut sizes: Vec<(usize, usize)> = Vec::new();
    let mut gt_counts = Vec::new();
    let mut pred_counts = Vec::new();
    let mut consistent = 0usize;

    for r in records {
        if r.probs.len() != vocab.len() {
            return Err(MetricsError::Distribution(r.sample_id.clone()));
        }
        if r.task_consistent(vocab) {
            consistent += 1;
        }
        match (&r.ground_truth, r.task) {
            (GroundTruth::Label(label), Task::Detection) => {
                let predicted: BTreeSet<String> = match &r.predicted_words {
                    Some(w) => w.iter().cloned().collect(),
                    None => predicted_set(&PredictionDistribution { probs: r.probs.clone() }, vocab, tau),
                };
                let credit = partial_credit_sets(&predicted, label);
                let len = label.unique_words().len();
                credits.push(credit);
                f1s.push(f1_diagnostic(&predicted, label));
                by_len.entry(len).or_default().push(credit);
                sizes.push((len, predicted.len()));
            }
            (GroundTruth::Count(n), Task::Counting) => {
                let pred = r
                    .predicted_count
                    .unwrap_or_else(|| predict_count(&PredictionDistribution { probs: r.probs.clone() }, vocab));
                gt_counts.push(*n);
                pred_counts.push(pred);
            }
            _ => log::warn!("record {} has a ground truth that does not match its task", r.sample_id),
        }
    }

    let max_len = sizes.iter().map(|s| s.0).max().unwrap_or(0);
    let max_pred = sizes.iter().map(|s| s.1).max().unwrap_or(0);
    let mut confusion = vec![vec![0usize; max_pred + 1]; max_len];
    for &(g, p) in &sizes {
        confusion[g - 1][p] += 1;
    }

    let mut per_count_map: BTreeMap<u32, (usize, usize, u64)> = BTreeMap::new();
    for (&g, &p) in gt_counts.iter().zip(&pred_counts) {
        let e = per_count_map.entry(g).or_default();
        e.0 += 1;
        e.1 += usize::from(g.abs_diff(p) <= 1);
        e.2 += g.abs_diff(p) as u64;
    }

    let (obo_v, mae_v) = if gt_counts.is_empty() {
        (None, None)
    } else {
        (Some(obo(&gt_counts, &pred_counts)?), Some(mae(&gt_counts, &pred_counts)?))
    };
    Ok(MetricsReport {
        tau,
        num_records: records.len(),
        num_detection: credits.len(),
        num_counting: gt_counts.len(),
        detection_accuracy: order_free_mean(credits),
        detection_f1: order_free_mean(f1s),
        obo: obo_v,
        mae: mae_v,
        task_consistency: consistent as f64 / records.len() as f64,
        accuracy_by_label_length: by_len
            .into_iter()
            .map(|(words, v)| LengthRow { words, samples: v.len(), accuracy: order_free_mean(v).unwrap_or(0.0) })
            .collect(),
        word_count_confusion: confusion,
        per_count: per_count_map
            .into_iter()
            .map(|(count, (n, hits, err))| CountRow {
                count,
                samples: n,
                obo: hits as f64 / n as f64,
                mean_abs_error: err as f64 / n as f64,
            })
            .collect(),
    })
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), MetricsError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, MetricsError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(MetricsError::from))
        .collect()
}

/// All breakdown tables in long form: `table,row,column,value`.
pub fn tables_csv(report: &MetricsReport) -> String {
    let mut out = String::from("table,row,column,value\n");
    for r in &report.accuracy_by_label_length {
        out.push_str(&format!("accuracy_by_label_length,{},samples,{}\n", r.words, r.samples));
        out.push_str(&format!("accuracy_by_label_length,{},accuracy,{}\n", r.words, r.accuracy));
    }
    for (g, row) in report.word_count_confusion.iter().enumerate() {
        for (p, n) in row.iter().enumerate() {
            out.push_str(&format!("word_count_confusion,{},{p},{n}\n", g + 1));
        }
    }
    for r in &report.per_count {
        out.push_str(&format!("per_count,{},samples,{}\n", r.count, r.samples));
        out.push_str(&format!("per_count,{},obo,{}\n", r.count, r.obo));
        out.push_str(&format!("per_count,{},mean_abs_error,{}\n", r.count, r.mean_abs_error));
    }
    out
}

/// Writes `report.json`, `tables.csv` and one PNG per breakdown into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<(), MetricsError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("tables.csv"), tables_csv(report))?;
    let acc: Vec<f64> = report.accuracy_by_label_length.iter().map(|r| r.accuracy).collect();
    crate::plot::bar_chart(&acc, &dir.join("accuracy_by_label_length.png"))?;
    let confusion: Vec<Vec<f64>> =
        report.word_count_confusion.iter().map(|r| r.iter().map(|&n| n as f64).collect()).collect();
    crate::plot::heatmap(&confusion, &dir.join("word_count_confusion.png"))?;
    let err: Vec<f64> = report.per_count.iter().map(|r| r.mean_abs_error).collect();
    crate::plot::bar_chart(&err, &dir.join("per_count_abs_error.png"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{build_vocabulary, CategoryTable};

    fn label(s: &str) -> Label {
        Label { words: s.split_whitespace().map(str::to_string).collect() }
    }

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn worked_count_example() {
        let (gt, pred) = ([5, 10, 7], [6, 10, 3]);
        assert_eq!(obo(&gt, &pred).unwrap(), 2.0 / 3.0);
        assert_eq!(mae(&gt, &pred).unwrap(), 5.0 / 3.0);
        assert_eq!(mae(&[1], &[30]).unwrap(), 29.0);
        assert_eq!(obo(&[3, 9], &[5, 7]).unwrap(), 0.0);
        assert!(matches!(obo(&[1, 2], &[1]), Err(MetricsError::Length { .. })));
        assert!(matches!(mae(&[], &[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn partial_credit_examples() {
        assert_eq!(partial_credit_sets(&set(&["squat"]), &label("squat")), 1.0);
        assert_eq!(partial_credit_sets(&set(&["lunge", "squat"]), &label("left lunge")), 0.5);
        assert_eq!(partial_credit_sets(&set(&[]), &label("squat")), 0.0);
    }

    #[test]
    fn f1_penalizes_extra_words() {
        let gt = label("left lunge");
        assert_eq!(f1_diagnostic(&set(&["left", "lunge"]), &gt), 1.0);
        let f1 = f1_diagnostic(&set(&["left", "lunge", "squat", "slow"]), &gt);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_match_fixture() {
        let pairs = [
            ("squat", "squat"),
            ("slow squat", "squat"),
            ("left lunge", "left lunge"),
            ("lunge", "left lunge"),
            ("arm raise", "arm raise"),
            ("bicep curl", "hammer curl"),
            ("jumping jack", "jumping jack"),
            ("pushup", "pushup"),
            ("deadlift", "romanian deadlift"),
            ("plank", "side plank"),
        ];
        let mean = pairs.iter().map(|(p, g)| exact_match(p, g)).sum::<f64>() / pairs.len() as f64;
        assert_eq!(mean, 0.5);
    }

    fn fixture_records() -> (Vocabulary, Vec<EvalRecord>) {
        let labels = [label("left lunge"), label("squat")];
        let vocab = build_vocabulary(&labels, &CategoryTable::default());
        let dist = |pairs: &[(&str, f64)]| {
            let mut probs = vec![0.0; vocab.len()];
            let rest = (1.0 - pairs.iter().map(|p| p.1).sum::<f64>()) / (vocab.len() - pairs.len()) as f64;
            probs.iter_mut().for_each(|p| *p = rest);
            for (c, p) in pairs {
                probs[vocab.index_of(c).unwrap()] = *p;
            }
            PredictionDistribution { probs }
        };
        let recs = vec![
            EvalRecord::new("a".into(), "v1".into(), Task::Detection, "q".into(), GroundTruth::Label(label("left lunge")),
                dist(&[("lunge", 0.6), ("squat", 0.3)]), &vocab, 0.05),
            EvalRecord::new("b".into(), "v2".into(), Task::Detection, "q".into(), GroundTruth::Label(label("squat")),
                dist(&[("squat", 0.9)]), &vocab, 0.05),
            EvalRecord::new("c".into(), "v1".into(), Task::Counting, "q".into(), GroundTruth::Count(5),
                dist(&[("6", 0.5)]), &vocab, 0.05),
            EvalRecord::new("d".into(), "v2".into(), Task::Counting, "q".into(), GroundTruth::Count(7),
                dist(&[("3", 0.5), ("squat", 0.4)]), &vocab, 0.05),
        ];
        (vocab, recs)
    }

    #[test]
    fn report_aggregates() {
        let (vocab, recs) = fixture_records();
        let report = build_report(&recs, &vocab, 0.05).unwrap();
        assert_eq!(report.detection_accuracy, Some(0.75));
        assert_eq!(report.obo, Some(0.5));
        assert_eq!(report.mae, Some(2.5));
        assert_eq!(report.task_consistency, 1.0);
        assert_eq!(report.word_count_confusion, vec![vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(report.accuracy_by_label_length[1], LengthRow { words: 2, samples: 1, accuracy: 0.5 });
        assert_eq!(report.per_count.len(), 2);
        let counting_only: Vec<EvalRecord> = recs.iter().filter(|r| r.task == Task::Counting).cloned().collect();
        let r2 = build_report(&counting_only, &vocab, 0.05).unwrap();
        assert_eq!(r2.detection_accuracy, None);
        assert_eq!(r2.obo, report.obo);
    }

    #[test]
    fn tau_one_predicts_nothing() {
        let (vocab, mut recs) = fixture_records();
        recs.iter_mut().for_each(|r| r.rescore(&vocab, 1.0));
        assert_eq!(build_report(&recs, &vocab, 1.0).unwrap().detection_accuracy, Some(0.0));
    }

    #[test]
    fn report_files_and_record_round_trip() {
        let (vocab, recs) = fixture_records();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
        write_report(&build_report(&recs, &vocab, 0.05).unwrap(), dir.path()).unwrap();
        for f in ["report.json", "tables.csv", "accuracy_by_label_length.png", "word_count_confusion.png", "per_count_abs_error.png"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
