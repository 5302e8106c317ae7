//! Manifest to model inputs: skeleton loading, encoding, vocabulary and
//! lexicon construction, and QA expansion.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{
    build_vocabulary, make_qa_samples, CategoryTable, Label, LabelError, ManifestRecord, QaOptions, Split,
    TemplateSet, Vocabulary,
};
use crate::model::{tokenize, Lexicon, ModelConfig, ModelError, PatchGrid};
use crate::motion_image::{encode, EncodeError, EncoderConfig, MotionImage};
use crate::skeleton::{load_sequence, mediapipe_to_h36m, LoadedSequence, SequenceFormat, SkeletonError, SkeletonSequence};
use crate::training::TrainingSample;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{id}: {source}")]
    Skeleton { id: String, source: SkeletonError },
    #[error("{id}: {source}")]
    Encode { id: String, source: EncodeError },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Metadata(String),
}

/// Loads a skeleton file, converting Mediapipe input to the 17-joint layout.
pub fn load_skeleton(path: &Path, format: SequenceFormat) -> Result<SkeletonSequence, SkeletonError> {
    match load_sequence(path, format)? {
        LoadedSequence::H36m(seq) => Ok(seq),
        LoadedSequence::Mediapipe(seq) => mediapipe_to_h36m(&seq),
    }
}

/// Resolves a manifest path relative to the manifest's directory.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Path of the Mediapipe rendering written next to an h36m file by the generator.
pub fn mediapipe_sibling(path: &str) -> String {
    match path.strip_suffix(".jsonl") {
        Some(stem) => format!("{stem}.mp.jsonl"),
        None => format!("{path}.mp.jsonl"),
    }
}

pub fn encode_record(
    record: &ManifestRecord,
    base: &Path,
    format: SequenceFormat,
    cfg: &EncoderConfig,
) -> Result<MotionImage, PipelineError> {
    let rel = match format {
        SequenceFormat::H36mJsonl => record.skeleton_path.clone(),
        SequenceFormat::MediapipeJsonl if record.skeleton_path.ends_with(".mp.jsonl") => record.skeleton_path.clone(),
        SequenceFormat::MediapipeJsonl => mediapipe_sibling(&record.skeleton_path),
    };
    let seq = load_skeleton(&resolve(base, &rel), format)
        .map_err(|source| PipelineError::Skeleton { id: record.id.clone(), source })?;
    let mut image = encode(&seq, cfg).map_err(|source| PipelineError::Encode { id: record.id.clone(), source })?;
    image.source_id = record.id.clone();
    Ok(image)
}

/// A video reduced to its model input.
#[derive(Debug, Clone)]
pub struct EncodedVideo {
    pub record: ManifestRecord,
    pub patches: Arc<PatchGrid>,
}

/// Encodes every record in parallel. Failures are returned per video, in
/// manifest order, without stopping the batch.
pub fn encode_videos(
    records: &[ManifestRecord],
    base: &Path,
    format: SequenceFormat,
    enc: &EncoderConfig,
    model: &ModelConfig,
) -> (Vec<EncodedVideo>, Vec<PipelineError>) {
    let results: Vec<Result<EncodedVideo, PipelineError>> = records
        .par_iter()
        .map(|r| {
            let image = encode_record(r, base, format, enc)?;
            let patches = PatchGrid::from_image(&image, model)?;
            Ok(EncodedVideo { record: r.clone(), patches: Arc::new(patches) })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(e),
        }
    }
    (ok, failed)
}

/// Vocabulary, lexicon and templates shared by training and inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpace {
    pub vocab: Vocabulary,
    pub lexicon: Lexicon,
    pub templates: TemplateSet,
}

impl TaskSpace {
    pub fn build(records: &[ManifestRecord], templates: TemplateSet, table: &CategoryTable) -> Self {
        let labels: Vec<Label> = records.iter().map(ManifestRecord::label).collect();
        let vocab = build_vocabulary(&labels, table);
        let lexicon = Lexicon::build(templates.all_text().chain(labels.iter().map(Label::text)));
        TaskSpace { vocab, lexicon, templates }
    }

    /// Fills the vocabulary-dependent sizes of a model config.
    pub fn fit_model_config(&self, mut cfg: ModelConfig, enc: &EncoderConfig) -> ModelConfig {
        cfg.num_classes = self.vocab.len();
        cfg.text_vocab_size = self.lexicon.len();
        cfg.image_height = enc.image_height;
        cfg.image_width = enc.image_width;
        cfg
    }

    /// Expands each video into QA samples; a video's QA draws are seeded
    /// from `seed` and its manifest id.
    pub fn samples(
        &self,
        videos: &[EncodedVideo],
        opts: QaOptions,
        seed: u64,
        max_text_len: usize,
    ) -> Result<Vec<TrainingSample>, PipelineError> {
        let mut out = Vec::new();
        for v in videos {
            let qa_seed = seed ^ fnv1a(v.record.id.as_bytes());
            let qas = make_qa_samples(
                &v.record.id,
                &v.record.label(),
                v.record.count,
                &self.templates,
                &self.vocab,
                qa_seed,
                opts,
            )?;
            for qa in qas {
                out.push(TrainingSample {
                    video_id: v.record.id.clone(),
                    patches: v.patches.clone(),
                    tokens: tokenize(&qa.question, &self.lexicon, max_text_len),
                    qa,
                });
            }
        }
        Ok(out)
    }

    pub fn to_metadata(&self, encoder: &EncoderConfig) -> Result<RunMetadata, PipelineError> {
        Ok(RunMetadata {
            vocabulary: serde_json::from_str(&self.vocab.to_json()?)?,
            lexicon: serde_json::from_str(&self.lexicon.to_json()?)?,
            templates: self.templates.clone(),
            encoder: encoder.clone(),
            extra: serde_json::Value::Null,
        })
    }

    pub fn from_metadata(meta: &RunMetadata) -> Result<Self, PipelineError> {
        Ok(TaskSpace {
            vocab: Vocabulary::from_json(&meta.vocabulary.to_string())?,
            lexicon: Lexicon::from_json(&meta.lexicon.to_string())?,
            templates: meta.templates.clone(),
        })
    }
}

/// Everything besides weights needed to run a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub vocabulary: serde_json::Value,
    pub lexicon: serde_json::Value,
    pub templates: TemplateSet,
    pub encoder: EncoderConfig,
    /// Free-form run details (training config, best epoch, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl RunMetadata {
    pub fn from_value(v: &serde_json::Value) -> Result<Self, PipelineError> {
        serde_json::from_value(v.clone())
            .map_err(|e| PipelineError::Metadata(format!("checkpoint metadata is incomplete: {e}")))
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-video seeds from ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn by_split(videos: &[EncodedVideo], split: Split) -> Vec<EncodedVideo> {
    videos.iter().filter(|v| v.record.split == split).cloned().collect()
}
