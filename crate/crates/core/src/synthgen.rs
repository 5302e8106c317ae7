//! Synthetic periodic exercise motions with exact repetition counts.
//!
//! Every primitive displaces a set of joints from a rest pose along fixed
//! vectors scaled by the raised cosine `(1 - cos(2 pi t / P)) / 2`, so each
//! repetition is one full cycle that starts and ends at rest with zero
//! velocity. Short static rests pad both ends.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{normalize_label, Label, LabelError, ManifestRecord, Split};
use crate::skeleton::{
    landmark, save_mediapipe, save_sequence, Frame, JointId, MediapipeFrame, MediapipeSequence, Point3,
    SkeletonError, SkeletonSequence, NUM_JOINTS, NUM_LANDMARKS,
};
use crate::training::split_dataset;

/// Longest motion that fits the image after 2x downsampling.
pub const MAX_DURATION_SECS: f64 = 51.2;

pub const DEFAULT_PRIMITIVES: [&str; 8] = [
    "squat",
    "slow squat",
    "left lunge",
    "right lunge",
    "arm raise",
    "lunge and press",
    "bicep curl",
    "jumping jack",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown primitive '{0}'")]
    UnknownPrimitive(String),
    #[error("count {0} outside 1..=30")]
    Count(u32),
    #[error("motion lasts {secs:.2} s, longer than {max} s")]
    Duration { secs: f64, max: f64 },
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One exercise: the joints it moves and how far at the middle of a repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrimitive {
    pub name: Vec<String>,
    /// Peak displacement (meters) of each driven joint.
    pub drives: Vec<(JointId, Point3)>,
    pub period_secs: f64,
}

impl MotionPrimitive {
    pub fn label(&self) -> Label {
        Label { words: self.name.clone() }
    }

    /// The drive with the largest displacement; its projection is the count oracle signal.
    pub fn main_drive(&self) -> (JointId, Point3) {
        *self
            .drives
            .iter()
            .max_by(|a, b| norm(a.1).total_cmp(&norm(b.1)))
            .expect("primitive has drives")
    }

    /// The sagittal mirror image: x negated, left and right joints swapped.
    pub fn mirrored(&self, name: Vec<String>) -> MotionPrimitive {
        MotionPrimitive {
            name,
            drives: self.drives.iter().map(|&(j, d)| (j.mirrored(), mirror_point(d))).collect(),
            period_secs: self.period_secs,
        }
    }
}

fn norm(p: Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub fn mirror_point(p: Point3) -> Point3 {
    [-p[0], p[1], p[2]]
}

/// Mirrors a whole frame about the sagittal plane.
pub fn mirror_frame(frame: &Frame) -> Frame {
    let mut out = [[0.0; 3]; NUM_JOINTS];
    for j in JointId::ALL {
        out[j.mirrored().index()] = mirror_point(frame[j.index()]);
    }
    out
}

/// Standing rest pose: x to the subject's left, y up, z forward, feet at y = 0.
pub fn rest_pose() -> Frame {
    let mut f = [[0.0; 3]; NUM_JOINTS];
    let mut set = |j: JointId, p: Point3| f[j.index()] = p;
    set(JointId::Root, [0.0, 0.95, 0.0]);
    set(JointId::Spine, [0.0, 1.18, 0.0]);
    set(JointId::Thorax, [0.0, 1.42, 0.0]);
    set(JointId::Neck, [0.0, 1.52, 0.0]);
    set(JointId::Head, [0.0, 1.68, 0.0]);
    for (sign, hip, knee, ankle, sh, el, wr) in [
        (1.0, JointId::LeftHip, JointId::LeftKnee, JointId::LeftAnkle, JointId::LeftShoulder, JointId::LeftElbow, JointId::LeftWrist),
        (-1.0, JointId::RightHip, JointId::RightKnee, JointId::RightAnkle, JointId::RightShoulder, JointId::RightElbow, JointId::RightWrist),
    ] {
        set(hip, [0.12 * sign, 0.95, 0.0]);
        set(knee, [0.12 * sign, 0.52, 0.0]);
        set(ankle, [0.12 * sign, 0.08, 0.0]);
        set(sh, [0.18 * sign, 1.42, 0.0]);
        set(el, [0.20 * sign, 1.14, 0.0]);
        set(wr, [0.21 * sign, 0.88, 0.0]);
    }
    f
}

struct Drives(Vec<(JointId, Point3)>);

impl Drives {
    fn new() -> Self {
        Drives(Vec::new())
    }

    fn add(mut self, joints: &[JointId], d: Point3) -> Self {
        for &j in joints {
            match self.0.iter_mut().find(|(k, _)| *k == j) {
                Some((_, acc)) => (0..3).for_each(|a| acc[a] += d[a]),
                None => self.0.push((j, d)),
            }
        }
        self
    }

    /// Adds `d` to a left joint and its mirror image to the right counterpart.
    fn sym(self, left: &[JointId], d: Point3) -> Self {
        let right: Vec<JointId> = left.iter().map(|j| j.mirrored()).collect();
        self.add(left, d).add(&right, mirror_point(d))
    }
}

use JointId::*;

const UPPER: [JointId; 11] =
    [Root, Spine, Thorax, Neck, Head, LeftShoulder, RightShoulder, LeftElbow, RightElbow, LeftWrist, RightWrist];

fn squat_drives() -> Drives {
    Drives::new()
        .add(&[Root, LeftHip, RightHip], [0.0, -0.40, -0.10])
        .add(&[Spine], [0.0, -0.40, -0.02])
        .add(&[Thorax, Neck, Head, LeftShoulder, RightShoulder], [0.0, -0.40, 0.08])
        .sym(&[LeftKnee], [0.0, -0.18, 0.22])
        .sym(&[LeftElbow], [0.0, -0.30, 0.30])
        .sym(&[LeftWrist], [0.0, -0.10, 0.50])
}

/// Left leg steps forward.
fn lunge_drives() -> Drives {
    Drives::new()
        .add(&UPPER, [0.0, -0.35, 0.30])
        .add(&[LeftHip, RightHip], [0.0, -0.35, 0.30])
        .add(&[LeftKnee], [0.0, -0.15, 0.55])
        .add(&[LeftAnkle], [0.0, 0.0, 0.70])
        .add(&[RightKnee], [0.0, -0.40, 0.05])
}

fn base_primitive(name: &str) -> Option<MotionPrimitive> {
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let prim = |drives: Drives, period_secs: f64| MotionPrimitive { name: words(name), drives: drives.0, period_secs };
    Some(match name {
        "squat" => prim(squat_drives(), 2.0),
        "left lunge" => prim(lunge_drives(), 2.4),
        "right lunge" => prim(lunge_drives(), 2.4).mirrored(words(name)),
        "arm raise" => prim(
            Drives::new().sym(&[LeftElbow], [0.10, 0.52, 0.0]).sym(&[LeftWrist], [0.15, 1.05, 0.0]),
            1.6,
        ),
        "lunge and press" => prim(
            lunge_drives()
                .sym(&[LeftElbow], [0.02, 0.50, -0.05])
                .sym(&[LeftWrist], [-0.06, 1.15, -0.10]),
            2.8,
        ),
        "bicep curl" => prim(
            Drives::new().sym(&[LeftElbow], [0.0, 0.0, 0.02]).sym(&[LeftWrist], [0.0, 0.36, 0.22]),
            1.2,
        ),
        "jumping jack" => prim(
            Drives::new()
                .sym(&[LeftElbow], [0.30, 0.45, 0.0])
                .sym(&[LeftWrist], [0.55, 1.00, 0.0])
                .sym(&[LeftKnee], [0.12, 0.0, 0.0])
                .sym(&[LeftAnkle], [0.22, 0.0, 0.0]),
            1.6,
        ),
        _ => return None,
    })
}

/// Looks up a primitive by label; a leading "slow" doubles the period.
pub fn primitive(name: &str) -> Result<MotionPrimitive, SynthError> {
    let name = name.trim();
    if let Some(base) = base_primitive(name) {
        return Ok(base);
    }
    if let Some(rest) = name.strip_prefix("slow ") {
        let mut p = primitive(rest)?;
        p.name.insert(0, "slow".into());
        p.period_secs *= 2.0;
        return Ok(p);
    }
    Err(SynthError::UnknownPrimitive(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub primitives: Vec<String>,
    /// Inclusive repetition-count range.
    pub counts: [u32; 2],
    pub fps: f64,
    /// Std of the per-frame zero-mean jitter added to every coordinate (meters).
    pub noise_std: f64,
    /// Number of subjects; subject `k` scales the body by a factor in [0.9, 1.1].
    pub subjects: usize,
    /// Static rest before and after the repetitions.
    pub rest_secs: f64,
    pub split_fractions: [f64; 3],
    /// Also write Mediapipe-format copies of every sequence.
    pub mediapipe: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            primitives: DEFAULT_PRIMITIVES.iter().map(|s| s.to_string()).collect(),
            counts: [3, 8],
            fps: 25.0,
            noise_std: 0.005,
            subjects: 4,
            rest_secs: 0.4,
            split_fractions: [0.8, 0.1, 0.1],
            mediapipe: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn check(&self) -> Result<(), SynthError> {
        let [lo, hi] = self.counts;
        if lo < 1 || hi > 30 || lo > hi {
            return Err(SynthError::Spec(format!("counts {lo}..{hi} must lie within 1..=30")));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(SynthError::Spec("fps must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::Spec("noise_std must be non-negative".into()));
        }
        if self.subjects == 0 {
            return Err(SynthError::Spec("need at least one subject".into()));
        }
        if self.primitives.is_empty() {
            return Err(SynthError::Spec("no primitives listed".into()));
        }
        if self.rest_secs < 0.0 {
            return Err(SynthError::Spec("rest_secs must be non-negative".into()));
        }
        for p in &self.primitives {
            primitive(p)?;
        }
        Ok(())
    }
}

/// Body scale of subject `k` of `n`, evenly spaced over [0.9, 1.1].
pub fn subject_scale(k: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        0.9 + 0.2 * k as f64 / (n - 1) as f64
    }
}

/// Per-video generator seeded from the dataset seed and the video index.
fn video_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` repetitions of `prim` for a body of the given scale.
pub fn gen_motion(
    prim: &MotionPrimitive,
    count: u32,
    scale: f64,
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    source_id: &str,
) -> Result<(SkeletonSequence, Label, u32), SynthError> {
    if !(1..=30).contains(&count) {
        return Err(SynthError::Count(count));
    }
    let period_frames = (prim.period_secs * spec.fps).round().max(2.0) as usize;
    let rest_frames = (spec.rest_secs * spec.fps).round() as usize;
    let active = count as usize * period_frames;
    let total = 2 * rest_frames + active + 1;
    let secs = total as f64 / spec.fps;
    if secs > MAX_DURATION_SECS + 1e-9 {
        return Err(SynthError::Duration { secs, max: MAX_DURATION_SECS });
    }

    let mut rest = rest_pose();
    for p in rest.iter_mut() {
        p.iter_mut().for_each(|v| *v *= scale);
    }
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("valid std"));
    let frames = (0..total)
        .map(|t| {
            let s = match t.checked_sub(rest_frames) {
                Some(k) if k <= active => {
                    let phase = (k % period_frames) as f64 / period_frames as f64;
                    0.5 * (1.0 - (2.0 * std::f64::consts::PI * phase).cos())
                }
                _ => 0.0,
            };
            let mut f = rest;
            for &(j, d) in &prim.drives {
                for a in 0..3 {
                    f[j.index()][a] += scale * s * d[a];
                }
            }
            if let Some(n) = &noise {
                for p in f.iter_mut() {
                    p.iter_mut().for_each(|v| *v += n.sample(rng));
                }
            }
            f
        })
        .collect();
    let seq = SkeletonSequence::new(frames, spec.fps, source_id)?;
    Ok((seq, prim.label(), count))
}

/// Projection of the main driven joint's displacement from frame 0 onto its
/// drive direction.
pub fn drive_series(seq: &SkeletonSequence, prim: &MotionPrimitive) -> Vec<f64> {
    let (joint, d) = prim.main_drive();
    let n = norm(d);
    let u = [d[0] / n, d[1] / n, d[2] / n];
    let origin = seq.joint(0, joint);
    seq.frames
        .iter()
        .map(|f| {
            let p = f[joint.index()];
            (0..3).map(|a| (p[a] - origin[a]) * u[a]).sum()
        })
        .collect()
}

/// Number of strict local maxima; a plateau counts once when both of its
/// neighbors are lower. Endpoints never count.
pub fn count_peaks(series: &[f64]) -> usize {
    let mut runs: Vec<f64> = Vec::with_capacity(series.len());
    for &v in series {
        if runs.last() != Some(&v) {
            runs.push(v);
        }
    }
    runs.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
}

/// Counts excursions that rise above `hi` after having been below `lo`;
/// robust to jitter smaller than `hi - lo`.
pub fn count_cycles(series: &[f64], lo: f64, hi: f64) -> usize {
    let mut armed = true;
    let mut n = 0;
    for &v in series {
        if armed && v > hi {
            n += 1;
            armed = false;
        } else if !armed && v < lo {
            armed = true;
        }
    }
    n
}

/// Writes one skeleton file per (primitive, count, subject) plus
/// `manifest.jsonl` into `out_dir`, returning the manifest records.
pub fn gen_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<ManifestRecord>, SynthError> {
    spec.check()?;
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    let mut index = 0u64;
    for name in &spec.primitives {
        let prim = primitive(name)?;
        let label_norm = normalize_label(name)?.text();
        for count in spec.counts[0]..=spec.counts[1] {
            for subject in 0..spec.subjects {
                let id = format!("{}_c{count:02}_s{subject}", prim.name.join("-"));
                let mut rng = video_rng(spec.seed, index);
                index += 1;
                let scale = subject_scale(subject, spec.subjects);
                let (seq, _, _) = gen_motion(&prim, count, scale, spec, &mut rng, &id)?;
                let file = format!("{id}.jsonl");
                save_sequence(&seq, &out_dir.join(&file))?;
                if spec.mediapipe {
                    save_mediapipe(&to_mediapipe(&seq), &out_dir.join(format!("{id}.mp.jsonl")))?;
                }
                records.push(ManifestRecord {
                    id,
                    skeleton_path: file,
                    label_raw: name.clone(),
                    label_norm: label_norm.clone(),
                    count,
                    split: Split::Train,
                    subject: Some(subject as u32),
                });
            }
        }
    }
    if records.len() >= 10 {
        records = split_dataset(&records, spec.split_fractions, spec.seed)
            .map_err(|e| SynthError::Spec(e.to_string()))?;
    } else {
        log::warn!("{} videos are too few to split; all assigned to train", records.len());
    }
    crate::labels::write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

/// A plausible 33-landmark rendering of a 17-joint sequence. Landmarks that
/// the 17-joint conversion copies back are exact; face, hand and foot
/// landmarks are placed at small offsets from the head, wrists and ankles.
pub fn to_mediapipe(seq: &SkeletonSequence) -> MediapipeSequence {
    let offset = |p: Point3, d: Point3| [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
    let frames: Vec<MediapipeFrame> = seq
        .frames
        .iter()
        .map(|f| {
            let j = |id: JointId| f[id.index()];
            let mut lm = [[0.0; 3]; NUM_LANDMARKS];
            for &(joint, idx) in crate::skeleton::MEDIAPIPE_COPY_TABLE.iter() {
                lm[idx] = j(joint);
            }
            let head = j(Head);
            // eyes, ears and mouth around the head (indices 2..=10)
            let face: [(usize, Point3); 9] = [
                (2, [0.03, 0.0, 0.08]),
                (3, [0.05, 0.0, 0.07]),
                (4, [-0.01, 0.0, 0.08]),
                (5, [-0.03, 0.0, 0.08]),
                (6, [-0.05, 0.0, 0.07]),
                (7, [0.08, -0.01, 0.0]),
                (8, [-0.08, -0.01, 0.0]),
                (9, [0.02, -0.08, 0.08]),
                (10, [-0.02, -0.08, 0.08]),
            ];
            for (idx, d) in face {
                lm[idx] = offset(head, d);
            }
            for (wrist, base) in [(LeftWrist, 17), (RightWrist, 18)] {
                let w = j(wrist);
                lm[base] = offset(w, [0.0, -0.06, 0.0]);
                lm[base + 2] = offset(w, [0.0, -0.08, 0.01]);
                lm[base + 4] = offset(w, [0.0, -0.05, 0.02]);
            }
            for (ankle, heel, toe) in [(LeftAnkle, 29, 31), (RightAnkle, 30, 32)] {
                let a = j(ankle);
                lm[heel] = offset(a, [0.0, -0.05, -0.05]);
                lm[toe] = offset(a, [0.0, -0.07, 0.15]);
            }
            debug_assert_eq!(lm[landmark::NOSE], j(Neck));
            lm
        })
        .collect();
    let visibility = vec![[0.95; NUM_LANDMARKS]; frames.len()];
    MediapipeSequence { frames, visibility, fps: seq.fps, source_id: seq.source_id.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean() -> SynthSpec {
        SynthSpec { noise_std: 0.0, ..Default::default() }
    }

    fn motion(name: &str, count: u32, spec: &SynthSpec) -> SkeletonSequence {
        let prim = primitive(name).unwrap();
        gen_motion(&prim, count, 1.0, spec, &mut video_rng(1, 0), name).unwrap().0
    }

    #[test]
    fn squat_depth_has_one_maximum_per_repetition() {
        let seq = motion("squat", 5, &clean());
        let hip: Vec<f64> = seq.frames.iter().map(|f| 0.95 - f[Root.index()][1]).collect();
        assert_eq!(count_peaks(&hip), 5);
    }

    #[test]
    fn every_primitive_and_count_matches_the_peak_oracle() {
        let spec = clean();
        for name in DEFAULT_PRIMITIVES {
            let prim = primitive(name).unwrap();
            for count in [1, 3, 8] {
                let seq = gen_motion(&prim, count, 1.1, &spec, &mut video_rng(0, 0), name).unwrap().0;
                assert_eq!(count_peaks(&drive_series(&seq, &prim)), count as usize, "{name} x{count}");
            }
        }
    }

    #[test]
    fn noisy_smoothed_series_counts_by_hysteresis() {
        let spec = SynthSpec { noise_std: 0.01, ..Default::default() };
        let prim = primitive("bicep curl").unwrap();
        let (seq, _, count) = gen_motion(&prim, 7, 1.0, &spec, &mut video_rng(3, 9), "c").unwrap();
        let smoothed = crate::motion_image::smooth(&seq, 3).unwrap();
        let series = drive_series(&smoothed, &prim);
        let amp = norm(prim.main_drive().1);
        assert_eq!(count_cycles(&series, 0.25 * amp, 0.75 * amp), count as usize);
    }

    #[test]
    fn slow_variant_doubles_duration() {
        let spec = SynthSpec { rest_secs: 0.0, ..clean() };
        let fast = motion("squat", 4, &spec);
        let slow = motion("slow squat", 4, &spec);
        assert_eq!(slow.frames.len() - 1, 2 * (fast.frames.len() - 1));
        assert_eq!(primitive("slow squat").unwrap().name, ["slow", "squat"]);
    }

    #[test]
    fn count_one_is_a_single_cycle() {
        let spec = clean();
        let prim = primitive("arm raise").unwrap();
        let seq = motion("arm raise", 1, &spec);
        assert_eq!(count_peaks(&drive_series(&seq, &prim)), 1);
        assert_eq!(seq.frames.first(), seq.frames.last());
    }

    #[test]
    fn lunges_are_mirror_images() {
        let spec = clean();
        let left = motion("left lunge", 4, &spec);
        let right = motion("right lunge", 4, &spec);
        let mut worst: f64 = 0.0;
        for (l, r) in left.frames.iter().zip(&right.frames) {
            let m = mirror_frame(l);
            for j in 0..NUM_JOINTS {
                for a in 0..3 {
                    worst = worst.max((m[j][a] - r[j][a]).abs());
                }
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn overlong_motion_is_rejected() {
        let prim = primitive("slow squat").unwrap();
        let err = gen_motion(&prim, 13, 1.0, &clean(), &mut video_rng(0, 0), "x").unwrap_err();
        assert!(matches!(err, SynthError::Duration { .. }));
        assert!(matches!(
            gen_motion(&prim, 0, 1.0, &clean(), &mut video_rng(0, 0), "x"),
            Err(SynthError::Count(0))
        ));
    }

    #[test]
    fn dataset_size_determinism_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { subjects: 1, ..Default::default() };
        let recs = gen_dataset(&spec, dir.path()).unwrap();
        assert_eq!(recs.len(), 48);
        for r in &recs {
            assert_eq!(normalize_label(&r.label_norm).unwrap().text(), r.label_norm);
            assert_eq!(r.label_norm, r.label_raw);
        }
        let first = std::fs::read(dir.path().join("manifest.jsonl")).unwrap();
        let sample = std::fs::read(dir.path().join(&recs[7].skeleton_path)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        gen_dataset(&spec, dir2.path()).unwrap();
        assert_eq!(first, std::fs::read(dir2.path().join("manifest.jsonl")).unwrap());
        assert_eq!(sample, std::fs::read(dir2.path().join(&recs[7].skeleton_path)).unwrap());
    }

    #[test]
    fn generated_sequences_validate() {
        let spec = SynthSpec::default();
        for (i, name) in DEFAULT_PRIMITIVES.iter().enumerate() {
            let prim = primitive(name).unwrap();
            let (seq, label, _) = gen_motion(&prim, 8, 0.9, &spec, &mut video_rng(5, i as u64), name).unwrap();
            assert!(seq.validate().is_valid());
            assert_eq!(label.text(), *name);
        }
    }

    #[test]
    fn mediapipe_rendering_round_trips_copied_joints() {
        let seq = motion("jumping jack", 3, &clean());
        let back = crate::skeleton::mediapipe_to_h36m(&to_mediapipe(&seq)).unwrap();
        for (a, b) in seq.frames.iter().zip(&back.frames) {
            for &(joint, _) in crate::skeleton::MEDIAPIPE_COPY_TABLE.iter() {
                assert_eq!(a[joint.index()], b[joint.index()]);
            }
        }
    }

    #[test]
    fn peak_counter_handles_plateaus() {
        assert_eq!(count_peaks(&[0.0, 1.0, 1.0, 0.0, 2.0, 2.0, 2.0, 1.0]), 2);
        assert_eq!(count_peaks(&[0.0, 1.0, 1.0, 2.0]), 0);
        assert_eq!(count_peaks(&[3.0, 1.0, 0.0]), 0);
    }
}
