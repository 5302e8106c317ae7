//! Human3.6M / Mediapipe keypoint sequences and their JSONL file formats.
//!
//! Both formats are line oriented. The first line is a header
//! `{"fps": 25.0, "units": "m", "format": "h36m17"}` and each following line
//! holds one frame, `{"t": 0, "joints": [[x, y, z], ...]}`. Mediapipe files use
//! `"format": "mediapipe33"`, 33 landmarks per frame and an extra `"vis"`
//! array of per-landmark visibilities.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of joints in the Human3.6M layout.
pub const NUM_JOINTS: usize = 17;
/// Number of Mediapipe pose landmarks.
pub const NUM_LANDMARKS: usize = 33;

pub type Point3 = [f64; 3];
pub type Frame = [Point3; NUM_JOINTS];
pub type MediapipeFrame = [Point3; NUM_LANDMARKS];

const H36M_FORMAT: &str = "h36m17";
const MEDIAPIPE_FORMAT: &str = "mediapipe33";
const UNITS_METERS: &str = "m";

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid sequence: {0}")]
    Validation(ValidationReport),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("conversion error: {0}")]
    Conversion(String),
}

/// Human3.6M joints in the canonical index order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum JointId {
    Root = 0,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    Spine,
    Thorax,
    Neck,
    Head,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightShoulder,
    RightElbow,
    RightWrist,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::Root,
        JointId::RightHip,
        JointId::RightKnee,
        JointId::RightAnkle,
        JointId::LeftHip,
        JointId::LeftKnee,
        JointId::LeftAnkle,
        JointId::Spine,
        JointId::Thorax,
        JointId::Neck,
        JointId::Head,
        JointId::LeftShoulder,
        JointId::LeftElbow,
        JointId::LeftWrist,
        JointId::RightShoulder,
        JointId::RightElbow,
        JointId::RightWrist,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<JointId> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Root => "root",
            JointId::RightHip => "right_hip",
            JointId::RightKnee => "right_knee",
            JointId::RightAnkle => "right_ankle",
            JointId::LeftHip => "left_hip",
            JointId::LeftKnee => "left_knee",
            JointId::LeftAnkle => "left_ankle",
            JointId::Spine => "spine",
            JointId::Thorax => "thorax",
            JointId::Neck => "neck",
            JointId::Head => "head",
            JointId::LeftShoulder => "left_shoulder",
            JointId::LeftElbow => "left_elbow",
            JointId::LeftWrist => "left_wrist",
            JointId::RightShoulder => "right_shoulder",
            JointId::RightElbow => "right_elbow",
            JointId::RightWrist => "right_wrist",
        }
    }

    pub fn from_name(name: &str) -> Option<JointId> {
        Self::ALL.iter().copied().find(|j| j.name() == name)
    }

    /// The joint on the opposite side of the body (self for midline joints).
    pub fn mirrored(self) -> JointId {
        use JointId::*;
        match self {
            RightHip => LeftHip,
            RightKnee => LeftKnee,
            RightAnkle => LeftAnkle,
            LeftHip => RightHip,
            LeftKnee => RightKnee,
            LeftAnkle => RightAnkle,
            LeftShoulder => RightShoulder,
            LeftElbow => RightElbow,
            LeftWrist => RightWrist,
            RightShoulder => LeftShoulder,
            RightElbow => LeftElbow,
            RightWrist => LeftWrist,
            other => other,
        }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A T x 17 x 3 joint-position sequence in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<Frame>,
    pub fps: f64,
    pub source_id: String,
}

/// A T x 33 x 3 Mediapipe landmark sequence with per-landmark visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct MediapipeSequence {
    pub frames: Vec<MediapipeFrame>,
    pub visibility: Vec<[f64; NUM_LANDMARKS]>,
    pub fps: f64,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewFrames { frames: usize },
    NonPositiveFps { fps: f64 },
    NonFinite { frame: usize, joint: usize, axis: usize },
    VisibilityOutOfRange { frame: usize, landmark: usize, value: f64 },
    VisibilityLength { frames: usize, visibility_rows: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewFrames { frames } => {
                write!(f, "sequence has {frames} frames, at least 2 required")
            }
            Violation::NonPositiveFps { fps } => write!(f, "fps must be positive, got {fps}"),
            Violation::NonFinite { frame, joint, axis } => {
                let name = JointId::from_index(*joint)
                    .map(|j| j.name().to_string())
                    .unwrap_or_else(|| format!("landmark {joint}"));
                write!(f, "non-finite coordinate at frame {frame}, joint {name}, axis {axis}")
            }
            Violation::VisibilityOutOfRange { frame, landmark, value } => write!(
                f,
                "visibility {value} outside [0, 1] at frame {frame}, landmark {landmark}"
            ),
            Violation::VisibilityLength { frames, visibility_rows } => write!(
                f,
                "{visibility_rows} visibility rows for {frames} frames"
            ),
        }
    }
}

/// Every invariant violation found in a sequence; empty iff the sequence is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

fn check_points<const N: usize>(
    frames: &[[Point3; N]],
    fps: f64,
    violations: &mut Vec<Violation>,
) {
    if frames.len() < 2 {
        violations.push(Violation::TooFewFrames { frames: frames.len() });
    }
    if !(fps > 0.0 && fps.is_finite()) {
        violations.push(Violation::NonPositiveFps { fps });
    }
    for (t, frame) in frames.iter().enumerate() {
        for (j, p) in frame.iter().enumerate() {
            for (axis, v) in p.iter().enumerate() {
                if !v.is_finite() {
                    violations.push(Violation::NonFinite { frame: t, joint: j, axis });
                }
            }
        }
    }
}

impl SkeletonSequence {
    /// Builds a sequence, rejecting it if any invariant is violated.
    pub fn new(
        frames: Vec<Frame>,
        fps: f64,
        source_id: impl Into<String>,
    ) -> Result<Self, SkeletonError> {
        let seq = SkeletonSequence { frames, fps, source_id: source_id.into() };
        let report = seq.validate();
        if report.is_valid() {
            Ok(seq)
        } else {
            Err(SkeletonError::Validation(report))
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn joint(&self, frame: usize, joint: JointId) -> Point3 {
        self.frames[frame][joint.index()]
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        check_points(&self.frames, self.fps, &mut violations);
        ValidationReport { violations }
    }
}

impl MediapipeSequence {
    pub fn new(
        frames: Vec<MediapipeFrame>,
        visibility: Vec<[f64; NUM_LANDMARKS]>,
        fps: f64,
        source_id: impl Into<String>,
    ) -> Result<Self, SkeletonError> {
        let seq = MediapipeSequence { frames, visibility, fps, source_id: source_id.into() };
        let report = seq.validate();
        if report.is_valid() {
            Ok(seq)
        } else {
            Err(SkeletonError::Validation(report))
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        check_points(&self.frames, self.fps, &mut violations);
        if self.visibility.len() != self.frames.len() {
            violations.push(Violation::VisibilityLength {
                frames: self.frames.len(),
                visibility_rows: self.visibility.len(),
            });
        }
        for (t, row) in self.visibility.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    violations.push(Violation::VisibilityOutOfRange { frame: t, landmark: l, value: v });
                }
            }
        }
        ValidationReport { violations }
    }
}

/// Validates a Human3.6M sequence; see [`SkeletonSequence::validate`].
pub fn validate(seq: &SkeletonSequence) -> ValidationReport {
    seq.validate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceFormat {
    #[default]
    H36mJsonl,
    MediapipeJsonl,
}

impl std::str::FromStr for SequenceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "h36m-jsonl" | "h36m" => Ok(SequenceFormat::H36mJsonl),
            "mediapipe-jsonl" | "mediapipe" => Ok(SequenceFormat::MediapipeJsonl),
            other => Err(format!("unknown sequence format '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedSequence {
    H36m(SkeletonSequence),
    Mediapipe(MediapipeSequence),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    fps: f64,
    units: String,
    format: String,
}

#[derive(Serialize)]
struct FrameRecord<'a> {
    t: usize,
    joints: &'a [Point3],
}

#[derive(Serialize)]
struct MediapipeRecord<'a> {
    t: usize,
    joints: &'a [Point3],
    vis: &'a [f64],
}

#[derive(Deserialize)]
struct RawRecord {
    t: usize,
    joints: Vec<Vec<f64>>,
    #[serde(default)]
    vis: Option<Vec<f64>>,
}

fn source_id_from(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn io_err(path: &Path, source: io::Error) -> SkeletonError {
    SkeletonError::Io { path: path.display().to_string(), source }
}

fn parse_points<const N: usize>(raw: &[Vec<f64>], line: usize) -> Result<[Point3; N], SkeletonError> {
    if raw.len() != N {
        return Err(SkeletonError::Schema {
            line,
            message: format!("expected {N} joints, found {}", raw.len()),
        });
    }
    let mut out = [[0.0; 3]; N];
    for (j, p) in raw.iter().enumerate() {
        if p.len() != 3 {
            return Err(SkeletonError::Schema {
                line,
                message: format!("joint {j} has {} coordinates, expected 3", p.len()),
            });
        }
        out[j] = [p[0], p[1], p[2]];
    }
    Ok(out)
}

/// Loads a sequence file in the declared format and validates it.
pub fn load_sequence(path: &Path, format: SequenceFormat) -> Result<LoadedSequence, SkeletonError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| io_err(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| SkeletonError::Parse { line: 1, message: format!("header: {e}") })?
        }
        None => {
            return Err(SkeletonError::Parse { line: 1, message: "empty file".into() });
        }
    };
    if header.units != UNITS_METERS {
        return Err(SkeletonError::Schema {
            line: 1,
            message: format!("unsupported units '{}', expected 'm'", header.units),
        });
    }
    let expected_format = match format {
        SequenceFormat::H36mJsonl => H36M_FORMAT,
        SequenceFormat::MediapipeJsonl => MEDIAPIPE_FORMAT,
    };
    if header.format != expected_format {
        return Err(SkeletonError::Schema {
            line: 1,
            message: format!("file format '{}' does not match '{expected_format}'", header.format),
        });
    }

    let mut h36m_frames = Vec::new();
    let mut mp_frames = Vec::new();
    let mut visibility = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line)
            .map_err(|e| SkeletonError::Parse { line: line_no, message: e.to_string() })?;
        let expected_t = h36m_frames.len() + mp_frames.len();
        if record.t != expected_t {
            return Err(SkeletonError::Schema {
                line: line_no,
                message: format!("frame index {} out of order, expected {expected_t}", record.t),
            });
        }
        match format {
            SequenceFormat::H36mJsonl => {
                h36m_frames.push(parse_points::<NUM_JOINTS>(&record.joints, line_no)?);
            }
            SequenceFormat::MediapipeJsonl => {
                mp_frames.push(parse_points::<NUM_LANDMARKS>(&record.joints, line_no)?);
                let vis = record.vis.ok_or_else(|| SkeletonError::Schema {
                    line: line_no,
                    message: "missing 'vis' array".into(),
                })?;
                let vis: [f64; NUM_LANDMARKS] = vis.try_into().map_err(|v: Vec<f64>| {
                    SkeletonError::Schema {
                        line: line_no,
                        message: format!("expected {NUM_LANDMARKS} visibilities, found {}", v.len()),
                    }
                })?;
                visibility.push(vis);
            }
        }
    }

    let source_id = source_id_from(path);
    match format {
        SequenceFormat::H36mJsonl => {
            SkeletonSequence::new(h36m_frames, header.fps, source_id).map(LoadedSequence::H36m)
        }
        SequenceFormat::MediapipeJsonl => {
            MediapipeSequence::new(mp_frames, visibility, header.fps, source_id)
                .map(LoadedSequence::Mediapipe)
        }
    }
}

pub fn load_h36m(path: &Path) -> Result<SkeletonSequence, SkeletonError> {
    match load_sequence(path, SequenceFormat::H36mJsonl)? {
        LoadedSequence::H36m(seq) => Ok(seq),
        LoadedSequence::Mediapipe(_) => unreachable!("format requested h36m"),
    }
}

pub fn load_mediapipe(path: &Path) -> Result<MediapipeSequence, SkeletonError> {
    match load_sequence(path, SequenceFormat::MediapipeJsonl)? {
        LoadedSequence::Mediapipe(seq) => Ok(seq),
        LoadedSequence::H36m(_) => unreachable!("format requested mediapipe"),
    }
}

fn write_lines(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), SkeletonError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    body(&mut writer).map_err(|e| io_err(path, e))?;
    writer.flush().map_err(|e| io_err(path, e))
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(io::Error::other)?;
    w.write_all(b"\n")
}

/// Writes a canonical h36m-jsonl file that [`load_sequence`] inverts exactly.
pub fn save_sequence(seq: &SkeletonSequence, path: &Path) -> Result<(), SkeletonError> {
    if seq.frames.is_empty() {
        return Err(SkeletonError::Precondition("cannot save a sequence with no frames".into()));
    }
    let header = Header { fps: seq.fps, units: UNITS_METERS.into(), format: H36M_FORMAT.into() };
    write_lines(path, |w| {
        write_json_line(w, &header)?;
        for (t, joints) in seq.frames.iter().enumerate() {
            write_json_line(w, &FrameRecord { t, joints: joints.as_slice() })?;
        }
        Ok(())
    })
}

pub fn save_mediapipe(seq: &MediapipeSequence, path: &Path) -> Result<(), SkeletonError> {
    if seq.frames.is_empty() {
        return Err(SkeletonError::Precondition("cannot save a sequence with no frames".into()));
    }
    if seq.visibility.len() != seq.frames.len() {
        return Err(SkeletonError::Precondition("visibility rows do not match frames".into()));
    }
    let header = Header { fps: seq.fps, units: UNITS_METERS.into(), format: MEDIAPIPE_FORMAT.into() };
    write_lines(path, |w| {
        write_json_line(w, &header)?;
        for (t, (joints, vis)) in seq.frames.iter().zip(&seq.visibility).enumerate() {
            write_json_line(w, &MediapipeRecord { t, joints: joints.as_slice(), vis: vis.as_slice() })?;
        }
        Ok(())
    })
}

/// Mediapipe landmark indices used by the conversion.
pub mod landmark {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE_INNER: usize = 1;
    pub const LEFT_SHOULDER: usize = 11;
    pub const RIGHT_SHOULDER: usize = 12;
    pub const LEFT_ELBOW: usize = 13;
    pub const RIGHT_ELBOW: usize = 14;
    pub const LEFT_WRIST: usize = 15;
    pub const RIGHT_WRIST: usize = 16;
    pub const LEFT_HIP: usize = 23;
    pub const RIGHT_HIP: usize = 24;
    pub const LEFT_KNEE: usize = 25;
    pub const RIGHT_KNEE: usize = 26;
    pub const LEFT_ANKLE: usize = 27;
    pub const RIGHT_ANKLE: usize = 28;
}

/// Direct copies from a Mediapipe landmark to a Human3.6M joint.
///
/// Mediapipe has no root, spine or thorax; those are interpolated. It has no
/// neck or top-of-head either, so the nose stands in for the neck and the
/// inner left eye for the head.
pub const MEDIAPIPE_COPY_TABLE: [(JointId, usize); 14] = [
    (JointId::RightHip, landmark::RIGHT_HIP),
    (JointId::RightKnee, landmark::RIGHT_KNEE),
    (JointId::RightAnkle, landmark::RIGHT_ANKLE),
    (JointId::LeftHip, landmark::LEFT_HIP),
    (JointId::LeftKnee, landmark::LEFT_KNEE),
    (JointId::LeftAnkle, landmark::LEFT_ANKLE),
    (JointId::Neck, landmark::NOSE),
    (JointId::Head, landmark::LEFT_EYE_INNER),
    (JointId::LeftShoulder, landmark::LEFT_SHOULDER),
    (JointId::LeftElbow, landmark::LEFT_ELBOW),
    (JointId::LeftWrist, landmark::LEFT_WRIST),
    (JointId::RightShoulder, landmark::RIGHT_SHOULDER),
    (JointId::RightElbow, landmark::RIGHT_ELBOW),
    (JointId::RightWrist, landmark::RIGHT_WRIST),
];

pub fn midpoint(a: Point3, b: Point3) -> Point3 {
    [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5, (a[2] + b[2]) * 0.5]
}

/// Converts a Mediapipe sequence to the 17-joint layout with the default table.
pub fn mediapipe_to_h36m(seq: &MediapipeSequence) -> Result<SkeletonSequence, SkeletonError> {
    mediapipe_to_h36m_with(seq, &MEDIAPIPE_COPY_TABLE)
}

/// Converts with an explicit copy table. Root is the hip midpoint, thorax the
/// shoulder midpoint and spine the midpoint of root and thorax.
pub fn mediapipe_to_h36m_with(
    seq: &MediapipeSequence,
    table: &[(JointId, usize)],
) -> Result<SkeletonSequence, SkeletonError> {
    for &(joint, lm) in table {
        if lm >= NUM_LANDMARKS {
            return Err(SkeletonError::Conversion(format!(
                "mapping for {joint} references landmark {lm}, only {NUM_LANDMARKS} exist"
            )));
        }
    }
    let derived = [JointId::Root, JointId::Spine, JointId::Thorax];
    for joint in JointId::ALL {
        if !derived.contains(&joint) && !table.iter().any(|&(j, _)| j == joint) {
            return Err(SkeletonError::Conversion(format!("no landmark mapped to {joint}")));
        }
    }

    let frames = seq
        .frames
        .iter()
        .map(|lm| {
            let mut out = [[0.0; 3]; NUM_JOINTS];
            for &(joint, idx) in table {
                out[joint.index()] = lm[idx];
            }
            let root = midpoint(lm[landmark::LEFT_HIP], lm[landmark::RIGHT_HIP]);
            let thorax = midpoint(lm[landmark::LEFT_SHOULDER], lm[landmark::RIGHT_SHOULDER]);
            out[JointId::Root.index()] = root;
            out[JointId::Thorax.index()] = thorax;
            out[JointId::Spine.index()] = midpoint(root, thorax);
            out
        })
        .collect();
    SkeletonSequence::new(frames, seq.fps, seq.source_id.clone())
}
