//! Skeleton sequence to motion image encoding.
//!
//! A motion image stacks the five kinematic chains, each resampled to
//! `points_per_chain` positions, along the rows; time runs along the columns
//! and the three channels hold x, y and z. The valid region is zero padded to
//! the fixed model input size.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{JointId, Point3, SkeletonSequence};

pub const NUM_CHAINS: usize = 5;
pub const CHANNELS: usize = 3;
const IMAGE_MAGIC: &[u8; 8] = b"LIFTIMG1";

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(
        "motion has {columns} columns after downsampling but the image holds {max}; pass the truncate flag to keep the head"
    )]
    Duration { columns: usize, max: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed motion image file: {0}")]
    Format(String),
}

pub struct KinematicChain {
    pub name: &'static str,
    pub joints: &'static [JointId],
}

/// The five chains in row order.
pub const KINEMATIC_CHAINS: [KinematicChain; NUM_CHAINS] = [
    KinematicChain {
        name: "torso",
        joints: &[JointId::Root, JointId::Spine, JointId::Thorax, JointId::Neck, JointId::Head],
    },
    KinematicChain {
        name: "left_leg",
        joints: &[JointId::Root, JointId::LeftHip, JointId::LeftKnee, JointId::LeftAnkle],
    },
    KinematicChain {
        name: "right_leg",
        joints: &[JointId::Root, JointId::RightHip, JointId::RightKnee, JointId::RightAnkle],
    },
    KinematicChain {
        name: "left_arm",
        joints: &[JointId::Thorax, JointId::LeftShoulder, JointId::LeftElbow, JointId::LeftWrist],
    },
    KinematicChain {
        name: "right_arm",
        joints: &[JointId::Thorax, JointId::RightShoulder, JointId::RightElbow, JointId::RightWrist],
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineOrder {
    SmoothThenDownsample,
    DownsampleThenSmooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub smooth_window: usize,
    pub points_per_chain: usize,
    pub downsample_factor: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Distance in meters mapped to a full value range of 1.0.
    pub norm_scale: f64,
    /// Keep the first `image_width` columns of over-long motions instead of failing.
    pub truncate: bool,
    pub order: PipelineOrder,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            smooth_window: 3,
            points_per_chain: 64,
            downsample_factor: 2,
            image_height: 384,
            image_width: 640,
            norm_scale: 1.0,
            truncate: false,
            order: PipelineOrder::SmoothThenDownsample,
        }
    }
}

impl EncoderConfig {
    pub fn valid_rows(&self) -> usize {
        self.points_per_chain * NUM_CHAINS
    }

    pub fn check(&self) -> Result<(), EncodeError> {
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return Err(EncodeError::Parameter(format!(
                "smooth window must be odd and >= 1, got {}",
                self.smooth_window
            )));
        }
        if self.points_per_chain < 2 {
            return Err(EncodeError::Parameter("points_per_chain must be >= 2".into()));
        }
        if self.valid_rows() > self.image_height {
            return Err(EncodeError::Parameter(format!(
                "{} chain rows do not fit in image height {}",
                self.valid_rows(),
                self.image_height
            )));
        }
        if self.downsample_factor == 0 {
            return Err(EncodeError::Parameter("downsample factor must be >= 1".into()));
        }
        if !(self.norm_scale > 0.0 && self.norm_scale.is_finite()) {
            return Err(EncodeError::Parameter("norm_scale must be positive".into()));
        }
        Ok(())
    }
}

/// A height x width x 3 image stored row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionImage {
    pub height: usize,
    pub width: usize,
    pub valid_rows: usize,
    pub valid_cols: usize,
    pub pixels: Vec<f64>,
    pub source_id: String,
}

impl MotionImage {
    pub fn zeros(height: usize, width: usize, source_id: impl Into<String>) -> Self {
        MotionImage {
            height,
            width,
            valid_rows: 0,
            valid_cols: 0,
            pixels: vec![0.0; height * width * CHANNELS],
            source_id: source_id.into(),
        }
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * CHANNELS
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let o = self.offset(row, col);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, value: [f64; 3]) {
        let o = self.offset(row, col);
        self.pixels[o..o + 3].copy_from_slice(&value);
    }

    /// Sum of absolute values outside the valid region.
    pub fn padding_mass(&self) -> f64 {
        let mut total = 0.0;
        for r in 0..self.height {
            for c in 0..self.width {
                if r < self.valid_rows && c < self.valid_cols {
                    continue;
                }
                total += self.pixel(r, c).iter().map(|v| v.abs()).sum::<f64>();
            }
        }
        total
    }

    /// Writes the LIFTIMG1 format: magic, five u32 LE header fields, then f32 LE pixels.
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(IMAGE_MAGIC)?;
        for v in [self.height, self.width, CHANNELS, self.valid_rows, self.valid_cols] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.pixels.len() * 4);
        for &p in &self.pixels {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read, source_id: impl Into<String>) -> Result<Self, EncodeError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != IMAGE_MAGIC {
            return Err(EncodeError::Format("bad magic, expected LIFTIMG1".into()));
        }
        let mut header = [0usize; 5];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *h = u32::from_le_bytes(b) as usize;
        }
        let [height, width, channels, valid_rows, valid_cols] = header;
        if channels != CHANNELS {
            return Err(EncodeError::Format(format!("expected 3 channels, found {channels}")));
        }
        if valid_rows > height || valid_cols > width {
            return Err(EncodeError::Format("valid region exceeds image size".into()));
        }
        let n = height * width * CHANNELS;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let pixels = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(MotionImage { height, width, valid_rows, valid_cols, pixels, source_id: source_id.into() })
    }

    pub fn save(&self, path: &Path) -> Result<(), EncodeError> {
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncodeError> {
        let mut file = io::BufReader::new(fs::File::open(path)?);
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::read_from(&mut file, id)
    }
}

/// Centered moving average over `window` frames; ends use the shrunken window.
pub fn smooth(seq: &SkeletonSequence, window: usize) -> Result<SkeletonSequence, EncodeError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(EncodeError::Parameter(format!("window must be odd, got {window}")));
    }
    let t = seq.frames.len();
    if window > t {
        return Err(EncodeError::Parameter(format!(
            "window {window} exceeds sequence length {t}"
        )));
    }
    let half = window / 2;
    let frames = (0..t)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(t - 1);
            let n = (hi - lo + 1) as f64;
            let mut out = [[0.0; 3]; crate::skeleton::NUM_JOINTS];
            for frame in &seq.frames[lo..=hi] {
                for (acc, p) in out.iter_mut().zip(frame) {
                    for d in 0..3 {
                        acc[d] += p[d];
                    }
                }
            }
            for p in out.iter_mut() {
                for v in p.iter_mut() {
                    *v /= n;
                }
            }
            out
        })
        .collect();
    Ok(SkeletonSequence { frames, fps: seq.fps, source_id: seq.source_id.clone() })
}

/// Keeps every `factor`-th frame starting at frame 0.
pub fn downsample(seq: &SkeletonSequence, factor: usize) -> Result<SkeletonSequence, EncodeError> {
    if factor == 0 {
        return Err(EncodeError::Parameter("downsample factor must be >= 1".into()));
    }
    Ok(SkeletonSequence {
        frames: seq.frames.iter().step_by(factor).copied().collect(),
        fps: seq.fps / factor as f64,
        source_id: seq.source_id.clone(),
    })
}

/// Resamples a polyline to `m` points, interpolating each axis linearly
/// against joint index with abscissae evenly spread over `[0, P-1]`.
pub fn interpolate_chain(points: &[Point3], m: usize) -> Result<Vec<Point3>, EncodeError> {
    let p = points.len();
    if p < 2 {
        return Err(EncodeError::Parameter(format!("chain needs at least 2 points, got {p}")));
    }
    if m < 2 {
        return Err(EncodeError::Parameter(format!("need at least 2 output points, got {m}")));
    }
    let span = (p - 1) as f64;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        if i == m - 1 {
            out.push(points[p - 1]);
            continue;
        }
        let x = i as f64 * span / (m - 1) as f64;
        let seg = (x.floor() as usize).min(p - 2);
        let frac = x - seg as f64;
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([
            a[0] + (b[0] - a[0]) * frac,
            a[1] + (b[1] - a[1]) * frac,
            a[2] + (b[2] - a[2]) * frac,
        ]);
    }
    Ok(out)
}

/// Centers on the frame-0 root and maps each coordinate to
/// `clamp(0.5 + v / (2 * norm_scale), 0, 1)`.
pub fn normalize_coordinates(seq: &SkeletonSequence, cfg: &EncoderConfig) -> SkeletonSequence {
    let origin = seq.frames.first().map(|f| f[JointId::Root.index()]).unwrap_or([0.0; 3]);
    let scale = 2.0 * cfg.norm_scale;
    let frames = seq
        .frames
        .iter()
        .map(|frame| {
            let mut out = *frame;
            for p in out.iter_mut() {
                for d in 0..3 {
                    p[d] = (0.5 + (p[d] - origin[d]) / scale).clamp(0.0, 1.0);
                }
            }
            out
        })
        .collect();
    SkeletonSequence { frames, fps: seq.fps, source_id: seq.source_id.clone() }
}

/// Runs the full pipeline and returns the padded image.
pub fn encode(seq: &SkeletonSequence, cfg: &EncoderConfig) -> Result<MotionImage, EncodeError> {
    cfg.check()?;
    let reduced = match cfg.order {
        PipelineOrder::SmoothThenDownsample => {
            downsample(&smooth(seq, cfg.smooth_window)?, cfg.downsample_factor)?
        }
        PipelineOrder::DownsampleThenSmooth => {
            smooth(&downsample(seq, cfg.downsample_factor)?, cfg.smooth_window)?
        }
    };
    let columns = reduced.frames.len();
    if columns > cfg.image_width && !cfg.truncate {
        return Err(EncodeError::Duration { columns, max: cfg.image_width });
    }
    let normalized = normalize_coordinates(&reduced, cfg);

    let m = cfg.points_per_chain;
    let valid_cols = columns.min(cfg.image_width);
    let mut image = MotionImage::zeros(cfg.image_height, cfg.image_width, seq.source_id.clone());
    image.valid_rows = cfg.valid_rows();
    image.valid_cols = valid_cols;
    let mut chain_points: Vec<Point3> = Vec::with_capacity(5);
    for (col, frame) in normalized.frames.iter().take(valid_cols).enumerate() {
        for (c, chain) in KINEMATIC_CHAINS.iter().enumerate() {
            chain_points.clear();
            chain_points.extend(chain.joints.iter().map(|j| frame[j.index()]));
            for (k, point) in interpolate_chain(&chain_points, m)?.into_iter().enumerate() {
                image.set_pixel(c * m + k, col, point);
            }
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::NUM_JOINTS;

    fn series_sequence(values: &[f64]) -> SkeletonSequence {
        let frames = values.iter().map(|&v| [[v, -v, 2.0 * v]; NUM_JOINTS]).collect();
        SkeletonSequence { frames, fps: 25.0, source_id: "s".into() }
    }

    fn static_sequence(t: usize) -> SkeletonSequence {
        let mut pose = [[0.0; 3]; NUM_JOINTS];
        for (j, p) in pose.iter_mut().enumerate() {
            *p = [0.02 * j as f64, 0.05 * j as f64 - 0.4, 0.01];
        }
        SkeletonSequence { frames: vec![pose; t], fps: 25.0, source_id: "static".into() }
    }

    #[test]
    fn smoothing_constant_is_identity() {
        let seq = series_sequence(&[2.0; 6]);
        assert_eq!(smooth(&seq, 3).unwrap(), seq);
    }

    #[test]
    fn smoothing_arithmetic_progression() {
        let out = smooth(&series_sequence(&[0.0, 3.0, 6.0]), 3).unwrap();
        assert_eq!(out.frames[1][0][0], 3.0);
    }

    #[test]
    fn smoothing_shrinks_window_at_ends() {
        let out = smooth(&series_sequence(&[0.0, 3.0, 6.0, 9.0]), 3).unwrap();
        let xs: Vec<f64> = out.frames.iter().map(|f| f[4][0]).collect();
        assert_eq!(xs, vec![1.5, 3.0, 6.0, 7.5]);
        let ys: Vec<f64> = out.frames.iter().map(|f| f[4][1]).collect();
        assert_eq!(ys, vec![-1.5, -3.0, -6.0, -7.5]);
    }

    #[test]
    fn smoothing_rejects_bad_windows() {
        let seq = series_sequence(&[0.0, 1.0]);
        assert!(smooth(&seq, 3).is_err());
        assert!(smooth(&seq, 2).is_err());
        assert!(smooth(&seq, 1).is_ok());
    }

    #[test]
    fn downsample_halves_frame_rate() {
        let seq = static_sequence(100);
        assert_eq!(downsample(&seq, 1).unwrap(), seq);
        let half = downsample(&seq, 2).unwrap();
        assert_eq!(half.frames.len(), 50);
        assert_eq!(half.fps, 12.5);
        let long = downsample(&static_sequence(1280), 2).unwrap();
        assert_eq!(long.frames.len(), 640);
        assert!((long.duration_secs() - 51.2).abs() < 1e-12);
    }

    #[test]
    fn interpolate_two_points() {
        let out = interpolate_chain(&[[0.0; 3], [1.0; 3]], 4).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (p, e) in out.iter().zip(expected) {
            for v in p {
                assert!((v - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interpolate_identical_points() {
        let out = interpolate_chain(&[[0.3, 0.1, 0.7]; 5], 64).unwrap();
        assert!(out.iter().all(|p| *p == [0.3, 0.1, 0.7]));
    }

    #[test]
    fn interpolate_needs_two_points() {
        assert!(interpolate_chain(&[[0.0; 3]], 8).is_err());
    }

    #[test]
    fn normalization_fixed_points() {
        let cfg = EncoderConfig { norm_scale: 0.5, ..Default::default() };
        let mut seq = static_sequence(2);
        seq.frames[1][3] = [0.5 + seq.frames[0][0][0], -1.5 + seq.frames[0][0][1], 0.01];
        let out = normalize_coordinates(&seq, &cfg);
        assert_eq!(out.frames[0][0], [0.5, 0.5, 0.5]);
        assert_eq!(out.frames[1][3][0], 1.0);
        assert_eq!(out.frames[1][3][1], 0.0);
    }

    #[test]
    fn encode_pads_short_motion() {
        let img = encode(&static_sequence(100), &EncoderConfig::default()).unwrap();
        assert_eq!((img.height, img.width, img.valid_rows, img.valid_cols), (384, 640, 320, 50));
        assert_eq!(img.padding_mass(), 0.0);
        for r in 0..320 {
            for c in 1..50 {
                assert_eq!(img.pixel(r, c), img.pixel(r, 0));
            }
        }
    }

    #[test]
    fn encode_fills_full_width() {
        let img = encode(&static_sequence(1280), &EncoderConfig::default()).unwrap();
        assert_eq!(img.valid_cols, 640);
    }

    #[test]
    fn encode_rejects_over_length_unless_truncating() {
        let seq = static_sequence(1282);
        assert!(matches!(
            encode(&seq, &EncoderConfig::default()),
            Err(EncodeError::Duration { columns: 641, max: 640 })
        ));
        let cfg = EncoderConfig { truncate: true, ..Default::default() };
        assert_eq!(encode(&seq, &cfg).unwrap().valid_cols, 640);
    }

    #[test]
    fn image_file_round_trip() {
        let img = encode(&static_sequence(20), &EncoderConfig::default()).unwrap();
        let mut buf = Vec::new();
        img.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"LIFTIMG1");
        assert_eq!(buf.len(), 8 + 20 + 384 * 640 * 3 * 4);
        let back = MotionImage::read_from(&mut buf.as_slice(), "static").unwrap();
        assert_eq!(back.valid_cols, 10);
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert_eq!(*a, *b as f32 as f64);
        }
        buf[0] = b'X';
        assert!(MotionImage::read_from(&mut buf.as_slice(), "x").is_err());
    }
}
