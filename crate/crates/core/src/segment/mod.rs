//! Temporal segmentation of a video from its patch embeddings.
//!
//! Consecutive frames are compared with a motion-aware cost between every
//! pair of patches (cosine distance of the embeddings plus the Euclidean
//! displacement of their normalised coordinates). The inter-frame distance is
//! the cost of the best one-to-one patch matching, and a frame opens a new
//! segment when its distance exceeds the threshold `gamma`.
//!
//! Frame numbers in [`Segmentation`] are 1-based.

mod assignment;

use serde::Serialize;
use thiserror::Error;

pub use assignment::{greedy_matching, min_cost_matching, Assignment, CostMatrix};

use crate::trace::{FramePatches, GammaMode, MatchingStrategy, VideoContext};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    /// Frame `0` is the earlier frame of a pair passed to
    /// [`motion_cost_matrix`]; [`inter_frame_distances`] reports real
    /// 1-based frame numbers.
    #[error("patch {patch} of frame {frame} has a zero-norm embedding")]
    ZeroVector { frame: usize, patch: usize },
    #[error("cost matrix is not square ({rows} x {cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("frames have different shapes: {0}")]
    ShapeMismatch(String),
    #[error("automatic gamma needs at least one inter-frame distance (video has a single frame)")]
    EmptyDistances,
}

/// Partition of frames `1..=T` into contiguous segments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segmentation {
    /// Frames that open a new segment, ascending, each in `2..=T`.
    pub boundaries: Vec<usize>,
    /// Inclusive `(start, end)` frame ranges.
    pub segments: Vec<(usize, usize)>,
    pub k: usize,
    /// `distances[i]` is the distance between frames `i + 1` and `i + 2`.
    pub distances: Vec<f64>,
    pub gamma_used: f64,
}

impl Segmentation {
    pub fn frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.1)
    }

    /// One segment spanning all `frames`.
    pub fn single(frames: usize) -> Self {
        Self {
            boundaries: Vec::new(),
            segments: vec![(1, frames)],
            k: 1,
            distances: Vec::new(),
            gamma_used: f64::INFINITY,
        }
    }
}

/// Unit-normalised embeddings of one frame, `f64`, row-major `[M, D]`.
struct UnitFrame {
    unit: Vec<f64>,
    coords: Vec<f64>,
}

fn unit_frame(frame: &FramePatches<'_>, frame_no: usize) -> Result<UnitFrame, SegmentError> {
    let m = frame.patches();
    let d = frame.embed_dim;
    let mut unit = Vec::with_capacity(m * d);
    for p in 0..m {
        let e = frame.embedding(p);
        let norm = e.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(SegmentError::ZeroVector {
                frame: frame_no,
                patch: p,
            });
        }
        unit.extend(e.iter().map(|&x| x as f64 / norm));
    }
    let coords = frame.coords.iter().map(|&c| c as f64).collect();
    Ok(UnitFrame { unit, coords })
}

fn cost_between(
    prev: &UnitFrame,
    prev_raw: &FramePatches<'_>,
    cur: &UnitFrame,
    cur_raw: &FramePatches<'_>,
    d: usize,
) -> CostMatrix {
    let m = prev_raw.patches();
    let mut data = Vec::with_capacity(m * m);
    for i in 0..m {
        let a = &prev.unit[i * d..(i + 1) * d];
        let a_raw = prev_raw.embedding(i);
        let (ax, ay) = (prev.coords[2 * i], prev.coords[2 * i + 1]);
        for j in 0..m {
            // Bitwise-equal embeddings have cosine exactly 1.
            let appearance = if a_raw == cur_raw.embedding(j) {
                0.0
            } else {
                let b = &cur.unit[j * d..(j + 1) * d];
                let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                1.0 - cos.clamp(-1.0, 1.0)
            };
            let dx = cur.coords[2 * j] - ax;
            let dy = cur.coords[2 * j + 1] - ay;
            data.push(appearance + dx.hypot(dy));
        }
    }
    CostMatrix::from_vec(m, data).expect("square by construction")
}

/// Motion-aware cost between patch `i` of the earlier frame and patch `j` of
/// the later one: `(1 - cos(v_i, v_j)) + |u_j - u_i|`. Entries lie in
/// `[0, 2 + sqrt(2)]`.
pub fn motion_cost_matrix(
    prev: FramePatches<'_>,
    cur: FramePatches<'_>,
) -> Result<CostMatrix, SegmentError> {
    if prev.embed_dim != cur.embed_dim || prev.patches() != cur.patches() {
        return Err(SegmentError::ShapeMismatch(format!(
            "{} patches x {} dims vs {} patches x {} dims",
            prev.patches(),
            prev.embed_dim,
            cur.patches(),
            cur.embed_dim
        )));
    }
    if prev.embeddings.len() != prev.patches() * prev.embed_dim
        || cur.embeddings.len() != cur.patches() * cur.embed_dim
    {
        return Err(SegmentError::ShapeMismatch(
            "embedding buffer does not match patch count".into(),
        ));
    }
    let a = unit_frame(&prev, 0)?;
    let b = unit_frame(&cur, 1)?;
    Ok(cost_between(&a, &prev, &b, &cur, prev.embed_dim))
}

fn match_cost(cost: &CostMatrix, strategy: MatchingStrategy) -> Result<f64, SegmentError> {
    Ok(match strategy {
        MatchingStrategy::Exact => min_cost_matching(cost)?.total_cost,
        MatchingStrategy::Greedy => greedy_matching(cost)?.total_cost,
    })
}

/// Minimum matching cost between every pair of consecutive frames, length
/// `T - 1` (empty for a single frame).
pub fn inter_frame_distances(video: &VideoContext) -> Result<Vec<f64>, SegmentError> {
    inter_frame_distances_with(video, MatchingStrategy::Exact)
}

pub fn inter_frame_distances_with(
    video: &VideoContext,
    strategy: MatchingStrategy,
) -> Result<Vec<f64>, SegmentError> {
    let t_count = video.frames();
    if t_count < 2 {
        return Ok(Vec::new());
    }
    let d = video.embed_dim();
    let mut out = Vec::with_capacity(t_count - 1);
    let mut prev_raw = video.frame(0);
    let mut prev = unit_frame(&prev_raw, 1)?;
    for t in 1..t_count {
        let cur_raw = video.frame(t);
        let cur = unit_frame(&cur_raw, t + 1)?;
        let cost = cost_between(&prev, &prev_raw, &cur, &cur_raw, d);
        out.push(match_cost(&cost, strategy)?);
        prev = cur;
        prev_raw = cur_raw;
    }
    Ok(out)
}

/// Resolves the segmentation threshold. `Auto { c }` gives
/// `mean + c * std` with the population standard deviation.
pub fn resolve_gamma(distances: &[f64], mode: &GammaMode) -> Result<f64, SegmentError> {
    match *mode {
        GammaMode::Fixed { value } => Ok(value),
        GammaMode::Auto { c } => {
            if distances.is_empty() {
                return Err(SegmentError::EmptyDistances);
            }
            let n = distances.len() as f64;
            let mean = distances.iter().sum::<f64>() / n;
            let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
            Ok(mean + c * var.sqrt())
        }
    }
}

/// Splits frames `1..=T` (with `T = distances.len() + 1`) wherever
/// `d_t > gamma`.
pub fn segment_video(distances: &[f64], gamma: f64) -> Segmentation {
    let frames = distances.len() + 1;
    let boundaries: Vec<usize> = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > gamma)
        .map(|(i, _)| i + 2)
        .collect();
    let mut segments = Vec::with_capacity(boundaries.len() + 1);
    let mut start = 1;
    for &b in &boundaries {
        segments.push((start, b - 1));
        start = b;
    }
    segments.push((start, frames));
    Segmentation {
        k: segments.len(),
        boundaries,
        segments,
        distances: distances.to_vec(),
        gamma_used: gamma,
    }
}

/// Full pipeline: distances, threshold, segmentation. A single-frame video
/// is one segment whatever the gamma mode.
pub fn segment(
    video: &VideoContext,
    mode: &GammaMode,
    strategy: MatchingStrategy,
) -> Result<Segmentation, SegmentError> {
    let distances = inter_frame_distances_with(video, strategy)?;
    if distances.is_empty() {
        let mut seg = Segmentation::single(video.frames());
        if let GammaMode::Fixed { value } = *mode {
            seg.gamma_used = value;
        }
        return Ok(seg);
    }
    let gamma = resolve_gamma(&distances, mode)?;
    Ok(segment_video(&distances, gamma))
}
