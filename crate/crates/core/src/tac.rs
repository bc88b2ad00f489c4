//! Temporal attention collapse score.
//!
//! A candidate's per-frame attention, averaged over its generated prefix, is
//! normalised into a distribution over frames. Its entropy is the frame-level
//! score `s_f`; the entropy of the same mass pooled per segment is the
//! segment-level score `s_c`. Their sum is the candidate's score: low values
//! mean attention collapsed onto a few frames or a few near-static segments.
//!
//! Entropies are in nats with `0 ln 0 = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::Segmentation;
use crate::trace::{CandidateTrace, StepRecord, VideoContext};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TacError {
    #[error("total attention mass is zero")]
    DegenerateAttention,
    #[error("prefix is empty")]
    EmptyPrefix,
    #[error("prefix length {prefix_len} exceeds candidate length {len}")]
    PrefixTooLong { prefix_len: usize, len: usize },
    #[error("step {step} has {found} frame values, expected {expected}")]
    DimensionMismatch {
        step: usize,
        expected: usize,
        found: usize,
    },
    #[error("segmentation does not partition frames 1..={frames}")]
    SegmentationMismatch { frames: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TacScore {
    pub s_f: f64,
    pub s_c: f64,
    pub total: f64,
    /// Normalised per-frame attention the scores were computed from.
    pub frame_profile: Vec<f64>,
}

/// Mean attention each frame received over the prefix:
/// `a_t = (1 / (M J)) * sum_j b_{j,t}`.
pub fn frame_attention_profile(
    steps: &[StepRecord],
    frames: usize,
    patches: usize,
) -> Result<Vec<f64>, TacError> {
    if steps.is_empty() {
        return Err(TacError::EmptyPrefix);
    }
    let mut acc = vec![0.0f64; frames];
    for (j, step) in steps.iter().enumerate() {
        if step.frame_attention.len() != frames {
            return Err(TacError::DimensionMismatch {
                step: j + 1,
                expected: frames,
                found: step.frame_attention.len(),
            });
        }
        for (a, &b) in acc.iter_mut().zip(&step.frame_attention) {
            *a += b;
        }
    }
    let scale = 1.0 / (patches as f64 * steps.len() as f64);
    acc.iter_mut().for_each(|a| *a *= scale);
    if !(acc.iter().sum::<f64>() > 0.0) {
        return Err(TacError::DegenerateAttention);
    }
    Ok(acc)
}

/// Entropy of `masses / sum(masses)`, clamped to `[0, ln n]` to absorb
/// rounding.
fn normalized_entropy(masses: &[f64]) -> Result<f64, TacError> {
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(TacError::DegenerateAttention);
    }
    let h: f64 = masses
        .iter()
        .map(|&m| {
            let p = m / total;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    // `+ 0.0` turns a `-0.0` from the sign flip into `0.0`.
    Ok(h.clamp(0.0, (masses.len() as f64).ln()) + 0.0)
}

/// Frame-level collapse score: entropy of the normalised frame profile.
pub fn frame_collapse_score(a: &[f64]) -> Result<f64, TacError> {
    normalized_entropy(a)
}

/// Attention mass per segment, in segment order.
pub fn segment_masses(a: &[f64], seg: &Segmentation) -> Result<Vec<f64>, TacError> {
    let frames = a.len();
    let mut expected_start = 1;
    for &(start, end) in &seg.segments {
        if start != expected_start || end < start || end > frames {
            return Err(TacError::SegmentationMismatch { frames });
        }
        expected_start = end + 1;
    }
    if expected_start != frames + 1 {
        return Err(TacError::SegmentationMismatch { frames });
    }
    Ok(seg
        .segments
        .iter()
        .map(|&(s, e)| a[s - 1..e].iter().sum())
        .collect())
}

/// Segment-level collapse score: entropy of attention pooled per segment.
pub fn segment_collapse_score(a: &[f64], seg: &Segmentation) -> Result<f64, TacError> {
    normalized_entropy(&segment_masses(a, seg)?)
}

/// Scores the first `prefix_len` steps of a candidate.
pub fn tac_score(
    candidate: &CandidateTrace,
    prefix_len: usize,
    video: &VideoContext,
    seg: &Segmentation,
) -> Result<TacScore, TacError> {
    if prefix_len == 0 {
        return Err(TacError::EmptyPrefix);
    }
    if prefix_len > candidate.len() {
        return Err(TacError::PrefixTooLong {
            prefix_len,
            len: candidate.len(),
        });
    }
    score_steps(
        &candidate.steps[..prefix_len],
        video.frames(),
        video.patches_per_frame(),
        seg,
    )
}

/// [`tac_score`] over an explicit step slice.
pub fn score_steps(
    steps: &[StepRecord],
    frames: usize,
    patches: usize,
    seg: &Segmentation,
) -> Result<TacScore, TacError> {
    let a = frame_attention_profile(steps, frames, patches)?;
    let s_f = frame_collapse_score(&a)?;
    let s_c = segment_collapse_score(&a, seg)?;
    let total: f64 = a.iter().sum();
    Ok(TacScore {
        s_f,
        s_c,
        total: s_f + s_c,
        frame_profile: a.iter().map(|x| x / total).collect(),
    })
}
