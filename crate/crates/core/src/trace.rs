//! Canonical data model shared by every stage: the encoded video, per-token
//! attention summaries, candidate traces and run configuration.
//!
//! Embeddings and coordinates are `f32`, as model runtimes emit them.
//! Attention values are held as `f64` so arithmetic on a trace (rescaling,
//! merging) adds no rounding of its own; the `.sstr` container stores them as
//! `f32` and only accepts values that convert exactly. Every score is computed
//! in `f64`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Patch layout of a frame. Patch `m` sits at row `m / width`, column
/// `m % width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// The most square `h x w` factorisation of `patches` with `h <= w`.
    pub fn for_patches(patches: usize) -> Self {
        let mut height = (patches as f64).sqrt() as usize;
        while height > 1 && !patches.is_multiple_of(height) {
            height -= 1;
        }
        let height = height.max(1);
        Self {
            height,
            width: patches / height,
        }
    }

    pub fn patches(&self) -> usize {
        self.height * self.width
    }

    /// Normalised `(x, y)` centre of patch `m`'s grid cell.
    pub fn cell_center(&self, m: usize) -> (f32, f32) {
        let row = m / self.width;
        let col = m % self.width;
        (
            ((col as f64 + 0.5) / self.width as f64) as f32,
            ((row as f64 + 0.5) / self.height as f64) as f32,
        )
    }
}

/// Shape errors raised while assembling a [`VideoContext`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("{what} must be at least 1")]
    ZeroDimension { what: &'static str },
    #[error("{what} has {found} values, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Patch embeddings and normalised patch coordinates for `T` frames of
/// `M` patches each.
///
/// Embeddings are stored row-major as `[T, M, D]`, coordinates as `[T, M, 2]`
/// holding `(x, y)` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoContext {
    frames: usize,
    embed_dim: usize,
    grid: Grid,
    patch_embeddings: Vec<f32>,
    patch_coords: Vec<f32>,
}

/// Borrowed view of one frame's patches.
#[derive(Debug, Clone, Copy)]
pub struct FramePatches<'a> {
    pub embeddings: &'a [f32],
    pub coords: &'a [f32],
    pub embed_dim: usize,
}

impl<'a> FramePatches<'a> {
    pub fn patches(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn embedding(&self, m: usize) -> &'a [f32] {
        &self.embeddings[m * self.embed_dim..(m + 1) * self.embed_dim]
    }

    pub fn coord(&self, m: usize) -> (f32, f32) {
        (self.coords[2 * m], self.coords[2 * m + 1])
    }
}

impl VideoContext {
    /// Builds a video from flat buffers. Only shapes are checked here; value
    /// invariants are the job of [`validate`].
    pub fn new(
        frames: usize,
        embed_dim: usize,
        grid: Grid,
        patch_embeddings: Vec<f32>,
        patch_coords: Vec<f32>,
    ) -> Result<Self, ShapeError> {
        for (what, v) in [
            ("frames", frames),
            ("embed_dim", embed_dim),
            ("grid height", grid.height),
            ("grid width", grid.width),
        ] {
            if v == 0 {
                return Err(ShapeError::ZeroDimension { what });
            }
        }
        let m = grid.patches();
        let expected = frames * m * embed_dim;
        if patch_embeddings.len() != expected {
            return Err(ShapeError::Length {
                what: "patch_embeddings",
                expected,
                found: patch_embeddings.len(),
            });
        }
        let expected = frames * m * 2;
        if patch_coords.len() != expected {
            return Err(ShapeError::Length {
                what: "patch_coords",
                expected,
                found: patch_coords.len(),
            });
        }
        Ok(Self {
            frames,
            embed_dim,
            grid,
            patch_embeddings,
            patch_coords,
        })
    }

    /// Builds a video whose patch coordinates are the grid-cell centres.
    pub fn with_grid_coords(
        frames: usize,
        embed_dim: usize,
        grid: Grid,
        patch_embeddings: Vec<f32>,
    ) -> Result<Self, ShapeError> {
        let m = grid.patches();
        let mut coords = Vec::with_capacity(frames * m * 2);
        for _ in 0..frames {
            for p in 0..m {
                let (x, y) = grid.cell_center(p);
                coords.push(x);
                coords.push(y);
            }
        }
        Self::new(frames, embed_dim, grid, patch_embeddings, coords)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches_per_frame(&self) -> usize {
        self.grid.patches()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn patch_embeddings(&self) -> &[f32] {
        &self.patch_embeddings
    }

    pub fn patch_coords(&self) -> &[f32] {
        &self.patch_coords
    }

    /// Patches of frame `t` (0-based).
    pub fn frame(&self, t: usize) -> FramePatches<'_> {
        let m = self.patches_per_frame();
        let e = m * self.embed_dim;
        FramePatches {
            embeddings: &self.patch_embeddings[t * e..(t + 1) * e],
            coords: &self.patch_coords[t * m * 2..(t + 1) * m * 2],
            embed_dim: self.embed_dim,
        }
    }
}

/// Attention summary of one generated token, already averaged over heads and
/// layers by the producer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub token_id: u32,
    /// Attention mass from this token onto all patches of each frame.
    pub frame_attention: Vec<f64>,
    /// Attention mass onto previously generated response tokens.
    pub text_attention: f64,
}

impl StepRecord {
    pub fn new(token_id: u32, frame_attention: Vec<f64>, text_attention: f64) -> Self {
        Self {
            token_id,
            frame_attention,
            text_attention,
        }
    }

    /// Total attention onto visual tokens.
    pub fn visual_attention(&self) -> f64 {
        self.frame_attention.iter().sum()
    }
}

/// One sampled response. `steps[j - 1]` is generation step `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub candidate_id: u32,
    pub steps: Vec<StepRecord>,
    /// True when an end-of-sequence token terminated this candidate.
    pub finished: bool,
}

impl CandidateTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// How the segmentation threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GammaMode {
    /// `mean(d) + c * std(d)` over the video's own inter-frame distances.
    Auto { c: f64 },
    /// A fixed threshold.
    Fixed { value: f64 },
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::Auto { c: 1.0 }
    }
}

/// Assignment solver used for inter-frame distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingStrategy {
    /// Exact minimum-cost perfect matching.
    #[default]
    Exact,
    /// Row-by-row cheapest free column. An upper bound on the exact cost,
    /// only meant for very large patch counts.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Visual/text attention ratio below which a step counts toward vanishing.
    pub alpha: f64,
    /// Consecutive below-threshold steps required to trigger.
    pub window: usize,
    pub gamma_mode: GammaMode,
    pub n_candidates: usize,
    /// Prefix length used when a candidate neither vanishes nor ends.
    pub max_prefix_tokens: usize,
    pub matching: MatchingStrategy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 1.2,
            window: 10,
            gamma_mode: GammaMode::default(),
            n_candidates: 10,
            max_prefix_tokens: 512,
            matching: MatchingStrategy::Exact,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: &str, msg: String| {
            out.push(Violation::new(path, ViolationKind::InvalidConfig(msg)));
        };
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            bad("config.alpha", format!("alpha must be positive and finite, got {}", self.alpha));
        }
        if self.window == 0 {
            bad("config.window", "window must be at least 1".into());
        }
        if self.n_candidates == 0 {
            bad("config.n_candidates", "n_candidates must be at least 1".into());
        }
        if self.max_prefix_tokens < self.window.max(1) {
            bad(
                "config.max_prefix_tokens",
                format!(
                    "max_prefix_tokens ({}) must be at least window ({})",
                    self.max_prefix_tokens, self.window
                ),
            );
        }
        match self.gamma_mode {
            GammaMode::Auto { c } if !c.is_finite() => {
                bad("config.gamma_mode.c", format!("auto gamma factor must be finite, got {c}"))
            }
            GammaMode::Fixed { value } if value.is_nan() => {
                bad("config.gamma_mode.value", "fixed gamma is NaN".into())
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    DimensionMismatch { expected: usize, found: usize },
    NonFinite,
    Negative,
    CoordinateOutOfRange,
    ZeroEmbedding,
    EmptyCandidateSet,
    CandidateIdOutOfRange { n_candidates: usize },
    DuplicateCandidateId,
    CandidateCountMismatch { expected: usize, found: usize },
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl Violation {
    pub fn new(path: impl Into<String>, kind: ViolationKind) -> Self {
        Self {
            path: path.into(),
            kind,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::DimensionMismatch { expected, found } => {
                write!(f, "{}: dimension mismatch (expected {expected}, found {found})", self.path)
            }
            ViolationKind::NonFinite => write!(f, "{}: non-finite value", self.path),
            ViolationKind::Negative => write!(f, "{}: negative value", self.path),
            ViolationKind::CoordinateOutOfRange => {
                write!(f, "{}: coordinate outside [0, 1]", self.path)
            }
            ViolationKind::ZeroEmbedding => write!(f, "{}: zero-norm embedding", self.path),
            ViolationKind::EmptyCandidateSet => write!(f, "{}: no candidates", self.path),
            ViolationKind::CandidateIdOutOfRange { n_candidates } => {
                write!(f, "{}: candidate id outside [0, {n_candidates})", self.path)
            }
            ViolationKind::DuplicateCandidateId => write!(f, "{}: duplicate candidate id", self.path),
            ViolationKind::CandidateCountMismatch { expected, found } => {
                write!(f, "{}: expected {expected} candidates, found {found}", self.path)
            }
            ViolationKind::InvalidConfig(msg) => write!(f, "{}: {msg}", self.path),
        }
    }
}

/// Every violation found by [`validate`], each with a path into the input.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("{} violation(s), first: {}", violations.len(), violations.first().map(|v| v.to_string()).unwrap_or_default())]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    pub fn has(&self, pred: impl Fn(&ViolationKind) -> bool) -> bool {
        self.violations.iter().any(|v| pred(&v.kind))
    }
}

fn into_result(violations: Vec<Violation>) -> Result<(), ValidationError> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationError { violations })
    }
}

/// Value checks on the video alone: finiteness, coordinate range and
/// non-zero embeddings.
pub fn check_video(video: &VideoContext) -> Vec<Violation> {
    let mut out = Vec::new();
    let d = video.embed_dim();
    let m = video.patches_per_frame();
    for t in 0..video.frames() {
        let frame = video.frame(t);
        for p in 0..m {
            let emb = frame.embedding(p);
            if let Some(k) = emb.iter().position(|v| !v.is_finite()) {
                out.push(Violation::new(
                    format!("video.patch_embeddings[{t}][{p}][{k}]"),
                    ViolationKind::NonFinite,
                ));
            } else if emb.iter().all(|&v| v == 0.0) {
                out.push(Violation::new(
                    format!("video.patch_embeddings[{t}][{p}]"),
                    ViolationKind::ZeroEmbedding,
                ));
            }
            let (x, y) = frame.coord(p);
            for (k, c) in [x, y].into_iter().enumerate() {
                let path = format!("video.patch_coords[{t}][{p}][{k}]");
                if !c.is_finite() {
                    out.push(Violation::new(path, ViolationKind::NonFinite));
                } else if !(0.0..=1.0).contains(&c) {
                    out.push(Violation::new(path, ViolationKind::CoordinateOutOfRange));
                }
            }
        }
    }
    debug_assert_eq!(video.patch_embeddings().len(), video.frames() * m * d);
    out
}

/// Value checks on one step against a video with `frames` frames.
pub fn check_step(record: &StepRecord, frames: usize, path: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.frame_attention.len() != frames {
        out.push(Violation::new(
            format!("{path}.frame_attention"),
            ViolationKind::DimensionMismatch {
                expected: frames,
                found: record.frame_attention.len(),
            },
        ));
    }
    if let Some(k) = record.frame_attention.iter().position(|v| !v.is_finite()) {
        out.push(Violation::new(
            format!("{path}.frame_attention[{k}]"),
            ViolationKind::NonFinite,
        ));
    } else if let Some(k) = record.frame_attention.iter().position(|&v| v < 0.0) {
        out.push(Violation::new(
            format!("{path}.frame_attention[{k}]"),
            ViolationKind::Negative,
        ));
    }
    if !record.text_attention.is_finite() {
        out.push(Violation::new(
            format!("{path}.text_attention"),
            ViolationKind::NonFinite,
        ));
    } else if record.text_attention < 0.0 {
        out.push(Violation::new(
            format!("{path}.text_attention"),
            ViolationKind::Negative,
        ));
    }
    out
}

/// Structural checks on candidates: step values plus distinct ids. Does not
/// require a non-empty set.
pub fn check_candidates(candidates: &[CandidateTrace], frames: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, cand) in candidates.iter().enumerate() {
        if !seen.insert(cand.candidate_id) {
            out.push(Violation::new(
                format!("candidates[{i}].candidate_id"),
                ViolationKind::DuplicateCandidateId,
            ));
        }
        for (j, step) in cand.steps.iter().enumerate() {
            out.extend(check_step(step, frames, &format!("candidates[{i}].steps[{j}]")));
        }
    }
    out
}

/// Checks every invariant of a run's inputs. Pure; calling it twice gives the
/// same answer.
pub fn validate(
    video: &VideoContext,
    candidates: &[CandidateTrace],
    config: &RunConfig,
) -> Result<(), ValidationError> {
    let mut out = config.check();
    out.extend(check_video(video));
    if candidates.is_empty() {
        out.push(Violation::new("candidates", ViolationKind::EmptyCandidateSet));
    } else if candidates.len() != config.n_candidates {
        out.push(Violation::new(
            "candidates",
            ViolationKind::CandidateCountMismatch {
                expected: config.n_candidates,
                found: candidates.len(),
            },
        ));
    }
    for (i, cand) in candidates.iter().enumerate() {
        if cand.candidate_id as usize >= config.n_candidates {
            out.push(Violation::new(
                format!("candidates[{i}].candidate_id"),
                ViolationKind::CandidateIdOutOfRange {
                    n_candidates: config.n_candidates,
                },
            ));
        }
    }
    out.extend(check_candidates(candidates, video.frames()));
    into_result(out)
}

/// Validates the video and configuration only, for runs whose candidates
/// arrive incrementally.
pub fn validate_video(video: &VideoContext, config: &RunConfig) -> Result<(), ValidationError> {
    let mut out = config.check();
    out.extend(check_video(video));
    into_result(out)
}
