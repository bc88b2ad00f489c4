//! Decoding-time candidate selection for video-language models, driven by
//! recorded attention traces.
//!
//! A run samples `N` candidate responses for one video. For every generated
//! token the producer reports how much attention went to each video frame and
//! how much went to previously generated text. From those traces this crate:
//!
//! - partitions the video into temporally contiguous segments using
//!   motion-aware patch matching between consecutive frames ([`segment`]),
//! - scores each candidate by the entropy of its frame- and segment-level
//!   attention distribution ([`tac`]),
//! - finds the step where attention to the video fades relative to the text
//!   ([`vav`]) so unpromising candidates can stop early,
//! - orchestrates a full run and picks the least-collapsed candidate
//!   ([`controller`]).
//!
//! [`synth`] builds deterministic synthetic fixtures and [`io`] reads and
//! writes the binary `.sstr` trace container.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod controller;
pub mod error;
pub mod io;
pub mod segment;
pub mod synth;
pub mod tac;
pub mod trace;
pub mod vav;

pub use controller::{
    decode_savings, replay, CandidateStatus, Directive, FreezeReason, RunState, SelectionReport,
};
pub use error::Error;
pub use segment::{
    inter_frame_distances, min_cost_matching, motion_cost_matrix, resolve_gamma, segment_video,
    Assignment, CostMatrix, Segmentation,
};
pub use tac::{
    frame_attention_profile, frame_collapse_score, segment_collapse_score, tac_score, TacScore,
};
pub use trace::{
    validate, CandidateTrace, GammaMode, Grid, MatchingStrategy, RunConfig, StepRecord,
    VideoContext,
};
pub use vav::{vav_offline, vav_step, VavState, VavVerdict};
