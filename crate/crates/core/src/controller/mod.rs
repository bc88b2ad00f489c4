//! Orchestration of one best-of-N run.
//!
//! Each candidate streams its step records into the run. A candidate is
//! frozen at its vanishing point, at end-of-sequence, or at the prefix cap,
//! whichever comes first. Once every candidate is frozen the frozen prefixes
//! are scored and the highest-scoring candidate becomes the winner; all
//! others are halted. The winner may keep streaming its continuation, which
//! only feeds decode-cost accounting.

pub mod protocol;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::{self, SegmentError, Segmentation};
use crate::tac::{self, TacError, TacScore};
use crate::trace::{
    check_step, validate, validate_video, CandidateTrace, RunConfig, StepRecord, ValidationError,
    VideoContext,
};
use crate::vav::{VavError, VavState, VavVerdict};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid input: {0}")]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("candidate {candidate_id}: {source}")]
    Vav {
        candidate_id: u32,
        #[source]
        source: VavError,
    },
    #[error("unknown candidate {0}")]
    UnknownCandidate(u32),
    #[error("candidate {0} is not generating")]
    NotGenerating(u32),
    #[error("{pending} candidate(s) are still generating")]
    NotAllFrozen { pending: usize },
    #[error("a winner was already selected")]
    AlreadySelected,
    #[error("no winner has been selected yet")]
    NotSelected,
    #[error("every candidate has degenerate attention")]
    AllDegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeReason {
    Vav,
    Eos,
    Cap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateStatus {
    Generating,
    Frozen {
        prefix_len: usize,
        reason: FreezeReason,
    },
    Halted,
    Winner,
}

/// Controller response to a producer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "directive", rename_all = "snake_case")]
pub enum Directive {
    Continue,
    Freeze,
    Winner { candidate_id: u32, resume_from: usize },
    Halt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub candidate_id: u32,
    pub prefix_len: usize,
    pub freeze_reason: FreezeReason,
    /// Missing when the prefix could not be scored; see `excluded`.
    pub tac: Option<TacScore>,
    /// Why the candidate was left out of the argmax, if it was.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub candidates: Vec<CandidateReport>,
    pub winner: u32,
    pub resume_from: usize,
    /// Tokens the winner produced in total, including any continuation
    /// streamed after selection.
    pub winner_full_len: usize,
    pub decode_tokens_spent: usize,
    pub decode_tokens_baseline: usize,
    pub savings_fraction: f64,
}

impl SelectionReport {
    fn account(&mut self) {
        let losers: usize = self
            .candidates
            .iter()
            .filter(|c| c.candidate_id != self.winner)
            .map(|c| c.prefix_len)
            .sum();
        self.decode_tokens_spent = losers + self.winner_full_len;
        self.decode_tokens_baseline = self.candidates.len() * self.winner_full_len;
        self.savings_fraction = if self.decode_tokens_baseline == 0 {
            0.0
        } else {
            1.0 - self.decode_tokens_spent as f64 / self.decode_tokens_baseline as f64
        };
    }
}

/// Analytic decode savings when each of the `n - 1` losers stops at fraction
/// `p` of the winner's length and the winner runs to completion:
/// `1 - (1 + (n - 1) p) / n`.
pub fn decode_savings(prefix_fraction: f64, n: usize, _winner_full_len: usize) -> f64 {
    debug_assert!(n >= 1);
    let n = n as f64;
    1.0 - (1.0 + (n - 1.0) * prefix_fraction) / n
}

#[derive(Debug, Clone)]
struct Slot {
    vav: VavState,
    steps: Vec<StepRecord>,
    status: CandidateStatus,
    frozen: Option<(usize, FreezeReason)>,
    finished: bool,
}

impl Slot {
    fn new() -> Self {
        Self {
            vav: VavState::new(),
            steps: Vec::new(),
            status: CandidateStatus::Generating,
            frozen: None,
            finished: false,
        }
    }
}

/// State of one run. Candidate ids are `0..config.n_candidates`.
#[derive(Debug, Clone)]
pub struct RunState {
    video: VideoContext,
    config: RunConfig,
    segmentation: Segmentation,
    slots: Vec<Slot>,
    report: Option<SelectionReport>,
}

impl RunState {
    /// Validates the video and configuration and segments the video.
    pub fn start(video: VideoContext, config: RunConfig) -> Result<Self, ControllerError> {
        validate_video(&video, &config)?;
        let segmentation = segment::segment(&video, &config.gamma_mode, config.matching)?;
        log::debug!(
            "run started: T={} K={} gamma={}",
            video.frames(),
            segmentation.k,
            segmentation.gamma_used
        );
        let slots = (0..config.n_candidates).map(|_| Slot::new()).collect();
        Ok(Self {
            video,
            config,
            segmentation,
            slots,
            report: None,
        })
    }

    pub fn video(&self) -> &VideoContext {
        &self.video
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.segmentation
    }

    pub fn status(&self, candidate_id: u32) -> Result<CandidateStatus, ControllerError> {
        Ok(self.slot(candidate_id)?.status)
    }

    pub fn report(&self) -> Option<&SelectionReport> {
        self.report.as_ref()
    }

    pub fn all_frozen(&self) -> bool {
        self.slots.iter().all(|s| s.frozen.is_some())
    }

    fn slot(&self, candidate_id: u32) -> Result<&Slot, ControllerError> {
        self.slots
            .get(candidate_id as usize)
            .ok_or(ControllerError::UnknownCandidate(candidate_id))
    }

    fn slot_mut(&mut self, candidate_id: u32) -> Result<&mut Slot, ControllerError> {
        self.slots
            .get_mut(candidate_id as usize)
            .ok_or(ControllerError::UnknownCandidate(candidate_id))
    }

    /// Buffers one record for a generating candidate and returns `Freeze`
    /// when it reaches its vanishing point, end-of-sequence or the cap.
    ///
    /// After selection the winner may keep streaming; its records count
    /// toward `winner_full_len` and the reply is `Continue`, or `Halt` once
    /// `is_eos` is set.
    pub fn ingest_step(
        &mut self,
        candidate_id: u32,
        record: StepRecord,
        is_eos: bool,
    ) -> Result<Directive, ControllerError> {
        let frames = self.video.frames();
        let config = self.config.clone();
        let slot = self.slot_mut(candidate_id)?;
        match slot.status {
            CandidateStatus::Generating | CandidateStatus::Winner => {}
            _ => return Err(ControllerError::NotGenerating(candidate_id)),
        }
        if slot.finished {
            return Err(ControllerError::NotGenerating(candidate_id));
        }
        let violations = check_step(&record, frames, &format!("candidate[{candidate_id}].record"));
        if !violations.is_empty() {
            return Err(ValidationError { violations }.into());
        }

        if slot.status == CandidateStatus::Winner {
            slot.steps.push(record);
            slot.finished = is_eos;
            let full = slot.steps.len();
            if let Some(report) = self.report.as_mut() {
                report.winner_full_len = full;
                report.account();
            }
            return Ok(if is_eos {
                Directive::Halt
            } else {
                Directive::Continue
            });
        }

        let verdict = slot
            .vav
            .advance(&record, &config)
            .map_err(|source| ControllerError::Vav {
                candidate_id,
                source,
            })?;
        slot.steps.push(record);
        let len = slot.steps.len();
        let reason = match verdict {
            VavVerdict::Triggered(_) => Some(FreezeReason::Vav),
            _ if is_eos => Some(FreezeReason::Eos),
            VavVerdict::Capped(_) => Some(FreezeReason::Cap),
            VavVerdict::NotYet => None,
        };
        if is_eos {
            slot.finished = true;
        }
        match reason {
            Some(reason) => {
                slot.frozen = Some((len, reason));
                slot.status = CandidateStatus::Frozen {
                    prefix_len: len,
                    reason,
                };
                Ok(Directive::Freeze)
            }
            None => Ok(Directive::Continue),
        }
    }

    /// Freezes a candidate that ended without producing any token.
    pub fn freeze_empty(&mut self, candidate_id: u32) -> Result<(), ControllerError> {
        let slot = self.slot_mut(candidate_id)?;
        if slot.status != CandidateStatus::Generating || !slot.steps.is_empty() {
            return Err(ControllerError::NotGenerating(candidate_id));
        }
        slot.frozen = Some((0, FreezeReason::Eos));
        slot.status = CandidateStatus::Frozen {
            prefix_len: 0,
            reason: FreezeReason::Eos,
        };
        slot.finished = true;
        Ok(())
    }

    fn score_prefix(&self, slot: &Slot, prefix_len: usize) -> Result<TacScore, TacError> {
        if prefix_len == 0 {
            return Err(TacError::EmptyPrefix);
        }
        tac::score_steps(
            &slot.steps[..prefix_len],
            self.video.frames(),
            self.video.patches_per_frame(),
            &self.segmentation,
        )
    }

    /// Scores every frozen prefix and picks the argmax (lowest id on ties).
    /// Candidates whose prefix cannot be scored are excluded and flagged.
    pub fn select_winner(&mut self) -> Result<SelectionReport, ControllerError> {
        if self.report.is_some() {
            return Err(ControllerError::AlreadySelected);
        }
        let pending = self.slots.iter().filter(|s| s.frozen.is_none()).count();
        if pending > 0 {
            return Err(ControllerError::NotAllFrozen { pending });
        }
        let mut candidates = Vec::with_capacity(self.slots.len());
        let mut best: Option<(u32, f64)> = None;
        for (id, slot) in self.slots.iter().enumerate() {
            let id = id as u32;
            let (prefix_len, reason) = slot.frozen.expect("checked above");
            let (tac, excluded) = match self.score_prefix(slot, prefix_len) {
                Ok(score) => {
                    if best.is_none_or(|(_, b)| score.total > b) {
                        best = Some((id, score.total));
                    }
                    (Some(score), None)
                }
                Err(e) => {
                    log::warn!("candidate {id} excluded from selection: {e}");
                    (None, Some(e.to_string()))
                }
            };
            candidates.push(CandidateReport {
                candidate_id: id,
                prefix_len,
                freeze_reason: reason,
                tac,
                excluded,
            });
        }
        let (winner, _) = best.ok_or(ControllerError::AllDegenerate)?;
        for (id, slot) in self.slots.iter_mut().enumerate() {
            slot.status = if id as u32 == winner {
                CandidateStatus::Winner
            } else {
                CandidateStatus::Halted
            };
        }
        let win = &self.slots[winner as usize];
        let resume_from = win.frozen.expect("frozen").0;
        let mut report = SelectionReport {
            candidates,
            winner,
            resume_from,
            winner_full_len: win.steps.len(),
            decode_tokens_spent: 0,
            decode_tokens_baseline: 0,
            savings_fraction: 0.0,
        };
        report.account();
        self.report = Some(report.clone());
        Ok(report)
    }

    /// Directive for a candidate that is not currently ingesting: `Freeze`
    /// while waiting for selection, then `Winner` or `Halt`.
    pub fn directive_for(&self, candidate_id: u32) -> Result<Directive, ControllerError> {
        let slot = self.slot(candidate_id)?;
        Ok(match slot.status {
            CandidateStatus::Generating => Directive::Continue,
            CandidateStatus::Frozen { .. } => Directive::Freeze,
            CandidateStatus::Halted => Directive::Halt,
            CandidateStatus::Winner => {
                if slot.finished {
                    Directive::Halt
                } else {
                    Directive::Winner {
                        candidate_id,
                        resume_from: slot.frozen.map_or(0, |f| f.0),
                    }
                }
            }
        })
    }
}

/// Offline run over recorded traces: each candidate is streamed until it
/// freezes, the winner is selected, and the rest of the winner's recording
/// stands in for its continuation.
///
/// The last recorded step of a candidate counts as end-of-sequence, since no
/// further tokens exist for it.
pub fn replay(
    video: &VideoContext,
    candidates: &[CandidateTrace],
    config: &RunConfig,
) -> Result<(SelectionReport, Segmentation), ControllerError> {
    validate(video, candidates, config)?;
    let mut run = RunState::start(video.clone(), config.clone())?;
    let mut ordered: Vec<&CandidateTrace> = candidates.iter().collect();
    ordered.sort_by_key(|c| c.candidate_id);
    for cand in &ordered {
        if cand.steps.is_empty() {
            run.freeze_empty(cand.candidate_id)?;
            continue;
        }
        let last = cand.steps.len();
        for (j, step) in cand.steps.iter().enumerate() {
            if run.ingest_step(cand.candidate_id, step.clone(), j + 1 == last)? == Directive::Freeze {
                break;
            }
        }
    }
    let report = run.select_winner()?;
    let winner = ordered[report.winner as usize];
    let last = winner.steps.len();
    for j in report.resume_from..last {
        run.ingest_step(winner.candidate_id, winner.steps[j].clone(), j + 1 == last)?;
    }
    let report = run.report().cloned().ok_or(ControllerError::NotSelected)?;
    Ok((report, run.segmentation.clone()))
}
