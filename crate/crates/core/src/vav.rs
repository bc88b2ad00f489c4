//! Visual attention vanishing detection.
//!
//! At step `j` the ratio `r_j = a_j^vis / a_j^text` compares attention onto
//! the video with attention onto previously generated text. The vanishing
//! point is the earliest `j` such that `r_k < alpha` for every `k` in
//! `[j - w + 1, j]`, i.e. the last step of the first window of `w`
//! consecutive below-threshold steps.
//!
//! When no text precedes a token (`a^text = 0`) the ratio is taken as `+inf`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{RunConfig, StepRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VavError {
    /// Both visual and text attention are zero, so the ratio is undefined.
    #[error("step {step}: text and visual attention are both zero")]
    ZeroTextAttention { step: usize },
    #[error("detector already triggered at step {0}")]
    AlreadyTriggered(usize),
    #[error("detector already reached the prefix cap of {0} steps")]
    AlreadyCapped(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "step", rename_all = "snake_case")]
pub enum VavVerdict {
    NotYet,
    Triggered(usize),
    Capped(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VavState {
    pub run_length: usize,
    pub steps_seen: usize,
    pub triggered_at: Option<usize>,
    pub capped_at: Option<usize>,
}

/// `a^vis / a^text` for one record; `+inf` when only text attention is zero.
pub fn visual_text_ratio(record: &StepRecord, step: usize) -> Result<f64, VavError> {
    let vis = record.visual_attention();
    let text = record.text_attention;
    if text > 0.0 {
        Ok(vis / text)
    } else if vis > 0.0 {
        Ok(f64::INFINITY)
    } else {
        Err(VavError::ZeroTextAttention { step })
    }
}

impl VavState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_done(&self) -> bool {
        self.triggered_at.is_some() || self.capped_at.is_some()
    }

    /// Feeds the next record. A trigger on the cap step wins over the cap.
    pub fn advance(&mut self, record: &StepRecord, config: &RunConfig) -> Result<VavVerdict, VavError> {
        if let Some(j) = self.triggered_at {
            return Err(VavError::AlreadyTriggered(j));
        }
        if let Some(j) = self.capped_at {
            return Err(VavError::AlreadyCapped(j));
        }
        let j = self.steps_seen + 1;
        let ratio = visual_text_ratio(record, j)?;
        self.steps_seen = j;
        if ratio < config.alpha {
            self.run_length += 1;
        } else {
            self.run_length = 0;
        }
        if self.run_length >= config.window {
            self.run_length = config.window;
            self.triggered_at = Some(j);
            return Ok(VavVerdict::Triggered(j));
        }
        if j >= config.max_prefix_tokens {
            self.capped_at = Some(j);
            return Ok(VavVerdict::Capped(j));
        }
        Ok(VavVerdict::NotYet)
    }
}

/// Functional form of [`VavState::advance`].
pub fn vav_step(
    state: &VavState,
    record: &StepRecord,
    config: &RunConfig,
) -> Result<(VavState, VavVerdict), VavError> {
    let mut next = state.clone();
    let verdict = next.advance(record, config)?;
    Ok((next, verdict))
}

/// Reference scan over a complete sequence: checks every window explicitly.
/// Ignores the prefix cap.
pub fn vav_offline(records: &[StepRecord], config: &RunConfig) -> Result<Option<usize>, VavError> {
    let ratios = records
        .iter()
        .enumerate()
        .map(|(i, r)| visual_text_ratio(r, i + 1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(first_window_below(&ratios, config.alpha, config.window))
}

/// Smallest 1-based `j >= w` with `ratios[j-w..j]` all below `alpha`.
pub fn first_window_below(ratios: &[f64], alpha: f64, window: usize) -> Option<usize> {
    if window == 0 || ratios.len() < window {
        return None;
    }
    (window..=ratios.len()).find(|&j| ratios[j - window..j].iter().all(|&r| r < alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(ratios: &[f64]) -> Vec<StepRecord> {
        ratios
            .iter()
            .map(|&r| {
                if r.is_infinite() {
                    StepRecord::new(0, vec![0.5, 0.5], 0.0)
                } else {
                    // text fixed at 0.5, visual = r * 0.5 split over two frames
                    let v = r * 0.5 / 2.0;
                    StepRecord::new(0, vec![v, v], 0.5)
                }
            })
            .collect()
    }

    fn cfg(alpha: f64, window: usize, cap: usize) -> RunConfig {
        RunConfig {
            alpha,
            window,
            max_prefix_tokens: cap,
            ..RunConfig::default()
        }
    }

    fn fold(recs: &[StepRecord], config: &RunConfig) -> VavVerdict {
        let mut st = VavState::new();
        let mut last = VavVerdict::NotYet;
        for r in recs {
            last = st.advance(r, config).unwrap();
            if last != VavVerdict::NotYet {
                break;
            }
        }
        last
    }

    #[test]
    fn triggers_at_window_end() {
        let recs = records(&[1.5, 1.1, 1.0, 1.0, 1.0, 1.0]);
        let c = cfg(1.2, 3, 100);
        assert_eq!(fold(&recs, &c), VavVerdict::Triggered(4));
        assert_eq!(vav_offline(&recs, &c).unwrap(), Some(4));
    }

    #[test]
    fn caps_when_never_low() {
        let recs = records(&[1.5; 20]);
        let c = cfg(1.2, 3, 8);
        assert_eq!(fold(&recs, &c), VavVerdict::Capped(8));
        assert_eq!(vav_offline(&recs, &c).unwrap(), None);
    }

    #[test]
    fn window_of_one() {
        let recs = records(&[1.0]);
        assert_eq!(fold(&recs, &cfg(1.2, 1, 10)), VavVerdict::Triggered(1));
    }

    #[test]
    fn offline_edges() {
        let c = cfg(1.2, 10, 512);
        assert_eq!(vav_offline(&[], &c).unwrap(), None);
        assert_eq!(vav_offline(&records(&[1.0; 10]), &c).unwrap(), Some(10));
        assert_eq!(vav_offline(&records(&[1.0; 9]), &c).unwrap(), None);
    }

    #[test]
    fn zero_text_is_infinite_ratio() {
        let recs = records(&[f64::INFINITY, 1.0, 1.0]);
        assert_eq!(visual_text_ratio(&recs[0], 1).unwrap(), f64::INFINITY);
        assert_eq!(fold(&recs, &cfg(1.2, 2, 10)), VavVerdict::Triggered(3));
        let dead = StepRecord::new(0, vec![0.0, 0.0], 0.0);
        assert_eq!(
            visual_text_ratio(&dead, 4),
            Err(VavError::ZeroTextAttention { step: 4 })
        );
    }

    #[test]
    fn stepping_after_done_is_an_error() {
        let c = cfg(1.2, 1, 10);
        let recs = records(&[1.0, 1.0]);
        let (st, v) = vav_step(&VavState::new(), &recs[0], &c).unwrap();
        assert_eq!(v, VavVerdict::Triggered(1));
        assert_eq!(vav_step(&st, &recs[1], &c), Err(VavError::AlreadyTriggered(1)));

        let c = cfg(1.2, 1, 1);
        let recs = records(&[1.5, 1.5]);
        let (st, v) = vav_step(&VavState::new(), &recs[0], &c).unwrap();
        assert_eq!(v, VavVerdict::Capped(1));
        assert_eq!(vav_step(&st, &recs[1], &c), Err(VavError::AlreadyCapped(1)));
    }

    #[test]
    fn trigger_beats_cap_on_same_step() {
        let recs = records(&[1.0, 1.0, 1.0]);
        assert_eq!(fold(&recs, &cfg(1.2, 3, 3)), VavVerdict::Triggered(3));
    }

    #[test]
    fn reset_delays_trigger() {
        let c = cfg(1.2, 3, 100);
        let base = records(&[1.0, 1.0, 1.0]);
        let interrupted = records(&[1.0, 1.0, 1.5, 1.0, 1.0, 1.0]);
        assert_eq!(vav_offline(&base, &c).unwrap(), Some(3));
        assert_eq!(vav_offline(&interrupted, &c).unwrap(), Some(6));
    }
}
