//! Directive protocol for live producers.
//!
//! A producer sends `(run_id, candidate_id, record, is_eos)` for every
//! generated token and receives one of `Continue`, `Freeze`,
//! `Winner { candidate_id, resume_from }` or `Halt`. Selection happens
//! automatically when the last candidate freezes; the request that completes
//! the barrier is answered with the outcome for its own candidate, and the
//! others learn theirs by polling.
//!
//! [`ControllerHub`] is safe to share between producer threads: each run sits
//! behind its own lock, so updates to one run are linearised and the
//! selection transition happens exactly once.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{ControllerError, Directive, RunState, SelectionReport};
use crate::trace::{RunConfig, StepRecord, VideoContext};

/// One streamed token. Field order is part of the wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub run_id: String,
    pub candidate_id: u32,
    pub record: StepRecord,
    pub is_eos: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("run {0:?} already exists")]
    DuplicateRun(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Default)]
pub struct ControllerHub {
    runs: RwLock<HashMap<String, Arc<Mutex<RunState>>>>,
}

impl ControllerHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(
        &self,
        run_id: impl Into<String>,
        video: VideoContext,
        config: RunConfig,
    ) -> Result<(), ProtocolError> {
        let run_id = run_id.into();
        let mut runs = self.runs.write().expect("hub lock poisoned");
        if runs.contains_key(&run_id) {
            return Err(ProtocolError::DuplicateRun(run_id));
        }
        let state = RunState::start(video, config)?;
        runs.insert(run_id, Arc::new(Mutex::new(state)));
        Ok(())
    }

    fn run(&self, run_id: &str) -> Result<Arc<Mutex<RunState>>, ProtocolError> {
        self.runs
            .read()
            .expect("hub lock poisoned")
            .get(run_id)
            .cloned()
            .ok_or_else(|| ProtocolError::UnknownRun(run_id.to_string()))
    }

    pub fn handle(&self, req: StepRequest) -> Result<Directive, ProtocolError> {
        let run = self.run(&req.run_id)?;
        let mut run = run.lock().expect("run lock poisoned");
        let directive = run.ingest_step(req.candidate_id, req.record, req.is_eos)?;
        if directive == Directive::Freeze && run.all_frozen() && run.report().is_none() {
            run.select_winner()?;
            return Ok(run.directive_for(req.candidate_id)?);
        }
        Ok(directive)
    }

    pub fn poll(&self, run_id: &str, candidate_id: u32) -> Result<Directive, ProtocolError> {
        let run = self.run(run_id)?;
        let run = run.lock().expect("run lock poisoned");
        Ok(run.directive_for(candidate_id)?)
    }

    pub fn report(&self, run_id: &str) -> Result<Option<SelectionReport>, ProtocolError> {
        let run = self.run(run_id)?;
        let run = run.lock().expect("run lock poisoned");
        Ok(run.report().cloned())
    }

    pub fn close(&self, run_id: &str) -> Result<Option<SelectionReport>, ProtocolError> {
        let run = self
            .runs
            .write()
            .expect("hub lock poisoned")
            .remove(run_id)
            .ok_or_else(|| ProtocolError::UnknownRun(run_id.to_string()))?;
        let run = run.lock().expect("run lock poisoned");
        Ok(run.report().cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{GammaMode, Grid};

    fn video() -> VideoContext {
        VideoContext::with_grid_coords(2, 2, Grid::new(1, 1), vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    fn req(c: u32, frames: [f64; 2], eos: bool) -> StepRequest {
        StepRequest {
            run_id: "r".into(),
            candidate_id: c,
            record: StepRecord::new(1, frames.to_vec(), 1.0),
            is_eos: eos,
        }
    }

    #[test]
    fn barrier_selects_and_answers() {
        let hub = ControllerHub::new();
        let config = RunConfig {
            n_candidates: 2,
            window: 2,
            gamma_mode: GammaMode::Fixed { value: 0.5 },
            ..RunConfig::default()
        };
        hub.open("r", video(), config).unwrap();
        assert_eq!(hub.handle(req(0, [0.5, 0.0], false)).unwrap(), Directive::Continue);
        assert_eq!(hub.handle(req(0, [0.5, 0.0], false)).unwrap(), Directive::Freeze);
        assert_eq!(hub.poll("r", 0).unwrap(), Directive::Freeze);
        assert_eq!(hub.handle(req(1, [0.25, 0.25], false)).unwrap(), Directive::Continue);
        // Completes the barrier: candidate 1 is uniform and wins.
        assert_eq!(
            hub.handle(req(1, [0.25, 0.25], false)).unwrap(),
            Directive::Winner { candidate_id: 1, resume_from: 2 }
        );
        assert_eq!(hub.poll("r", 0).unwrap(), Directive::Halt);
        assert_eq!(hub.handle(req(1, [0.25, 0.25], true)).unwrap(), Directive::Halt);
        let report = hub.close("r").unwrap().unwrap();
        assert_eq!(report.winner, 1);
        assert_eq!(report.winner_full_len, 3);
        assert!(matches!(hub.poll("r", 0), Err(ProtocolError::UnknownRun(_))));
    }

    #[test]
    fn wire_format_field_order() {
        let json = serde_json::to_string(&req(3, [0.5, 0.25], true)).unwrap();
        assert_eq!(
            json,
            r#"{"run_id":"r","candidate_id":3,"record":{"token_id":1,"frame_attention":[0.5,0.25],"text_attention":1.0},"is_eos":true}"#
        );
        assert_eq!(
            serde_json::to_string(&Directive::Winner { candidate_id: 2, resume_from: 10 }).unwrap(),
            r#"{"directive":"winner","candidate_id":2,"resume_from":10}"#
        );
        assert_eq!(
            serde_json::to_string(&Directive::Continue).unwrap(),
            r#"{"directive":"continue"}"#
        );
    }
}
