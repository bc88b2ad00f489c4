//! Line-delimited JSON front end for [`ControllerHub`].
//!
//! Each input line is one request tagged by `op`:
//!
//! ```text
//! {"op":"open","run_id":"r1","video":"clip.sstr","config":{"n_candidates":2}}
//! {"op":"step","run_id":"r1","candidate_id":0,"record":{...},"is_eos":false}
//! {"op":"poll","run_id":"r1","candidate_id":0}
//! {"op":"report","run_id":"r1"}
//! {"op":"close","run_id":"r1"}
//! ```
//!
//! `open` takes the video from a trace file; its candidates are ignored, so a
//! file with zero candidates is the usual choice. Every request gets exactly
//! one response line, `{"ok":true,"result":...}` or
//! `{"ok":false,"code":N,"error":"..."}`. Errors do not end the session.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::controller::protocol::{ControllerHub, StepRequest};
use crate::error::Error;
use crate::io;
use crate::trace::RunConfig;

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    Open {
        run_id: String,
        video: PathBuf,
        #[serde(default)]
        config: RunConfig,
    },
    Step(StepRequest),
    Poll { run_id: String, candidate_id: u32 },
    Report { run_id: String },
    Close { run_id: String },
}

fn dispatch(hub: &ControllerHub, req: Request) -> Result<Value, Error> {
    Ok(match req {
        Request::Open { run_id, video, config } => {
            let tf = io::load(&video)?;
            hub.open(run_id.clone(), tf.video, config)?;
            json!({ "run_id": run_id })
        }
        Request::Step(step) => serde_json::to_value(hub.handle(step)?)?,
        Request::Poll { run_id, candidate_id } => serde_json::to_value(hub.poll(&run_id, candidate_id)?)?,
        Request::Report { run_id } => serde_json::to_value(hub.report(&run_id)?)?,
        Request::Close { run_id } => serde_json::to_value(hub.close(&run_id)?)?,
    })
}

pub fn serve(input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Error> {
    let hub = ControllerHub::new();
    let mut served = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let result = serde_json::from_str::<Request>(&line)
            .map_err(|e| Error::Usage(format!("bad request: {e}")))
            .and_then(|req| dispatch(&hub, req));
        let response = match result {
            Ok(v) => json!({ "ok": true, "result": v }),
            Err(e) => json!({ "ok": false, "code": e.exit_code(), "error": e.to_string() }),
        };
        serde_json::to_writer(&mut *out, &response)?;
        writeln!(out)?;
        out.flush()?;
        served += 1;
    }
    writeln!(err, "served {served} requests")?;
    Ok(())
}
