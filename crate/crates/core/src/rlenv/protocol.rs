//! Line-delimited JSON request loop for external trainers.

use std::io::{self, BufRead, Write};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Environment, TrainerMetadata};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EnvRequest {
    NextBatch { step: u32 },
    Score { step: u32, responses: Vec<Vec<String>> },
    Metadata,
}

/// Answers one request per input line until end of input. Malformed or
/// failing requests get `{"ok": false, "error": ...}` and the loop goes on.
pub fn serve<R: BufRead, W: Write>(env: &Environment<'_>, input: R, mut output: W) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<EnvRequest>(&line) {
            Ok(req) => handle(env, req),
            Err(e) => Err(format!("malformed request: {e}")),
        };
        let reply = match reply {
            Ok(mut v) => {
                v["v"] = json!(1);
                v["ok"] = json!(true);
                v
            }
            Err(e) => json!({ "v": 1, "ok": false, "error": e }),
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

fn handle(env: &Environment<'_>, req: EnvRequest) -> Result<Value, String> {
    match req {
        EnvRequest::NextBatch { step } => {
            let batch = env.next_batch(step).map_err(|e| e.to_string())?;
            Ok(json!({ "batch": batch }))
        }
        EnvRequest::Score { step, responses } => {
            let batch = env.next_batch(step).map_err(|e| e.to_string())?;
            let rewards = env.score(&batch, &responses).map_err(|e| e.to_string())?;
            Ok(json!({ "step": step, "stage": batch.stage, "rewards": rewards }))
        }
        EnvRequest::Metadata => Ok(json!({
            "metadata": TrainerMetadata::default(),
            "total_steps": env.schedule.total_steps(),
            "problems_per_step": env.schedule.problems_per_step,
            "responses_per_problem": env.schedule.responses_per_problem,
        })),
    }
}
