//! Replayable teacher: a list of commands stamped with the tick (counted
//! from the start of the script) at which the teacher issues them.

use std::collections::VecDeque;
use std::path::Path;

use kinesis_core::error::{check_schema_version, StoreError};
use kinesis_core::lfd::execute::{Feedback, FeedbackSource, TickContext, TickLog};
use kinesis_core::lfd::Trajectory;
use serde::{Deserialize, Serialize};

use crate::command::TeachCommand;
use crate::session::{Mode, Outcome, ProgramReport, Session, SessionError};

pub const SCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tick: u64,
    pub command: TeachCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachScript {
    pub schema_version: u32,
    pub entries: Vec<ScriptEntry>,
}

impl TeachScript {
    pub fn new(entries: impl IntoIterator<Item = (u64, TeachCommand)>) -> Self {
        Self {
            schema_version: SCRIPT_SCHEMA_VERSION,
            entries: entries.into_iter().map(|(tick, command)| ScriptEntry { tick, command }).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let value = check_schema_version(text, "teach script", SCRIPT_SCHEMA_VERSION)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// What happened to one script entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    /// Index into the script.
    pub entry: usize,
    /// Session tick at which the command was taken off the queue.
    pub tick: u64,
    pub kind: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub receipts: Vec<Receipt>,
    pub programs: Vec<ProgramReport>,
}

/// Maps online feedback commands onto the executor's feedback type.
pub fn as_feedback(command: &TeachCommand, correction_step_m: f64) -> Option<Feedback> {
    match command {
        TeachCommand::Correction { direction } => Some(Feedback::Correction {
            theta_m: (direction.unit() * correction_step_m).into(),
        }),
        TeachCommand::SpeedUp {} => Some(Feedback::SpeedUp),
        TeachCommand::Gripper { command } => Some(Feedback::Gripper { command: *command }),
        _ => None,
    }
}

struct Pending {
    index: usize,
    due: u64,
    command: TeachCommand,
}

/// Serves script entries to a running program, one per tick, in order.
struct ScriptFeedback<'a> {
    queue: &'a mut VecDeque<Pending>,
    receipts: &'a mut Vec<Receipt>,
    now: u64,
    /// Tick of the command that started the run; it already used that slot.
    start: u64,
    step_m: f64,
}

impl FeedbackSource for ScriptFeedback<'_> {
    fn poll(&mut self, _ctx: &TickContext) -> Option<Feedback> {
        if self.now == self.start || self.queue.front().is_none_or(|p| p.due > self.now) {
            return None;
        }
        let p = self.queue.pop_front()?;
        let fb = as_feedback(&p.command, self.step_m);
        self.receipts.push(Receipt {
            entry: p.index,
            tick: self.now,
            kind: p.command.kind().into(),
            ok: fb.is_some(),
            detail: match fb {
                Some(_) => None,
                None => Some(
                    SessionError::WrongMode {
                        command: p.command.kind(),
                        mode: Mode::Execute,
                    }
                    .to_string(),
                ),
            },
        });
        fb
    }

    fn observe(&mut self, _entry: &TickLog, _samples: &Trajectory) {
        self.now += 1;
    }
}

/// Plays `script` against `session`. Idle and kinesthetic time advances
/// one tick at a time; a command is taken at most once per tick, and a
/// command that runs a program feeds later entries to it as online
/// feedback. Stops after the last entry has been handled.
pub fn run_script(session: &mut Session, script: &TeachScript) -> Result<Transcript, SessionError> {
    let base = session.tick_count();
    let mut entries: Vec<Pending> = script
        .entries
        .iter()
        .enumerate()
        .map(|(index, e)| Pending {
            index,
            due: base + e.tick,
            command: e.command.clone(),
        })
        .collect();
    entries.sort_by_key(|p| (p.due, p.index));
    let mut queue: VecDeque<Pending> = entries.into();
    let mut transcript = Transcript::default();
    let step_m = session.settings.correction_step_m;

    while let Some(front) = queue.front() {
        let now = session.tick_count();
        if front.due > now {
            session.step()?;
            continue;
        }
        let Some(p) = queue.pop_front() else { break };
        let slot = transcript.receipts.len();
        transcript.receipts.push(Receipt {
            entry: p.index,
            tick: now,
            kind: p.command.kind().into(),
            ok: false,
            detail: None,
        });
        let result = {
            let mut fb = ScriptFeedback {
                queue: &mut queue,
                receipts: &mut transcript.receipts,
                now,
                start: now,
                step_m,
            };
            session.handle(p.command, &mut fb)
        };
        let receipt = &mut transcript.receipts[slot];
        match result {
            Ok(outcome) => {
                receipt.ok = true;
                receipt.detail = outcome.detail();
                if let Outcome::Program(report) = outcome {
                    transcript.programs.push(report);
                }
            }
            Err(e) => receipt.detail = Some(e.to_string()),
        }
        if session.tick_count() == now && matches!(session.mode(), Mode::Idle | Mode::Kinesthetic) {
            session.step()?;
        }
    }
    Ok(transcript)
}
