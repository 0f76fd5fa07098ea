//! Teaching sessions on top of `kinesis-core`: the mode machine, task
//! programs with success checks, session files, a replayable teacher
//! script, the benchmark harnesses and the WebSocket endpoint.

pub mod bench;
pub mod command;
pub mod demos;
pub mod script;
pub mod server;
pub mod session;

pub use command::{ClientMessage, ServerMessage, StateSnapshot, TeachCommand, PROTOCOL_VERSION};
pub use session::{Mode, Outcome, ProgramReport, Session, SessionError, StepReport};
