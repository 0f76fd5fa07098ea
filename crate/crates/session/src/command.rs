//! Teaching commands and the JSON messages carried over the network
//! endpoint. Every message is a single line of JSON with a `v` field.

use kinesis_core::control::GripperCommand;
use kinesis_core::lfd::{Direction, TaskProgram};
use kinesis_core::{Pose, Wrench};
use serde::{Deserialize, Serialize};

use crate::session::Mode;

pub const PROTOCOL_VERSION: u32 = 1;

/// One human input. Corrections, speed-ups and gripper toggles are the
/// online feedback channel; the rest drive the session's mode machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeachCommand {
    /// Enter kinesthetic mode with an empty recording.
    StartRecording {},
    /// Leave kinesthetic mode, keeping the recording for `save_primitive`.
    StopRecording {},
    SavePrimitive {
        name: String,
        insertion: bool,
    },
    /// One correction increment along a robot-frame axis.
    Correction {
        direction: Direction,
    },
    SpeedUp {},
    Gripper {
        command: GripperCommand,
    },
    StartExecution {
        program: TaskProgram,
    },
    Localize {
        #[serde(default)]
        ablate_icp: bool,
        #[serde(default)]
        ablate_haptic: bool,
    },
    /// Moves the physical board (robot frame). The scene resets.
    SetBoardPose {
        pose: Pose,
    },
    /// Kinesthetic mode: the teacher's hand pulls the tool toward this point.
    Drag {
        position_m: [f64; 3],
    },
    /// Kinesthetic mode: the hand lets go.
    Release {},
}

impl TeachCommand {
    pub fn kind(&self) -> &'static str {
        match self {
            TeachCommand::StartRecording {} => "start_recording",
            TeachCommand::StopRecording {} => "stop_recording",
            TeachCommand::SavePrimitive { .. } => "save_primitive",
            TeachCommand::Correction { .. } => "correction",
            TeachCommand::SpeedUp {} => "speed_up",
            TeachCommand::Gripper { .. } => "gripper",
            TeachCommand::StartExecution { .. } => "start_execution",
            TeachCommand::Localize { .. } => "localize",
            TeachCommand::SetBoardPose { .. } => "set_board_pose",
            TeachCommand::Drag { .. } => "drag",
            TeachCommand::Release {} => "release",
        }
    }
}

/// Attractor overlay of the primitive being executed, robot frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub primitive: String,
    pub positions_m: Vec<[f64; 3]>,
}

/// Immutable view of the session handed to viewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub tick: u64,
    pub t_s: f64,
    pub mode: Mode,
    pub q_rad: Vec<f64>,
    pub ee_pose: Pose,
    pub x_goal: Pose,
    pub wrench: Wrench,
    pub insertion_force_n: f64,
    pub stiffness: [f64; 6],
    pub gripper_closed: bool,
    pub exploration_active: bool,
    pub exploration_offset_m: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<Overlay>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid JSON or not a known message.
    Malformed,
    /// Message version differs from the server's.
    Version,
    /// Another client holds the teacher lease.
    LeaseHeld,
    /// Command not allowed in the current mode.
    WrongMode,
    /// Command was well-formed but failed.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Command { v: u32, id: u64, command: TeachCommand },
    /// Take (`true`) or give back (`false`) the teacher lease.
    Lease { v: u32, take: bool },
}

impl ClientMessage {
    pub fn version(&self) -> u32 {
        match self {
            ClientMessage::Command { v, .. } | ClientMessage::Lease { v, .. } => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        v: u32,
        client: u64,
        lease_holder: Option<u64>,
    },
    State {
        v: u32,
        snapshot: Box<StateSnapshot>,
    },
    Ack {
        v: u32,
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Lease {
        v: u32,
        holder: Option<u64>,
    },
    Error {
        v: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(id: Option<u64>, code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            v: PROTOCOL_VERSION,
            id,
            code,
            message: message.into(),
        }
    }

    /// Single-line JSON.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Parses a client line, reporting malformed input and version skew as
/// ready-to-send error messages.
pub fn parse_client_line(line: &str) -> Result<ClientMessage, ServerMessage> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| ServerMessage::error(None, ErrorCode::Malformed, e.to_string()))?;
    let id = value.get("id").and_then(|v| v.as_u64());
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => {
            return Err(ServerMessage::error(
                id,
                ErrorCode::Version,
                format!("protocol version {v} is not supported (server speaks {PROTOCOL_VERSION})"),
            ))
        }
        None => return Err(ServerMessage::error(id, ErrorCode::Malformed, "missing `v`")),
    }
    serde_json::from_value(value).map_err(|e| ServerMessage::error(id, ErrorCode::Malformed, e.to_string()))
}
