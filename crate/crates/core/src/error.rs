use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("joint vector has length {got}, model has {expected} joints")]
    Dimension { expected: usize, got: usize },
    #[error("chain needs at least 6 joints, got {0}")]
    TooFewJoints(usize),
    #[error("joint {joint}: safe band is not strictly inside the hard limits")]
    SafeBand { joint: usize },
    #[error("joint {joint}: inertia must be positive")]
    NonPositiveInertia { joint: usize },
    #[error("joint {joint}: rotation axis is zero")]
    ZeroAxis { joint: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("unsupported world schema version {found} (this build reads {supported})")]
    SchemaVersion { found: u32, supported: u32 },
    #[error("feature `{0}`: radius must be positive")]
    NonPositiveRadius(String),
    #[error("feature `{0}` lies outside the board extents")]
    OutsideBoard(String),
    #[error("contact stiffness must be positive")]
    ContactStiffness,
    #[error("invalid board geometry: {0}")]
    Geometry(String),
    #[error("world file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("time step {0} s outside (0, 0.01]")]
    TimeStep(f64),
    #[error("commanded torque is not finite")]
    NonFiniteTorque,
    #[error("instability at t={t:.3} s: joint {joint} velocity {velocity} rad/s exceeds cap")]
    Unstable { t: f64, joint: usize, velocity: f64 },
    #[error("hard joint limit at t={t:.3} s: joint {joint} at {position:.4} rad")]
    HardLimit { t: f64, joint: usize, position: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("stiffness rate alpha*dt = {0} must be in (0, 1)")]
    RateStep(f64),
    #[error("gain vector has invalid entries: {0}")]
    Gains(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("timestamp {t} is not after the last recorded time {last}")]
    NonMonotone { t: f64, last: f64 },
    #[error("trajectory needs at least {needed} samples, has {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample index {index} outside trajectory of length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("non-finite pose in sample {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalizationError {
    #[error("camera sees no part of the board")]
    EmptyCloud,
    #[error("point cloud is degenerate (collinear or too few points)")]
    DegenerateCloud,
    #[error("frame chain mismatch: cannot compose `{left_from}`<-… with …->`{right_to}`")]
    FrameMismatch { left_from: String, right_to: String },
    #[error("probe lines are nearly parallel (|cos| = {0:.4})")]
    ParallelLines(f64),
    #[error("probe found no contact within {budget_m} m of travel")]
    NoContact { budget_m: f64 },
    #[error("probe failed: {0}")]
    Probe(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("ply: {0}")]
    Ply(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("{what}: unsupported schema version {found} (this build reads {supported})")]
    SchemaVersion { what: String, found: u32, supported: u32 },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error("duplicate primitive name `{0}`")]
    DuplicateName(String),
    #[error("program references unknown primitive `{0}`")]
    MissingPrimitive(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Parse(e.to_string())
    }
}

/// Reads `schema_version` from a JSON document before the full parse so a
/// future file reports the version mismatch instead of a field error.
pub fn check_schema_version(text: &str, what: &str, supported: u32) -> Result<serde_json::Value, StoreError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| StoreError::Invalid(format!("{what}: missing schema_version")))?;
    if found != supported as u64 {
        return Err(StoreError::SchemaVersion {
            what: what.to_string(),
            found: found.min(u32::MAX as u64) as u32,
            supported,
        });
    }
    Ok(value)
}
