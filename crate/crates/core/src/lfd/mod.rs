pub mod correction;
pub mod exploration;
pub mod execute;
pub mod primitive;
pub mod trajectory;

pub use correction::{apply_correction, speed_up, Correction, Direction};
pub use exploration::{ExplorationParams, ExplorationState};
pub use execute::{execute_primitive, ExecutionConfig, ExecutionReport, Feedback, FeedbackSource};
pub use primitive::{Primitive, TaskProgram};
pub use trajectory::{fit_trajectory, record_sample, LinearSpline, Regressor, Sample, Trajectory, SAMPLE_DT};
