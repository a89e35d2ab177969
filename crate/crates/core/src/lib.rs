//! Core of the GUI-agent RL framework: actions and trajectories, the
//! simulated phone world, rewards and verifiers, GRPO math, grounding
//! geometry, the toy policy and device-cloud routing.

pub mod action;
pub mod collab;
pub mod env;
pub mod grounding;
pub mod grpo;
pub mod hashing;
pub mod observation;
pub mod policy;
pub mod task;
pub mod trajectory;
pub mod verify;

pub use action::{parse_action, serialize_action, Action, ActionKind, ActionParseError, Point};
pub use observation::{Observation, PixelBox, WidgetKind, WidgetView};
pub use task::{TaskSpec, TaskStats};
pub use trajectory::{render_history, EnvStatus, Step, TokenSample, Trajectory};
