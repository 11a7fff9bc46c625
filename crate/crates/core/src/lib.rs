//! Desk-scale, deterministic tool-manipulation stack: procedural tool
//! generation, keypoint-based goal-reaching rewards, a domain-randomized
//! environment with attach-to-palm grasp dynamics, IK and trajectory
//! optimization baselines, and a closed-loop task-progress evaluator.

// validation guards use `!(v > 0.0)` so NaN fails alongside out-of-range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asset;
pub mod batch;
pub mod config;
pub mod control;
pub mod env;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod planner;
pub mod policy;
pub mod randomization;
pub mod reward;
pub mod rng;
pub mod robot;
pub mod traj;

pub use asset::{GraspBox, PartShape, PartSpec, SampleRanges, ToolSpec};
pub use config::ExperimentConfig;
pub use env::{ActorObservation, CriticState, EpisodeEnv, EpisodeState, GraspEvent, Termination};
pub use error::{Error, Result};
pub use geometry::{KeypointScales, KeypointSet, Pose, REWARD_SCALES};
pub use planner::{GrabTransform, IkOptions, TrajOptProblem};
pub use reward::{RewardConfig, RewardState};
pub use robot::{JointState, RobotModel};
pub use traj::{GoalTrajectory, ProgressReport};
