//! The goal-reaching environment: reset and goal sampling, attach-to-palm
//! grasp dynamics stepped at 60 Hz control over 120 Hz substeps, reward
//! evaluation, the termination FSM, and actor/critic observation
//! construction.
//!
//! Dynamics are deliberately contact-free: an attached object rigidly
//! follows the palm through the grab transform captured at attach time; a
//! detached object falls ballistically (exact constant-gravity integration)
//! until it lands on the table or leaves it. Grasping is an explicit
//! attach/detach event gated by a capture radius around the grasp-box
//! center, driven by scripted policies or planners.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asset::ToolSpec;
use crate::control::{self, ControlConfig, ControlState};
use crate::error::{Error, Result};
use crate::geometry::{self, keypoint_distance, KeypointScales, Pose, REWARD_SCALES};
use crate::randomization::{self, DelayQueue, RandomizationConfig};
use crate::reward::{self, RewardBreakdown, RewardConfig, RewardInputs, RewardState};
use crate::rng;
use crate::robot::{JointState, RobotModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Maximum control steps per episode.
    pub episode_length: usize,
    pub control_hz: f64,
    pub sim_hz: f64,
    /// Object spawn offset range around the table center, +/- m per axis.
    pub object_spawn_xy_range: f64,
    /// Uniform joint init noise, +/- rad.
    pub robot_joint_init_noise: f64,
    /// First-goal workspace relative to the table center, m.
    pub goal_workspace_x: (f64, f64),
    pub goal_workspace_y: (f64, f64),
    pub goal_workspace_z: (f64, f64),
    /// Next-goal position perturbation radius, m.
    pub next_goal_position_radius: f64,
    /// Next-goal rotation perturbation bound, degrees.
    pub next_goal_rotation_max_deg: f64,
    /// Palm-to-object distance that terminates the episode, m.
    pub hand_wander_limit: f64,
    /// Table normal force that terminates the episode, N.
    pub table_force_limit: f64,
    /// Penalty stiffness turning palm penetration into force, N/m.
    pub table_stiffness: f64,
    pub max_consecutive_successes: u32,
    /// Table center on the surface plane, world xy.
    pub table_center_xy: (f64, f64),
    /// Table half extents; objects beyond them fall off the edge.
    pub table_half_extents: (f64, f64),
    /// Palm must be this close to the grasp-box center for attach, m.
    pub capture_radius: f64,
    pub gravity: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_length: 600,
            control_hz: 60.0,
            sim_hz: 120.0,
            object_spawn_xy_range: 0.10,
            robot_joint_init_noise: 0.1,
            goal_workspace_x: (-0.35, 0.35),
            goal_workspace_y: (-0.1, 0.2),
            goal_workspace_z: (0.15, 0.52),
            next_goal_position_radius: 0.1,
            next_goal_rotation_max_deg: 90.0,
            hand_wander_limit: 1.5,
            table_force_limit: 100.0,
            table_stiffness: 1.0e4,
            max_consecutive_successes: 50,
            table_center_xy: (0.0, -0.50),
            table_half_extents: (0.45, 0.35),
            capture_radius: 0.03,
            gravity: 9.81,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_length == 0 {
            return Err(Error::validation("env.episode_length", "must be > 0"));
        }
        if !(self.control_hz > 0.0 && self.sim_hz >= self.control_hz) {
            return Err(Error::validation(
                "env.sim_hz",
                "need sim_hz >= control_hz > 0",
            ));
        }
        let ratio = self.sim_hz / self.control_hz;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::validation(
                "env.sim_hz",
                "must be an integer multiple of control_hz",
            ));
        }
        for (name, (lo, hi)) in [
            ("goal_workspace_x", self.goal_workspace_x),
            ("goal_workspace_y", self.goal_workspace_y),
            ("goal_workspace_z", self.goal_workspace_z),
        ] {
            if !(lo <= hi) {
                return Err(Error::validation(format!("env.{name}"), "min > max"));
            }
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.sim_hz / self.control_hz).round() as usize
    }

    fn table_center(&self, surface_z: f64) -> Vector3<f64> {
        Vector3::new(self.table_center_xy.0, self.table_center_xy.1, surface_z)
    }
}

/// Grasp transition requested by a policy for this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspEvent {
    Attach,
    Detach,
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Object height dropped below the table surface.
    Fallen,
    /// Object returned below z_init after the grasped latch set.
    Dropped,
    /// Palm wandered beyond the hand-object distance limit.
    Wander,
    /// Modeled table normal force exceeded the limit.
    Force,
    Timeout,
    MaxSuccess,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Fallen => "fallen",
            Termination::Dropped => "dropped",
            Termination::Wander => "wander",
            Termination::Force => "force",
            Termination::Timeout => "timeout",
            Termination::MaxSuccess => "max_success",
        };
        f.write_str(s)
    }
}

impl Termination {
    /// Failure terminations, as opposed to clean endings.
    pub fn is_failure(&self) -> bool {
        matches!(
            self,
            Termination::Fallen | Termination::Dropped | Termination::Wander | Termination::Force
        )
    }
}

/// How the environment picks the next goal after a success.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMode {
    /// Resample near the previous goal (training behavior).
    Chain,
    /// Goals are injected via [`EpisodeEnv::set_goal`]; successes never
    /// resample.
    External,
}

/// Policy-side observation. Fields flatten in declaration order to the
/// 140-dimensional vector (for the 29-joint model). Under domain
/// randomization everything here is delayed and noisy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorObservation {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub prev_targets: Vec<f64>,
    pub palm_position: [f64; 3],
    pub palm_quat: [f64; 4],
    /// Fingertip positions relative to the palm center, 5 x 3.
    pub fingertips_rel_palm: Vec<f64>,
    pub object_quat: [f64; 4],
    /// Object keypoints (instance scales) relative to the palm, 4 x 3.
    pub object_keypoints_rel_palm: Vec<f64>,
    /// Keypoint errors to the goal, 4 x 3.
    pub keypoint_errors: Vec<f64>,
    /// Grasp-box extents, perturbed under DR.
    pub object_scales: [f64; 3],
}

impl ActorObservation {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.qd);
        v.extend_from_slice(&self.prev_targets);
        v.extend_from_slice(&self.palm_position);
        v.extend_from_slice(&self.palm_quat);
        v.extend_from_slice(&self.fingertips_rel_palm);
        v.extend_from_slice(&self.object_quat);
        v.extend_from_slice(&self.object_keypoints_rel_palm);
        v.extend_from_slice(&self.keypoint_errors);
        v.extend_from_slice(&self.object_scales);
        v
    }

    /// Flattened vector dimension (140 for the 29-joint model).
    pub fn dim(&self) -> usize {
        self.q.len() + self.qd.len() + self.prev_targets.len() + 3 + 4
            + self.fingertips_rel_palm.len()
            + 4
            + self.object_keypoints_rel_palm.len()
            + self.keypoint_errors.len()
            + 3
    }
}

/// Privileged critic state: the actor fields computed clean and
/// instantaneous, plus ground-truth velocities, reward signals, and
/// stateful progress features. Flattens to 158 dims for the 29-joint
/// model. The structured pose fields at the bottom are conveniences for
/// scripted policies and do not flatten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticState {
    pub clean: ActorObservation,
    pub palm_linear_velocity: [f64; 3],
    pub palm_angular_velocity: [f64; 3],
    pub object_linear_velocity: [f64; 3],
    pub object_angular_velocity: [f64; 3],
    pub reward: f64,
    pub success_count: u32,
    /// Minimum mean fingertip distance since reset.
    pub min_fingertip_distance: f64,
    /// Minimum keypoint distance since reset.
    pub min_keypoint_distance: f64,
    pub steps_since_reset: usize,
    pub grasped: bool,
    // -- structured extras (not part of the flattened state) --
    pub object_pose: Pose,
    pub goal_pose: Pose,
    pub palm_pose: Pose,
    /// World position of the grasp-box center.
    pub grasp_center_world: [f64; 3],
    /// Grab transform while attached.
    pub grab_transform: Option<Pose>,
}

impl CriticState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.clean.flatten();
        v.extend_from_slice(&self.palm_linear_velocity);
        v.extend_from_slice(&self.palm_angular_velocity);
        v.extend_from_slice(&self.object_linear_velocity);
        v.extend_from_slice(&self.object_angular_velocity);
        v.push(self.reward);
        v.push(self.success_count as f64);
        v.push(self.min_fingertip_distance);
        v.push(self.min_keypoint_distance);
        v.push(self.steps_since_reset as f64);
        v.push(if self.grasped { 1.0 } else { 0.0 });
        v
    }
}

/// Everything returned by one control step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub actor: ActorObservation,
    pub critic: CriticState,
    pub reward: RewardBreakdown,
    pub termination: Option<Termination>,
    pub events: Vec<String>,
    pub object_pose: Pose,
    pub goal_distance: f64,
}

/// One JSONL record of an episode log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub q: Vec<f64>,
    pub object_pose: Pose,
    pub goal_pose: Pose,
    pub d: f64,
    pub d_star: f64,
    pub reward_terms: RewardBreakdown,
    pub events: Vec<String>,
}

#[derive(Debug, Clone)]
struct ProprioSnapshot {
    q: Vec<f64>,
    qd: Vec<f64>,
    prev_targets: Vec<f64>,
    palm: Pose,
    fingertips_rel: Vec<f64>,
}

/// Full mutable environment state for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub joints: JointState,
    pub object_pose: Pose,
    pub object_linear_velocity: Vector3<f64>,
    pub object_angular_velocity: Vector3<f64>,
    /// Grab transform T_palm->object while attached.
    pub attached: Option<Pose>,
    pub goal: Pose,
    pub reward_state: RewardState,
    pub step_count: usize,
    pub table_surface_z: f64,
    pub episode_seed: u64,
}

struct Channels {
    action: DelayQueue<Vec<f64>>,
    proprio: DelayQueue<ProprioSnapshot>,
    object_pose: DelayQueue<Pose>,
}

/// The environment. Owns one episode at a time; `reset` starts a new one.
pub struct EpisodeEnv {
    model: RobotModel,
    tool: ToolSpec,
    env_cfg: EnvConfig,
    control_cfg: ControlConfig,
    reward_cfg: RewardConfig,
    dr_cfg: RandomizationConfig,
    goal_mode: GoalMode,

    state: EpisodeState,
    control_state: ControlState,
    channels: Channels,
    /// Instance keypoint scales: clean for the critic, perturbed for the
    /// actor when DR is on.
    clean_scales: KeypointScales,
    actor_scales: KeypointScales,
    palm_prev: Pose,
    object_prev: Pose,
    min_keypoint_since_reset: f64,
    goal_counter: u64,
    /// External mode: set after a success until a new goal arrives, so one
    /// goal can never pay two success bonuses.
    goal_consumed: bool,
    done: Option<Termination>,
    last_actor: ActorObservation,
    last_critic: CriticState,
}

impl EpisodeEnv {
    pub fn new(
        model: RobotModel,
        tool: ToolSpec,
        env_cfg: EnvConfig,
        control_cfg: ControlConfig,
        reward_cfg: RewardConfig,
        dr_cfg: RandomizationConfig,
    ) -> Result<Self> {
        env_cfg.validate()?;
        control_cfg.validate()?;
        reward_cfg.validate()?;
        dr_cfg.validate()?;
        tool.validate()?;
        model.frames()?; // palm + fingertips are required below
        let clean_scales = KeypointScales::from_extents(&tool.grasp_box.extents)?;
        let mut env = Self {
            control_state: ControlState::new(&model, model.default_q()),
            state: EpisodeState {
                joints: JointState::zeros(model.num_joints()),
                object_pose: Pose::identity(),
                object_linear_velocity: Vector3::zeros(),
                object_angular_velocity: Vector3::zeros(),
                attached: None,
                goal: Pose::identity(),
                reward_state: RewardState::reset(0.0, 0.0),
                step_count: 0,
                table_surface_z: reward_cfg.z_init,
                episode_seed: 0,
            },
            channels: Channels {
                action: DelayQueue::new(0),
                proprio: DelayQueue::new(0),
                object_pose: DelayQueue::new(0),
            },
            clean_scales,
            actor_scales: clean_scales,
            palm_prev: Pose::identity(),
            object_prev: Pose::identity(),
            min_keypoint_since_reset: f64::INFINITY,
            goal_counter: 0,
            goal_consumed: false,
            done: None,
            last_actor: ActorObservation {
                q: vec![],
                qd: vec![],
                prev_targets: vec![],
                palm_position: [0.0; 3],
                palm_quat: [1.0, 0.0, 0.0, 0.0],
                fingertips_rel_palm: vec![],
                object_quat: [1.0, 0.0, 0.0, 0.0],
                object_keypoints_rel_palm: vec![],
                keypoint_errors: vec![],
                object_scales: [0.0; 3],
            },
            last_critic: CriticState {
                clean: ActorObservation {
                    q: vec![],
                    qd: vec![],
                    prev_targets: vec![],
                    palm_position: [0.0; 3],
                    palm_quat: [1.0, 0.0, 0.0, 0.0],
                    fingertips_rel_palm: vec![],
                    object_quat: [1.0, 0.0, 0.0, 0.0],
                    object_keypoints_rel_palm: vec![],
                    keypoint_errors: vec![],
                    object_scales: [0.0; 3],
                },
                palm_linear_velocity: [0.0; 3],
                palm_angular_velocity: [0.0; 3],
                object_linear_velocity: [0.0; 3],
                object_angular_velocity: [0.0; 3],
                reward: 0.0,
                success_count: 0,
                min_fingertip_distance: f64::INFINITY,
                min_keypoint_distance: f64::INFINITY,
                steps_since_reset: 0,
                grasped: false,
                object_pose: Pose::identity(),
                goal_pose: Pose::identity(),
                palm_pose: Pose::identity(),
                grasp_center_world: [0.0; 3],
                grab_transform: None,
            },
            model,
            tool,
            env_cfg,
            control_cfg,
            reward_cfg,
            dr_cfg,
            goal_mode: GoalMode::Chain,
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn tool(&self) -> &ToolSpec {
        &self.tool
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_cfg
    }

    pub fn control_config(&self) -> &ControlConfig {
        &self.control_cfg
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.done
    }

    pub fn set_goal_mode(&mut self, mode: GoalMode) {
        self.goal_mode = mode;
    }

    /// Replace the active goal (external goal mode). Reinitializes the
    /// goal-distance tracker only when the goal actually changes.
    pub fn set_goal(&mut self, goal: Pose) {
        if goal != self.state.goal {
            self.state.goal = goal;
            self.goal_consumed = false;
            let d = keypoint_distance(&self.state.object_pose, &goal, &REWARD_SCALES);
            self.state.reward_state.on_new_goal(d);
        }
    }

    /// Latest observations without stepping.
    pub fn observations(&self) -> (&ActorObservation, &CriticState) {
        (&self.last_actor, &self.last_critic)
    }

    fn control_dt(&self) -> f64 {
        1.0 / self.env_cfg.control_hz
    }

    fn sim_dt(&self) -> f64 {
        1.0 / self.env_cfg.sim_hz
    }

    fn palm_pose(&self, q: &[f64]) -> Pose {
        let kin = self.model.forward_kinematics(q).expect("valid q");
        let palm = self.model.frames().expect("frames").palm.clone();
        self.model.frame_pose(&kin, &palm).expect("palm frame")
    }

    fn on_table(&self, p: &Vector3<f64>) -> bool {
        let (cx, cy) = self.env_cfg.table_center_xy;
        let (ex, ey) = self.env_cfg.table_half_extents;
        (p.x - cx).abs() <= ex && (p.y - cy).abs() <= ey
    }

    /// Start a new episode. Fully deterministic per seed.
    pub fn reset(&mut self, seed: u64) -> Result<(ActorObservation, CriticState)> {
        let mut rng = rng::stream(seed, "env.reset", 0);
        self.state.episode_seed = seed;
        self.done = None;
        self.goal_counter = 0;
        self.goal_consumed = false;

        // table height jitter, sampled once per episode
        let jitter = if self.dr_cfg.enabled && self.dr_cfg.table_height_range > 0.0 {
            rng.gen_range(-self.dr_cfg.table_height_range..=self.dr_cfg.table_height_range)
        } else {
            0.0
        };
        self.state.table_surface_z = self.reward_cfg.z_init + jitter;

        // robot: default pose plus uniform noise, clipped to limits
        let noise = self.env_cfg.robot_joint_init_noise;
        let mut q: Vec<f64> = self
            .model
            .default_q()
            .iter()
            .map(|v| v + rng.gen_range(-noise..=noise))
            .collect();
        self.model.clamp_to_limits(&mut q);
        self.state.joints = JointState {
            q: q.clone(),
            qd: vec![0.0; self.model.num_joints()],
        };
        self.control_state.reset(&self.model, &q);

        // object: random planar offset around the table center, random
        // rotation, resting on the surface
        let r = self.env_cfg.object_spawn_xy_range;
        let center = self.env_cfg.table_center(self.state.table_surface_z);
        let spawn_xy = Vector3::new(
            center.x + rng.gen_range(-r..=r),
            center.y + rng.gen_range(-r..=r),
            self.state.table_surface_z,
        );
        self.state.object_pose = Pose::from_parts(spawn_xy, geometry::random_rotation(&mut rng));
        self.state.object_linear_velocity = Vector3::zeros();
        self.state.object_angular_velocity = Vector3::zeros();
        self.state.attached = None;
        self.state.step_count = 0;

        // actor-side grasp-box perturbation, fixed for the episode
        self.actor_scales = if self.dr_cfg.enabled {
            let e = randomization::perturb_bbox(
                &self.tool.grasp_box.extents,
                &mut rng,
                self.dr_cfg.bbox_perturb_fraction,
            );
            KeypointScales::from_extents(&e)?
        } else {
            self.clean_scales
        };

        // per-episode channel delays
        let (d_act, d_obs, d_pose) = if self.dr_cfg.enabled {
            (
                rng.gen_range(0..=self.dr_cfg.obs_action_delay_max),
                rng.gen_range(0..=self.dr_cfg.obs_action_delay_max),
                rng.gen_range(0..=self.dr_cfg.object_pose_delay_max),
            )
        } else {
            (0, 0, 0)
        };
        self.channels = Channels {
            action: DelayQueue::new(d_act),
            proprio: DelayQueue::new(d_obs),
            object_pose: DelayQueue::new(d_pose),
        };

        // first goal: uniform in the workspace box, uniform rotation
        let goal = self.sample_initial_goal(&mut rng);
        self.state.goal = goal;

        let palm = self.palm_pose(&q);
        self.palm_prev = palm;
        self.object_prev = self.state.object_pose;
        let d0 = keypoint_distance(&self.state.object_pose, &goal, &REWARD_SCALES);
        let ft0 = self.mean_fingertip_distance(&q);
        self.state.reward_state = RewardState::reset(d0, ft0);
        self.min_keypoint_since_reset = d0;

        // prime the delay queues with the reset snapshot
        let snap = self.proprio_snapshot();
        self.channels.proprio.push_pop(snap);
        self.channels.object_pose.push_pop(self.state.object_pose);

        let breakdown = RewardBreakdown {
            smooth: 0.0,
            approach: 0.0,
            lift: 0.0,
            goal: 0.0,
            total: 0.0,
            goal_reached: false,
        };
        self.rebuild_observations(&breakdown, 0);
        Ok((self.last_actor.clone(), self.last_critic.clone()))
    }

    fn sample_initial_goal<R: Rng>(&self, rng: &mut R) -> Pose {
        let center = self.env_cfg.table_center(self.state.table_surface_z);
        let (xr, yr, zr) = (
            self.env_cfg.goal_workspace_x,
            self.env_cfg.goal_workspace_y,
            self.env_cfg.goal_workspace_z,
        );
        let pos = center
            + Vector3::new(
                rng.gen_range(xr.0..=xr.1),
                rng.gen_range(yr.0..=yr.1),
                rng.gen_range(zr.0..=zr.1),
            );
        Pose::from_parts(pos, geometry::random_rotation(rng))
    }

    /// Next goal near the previous one: translation uniform in a ball,
    /// rotation a uniform axis with uniform angle in [0, max], then the
    /// position clamps back into the workspace box.
    pub fn sample_next_goal<R: Rng>(&self, prev: &Pose, rng: &mut R) -> Pose {
        let radius = self.env_cfg.next_goal_position_radius;
        let offset = if radius > 0.0 {
            let dir = geometry::random_unit_vector(rng);
            let r = radius * rng.gen_range(0.0..=1.0f64).powf(1.0 / 3.0);
            dir * r
        } else {
            Vector3::zeros()
        };
        let max_angle = self.env_cfg.next_goal_rotation_max_deg.to_radians();
        let rotation = if max_angle > 0.0 {
            let axis = geometry::random_unit_vector(rng);
            let angle = rng.gen_range(0.0..=max_angle);
            UnitQuaternion::new_normalize(
                (geometry::axis_angle(&axis, angle) * prev.rotation).into_inner(),
            )
        } else {
            prev.rotation
        };
        let center = self.env_cfg.table_center(self.state.table_surface_z);
        let (xr, yr, zr) = (
            self.env_cfg.goal_workspace_x,
            self.env_cfg.goal_workspace_y,
            self.env_cfg.goal_workspace_z,
        );
        let raw = prev.translation + offset;
        let pos = Vector3::new(
            (raw.x - center.x).clamp(xr.0, xr.1) + center.x,
            (raw.y - center.y).clamp(yr.0, yr.1) + center.y,
            (raw.z - center.z).clamp(zr.0, zr.1) + center.z,
        );
        Pose::from_parts(pos, rotation)
    }

    fn grasp_center_world(&self) -> Vector3<f64> {
        self.state
            .object_pose
            .transform_point(&self.tool.grasp_box.center)
    }

    fn mean_fingertip_distance(&self, q: &[f64]) -> f64 {
        let kin = self.model.forward_kinematics(q).expect("valid q");
        let frames = self.model.frames().expect("frames");
        let target = self.grasp_center_world();
        let mut sum = 0.0;
        for tip in &frames.fingertips {
            let p = self.model.frame_pose(&kin, tip).expect("tip frame");
            sum += (p.translation - target).norm();
        }
        sum / frames.fingertips.len() as f64
    }

    fn proprio_snapshot(&self) -> ProprioSnapshot {
        let q = &self.state.joints.q;
        let kin = self.model.forward_kinematics(q).expect("valid q");
        let frames = self.model.frames().expect("frames");
        let palm = self.model.frame_pose(&kin, &frames.palm).expect("palm");
        let mut fingertips_rel = Vec::with_capacity(15);
        for tip in &frames.fingertips {
            let p = self.model.frame_pose(&kin, tip).expect("tip");
            let rel = p.translation - palm.translation;
            fingertips_rel.extend_from_slice(&[rel.x, rel.y, rel.z]);
        }
        ProprioSnapshot {
            q: q.clone(),
            qd: self.state.joints.qd.clone(),
            prev_targets: self.control_state.prev_target.clone(),
            palm,
            fingertips_rel,
        }
    }

    fn observation_from_parts(
        snap: &ProprioSnapshot,
        object_pose: &Pose,
        goal: &Pose,
        scales: &KeypointScales,
    ) -> ActorObservation {
        let palm_q = snap.palm.rotation.quaternion();
        let obj_q = object_pose.rotation.quaternion();
        let object_kps = geometry::keypoints_world(object_pose, scales);
        let goal_kps = geometry::keypoints_world(goal, scales);
        let mut rel = Vec::with_capacity(12);
        let mut err = Vec::with_capacity(12);
        for (o, g) in object_kps.points.iter().zip(goal_kps.points.iter()) {
            let r = o - snap.palm.translation;
            rel.extend_from_slice(&[r.x, r.y, r.z]);
            let e = o - g;
            err.extend_from_slice(&[e.x, e.y, e.z]);
        }
        ActorObservation {
            q: snap.q.clone(),
            qd: snap.qd.clone(),
            prev_targets: snap.prev_targets.clone(),
            palm_position: [snap.palm.translation.x, snap.palm.translation.y, snap.palm.translation.z],
            palm_quat: [palm_q.w, palm_q.i, palm_q.j, palm_q.k],
            fingertips_rel_palm: snap.fingertips_rel.clone(),
            object_quat: [obj_q.w, obj_q.i, obj_q.j, obj_q.k],
            object_keypoints_rel_palm: rel,
            keypoint_errors: err,
            object_scales: [scales.s_x, scales.s_y, scales.s_z],
        }
    }

    fn rebuild_observations(&mut self, breakdown: &RewardBreakdown, step: usize) {
        // actor path: delayed channels + sensor noise
        let delayed_snap = self.channels.proprio.peek().expect("primed").clone();
        let delayed_pose = *self.channels.object_pose.peek().expect("primed");
        let mut noisy_snap = delayed_snap;
        let mut noisy_pose = delayed_pose;
        if self.dr_cfg.enabled {
            let mut noise_rng = rng::stream(self.state.episode_seed, "env.noise", step as u64);
            randomization::perturb_velocities(
                &mut noisy_snap.qd,
                self.dr_cfg.joint_velocity_noise,
                &mut noise_rng,
            );
            noisy_pose = randomization::perturb_pose(
                &noisy_pose,
                self.dr_cfg.object_pose_noise_translation,
                self.dr_cfg.object_pose_noise_rotation_deg.to_radians(),
                &mut noise_rng,
            );
        }
        self.last_actor = Self::observation_from_parts(
            &noisy_snap,
            &noisy_pose,
            &self.state.goal,
            &self.actor_scales,
        );

        // critic path: clean and instantaneous
        let snap = self.proprio_snapshot();
        let clean = Self::observation_from_parts(
            &snap,
            &self.state.object_pose,
            &self.state.goal,
            &self.clean_scales,
        );
        let dt = self.control_dt();
        let palm_lin = (snap.palm.translation - self.palm_prev.translation) / dt;
        let palm_ang =
            (snap.palm.rotation * self.palm_prev.rotation.inverse()).scaled_axis() / dt;
        let gc = self.grasp_center_world();
        self.last_critic = CriticState {
            clean,
            palm_linear_velocity: [palm_lin.x, palm_lin.y, palm_lin.z],
            palm_angular_velocity: [palm_ang.x, palm_ang.y, palm_ang.z],
            object_linear_velocity: [
                self.state.object_linear_velocity.x,
                self.state.object_linear_velocity.y,
                self.state.object_linear_velocity.z,
            ],
            object_angular_velocity: [
                self.state.object_angular_velocity.x,
                self.state.object_angular_velocity.y,
                self.state.object_angular_velocity.z,
            ],
            reward: breakdown.total,
            success_count: self.state.reward_state.success_count,
            min_fingertip_distance: self.state.reward_state.dbar_star_ft,
            min_keypoint_distance: self.min_keypoint_since_reset,
            steps_since_reset: step,
            grasped: self.state.reward_state.grasped,
            object_pose: self.state.object_pose,
            goal_pose: self.state.goal,
            palm_pose: snap.palm,
            grasp_center_world: [gc.x, gc.y, gc.z],
            grab_transform: self.state.attached,
        };
    }

    fn handle_event(&mut self, event: GraspEvent, events: &mut Vec<String>) {
        match event {
            GraspEvent::Attach => {
                if self.state.attached.is_some() {
                    return;
                }
                let palm = self.palm_pose(&self.state.joints.q);
                let dist = (palm.translation - self.grasp_center_world()).norm();
                if dist <= self.env_cfg.capture_radius {
                    let grab = geometry::compose(
                        &geometry::invert(&palm).expect("finite"),
                        &self.state.object_pose,
                    )
                    .expect("finite");
                    self.state.attached = Some(grab);
                    events.push("attached".into());
                } else {
                    events.push(format!("attach_rejected:{dist:.4}"));
                }
            }
            GraspEvent::Detach => {
                if self.state.attached.take().is_some() {
                    events.push("detached".into());
                }
            }
        }
    }

    /// Advance one control step.
    pub fn step(
        &mut self,
        action: &[f64],
        event: Option<GraspEvent>,
    ) -> Result<StepReport> {
        if self.done.is_some() {
            return Err(Error::EpisodeDone);
        }
        if action.len() != self.model.num_joints() {
            return Err(Error::LengthMismatch {
                expected: self.model.num_joints(),
                got: action.len(),
            });
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "action" });
        }
        let step = self.state.step_count;
        let mut events = Vec::new();

        if let Some(ev) = event {
            self.handle_event(ev, &mut events);
        }

        // action latency, then target processing
        let applied = self.channels.action.push_pop(action.to_vec());
        let q_prev = self.state.joints.q.clone();
        let target =
            control::process_action(&applied, &mut self.control_state, &self.model, &self.control_cfg)?;

        // one wrench decision per control step, applied while airborne
        let mut step_rng = rng::stream(self.state.episode_seed, "env.step", step as u64);
        let wrench = if self.dr_cfg.enabled
            && step_rng.gen_bool(self.dr_cfg.perturb_probability)
        {
            Some(randomization::sample_wrench(&mut step_rng, &self.dr_cfg))
        } else {
            None
        };

        let substeps = self.env_cfg.substeps();
        let dt = self.sim_dt();
        let g = self.env_cfg.gravity;
        let object_before = self.state.object_pose;
        let mut max_penetration = 0.0f64;
        for k in 0..substeps {
            let frac = (k + 1) as f64 / substeps as f64;
            let q_sub: Vec<f64> = q_prev
                .iter()
                .zip(target.iter())
                .map(|(a, b)| a + frac * (b - a))
                .collect();
            let palm = self.palm_pose(&q_sub);
            max_penetration = max_penetration.max(self.state.table_surface_z - palm.translation.z);

            if let Some(grab) = self.state.attached {
                self.state.object_pose = geometry::compose(&palm, &grab).expect("finite");
            } else {
                let surface = self.state.table_surface_z;
                let p = self.state.object_pose.translation;
                let resting = p.z <= surface + 1e-9 && self.on_table(&p)
                    && self.state.object_linear_velocity.norm() == 0.0;
                if !resting {
                    if let Some((force, torque)) = wrench.filter(|_| k == 0) {
                        self.state.object_linear_velocity += force / self.tool.mass * dt;
                        // inertia about com in the object frame, rotated out
                        let rot = self.state.object_pose.rotation_matrix();
                        let inertia_w = rot * self.tool.inertia * rot.transpose();
                        if let Some(inv) = inertia_w.try_inverse() {
                            self.state.object_angular_velocity += inv * torque * dt;
                        }
                    }
                    // exact constant-acceleration integration
                    let v = self.state.object_linear_velocity;
                    let mut p_new = p + v * dt + Vector3::new(0.0, 0.0, -0.5 * g * dt * dt);
                    self.state.object_linear_velocity.z -= g * dt;
                    let w = self.state.object_angular_velocity;
                    let mut rot_new = self.state.object_pose.rotation;
                    if w.norm() > 0.0 {
                        rot_new = UnitQuaternion::new_normalize(
                            (UnitQuaternion::from_scaled_axis(w * dt) * rot_new).into_inner(),
                        );
                    }
                    // land on the table (perfectly inelastic) or keep falling
                    if p_new.z <= surface && self.on_table(&p_new) && v.z <= 0.0 {
                        p_new.z = surface;
                        self.state.object_linear_velocity = Vector3::zeros();
                        self.state.object_angular_velocity = Vector3::zeros();
                        events.push("landed".into());
                    }
                    self.state.object_pose = Pose {
                        translation: p_new,
                        rotation: rot_new,
                    };
                }
            }
        }

        // joint state lands on the target; velocities over the control step
        let dt_c = self.control_dt();
        self.state.joints.qd = target
            .iter()
            .zip(q_prev.iter())
            .map(|(t, p)| (t - p) / dt_c)
            .collect();
        self.state.joints.q = target;

        // attached-object velocities for the critic
        if self.state.attached.is_some() {
            self.state.object_linear_velocity =
                (self.state.object_pose.translation - object_before.translation) / dt_c;
            self.state.object_angular_velocity = (self.state.object_pose.rotation
                * object_before.rotation.inverse())
            .scaled_axis()
                / dt_c;
        }

        // rewards on the post-step state
        let q = self.state.joints.q.clone();
        let n_arm = self.model.num_arm_joints();
        let d = keypoint_distance(&self.state.object_pose, &self.state.goal, &REWARD_SCALES);
        let mean_ft = self.mean_fingertip_distance(&q);
        let inputs = RewardInputs {
            qd_arm: &self.state.joints.qd[..n_arm],
            qd_hand: &self.state.joints.qd[n_arm..],
            mean_fingertip_distance: mean_ft,
            object_z: self.state.object_pose.translation.z,
            goal_distance: d,
        };
        let breakdown = if self.goal_consumed && self.state.reward_state.grasped {
            // external mode between a success and the next set_goal: the
            // goal term sleeps so a reached goal can only pay once
            let smooth = reward::smoothness_reward(inputs.qd_arm, inputs.qd_hand, &self.reward_cfg);
            let approach = reward::approach_reward(
                inputs.mean_fingertip_distance,
                &mut self.state.reward_state,
                &self.reward_cfg,
            );
            RewardBreakdown {
                smooth,
                approach,
                lift: 0.0,
                goal: 0.0,
                total: smooth + approach,
                goal_reached: false,
            }
        } else {
            reward::total_reward(&inputs, &mut self.state.reward_state, &self.reward_cfg)
        };
        self.min_keypoint_since_reset = self.min_keypoint_since_reset.min(d);

        if breakdown.goal_reached {
            events.push("goal_reached".into());
            match self.goal_mode {
                GoalMode::Chain => {
                    let mut goal_rng = rng::stream(
                        self.state.episode_seed,
                        "env.goal",
                        self.goal_counter,
                    );
                    self.goal_counter += 1;
                    let next = self.sample_next_goal(&self.state.goal.clone(), &mut goal_rng);
                    self.state.goal = next;
                    let d_new =
                        keypoint_distance(&self.state.object_pose, &next, &REWARD_SCALES);
                    self.state.reward_state.on_new_goal(d_new);
                }
                GoalMode::External => {
                    self.goal_consumed = true;
                }
            }
        }

        self.state.step_count += 1;
        let termination = self.check_termination(max_penetration);
        self.done = termination;
        if let Some(t) = termination {
            events.push(format!("terminated:{t}"));
        }

        // advance observation channels, then build both views
        let snap = self.proprio_snapshot();
        let palm_now = snap.palm;
        self.channels.proprio.push_pop(snap);
        self.channels.object_pose.push_pop(self.state.object_pose);
        self.rebuild_observations(&breakdown, self.state.step_count);
        self.palm_prev = palm_now;
        self.object_prev = self.state.object_pose;

        Ok(StepReport {
            actor: self.last_actor.clone(),
            critic: self.last_critic.clone(),
            reward: breakdown,
            termination,
            events,
            object_pose: self.state.object_pose,
            goal_distance: d,
        })
    }

    /// First matching condition, in this order: fallen, dropped, wander,
    /// force, timeout, max_success.
    fn check_termination(&self, palm_penetration: f64) -> Option<Termination> {
        let z = self.state.object_pose.translation.z;
        // a held object cannot fall off the table; pressing it into the
        // surface is covered by the table-force pathway instead
        if self.state.attached.is_none() && z < self.state.table_surface_z - 1e-9 {
            return Some(Termination::Fallen);
        }
        if self.state.reward_state.grasped && z < self.reward_cfg.z_init {
            return Some(Termination::Dropped);
        }
        let palm = self.last_palm_translation();
        if (palm - self.state.object_pose.translation).norm() > self.env_cfg.hand_wander_limit {
            return Some(Termination::Wander);
        }
        if palm_penetration * self.env_cfg.table_stiffness > self.env_cfg.table_force_limit {
            return Some(Termination::Force);
        }
        if self.state.step_count >= self.env_cfg.episode_length {
            return Some(Termination::Timeout);
        }
        if self.state.reward_state.success_count >= self.env_cfg.max_consecutive_successes {
            return Some(Termination::MaxSuccess);
        }
        None
    }

    fn last_palm_translation(&self) -> Vector3<f64> {
        self.palm_pose(&self.state.joints.q).translation
    }

    /// Log record for the step that produced `report`.
    pub fn record(&self, report: &StepReport) -> StepRecord {
        StepRecord {
            step: self.state.step_count,
            q: self.state.joints.q.clone(),
            object_pose: report.object_pose,
            goal_pose: self.state.goal,
            d: report.goal_distance,
            d_star: self.state.reward_state.d_star,
            reward_terms: report.reward,
            events: report.events.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::{sample_tool, SampleRanges};
    use approx::assert_abs_diff_eq;

    fn make_env(dr_enabled: bool) -> EpisodeEnv {
        let model = RobotModel::bundled_default();
        let tool = sample_tool(11, &SampleRanges::default()).unwrap();
        let dr = RandomizationConfig {
            enabled: dr_enabled,
            ..RandomizationConfig::default()
        };
        EpisodeEnv::new(
            model,
            tool,
            EnvConfig::default(),
            ControlConfig::default(),
            RewardConfig::default(),
            dr,
        )
        .unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = make_env(true);
        let mut b = make_env(true);
        let (oa, ca) = a.reset(12345).unwrap();
        let (ob, cb) = b.reset(12345).unwrap();
        assert_eq!(oa.flatten(), ob.flatten());
        assert_eq!(ca.flatten(), cb.flatten());
        // and a different seed genuinely differs
        let (oc, _) = b.reset(54321).unwrap();
        assert_ne!(oa.flatten(), oc.flatten());
    }

    #[test]
    fn reset_respects_ranges() {
        let mut env = make_env(true);
        for seed in 0..200 {
            env.reset(seed).unwrap();
            let s = env.state();
            let (cx, cy) = env.env_cfg.table_center_xy;
            let p = s.object_pose.translation;
            assert!((p.x - cx).abs() <= 0.10 + 1e-12);
            assert!((p.y - cy).abs() <= 0.10 + 1e-12);
            assert_abs_diff_eq!(p.z, s.table_surface_z, epsilon = 1e-12);
            assert!((s.table_surface_z - 0.63).abs() <= 0.01 + 1e-12);
            for (i, q) in s.joints.q.iter().enumerate() {
                assert!(*q >= env.model.lower_limits()[i] - 1e-12);
                assert!(*q <= env.model.upper_limits()[i] + 1e-12);
            }
            // first goal inside the workspace box
            let center = env.env_cfg.table_center(s.table_surface_z);
            let rel = s.goal.translation - center;
            assert!(rel.x >= -0.35 - 1e-12 && rel.x <= 0.35 + 1e-12);
            assert!(rel.y >= -0.1 - 1e-12 && rel.y <= 0.2 + 1e-12);
            assert!(rel.z >= 0.15 - 1e-12 && rel.z <= 0.52 + 1e-12);
        }
    }

    #[test]
    fn observation_dimensions() {
        let mut env = make_env(true);
        let (actor, critic) = env.reset(3).unwrap();
        assert_eq!(actor.flatten().len(), 140);
        assert_eq!(actor.dim(), 140);
        assert_eq!(critic.flatten().len(), 158);
    }

    #[test]
    fn dr_disabled_actor_equals_clean_critic() {
        let mut env = make_env(false);
        env.reset(7).unwrap();
        for _ in 0..10 {
            let report = env.step(&vec![0.3; 29], None).unwrap();
            assert_eq!(report.actor, report.critic.clean);
        }
    }

    #[test]
    fn goal_chain_stays_within_perturbation_bounds() {
        let env = make_env(true);
        let mut rng = rng::stream(5, "test.chain", 0);
        let mut prev = env.state().goal;
        for _ in 0..10_000 {
            let next = env.sample_next_goal(&prev, &mut rng);
            // position bound holds after clamping too, relative to the
            // pre-clamp chain: check against the raw predecessor
            let rot_angle = prev.rotation.angle_to(&next.rotation);
            assert!(rot_angle <= 90.0f64.to_radians() + 1e-9);
            let center = env.env_cfg.table_center(env.state().table_surface_z);
            let rel = next.translation - center;
            assert!(rel.x >= -0.35 - 1e-9 && rel.x <= 0.35 + 1e-9);
            assert!(rel.y >= -0.1 - 1e-9 && rel.y <= 0.2 + 1e-9);
            assert!(rel.z >= 0.15 - 1e-9 && rel.z <= 0.52 + 1e-9);
            prev = next;
        }
    }

    #[test]
    fn next_goal_offset_bounded_before_clamp() {
        let mut env = make_env(true);
        env.reset(1).unwrap();
        // use a goal at the center of the workspace so clamping is inactive
        let center = env.env_cfg.table_center(env.state().table_surface_z);
        let prev = Pose::from_parts(
            center + Vector3::new(0.0, 0.05, 0.335),
            UnitQuaternion::identity(),
        );
        let mut rng = rng::stream(6, "test.offset", 0);
        for _ in 0..10_000 {
            let next = env.sample_next_goal(&prev, &mut rng);
            assert!((next.translation - prev.translation).norm() <= 0.1 + 1e-9);
        }
    }

    #[test]
    fn zero_perturbation_keeps_goal() {
        let mut env = make_env(true);
        env.reset(1).unwrap();
        env.env_cfg.next_goal_position_radius = 0.0;
        env.env_cfg.next_goal_rotation_max_deg = 0.0;
        let center = env.env_cfg.table_center(env.state().table_surface_z);
        let prev = Pose::from_parts(
            center + Vector3::new(0.1, 0.0, 0.3),
            UnitQuaternion::identity(),
        );
        let mut rng = rng::stream(6, "test.zero", 0);
        let next = env.sample_next_goal(&prev, &mut rng);
        assert_eq!(next, prev);
    }

    #[test]
    fn detached_object_falls_ballistically() {
        let mut env = make_env(false);
        env.reset(2).unwrap();
        // lift the object off the table and let it go
        let start_z = env.state().table_surface_z + 0.2;
        env.state.object_pose.translation.z = start_z;
        let g = env.env_cfg.gravity;
        let mut substeps_elapsed = 0u32;
        for _ in 0..3 {
            env.step(&vec![0.0; 29], None).unwrap();
            substeps_elapsed += 2;
            let t = substeps_elapsed as f64 / 120.0;
            let expect = start_z - 0.5 * g * t * t;
            assert_abs_diff_eq!(env.state().object_pose.translation.z, expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn falling_object_lands_and_rests() {
        let mut env = make_env(false);
        env.reset(2).unwrap();
        env.state.object_pose.translation.z = env.state().table_surface_z + 0.05;
        for _ in 0..60 {
            if env.is_done() {
                break;
            }
            env.step(&vec![0.0; 29], None).unwrap();
        }
        assert_abs_diff_eq!(
            env.state().object_pose.translation.z,
            env.state().table_surface_z,
            epsilon = 1e-12
        );
        assert_eq!(env.state().object_linear_velocity, Vector3::zeros());
    }

    #[test]
    fn object_off_table_falls_to_fallen_termination() {
        let mut env = make_env(false);
        env.reset(2).unwrap();
        // place the object past the table edge, slightly above surface
        let (cx, cy) = env.env_cfg.table_center_xy;
        let (ex, _) = env.env_cfg.table_half_extents;
        env.state.object_pose.translation.x = cx + ex + 0.1;
        env.state.object_pose.translation.y = cy;
        env.state.object_pose.translation.z = env.state().table_surface_z + 0.01;
        let mut terminated = None;
        for _ in 0..10 {
            let report = env.step(&vec![0.0; 29], None).unwrap();
            if let Some(t) = report.termination {
                terminated = Some(t);
                break;
            }
        }
        assert_eq!(terminated, Some(Termination::Fallen));
    }

    #[test]
    fn attach_requires_capture_radius() {
        let mut env = make_env(false);
        env.reset(4).unwrap();
        // palm starts far from the object: attach must be rejected
        let report = env.step(&vec![0.0; 29], Some(GraspEvent::Attach)).unwrap();
        assert!(report.events.iter().any(|e| e.starts_with("attach_rejected")));
        assert!(env.state().attached.is_none());

        // teleport the object to the palm: attach must stick
        let palm = env.palm_pose(&env.state().joints.q);
        env.state.object_pose.translation = palm.translation;
        let report = env.step(&vec![0.0; 29], Some(GraspEvent::Attach)).unwrap();
        assert!(report.events.iter().any(|e| e == "attached"));
        assert!(env.state().attached.is_some());
    }

    #[test]
    fn attached_object_follows_palm_rigidly() {
        let mut env = make_env(false);
        env.reset(4).unwrap();
        let palm = env.palm_pose(&env.state().joints.q);
        env.state.object_pose = Pose::from_parts(
            palm.translation,
            env.state().object_pose.rotation,
        );
        env.step(&vec![0.0; 29], Some(GraspEvent::Attach)).unwrap();
        let grab0 = env.state().attached.unwrap();
        // drive the arm around; the grab transform must not drift
        for i in 0..50 {
            let mut action = vec![0.0; 29];
            action[0] = if i % 2 == 0 { 1.0 } else { 0.6 };
            action[1] = -0.8;
            action[3] = 0.5;
            let report = env.step(&action, None).unwrap();
            let palm = env.palm_pose(&env.state().joints.q);
            let grab_now = geometry::compose(
                &geometry::invert(&palm).unwrap(),
                &env.state().object_pose,
            )
            .unwrap();
            assert!((grab_now.translation - grab0.translation).norm() < 1e-12);
            assert!(grab_now.rotation.angle_to(&grab0.rotation) < 1e-12);
            if report.termination.is_some() {
                break;
            }
        }
        // zero action: object velocity settles to zero with the palm
        if !env.is_done() {
            for _ in 0..80 {
                if env.is_done() {
                    break;
                }
                env.step(&vec![0.0; 29], None).unwrap();
            }
        }
    }

    #[test]
    fn step_determinism_full_trajectory() {
        let run = |seed: u64| -> Vec<u8> {
            let mut env = make_env(true);
            env.reset(seed).unwrap();
            let mut bytes = Vec::new();
            let mut act_rng = rng::stream(seed, "test.actions", 0);
            for step in 0..120 {
                if env.is_done() {
                    break;
                }
                let action: Vec<f64> = (0..29).map(|_| act_rng.gen_range(-1.0..1.0)).collect();
                let event = if step == 5 { Some(GraspEvent::Attach) } else { None };
                let report = env.step(&action, event).unwrap();
                bytes.extend(report.reward.total.to_le_bytes());
                for v in report.actor.flatten() {
                    bytes.extend(v.to_le_bytes());
                }
                bytes.extend(report.object_pose.to_array().iter().flat_map(|v| v.to_le_bytes()));
            }
            bytes
        };
        assert_eq!(run(99), run(99));
        assert_ne!(run(99), run(100));
    }

    #[test]
    fn timeout_after_episode_length() {
        let mut env = make_env(false);
        env.env_cfg.episode_length = 20;
        env.reset(5).unwrap();
        let mut last = None;
        for _ in 0..20 {
            let report = env.step(&vec![0.0; 29], None).unwrap();
            last = report.termination;
        }
        assert_eq!(last, Some(Termination::Timeout));
        assert!(matches!(
            env.step(&vec![0.0; 29], None),
            Err(Error::EpisodeDone)
        ));
    }

    #[test]
    fn wander_force_and_max_success_branches() {
        // wander: object teleported far from the palm, still airborne
        let mut env = make_env(false);
        env.reset(21).unwrap();
        let (cx, cy) = env.env_cfg.table_center_xy;
        env.state.object_pose.translation = Vector3::new(cx + 2.0, cy, 5.0);
        let report = env.step(&vec![0.0; 29], None).unwrap();
        assert_eq!(report.termination, Some(Termination::Wander));

        // force: the table raised into the palm's commanded path
        let mut env = make_env(false);
        env.reset(22).unwrap();
        let palm_z = env.palm_pose(&env.state().joints.q).translation.z;
        env.state.table_surface_z = palm_z + 0.02;
        env.state.object_pose.translation.z = env.state.table_surface_z;
        let report = env.step(&vec![0.0; 29], None).unwrap();
        assert_eq!(report.termination, Some(Termination::Force));

        // max consecutive successes
        let mut env = make_env(false);
        env.reset(23).unwrap();
        env.state.reward_state.success_count = env.env_cfg.max_consecutive_successes;
        let report = env.step(&vec![0.0; 29], None).unwrap();
        assert_eq!(report.termination, Some(Termination::MaxSuccess));
    }

    #[test]
    fn pre_grasp_resting_object_is_running() {
        let mut env = make_env(false);
        env.reset(6).unwrap();
        // resting at the surface, not grasped: no dropped termination even
        // though z may be below z_init when the table jitters low
        let report = env.step(&vec![0.0; 29], None).unwrap();
        assert_eq!(report.termination, None);
    }

    #[test]
    fn dropped_after_grasp_hysteresis() {
        let mut env = make_env(false);
        env.reset(6).unwrap();
        env.state.reward_state.grasped = true;
        // simulate the object having returned to the table below z_init
        env.state.object_pose.translation.z = env.reward_cfg.z_init - 0.005;
        env.state.table_surface_z = env.reward_cfg.z_init - 0.006;
        let report = env.step(&vec![0.0; 29], None).unwrap();
        assert_eq!(report.termination, Some(Termination::Dropped));
    }

    #[test]
    fn object_at_palm_keypoints_match_frame_algebra() {
        let mut env = make_env(false);
        env.reset(8).unwrap();
        let palm = env.palm_pose(&env.state().joints.q);
        env.state.object_pose = palm;
        let report = env.step(&vec![0.0; 29], Some(GraspEvent::Attach)).unwrap();
        assert!(env.state().attached.is_some());
        // with the object exactly at the palm, keypoints relative to the
        // palm equal the local offsets rotated by the palm orientation
        let palm_now = env.palm_pose(&env.state().joints.q);
        let scales = env.clean_scales;
        let offsets = scales.local_offsets();
        for (i, off) in offsets.iter().enumerate() {
            let expect = palm_now.rotation * off;
            let got = Vector3::new(
                report.critic.clean.object_keypoints_rel_palm[3 * i],
                report.critic.clean.object_keypoints_rel_palm[3 * i + 1],
                report.critic.clean.object_keypoints_rel_palm[3 * i + 2],
            );
            assert_abs_diff_eq!((expect - got).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn chain_mode_success_resamples_goal() {
        let mut env = make_env(false);
        env.reset(14).unwrap();
        env.state.reward_state.grasped = true;
        let palm = env.palm_pose(&env.state().joints.q);
        env.state.object_pose.translation = palm.translation;
        env.step(&vec![0.0; 29], Some(GraspEvent::Attach)).unwrap();
        assert!(env.state().attached.is_some());

        // plant a goal the held object already satisfies
        let goal = Pose::from_parts(
            env.state().object_pose.translation + Vector3::new(0.0, 0.0, 0.001),
            env.state().object_pose.rotation,
        );
        env.state.goal = goal;
        env.state.reward_state.on_new_goal(0.001);
        let report = env.step(&vec![0.0; 29], None).unwrap();
        assert!(report.reward.goal_reached);
        assert!(report.reward.goal >= env.reward_cfg.b_succ);
        assert!(report.events.iter().any(|e| e == "goal_reached"));
        // the goal resampled away and the tracker restarted at the new
        // distance, so the success cannot re-fire while holding still
        assert_ne!(env.state().goal, goal);
        let d_new = keypoint_distance(&env.state().object_pose, &env.state().goal, &REWARD_SCALES);
        assert!((env.state().reward_state.d_star - d_new).abs() < 1e-12);
        let report = env.step(&vec![0.0; 29], None).unwrap();
        assert!(!report.reward.goal_reached);
        assert_eq!(env.state().reward_state.success_count, 1);
    }

    #[test]
    fn external_goal_pays_success_exactly_once() {
        let mut env = make_env(false);
        env.reset(9).unwrap();
        env.set_goal_mode(GoalMode::External);
        env.state.reward_state.grasped = true;
        // attach so the object hovers with the palm instead of falling
        let palm = env.palm_pose(&env.state().joints.q);
        env.state.object_pose.translation = palm.translation;
        env.step(&vec![0.0; 29], Some(GraspEvent::Attach)).unwrap();
        assert!(env.state().attached.is_some());

        let goal = Pose::from_parts(
            env.state().object_pose.translation + Vector3::new(0.0, 0.0, 0.001),
            env.state().object_pose.rotation,
        );
        env.set_goal(goal);
        let r1 = env.step(&vec![0.0; 29], None).unwrap();
        assert!(r1.reward.goal_reached);
        assert_eq!(env.state().reward_state.success_count, 1);
        // same goal, still within tolerance: must not fire again
        for _ in 0..5 {
            let r = env.step(&vec![0.0; 29], None).unwrap();
            assert!(!r.reward.goal_reached);
        }
        assert_eq!(env.state().reward_state.success_count, 1);
        // the env goal never resampled in external mode
        assert_eq!(env.state().goal, goal);

        // a new goal re-arms the success logic
        let goal2 = Pose::from_parts(
            env.state().object_pose.translation + Vector3::new(0.0, 0.0, 0.002),
            env.state().object_pose.rotation,
        );
        env.set_goal(goal2);
        let r = env.step(&vec![0.0; 29], None).unwrap();
        assert!(r.reward.goal_reached);
        assert_eq!(env.state().reward_state.success_count, 2);
    }
}
