//! Scripted policies that exercise the environment without any learning:
//! a privileged IK-tracking oracle that grasps and servoes goals, a random
//! policy, and a frozen policy. The oracle is a test instrument built on
//! the clean critic state, not a claim about learnable behavior.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::control::ControlConfig;
use crate::env::{
    ActorObservation, CriticState, EpisodeEnv, GraspEvent, StepReport, Termination,
};
use crate::error::Result;
use crate::geometry::{compose, invert, Pose};
use crate::planner::{dls_step, pose_error};
use crate::robot::RobotModel;
use crate::traj::{RolloutSource, StepOutcome};

/// Action plus optional grasp transition for one step.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub action: Vec<f64>,
    pub event: Option<GraspEvent>,
}

pub trait Policy {
    fn act(&mut self, actor: &ActorObservation, critic: &CriticState) -> PolicyOutput;
    /// Clear per-episode state.
    fn reset(&mut self) {}
}

/// Privileged oracle: phase 1 servoes the palm to a hover point over the
/// grasp-box center and attaches inside the capture radius; phase 2 tracks
/// the goal through the stored grab transform, converting DLS joint
/// updates to delta-arm actions by dividing by k_arm and clipping.
pub struct OraclePolicy {
    model: RobotModel,
    k_arm: f64,
    capture_radius: f64,
    /// Hover height over the grasp center during approach.
    hover: f64,
    damping: f64,
}

impl OraclePolicy {
    pub fn new(model: RobotModel, control: &ControlConfig, capture_radius: f64) -> Self {
        Self {
            model,
            k_arm: control.k_arm,
            capture_radius,
            hover: capture_radius * 0.5,
            damping: 0.05,
        }
    }

    fn servo(&self, critic: &CriticState, target: &Pose, position_only: bool) -> Vec<f64> {
        let q = &critic.clean.q;
        let kin = self.model.forward_kinematics(q).expect("valid q");
        let palm_frame = &self.model.frames().expect("frames").palm.clone();
        let palm = self.model.frame_pose(&kin, palm_frame).expect("palm");
        let mut e = pose_error(target, &palm);
        if position_only {
            for r in 3..6 {
                e[r] = 0.0;
            }
        }
        let jac = self.model.jacobian(&kin, palm_frame).expect("palm jac");
        let dq: DVector<f64> = dls_step(&jac, &e, self.damping).expect("dls");
        let n_arm = self.model.num_arm_joints();
        let mut action = vec![0.0; self.model.num_joints()];
        for j in 0..n_arm {
            action[j] = (dq[j] / self.k_arm).clamp(-1.0, 1.0);
        }
        action
    }
}

impl Policy for OraclePolicy {
    fn act(&mut self, _actor: &ActorObservation, critic: &CriticState) -> PolicyOutput {
        let grasp_center = Vector3::new(
            critic.grasp_center_world[0],
            critic.grasp_center_world[1],
            critic.grasp_center_world[2],
        );
        match critic.grab_transform {
            None => {
                // approach: hover slightly above the grasp center
                let target = Pose::from_parts(
                    grasp_center + Vector3::new(0.0, 0.0, self.hover),
                    critic.palm_pose.rotation,
                );
                let action = self.servo(critic, &target, true);
                let dist = (critic.palm_pose.translation - grasp_center).norm();
                let palm_speed = Vector3::new(
                    critic.palm_linear_velocity[0],
                    critic.palm_linear_velocity[1],
                    critic.palm_linear_velocity[2],
                )
                .norm();
                // grab only once the palm has settled, so the attached
                // object is not yanked along with residual approach motion
                let event = if dist <= self.capture_radius * 0.9 && palm_speed <= 0.05 {
                    Some(GraspEvent::Attach)
                } else {
                    None
                };
                PolicyOutput { action, event }
            }
            Some(grab) => {
                // track: palm target places the object at the goal
                let palm_target = compose(
                    &critic.goal_pose,
                    &invert(&grab).expect("finite grab"),
                )
                .expect("finite");
                let mut action = self.servo(critic, &palm_target, false);
                // hold a light grasp posture on the hand
                for a in action
                    .iter_mut()
                    .skip(self.model.num_arm_joints())
                {
                    *a = 0.2;
                }
                PolicyOutput {
                    action,
                    event: None,
                }
            }
        }
    }
}

/// Uniform actions in [-1, 1]^J, deterministic per seed.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    n: usize,
}

impl RandomPolicy {
    pub fn new(seed: u64, n_joints: usize) -> Self {
        Self {
            rng: crate::rng::stream(seed, "policy.random", 0),
            n: n_joints,
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _actor: &ActorObservation, _critic: &CriticState) -> PolicyOutput {
        PolicyOutput {
            action: (0..self.n).map(|_| self.rng.gen_range(-1.0..=1.0)).collect(),
            event: None,
        }
    }
}

/// Zero actions, no events.
pub struct FrozenPolicy {
    n: usize,
}

impl FrozenPolicy {
    pub fn new(n_joints: usize) -> Self {
        Self { n: n_joints }
    }
}

impl Policy for FrozenPolicy {
    fn act(&mut self, _actor: &ActorObservation, _critic: &CriticState) -> PolicyOutput {
        PolicyOutput {
            action: vec![0.0; self.n],
            event: None,
        }
    }
}

/// Outcome of driving one episode to completion.
#[derive(Debug, Clone)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub total_reward: f64,
    pub success_count: u32,
    pub termination: Option<Termination>,
}

/// Step `policy` in `env` until termination or `max_steps`, invoking
/// `on_step` after every step (for logging).
pub fn run_episode(
    env: &mut EpisodeEnv,
    policy: &mut dyn Policy,
    max_steps: usize,
    mut on_step: impl FnMut(&EpisodeEnv, &StepReport),
) -> Result<EpisodeSummary> {
    let mut total_reward = 0.0;
    let mut steps = 0;
    while !env.is_done() && steps < max_steps {
        let output = {
            let (actor, critic) = env.observations();
            policy.act(actor, critic)
        };
        let report = env.step(&output.action, output.event)?;
        total_reward += report.reward.total;
        steps += 1;
        on_step(env, &report);
    }
    Ok(EpisodeSummary {
        steps,
        total_reward,
        success_count: env.state().reward_state.success_count,
        termination: env.termination(),
    })
}

/// Adapts a live environment plus policy to the closed-loop evaluator.
/// Each evaluator step injects the active waypoint as the env goal before
/// acting, so the env's success bonus and the evaluator's reached-count
/// fire on the same condition.
pub struct LiveRollout<'a> {
    env: &'a mut EpisodeEnv,
    policy: &'a mut dyn Policy,
    pending_failure: Option<String>,
}

impl<'a> LiveRollout<'a> {
    pub fn new(env: &'a mut EpisodeEnv, policy: &'a mut dyn Policy) -> Self {
        env.set_goal_mode(crate::env::GoalMode::External);
        Self {
            env,
            policy,
            pending_failure: None,
        }
    }
}

impl RolloutSource for LiveRollout<'_> {
    fn step(&mut self, current_goal: &Pose) -> StepOutcome {
        if let Some(reason) = self.pending_failure.take() {
            return StepOutcome::Failed(reason);
        }
        if self.env.is_done() {
            return StepOutcome::Ended;
        }
        self.env.set_goal(*current_goal);
        let output = {
            let (actor, critic) = self.env.observations();
            self.policy.act(actor, critic)
        };
        match self.env.step(&output.action, output.event) {
            Ok(report) => {
                if let Some(term) = report.termination {
                    if term.is_failure() {
                        // deliver the pose first; surface the failure on the
                        // next call so a terminal success still counts
                        self.pending_failure = Some(term.to_string());
                    }
                }
                StepOutcome::Pose(report.object_pose)
            }
            Err(e) => StepOutcome::Failed(e.to_string()),
        }
    }
}
