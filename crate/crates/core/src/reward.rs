//! Reward terms and their stateful trackers.
//!
//! Total reward: r = r_smooth + r_approach + (1 - I_grasped) * r_lift +
//! I_grasped * r_goal. The approach and goal terms pay only for
//! improvements over running minima, so holding still earns nothing; the
//! lift bonus pays at most once per episode and the success bonus exactly
//! once per goal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// L1 arm velocity penalty coefficient.
    pub lambda_arm: f64,
    /// L1 hand velocity penalty coefficient.
    pub lambda_hand: f64,
    /// Fingertip approach progress coefficient.
    pub lambda_approach: f64,
    /// Height progress coefficient before grasping.
    pub lambda_lift: f64,
    /// One-time bonus for lifting past the threshold.
    pub b_lifted: f64,
    /// Goal-distance progress coefficient.
    pub lambda_goal: f64,
    /// Sparse per-goal success bonus.
    pub b_succ: f64,
    /// Success tolerance on the keypoint distance, m.
    pub epsilon: f64,
    /// Resting object height, m.
    pub z_init: f64,
    /// Height at which the object counts as lifted/grasped, m.
    pub z_lifted: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::train()
    }
}

impl RewardConfig {
    /// Training preset: 1 cm success tolerance.
    pub fn train() -> Self {
        Self {
            lambda_arm: 0.03,
            lambda_hand: 0.003,
            lambda_approach: 50.0,
            lambda_lift: 20.0,
            b_lifted: 300.0,
            lambda_goal: 200.0,
            b_succ: 1000.0,
            epsilon: 0.01,
            z_init: 0.63,
            z_lifted: 0.73,
        }
    }

    /// Evaluation preset: 2 cm success tolerance, everything else equal.
    pub fn eval() -> Self {
        Self {
            epsilon: 0.02,
            ..Self::train()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_arm", self.lambda_arm),
            ("lambda_hand", self.lambda_hand),
            ("lambda_approach", self.lambda_approach),
            ("lambda_lift", self.lambda_lift),
            ("b_lifted", self.b_lifted),
            ("lambda_goal", self.lambda_goal),
            ("b_succ", self.b_succ),
            ("epsilon", self.epsilon),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("reward.{name}"), "must be >= 0"));
            }
        }
        if !(self.z_lifted > self.z_init) {
            return Err(Error::validation("reward.z_lifted", "must exceed z_init"));
        }
        Ok(())
    }
}

/// Per-episode trackers. `d_star` resets when a goal is sampled;
/// `dbar_star_ft` and the latches reset only on episode reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardState {
    /// Minimum keypoint distance achieved for the current goal.
    pub d_star: f64,
    /// Minimum mean fingertip-to-object distance this episode.
    pub dbar_star_ft: f64,
    pub grasped: bool,
    pub lifted_bonus_paid: bool,
    pub success_count: u32,
}

impl RewardState {
    /// Called at episode reset with the first observed values.
    pub fn reset(initial_goal_distance: f64, initial_mean_ft_distance: f64) -> Self {
        Self {
            d_star: initial_goal_distance,
            dbar_star_ft: initial_mean_ft_distance,
            grasped: false,
            lifted_bonus_paid: false,
            success_count: 0,
        }
    }

    /// Called when a new goal is sampled: the tracker restarts at the
    /// distance measured at that instant.
    pub fn on_new_goal(&mut self, goal_distance: f64) {
        self.d_star = goal_distance;
    }
}

/// -lambda_arm * ||qd_arm||_1 - lambda_hand * ||qd_hand||_1.
pub fn smoothness_reward(qd_arm: &[f64], qd_hand: &[f64], config: &RewardConfig) -> f64 {
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    -config.lambda_arm * l1(qd_arm) - config.lambda_hand * l1(qd_hand)
}

/// Pays for reducing the mean fingertip distance below its running
/// minimum, then updates the minimum.
pub fn approach_reward(mean_ft_dist: f64, state: &mut RewardState, config: &RewardConfig) -> f64 {
    let r = config.lambda_approach * (state.dbar_star_ft - mean_ft_dist).max(0.0);
    state.dbar_star_ft = state.dbar_star_ft.min(mean_ft_dist);
    r
}

/// Height shaping plus the one-time lifted bonus. Sets the grasped latch
/// when the object passes `z_lifted`. The caller gates this by
/// (1 - I_grasped) using the latch state before the call.
pub fn lift_reward(z: f64, state: &mut RewardState, config: &RewardConfig) -> f64 {
    let mut r = config.lambda_lift * (z - config.z_init).max(0.0);
    if z >= config.z_lifted {
        if !state.lifted_bonus_paid {
            r += config.b_lifted;
            state.lifted_bonus_paid = true;
        }
        state.grasped = true;
    }
    r
}

/// Dense progress toward the goal plus the sparse success bonus.
/// `d_star` tightens to `d`; on success the caller resamples the goal and
/// reinitializes `d_star` via [`RewardState::on_new_goal`].
pub fn goal_reward(d: f64, state: &mut RewardState, config: &RewardConfig) -> (f64, bool) {
    let reached = d < config.epsilon;
    let mut r = config.lambda_goal * (state.d_star - d).max(0.0);
    if reached {
        r += config.b_succ;
        state.success_count += 1;
    }
    state.d_star = state.d_star.min(d);
    (r, reached)
}

/// Inputs for one full reward evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs<'a> {
    pub qd_arm: &'a [f64],
    pub qd_hand: &'a [f64],
    pub mean_fingertip_distance: f64,
    pub object_z: f64,
    pub goal_distance: f64,
}

/// Per-term breakdown of one step's reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub smooth: f64,
    pub approach: f64,
    pub lift: f64,
    pub goal: f64,
    pub total: f64,
    pub goal_reached: bool,
}

/// Composes the terms with their grasped gates evaluated on the latch
/// state at step start.
pub fn total_reward(
    inputs: &RewardInputs<'_>,
    state: &mut RewardState,
    config: &RewardConfig,
) -> RewardBreakdown {
    let grasped_at_start = state.grasped;
    let smooth = smoothness_reward(inputs.qd_arm, inputs.qd_hand, config);
    let approach = approach_reward(inputs.mean_fingertip_distance, state, config);
    let (lift, goal, goal_reached) = if grasped_at_start {
        let (g, reached) = goal_reward(inputs.goal_distance, state, config);
        (0.0, g, reached)
    } else {
        (lift_reward(inputs.object_z, state, config), 0.0, false)
    };
    RewardBreakdown {
        smooth,
        approach,
        lift,
        goal,
        total: smooth + approach + lift + goal,
        goal_reached,
    }
}
