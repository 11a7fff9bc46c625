//! Action processing: raw policy actions to safe joint position targets.
//!
//! Arm actions are relative displacements scaled by `k_arm`; hand actions
//! map affinely onto the joint range. Both pass through an EMA filter
//! `filtered = alpha * new + (1 - alpha) * previous` (alpha = 1 disables
//! smoothing). The arm clips to limits before the EMA, the hand after it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Radians of arm travel per unit action per step.
    pub k_arm: f64,
    pub alpha_arm: f64,
    pub alpha_hand: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            k_arm: 0.025,
            alpha_arm: 0.1,
            alpha_hand: 0.1,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_arm > 0.0) {
            return Err(Error::validation("control.k_arm", "must be > 0"));
        }
        for (name, a) in [("alpha_arm", self.alpha_arm), ("alpha_hand", self.alpha_hand)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::validation(
                    format!("control.{name}"),
                    "must be in (0, 1]",
                ));
            }
        }
        Ok(())
    }
}

/// Previous joint position targets, the state the filters run on.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlState {
    pub prev_target: Vec<f64>,
}

impl ControlState {
    pub fn new(model: &RobotModel, q_current: &[f64]) -> Self {
        let mut state = Self {
            prev_target: vec![0.0; model.num_joints()],
        };
        state.reset(model, q_current);
        state
    }

    /// Re-anchor the filter at the measured joint positions, clipped into
    /// limits.
    pub fn reset(&mut self, model: &RobotModel, q_current: &[f64]) {
        self.prev_target.clear();
        self.prev_target.extend_from_slice(q_current);
        model.clamp_to_limits(&mut self.prev_target);
    }
}

fn clip_unit(a: f64) -> f64 {
    a.clamp(-1.0, 1.0)
}

/// Delta arm control over the first `n_arm` joints. Returns the new targets
/// and updates the state.
pub fn process_arm_action(
    action: &[f64],
    state: &mut ControlState,
    model: &RobotModel,
    config: &ControlConfig,
) -> Result<Vec<f64>> {
    let n = model.num_arm_joints();
    if action.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: action.len(),
        });
    }
    let lower = model.lower_limits();
    let upper = model.upper_limits();
    let mut target = Vec::with_capacity(n);
    for (i, &a) in action.iter().enumerate() {
        let prev = state.prev_target[i];
        let intermediate =
            (prev + config.k_arm * clip_unit(a)).clamp(lower[i], upper[i]);
        // the EMA of in-limit values is in limits; the final clamp only
        // guards the one-ULP rounding of alpha*x + (1-alpha)*x at a limit
        let filtered = (config.alpha_arm * intermediate + (1.0 - config.alpha_arm) * prev)
            .clamp(lower[i], upper[i]);
        state.prev_target[i] = filtered;
        target.push(filtered);
    }
    Ok(target)
}

/// Absolute hand control over the trailing `n_hand` joints. Returns the new
/// targets and updates the state.
pub fn process_hand_action(
    action: &[f64],
    state: &mut ControlState,
    model: &RobotModel,
    config: &ControlConfig,
) -> Result<Vec<f64>> {
    let n_arm = model.num_arm_joints();
    let n = model.num_hand_joints();
    if action.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: action.len(),
        });
    }
    let lower = model.lower_limits();
    let upper = model.upper_limits();
    let mut target = Vec::with_capacity(n);
    for (k, &a) in action.iter().enumerate() {
        let i = n_arm + k;
        let absolute = (clip_unit(a) + 1.0) / 2.0 * (upper[i] - lower[i]) + lower[i];
        let filtered = (config.alpha_hand * absolute
            + (1.0 - config.alpha_hand) * state.prev_target[i])
            .clamp(lower[i], upper[i]);
        state.prev_target[i] = filtered;
        target.push(filtered);
    }
    Ok(target)
}

/// Full 29-vector processing: arm then hand segments.
pub fn process_action(
    action: &[f64],
    state: &mut ControlState,
    model: &RobotModel,
    config: &ControlConfig,
) -> Result<Vec<f64>> {
    if action.len() != model.num_joints() {
        return Err(Error::LengthMismatch {
            expected: model.num_joints(),
            got: action.len(),
        });
    }
    let n_arm = model.num_arm_joints();
    let mut target = process_arm_action(&action[..n_arm], state, model, config)?;
    target.extend(process_hand_action(&action[n_arm..], state, model, config)?);
    Ok(target)
}
