//! Sim-to-real randomizations: FIFO delay queues, Gaussian sensor noise,
//! pose noise, wrench perturbations, grasp-box jitter, table-height jitter.
//!
//! Everything is a pure function of (master seed, env index, step index);
//! per-channel delays are sampled once per episode and held constant.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::{self, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub enabled: bool,
    /// Max delay for proprioceptive observations and actions, in steps.
    pub obs_action_delay_max: usize,
    /// Max delay for object-pose estimates, in steps.
    pub object_pose_delay_max: usize,
    /// Gaussian noise on observed joint velocities, rad/s.
    pub joint_velocity_noise: f64,
    /// Gaussian noise on observed object translation, m.
    pub object_pose_noise_translation: f64,
    /// Gaussian noise on observed object rotation, degrees.
    pub object_pose_noise_rotation_deg: f64,
    /// Uniform bound per force component, N.
    pub perturb_force_scale: f64,
    /// Uniform bound per torque component, N*m.
    pub perturb_torque_scale: f64,
    /// Probability of applying a wrench on any control step.
    pub perturb_probability: f64,
    /// Table surface jitter, +/- m, sampled once per episode.
    pub table_height_range: f64,
    /// Multiplicative grasp-box extent jitter fraction.
    pub bbox_perturb_fraction: f64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            obs_action_delay_max: 3,
            object_pose_delay_max: 10,
            joint_velocity_noise: 0.1,
            object_pose_noise_translation: 0.01,
            object_pose_noise_rotation_deg: 5.0,
            perturb_force_scale: 5.0,
            perturb_torque_scale: 0.5,
            perturb_probability: 0.02,
            table_height_range: 0.01,
            bbox_perturb_fraction: 0.10,
        }
    }
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("joint_velocity_noise", self.joint_velocity_noise),
            ("object_pose_noise_translation", self.object_pose_noise_translation),
            ("object_pose_noise_rotation_deg", self.object_pose_noise_rotation_deg),
            ("perturb_force_scale", self.perturb_force_scale),
            ("perturb_torque_scale", self.perturb_torque_scale),
            ("table_height_range", self.table_height_range),
            ("bbox_perturb_fraction", self.bbox_perturb_fraction),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("dr.{name}"), "must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.perturb_probability) {
            return Err(Error::validation("dr.perturb_probability", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// FIFO delay line: output at step t is the input from step
/// max(t - delay, 0). Before the buffer fills it returns the oldest entry.
#[derive(Debug, Clone)]
pub struct DelayQueue<T> {
    buf: VecDeque<T>,
    delay: usize,
}

impl<T: Clone> DelayQueue<T> {
    /// `delay` is fixed for the queue's lifetime (one episode).
    pub fn new(delay: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(delay + 1),
            delay,
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Push this step's value and return the delayed one.
    pub fn push_pop(&mut self, value: T) -> T {
        self.buf.push_back(value);
        if self.buf.len() > self.delay + 1 {
            self.buf.pop_front();
        }
        self.buf.front().expect("just pushed").clone()
    }

    /// Latest delayed value without advancing; errors before the first push.
    pub fn peek(&self) -> Result<&T> {
        self.buf.front().ok_or(Error::EmptyDelayQueue)
    }
}

/// Gaussian pose noise: translation gets N(0, sigma_t^2 I); rotation is
/// composed on the left with a world-frame axis-angle rotation of uniform
/// axis and N(0, sigma_r^2) angle.
pub fn perturb_pose<R: Rng + ?Sized>(pose: &Pose, sigma_t: f64, sigma_r: f64, rng: &mut R) -> Pose {
    let mut out = *pose;
    if sigma_t > 0.0 {
        out.translation += Vector3::new(
            sigma_t * rng.sample::<f64, _>(StandardNormal),
            sigma_t * rng.sample::<f64, _>(StandardNormal),
            sigma_t * rng.sample::<f64, _>(StandardNormal),
        );
    }
    if sigma_r > 0.0 {
        let axis = geometry::random_unit_vector(rng);
        let angle = sigma_r * rng.sample::<f64, _>(StandardNormal);
        let noise = geometry::axis_angle(&axis, angle);
        out.rotation = UnitQuaternion::new_normalize(
            (noise * out.rotation).into_inner(),
        );
    }
    out
}

/// Additive Gaussian noise on a velocity vector.
pub fn perturb_velocities<R: Rng + ?Sized>(qd: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    for v in qd.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
}

/// External disturbance: each component uniform in [-scale, +scale].
pub fn sample_wrench<R: Rng + ?Sized>(
    rng: &mut R,
    config: &RandomizationConfig,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut draw = |scale: f64| {
        if scale == 0.0 {
            Vector3::zeros()
        } else {
            Vector3::new(
                rng.gen_range(-scale..=scale),
                rng.gen_range(-scale..=scale),
                rng.gen_range(-scale..=scale),
            )
        }
    };
    let force = draw(config.perturb_force_scale);
    let torque = draw(config.perturb_torque_scale);
    (force, torque)
}

/// Multiplicative per-axis jitter in [1-f, 1+f], floored at 1 mm.
pub fn perturb_bbox<R: Rng + ?Sized>(
    extents: &Vector3<f64>,
    rng: &mut R,
    fraction: f64,
) -> Vector3<f64> {
    extents.map(|e| {
        let factor = if fraction > 0.0 {
            rng.gen_range(1.0 - fraction..=1.0 + fraction)
        } else {
            1.0
        };
        (e * factor).max(1e-3)
    })
}
