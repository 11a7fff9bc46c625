//! Bundled deterministic fixtures: the rotation-near-table planning
//! scenario contrasting plain DLS tracking against collision-aware
//! trajectory optimization, and a synthetic rollout/goal pair with a
//! hand-computed task-progress score.

use nalgebra::Vector3;

use crate::config::PlannerConfig;
use crate::geometry::{axis_angle, compose, Pose};
use crate::planner::{GrabTransform, TrajOptProblem};
use crate::robot::RobotModel;
use crate::traj::{GoalTrajectory, TrajFrame};

/// Table surface height used by the planning fixture, m.
pub const ROTATION_FIXTURE_TABLE_Z: f64 = 0.63;

/// Grab transform of the planning fixture: the object hangs 15 cm below
/// the end effector.
pub fn rotation_fixture_grab() -> GrabTransform {
    GrabTransform {
        t_eo: Pose::from_translation(Vector3::new(0.0, 0.0, -0.15)),
    }
}

/// Object goal sequence rotating the held tool by 90 degrees about the
/// world x-axis while its origin stays 4 cm above the table. Tracking the
/// resulting end-effector targets exactly sweeps the wrist down to 2 cm
/// above the surface, inside the collision spheres.
pub fn rotation_fixture_goals(model: &RobotModel) -> GoalTrajectory {
    let kin = model
        .forward_kinematics(model.default_q())
        .expect("default q valid");
    let ee0 = model.frame_pose(&kin, "ee").expect("ee frame");
    let object_center = Vector3::new(0.0, -0.50, ROTATION_FIXTURE_TABLE_Z + 0.04);
    let n = 12;
    let frames = (0..n)
        .map(|k| {
            let theta = (k as f64 / (n - 1) as f64) * std::f64::consts::FRAC_PI_2;
            let rotation = axis_angle(&Vector3::x(), theta) * ee0.rotation;
            TrajFrame {
                t: k as f64 / 3.0,
                pose: Pose::from_parts(object_center, rotation),
            }
        })
        .collect();
    GoalTrajectory::new(3.0, ROTATION_FIXTURE_TABLE_Z, frames).expect("valid fixture")
}

/// The planning problem for the rotation fixture: end-effector targets via
/// the rigid grasp, the model's collision spheres, and the table plane.
pub fn rotation_fixture_problem(
    model: &RobotModel,
    planner: &PlannerConfig,
) -> (GrabTransform, GoalTrajectory, TrajOptProblem) {
    let grab = rotation_fixture_grab();
    let goals = rotation_fixture_goals(model);
    let targets = crate::planner::fixed_grasp_targets(
        &grab,
        &goals.poses().copied().collect::<Vec<_>>(),
    )
    .expect("finite fixture");
    let mut problem = TrajOptProblem::with_model_spheres(
        "ee",
        targets,
        model,
        ROTATION_FIXTURE_TABLE_Z,
    );
    problem.weight_translation = planner.weight_translation;
    problem.weight_rotation = planner.weight_rotation;
    problem.weight_smoothness = planner.weight_smoothness;
    problem.weight_limits = planner.weight_limits;
    problem.weight_collision = planner.weight_collision;
    problem.collision_margin = planner.collision_margin;
    problem.max_iters = planner.max_iters;
    problem.tolerance = planner.tolerance;
    (grab, goals, problem)
}

/// Synthetic evaluation pair: 5 goals spaced 5 cm apart and a recorded
/// rollout that visits the first 3 exactly, then stalls far away. The
/// closed-loop score is 3/5 = 60%.
pub fn eval_fixture() -> (GoalTrajectory, GoalTrajectory, f64) {
    let pose_at = |x: f64| Pose::from_translation(Vector3::new(x, -0.5, 0.8));
    let goals = GoalTrajectory::new(
        3.0,
        0.63,
        (0..5)
            .map(|k| TrajFrame {
                t: k as f64 / 3.0,
                pose: pose_at(0.05 * k as f64),
            })
            .collect(),
    )
    .expect("valid goals");
    let mut rollout_frames = Vec::new();
    let mut t = 0.0;
    for k in 0..3 {
        // a couple of approach frames outside tolerance, then a hit
        for dx in [0.03, 0.021] {
            rollout_frames.push(TrajFrame {
                t,
                pose: pose_at(0.05 * k as f64 - dx),
            });
            t += 1.0 / 30.0;
        }
        rollout_frames.push(TrajFrame {
            t,
            pose: pose_at(0.05 * k as f64),
        });
        t += 1.0 / 30.0;
    }
    for _ in 0..6 {
        rollout_frames.push(TrajFrame {
            t,
            pose: pose_at(1.0),
        });
        t += 1.0 / 30.0;
    }
    let rollout = GoalTrajectory::new(30.0, 0.63, rollout_frames).expect("valid rollout");
    (goals, rollout, 60.0)
}

/// Compose object goals into end-effector targets for external callers
/// (mirrors what the planners do internally).
pub fn ee_targets_for(grab: &GrabTransform, goals: &GoalTrajectory) -> Vec<Pose> {
    let inv = crate::geometry::invert(&grab.t_eo).expect("finite");
    goals.poses().map(|g| compose(g, &inv).expect("finite")).collect()
}
