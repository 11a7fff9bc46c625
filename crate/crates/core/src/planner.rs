//! Fixed-grasp and retargeting baselines: damped-least-squares IK,
//! rigid-grasp end-effector target derivation, fingertip retargeting, and
//! N-waypoint collision-aware Levenberg-Marquardt trajectory optimization.
//!
//! The rotation part of a pose error is the axis-angle of
//! R_target * R_current^T. Collision constraints are weighted hinge
//! penalties inside the least-squares problem, so infeasibility shows up
//! in the residual report instead of failing silently.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, invert, Pose};
use crate::robot::{Kinematics, RobotModel};

/// 6-vector pose error: translation (m) stacked over axis-angle rotation
/// (rad).
pub fn pose_error(target: &Pose, current: &Pose) -> DVector<f64> {
    let dt = target.translation - current.translation;
    let dr = (target.rotation * current.rotation.inverse()).scaled_axis();
    DVector::from_vec(vec![dt.x, dt.y, dt.z, dr.x, dr.y, dr.z])
}

/// Damped least squares update dq = J^T (J J^T + mu^2 I)^-1 e.
pub fn dls_step(jac: &DMatrix<f64>, e: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
    if !(damping > 0.0 && damping.is_finite()) {
        return Err(Error::validation("damping", "must be > 0"));
    }
    if jac.iter().any(|v| !v.is_finite()) || e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "dls_step" });
    }
    if jac.nrows() != e.len() {
        return Err(Error::LengthMismatch {
            expected: jac.nrows(),
            got: e.len(),
        });
    }
    let m = jac.nrows();
    let a = jac * jac.transpose() + DMatrix::identity(m, m) * damping * damping;
    let chol = a.cholesky().ok_or_else(|| Error::validation(
        "dls",
        "normal matrix not positive definite",
    ))?;
    let x = chol.solve(e);
    Ok(jac.transpose() * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkOptions {
    pub damping: f64,
    pub max_iters: usize,
    /// Convergence threshold on the 6D error norm.
    pub tolerance: f64,
    /// Solve position only, ignoring the rotation rows.
    pub position_only: bool,
    /// Deterministic random restarts when a descent stalls short of the
    /// tolerance. 0 keeps the single-descent behavior.
    pub restarts: usize,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_iters: 200,
            tolerance: 1e-6,
            position_only: false,
            restarts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkReport {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub position_error: f64,
    pub rotation_error: f64,
}

fn masked_error(target: &Pose, current: &Pose, position_only: bool) -> DVector<f64> {
    let mut e = pose_error(target, current);
    if position_only {
        for r in 3..6 {
            e[r] = 0.0;
        }
    }
    e
}

fn descend(
    model: &RobotModel,
    frame: &str,
    target: &Pose,
    q0: &[f64],
    opts: &IkOptions,
) -> Result<IkReport> {
    let mut q = q0.to_vec();
    model.clamp_to_limits(&mut q);
    let mut kin = model.forward_kinematics(&q)?;
    let mut current = model.frame_pose(&kin, frame)?;
    let mut err = masked_error(target, &current, opts.position_only);
    let mut damping = opts.damping;
    let mut iterations = 0;
    while iterations < opts.max_iters && err.norm() >= opts.tolerance {
        let jac = model.jacobian(&kin, frame)?;
        let mut dq = dls_step(&jac, &err, damping)?;
        let mut improved = false;
        for _ in 0..8 {
            let mut q_try = q.clone();
            for (i, v) in q_try.iter_mut().enumerate() {
                *v += dq[i];
            }
            model.clamp_to_limits(&mut q_try);
            let kin_try = model.forward_kinematics(&q_try)?;
            let pose_try = model.frame_pose(&kin_try, frame)?;
            let err_try = masked_error(target, &pose_try, opts.position_only);
            if err_try.norm() < err.norm() {
                q = q_try;
                kin = kin_try;
                current = pose_try;
                err = err_try;
                improved = true;
                break;
            }
            dq *= 0.5;
        }
        iterations += 1;
        if improved {
            damping = (damping * 0.5).max(opts.damping);
        } else {
            // stalled: stiffen the damping to swing around the obstruction
            damping *= 8.0;
            if damping > 1e4 {
                break;
            }
        }
    }
    let e_full = pose_error(target, &current);
    Ok(IkReport {
        q,
        iterations,
        converged: err.norm() < opts.tolerance,
        position_error: e_full.rows(0, 3).norm(),
        rotation_error: e_full.rows(3, 3).norm(),
    })
}

/// Iterated damped least squares with joint-limit clipping, step-halving
/// backtracking (the error norm never increases within a descent), and
/// adaptive damping. With `opts.restarts > 0`, stalled descents retry from
/// deterministic random in-limit seeds and the best attempt wins.
/// Non-convergence is reported, not raised.
pub fn solve_ik(
    model: &RobotModel,
    frame: &str,
    target: &Pose,
    q0: &[f64],
    opts: &IkOptions,
) -> Result<IkReport> {
    if !target.is_finite() {
        return Err(Error::NonFinite { context: "ik target" });
    }
    let mut best = descend(model, frame, target, q0, opts)?;
    if best.converged || opts.restarts == 0 {
        return Ok(best);
    }
    let mut rng = crate::rng::stream(0x01c0_5eed, "ik.restart", 0);
    for _ in 0..opts.restarts {
        let seed_q: Vec<f64> = (0..model.num_joints())
            .map(|i| {
                use rand::Rng;
                rng.gen_range(model.lower_limits()[i]..=model.upper_limits()[i])
            })
            .collect();
        let attempt = descend(model, frame, target, &seed_q, opts)?;
        let better = attempt.position_error + attempt.rotation_error
            < best.position_error + best.rotation_error;
        if better {
            best = attempt;
        }
        if best.converged {
            break;
        }
    }
    Ok(best)
}

/// Constant object-in-end-effector transform assumed by the fixed-grasp
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrabTransform {
    /// Object frame expressed in the end-effector frame.
    pub t_eo: Pose,
}

impl GrabTransform {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            location: format!("line {}, column {}", e.line(), e.column()),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("serializes");
        crate::io::write_atomic(path, json.as_bytes())
    }
}

/// Per-waypoint end-effector targets T_BE = T_BO * T_EO^-1 for a rigid
/// grasp.
pub fn fixed_grasp_targets(grab: &GrabTransform, object_goals: &[Pose]) -> Result<Vec<Pose>> {
    let inv = invert(&grab.t_eo)?;
    object_goals.iter().map(|g| compose(g, &inv)).collect()
}

pub use crate::robot::CollisionSphere;

/// Half-space obstacle; free space satisfies normal . x - offset >= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl HalfSpace {
    pub fn table(z: f64) -> Self {
        Self {
            normal: [0.0, 0.0, 1.0],
            offset: z,
        }
    }

    fn clearance(&self, point: &Vector3<f64>) -> f64 {
        let n = Vector3::new(self.normal[0], self.normal[1], self.normal[2]);
        n.dot(point) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajOptProblem {
    /// End-effector frame the targets refer to.
    pub frame: String,
    pub targets: Vec<Pose>,
    pub weight_translation: f64,
    pub weight_rotation: f64,
    /// Inter-waypoint joint difference weight.
    pub weight_smoothness: f64,
    pub weight_limits: f64,
    pub weight_collision: f64,
    /// Required clearance added on top of each sphere radius, m.
    pub collision_margin: f64,
    pub spheres: Vec<CollisionSphere>,
    pub obstacles: Vec<HalfSpace>,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl TrajOptProblem {
    /// Problem with the model's own collision spheres and a table plane.
    pub fn with_model_spheres(
        frame: impl Into<String>,
        targets: Vec<Pose>,
        model: &RobotModel,
        table_z: f64,
    ) -> Self {
        let mut p = Self::new(frame, targets);
        p.spheres = model.collision_spheres().to_vec();
        p.obstacles.push(HalfSpace::table(table_z));
        p
    }

    pub fn new(frame: impl Into<String>, targets: Vec<Pose>) -> Self {
        Self {
            frame: frame.into(),
            targets,
            weight_translation: 10.0,
            weight_rotation: 2.0,
            weight_smoothness: 1.0,
            weight_limits: 50.0,
            weight_collision: 100.0,
            collision_margin: 0.005,
            spheres: Vec::new(),
            obstacles: Vec::new(),
            max_iters: 60,
            tolerance: 1e-8,
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::validation("targets", "need N >= 1 waypoints"));
        }
        for w in [
            self.weight_translation,
            self.weight_rotation,
            self.weight_smoothness,
            self.weight_limits,
            self.weight_collision,
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::validation("weights", "must be >= 0"));
            }
        }
        for s in &self.spheres {
            if !(s.radius > 0.0) {
                return Err(Error::validation("spheres", "radius must be > 0"));
            }
            model.frame_index(&s.frame)?;
        }
        model.frame_index(&self.frame)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointReport {
    pub position_error: f64,
    pub rotation_error: f64,
    /// Worst sphere clearance at this waypoint (negative = penetration).
    pub collision_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajOptReport {
    pub waypoints: Vec<WaypointReport>,
    pub min_collision_margin: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Sequential IK warm start: each waypoint seeds from the previous
/// solution.
pub fn warm_start_sequential(
    model: &RobotModel,
    problem: &TrajOptProblem,
    q0: &[f64],
    ik: &IkOptions,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(problem.targets.len());
    let mut seed = q0.to_vec();
    for target in &problem.targets {
        let report = solve_ik(model, &problem.frame, target, &seed, ik)?;
        seed = report.q.clone();
        out.push(report.q);
    }
    Ok(out)
}

/// Worst clearance over all spheres and obstacles at configuration `q`.
pub fn collision_margin(
    model: &RobotModel,
    problem: &TrajOptProblem,
    kin: &Kinematics,
) -> Result<f64> {
    let mut min_margin = f64::INFINITY;
    for sphere in &problem.spheres {
        let idx = model.frame_index(&sphere.frame)?;
        let center = kin
            .link_pose(idx)
            .transform_point(&Vector3::new(sphere.center[0], sphere.center[1], sphere.center[2]));
        for obstacle in &problem.obstacles {
            min_margin = min_margin.min(obstacle.clearance(&center) - sphere.radius);
        }
    }
    Ok(min_margin)
}

/// Per-waypoint pose errors and collision margins for any joint
/// trajectory; used to report both DLS and optimized plans on equal
/// footing.
pub fn evaluate_plan(
    model: &RobotModel,
    problem: &TrajOptProblem,
    qs: &[Vec<f64>],
) -> Result<TrajOptReport> {
    let mut waypoints = Vec::with_capacity(qs.len());
    let mut min_margin = f64::INFINITY;
    for (q, target) in qs.iter().zip(problem.targets.iter()) {
        let kin = model.forward_kinematics(q)?;
        let pose = model.frame_pose(&kin, &problem.frame)?;
        let e = pose_error(target, &pose);
        let margin = collision_margin(model, problem, &kin)?;
        min_margin = min_margin.min(margin);
        waypoints.push(WaypointReport {
            position_error: e.rows(0, 3).norm(),
            rotation_error: e.rows(3, 3).norm(),
            collision_margin: margin,
        });
    }
    Ok(TrajOptReport {
        waypoints,
        min_collision_margin: min_margin,
        initial_cost: 0.0,
        final_cost: 0.0,
        iterations: 0,
        converged: false,
    })
}

struct ResidualLayout {
    n_way: usize,
    n_arm: usize,
    pose_rows: usize,
    smooth_rows: usize,
    limit_rows: usize,
    collision_rows: usize,
}

impl ResidualLayout {
    fn new(problem: &TrajOptProblem, n_arm: usize) -> Self {
        let n_way = problem.targets.len();
        Self {
            n_way,
            n_arm,
            pose_rows: 6 * n_way,
            smooth_rows: n_arm * n_way.saturating_sub(1),
            limit_rows: n_arm * n_way,
            collision_rows: problem.spheres.len() * problem.obstacles.len() * n_way,
        }
    }

    fn total_rows(&self) -> usize {
        self.pose_rows + self.smooth_rows + self.limit_rows + self.collision_rows
    }

    fn total_vars(&self) -> usize {
        self.n_arm * self.n_way
    }
}

struct TrajOptWorkspace<'a> {
    model: &'a RobotModel,
    problem: &'a TrajOptProblem,
    layout: ResidualLayout,
    /// Hand joints stay frozen at the warm-start values.
    template: Vec<Vec<f64>>,
}

impl<'a> TrajOptWorkspace<'a> {
    fn qs_from_vars(&self, x: &DVector<f64>) -> Vec<Vec<f64>> {
        let n = self.layout.n_arm;
        let mut qs = self.template.clone();
        for (k, q) in qs.iter_mut().enumerate() {
            for j in 0..n {
                q[j] = x[k * n + j];
            }
        }
        qs
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.problem;
        let n = self.layout.n_arm;
        let mut r = DVector::zeros(self.layout.total_rows());
        let qs = self.qs_from_vars(x);
        let mut row = 0;
        for (k, q) in qs.iter().enumerate() {
            let kin = self.model.forward_kinematics(q)?;
            let pose = self.model.frame_pose(&kin, &p.frame)?;
            let e = pose_error(&p.targets[k], &pose);
            for i in 0..3 {
                r[row + i] = p.weight_translation * e[i];
                r[row + 3 + i] = p.weight_rotation * e[3 + i];
            }
            row += 6;
        }
        for k in 0..self.layout.n_way.saturating_sub(1) {
            for (next, prev) in qs[k + 1][..n].iter().zip(&qs[k][..n]) {
                r[row] = p.weight_smoothness * (next - prev);
                row += 1;
            }
        }
        let lower = self.model.lower_limits();
        let upper = self.model.upper_limits();
        for q in &qs {
            for j in 0..n {
                let v = q[j];
                r[row] = p.weight_limits
                    * ((v - upper[j]).max(0.0) + (lower[j] - v).max(0.0));
                row += 1;
            }
        }
        for q in &qs {
            let kin = self.model.forward_kinematics(q)?;
            for sphere in &p.spheres {
                let idx = self.model.frame_index(&sphere.frame)?;
                let center = kin.link_pose(idx).transform_point(&Vector3::new(
                    sphere.center[0],
                    sphere.center[1],
                    sphere.center[2],
                ));
                for obstacle in &p.obstacles {
                    let violation = (sphere.radius + p.collision_margin
                        - obstacle.clearance(&center))
                    .max(0.0);
                    r[row] = p.weight_collision * violation;
                    row += 1;
                }
            }
        }
        Ok(r)
    }

    /// Block-sparse residual Jacobian assembled from the model's geometric
    /// Jacobians; pose rows use the standard -J approximation.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.problem;
        let n = self.layout.n_arm;
        let mut jac = DMatrix::zeros(self.layout.total_rows(), self.layout.total_vars());
        let qs = self.qs_from_vars(x);
        let mut row = 0;
        for (k, q) in qs.iter().enumerate() {
            let kin = self.model.forward_kinematics(q)?;
            let jg = self.model.jacobian(&kin, &p.frame)?;
            for i in 0..3 {
                for j in 0..n {
                    jac[(row + i, k * n + j)] = -p.weight_translation * jg[(i, j)];
                    jac[(row + 3 + i, k * n + j)] = -p.weight_rotation * jg[(3 + i, j)];
                }
            }
            row += 6;
        }
        for k in 0..self.layout.n_way.saturating_sub(1) {
            for j in 0..n {
                jac[(row, (k + 1) * n + j)] = p.weight_smoothness;
                jac[(row, k * n + j)] = -p.weight_smoothness;
                row += 1;
            }
        }
        let lower = self.model.lower_limits();
        let upper = self.model.upper_limits();
        for (k, q) in qs.iter().enumerate() {
            for j in 0..n {
                let v = q[j];
                let grad = if v > upper[j] {
                    1.0
                } else if v < lower[j] {
                    -1.0
                } else {
                    0.0
                };
                jac[(row, k * n + j)] = p.weight_limits * grad;
                row += 1;
            }
        }
        for (k, q) in qs.iter().enumerate() {
            let kin = self.model.forward_kinematics(q)?;
            for sphere in &p.spheres {
                let idx = self.model.frame_index(&sphere.frame)?;
                let local = Vector3::new(sphere.center[0], sphere.center[1], sphere.center[2]);
                let center = kin.link_pose(idx).transform_point(&local);
                let jp = self.model.point_jacobian(&kin, &sphere.frame, &local)?;
                for obstacle in &p.obstacles {
                    let violation =
                        sphere.radius + p.collision_margin - obstacle.clearance(&center);
                    if violation > 0.0 {
                        let normal = Vector3::new(
                            obstacle.normal[0],
                            obstacle.normal[1],
                            obstacle.normal[2],
                        );
                        for j in 0..n {
                            let dc = Vector3::new(jp[(0, j)], jp[(1, j)], jp[(2, j)]);
                            jac[(row, k * n + j)] = -p.weight_collision * normal.dot(&dc);
                        }
                    }
                    row += 1;
                }
            }
        }
        Ok(jac)
    }
}

/// Levenberg-Marquardt over the stacked waypoint variables, warm-started
/// from sequential IK. The cost never increases across accepted
/// iterations; joint limits are hard-clipped on output.
pub fn optimize_trajectory(
    problem: &TrajOptProblem,
    model: &RobotModel,
    warm_start: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, TrajOptReport)> {
    problem.validate(model)?;
    if warm_start.len() != problem.targets.len() {
        return Err(Error::LengthMismatch {
            expected: problem.targets.len(),
            got: warm_start.len(),
        });
    }
    for q in warm_start {
        if q.len() != model.num_joints() {
            return Err(Error::LengthMismatch {
                expected: model.num_joints(),
                got: q.len(),
            });
        }
    }
    let layout = ResidualLayout::new(problem, model.num_arm_joints());
    let ws = TrajOptWorkspace {
        model,
        problem,
        layout,
        template: warm_start.to_vec(),
    };
    let n_vars = ws.layout.total_vars();
    let mut x = DVector::zeros(n_vars);
    for (k, q) in warm_start.iter().enumerate() {
        for j in 0..ws.layout.n_arm {
            x[k * ws.layout.n_arm + j] = q[j];
        }
    }

    let mut r = ws.residuals(&x)?;
    let mut cost = 0.5 * r.norm_squared();
    let initial_cost = cost;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..problem.max_iters {
        iterations += 1;
        let jac = ws.jacobian(&x)?;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if g.amax() < problem.tolerance {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for i in 0..n_vars {
                a[(i, i)] += lambda * (jtj[(i, i)].abs() + 1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let dx = chol.solve(&(-&g));
            let x_try = &x + &dx;
            let r_try = ws.residuals(&x_try)?;
            let cost_try = 0.5 * r_try.norm_squared();
            if cost_try < cost {
                x = x_try;
                r = r_try;
                let drop = cost - cost_try;
                cost = cost_try;
                lambda = (lambda * 0.5).max(1e-12);
                accepted = true;
                if drop < problem.tolerance * cost.max(1.0) {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted || converged {
            break;
        }
    }

    let mut qs = ws.qs_from_vars(&x);
    for q in &mut qs {
        model.clamp_to_limits(q);
    }
    let mut report = evaluate_plan(model, problem, &qs)?;
    report.initial_cost = initial_cost;
    report.final_cost = cost;
    report.iterations = iterations;
    report.converged = converged;
    Ok((qs, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetReport {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean residual per fingertip, m.
    pub fingertip_errors: Vec<f64>,
}

/// Second stage of kinematic retargeting: with the arm (and palm) fixed,
/// damped least squares over the hand joints drives the 5 fingertips to
/// world-frame targets. The stacked residual is 15-dimensional.
pub fn fingertip_retarget(
    model: &RobotModel,
    q0: &[f64],
    fingertip_targets: &[Vector3<f64>; 5],
    opts: &IkOptions,
) -> Result<RetargetReport> {
    let frames = model.frames()?.clone();
    let n_arm = model.num_arm_joints();
    let n_hand = model.num_hand_joints();
    let mut q = q0.to_vec();
    if q.len() != model.num_joints() {
        return Err(Error::LengthMismatch {
            expected: model.num_joints(),
            got: q.len(),
        });
    }
    model.clamp_to_limits(&mut q);

    let residual = |model: &RobotModel, q: &[f64]| -> Result<DVector<f64>> {
        let kin = model.forward_kinematics(q)?;
        let mut r = DVector::zeros(15);
        for (f, tip) in frames.fingertips.iter().enumerate() {
            let p = model.frame_pose(&kin, tip)?.translation;
            let d = fingertip_targets[f] - p;
            r[3 * f] = d.x;
            r[3 * f + 1] = d.y;
            r[3 * f + 2] = d.z;
        }
        Ok(r)
    };

    let mut r = residual(model, &q)?;
    let mut iterations = 0;
    while iterations < opts.max_iters && r.norm() >= opts.tolerance {
        let kin = model.forward_kinematics(&q)?;
        let mut jac = DMatrix::zeros(15, n_hand);
        for (f, tip) in frames.fingertips.iter().enumerate() {
            let jp = model.point_jacobian(&kin, tip, &Vector3::zeros())?;
            for row in 0..3 {
                for j in 0..n_hand {
                    jac[(3 * f + row, j)] = jp[(row, n_arm + j)];
                }
            }
        }
        let mut dq = dls_step(&jac, &r, opts.damping)?;
        let mut improved = false;
        for _ in 0..8 {
            let mut q_try = q.clone();
            for j in 0..n_hand {
                q_try[n_arm + j] += dq[j];
            }
            model.clamp_to_limits(&mut q_try);
            let r_try = residual(model, &q_try)?;
            if r_try.norm() <= r.norm() {
                q = q_try;
                r = r_try;
                improved = true;
                break;
            }
            dq *= 0.5;
        }
        iterations += 1;
        if !improved {
            break;
        }
    }
    let fingertip_errors = (0..5).map(|f| r.rows(3 * f, 3).norm()).collect();
    Ok(RetargetReport {
        q,
        iterations,
        converged: r.norm() < opts.tolerance,
        fingertip_errors,
    })
}
