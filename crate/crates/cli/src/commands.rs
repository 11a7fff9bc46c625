//! Subcommand implementations. All outputs go through atomic writes.

use rand::Rng;
use serde::Serialize;
use std::path::Path;

use toolforge_core::asset::{import_tool, sample_tool, ToolSpec};
use toolforge_core::batch::{self, PolicyKind};
use toolforge_core::config::ExperimentConfig;
use toolforge_core::env::{EpisodeEnv, StepRecord};
use toolforge_core::error::{Error, Result};
use toolforge_core::io::write_atomic;
use toolforge_core::mesh;
use toolforge_core::planner::{
    evaluate_plan, fixed_grasp_targets, optimize_trajectory, warm_start_sequential,
    GrabTransform, IkOptions, TrajOptProblem, TrajOptReport,
};
use toolforge_core::policy::{FrozenPolicy, LiveRollout, OraclePolicy, Policy, RandomPolicy};
use toolforge_core::rng;
use toolforge_core::robot::RobotModel;
use toolforge_core::traj::{
    downsample, evaluate_progress, load_trajectory, save_trajectory, truncate_liftoff,
    ProgressReport, RecordedRollout,
};

pub fn gen(config: &ExperimentConfig, count: usize, out: &Path, no_mesh: bool) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    for index in 0..count {
        let tool_seed: u64 = rng::stream(config.master_seed, "asset.batch", index as u64).gen();
        let tool = sample_tool(tool_seed, &config.asset.ranges)?;
        let base = out.join(format!("tool_{index:05}"));
        toolforge_core::asset::export_tool(&tool, &base.with_extension("json"))?;
        if !no_mesh {
            let tri = mesh::tessellate_tool(&tool, config.asset.mesh_segments);
            mesh::write_obj(&tri, &base.with_extension("obj"))?;
        }
    }
    println!("wrote {count} tools to {}", out.display());
    Ok(())
}

pub fn preprocess(
    config: &ExperimentConfig,
    input: &Path,
    output: &Path,
    hz: Option<f64>,
    liftoff: bool,
    z_thresh: Option<f64>,
) -> Result<()> {
    let mut traj = load_trajectory(input)?;
    if liftoff {
        let thresh = z_thresh.unwrap_or(config.eval.liftoff_threshold);
        traj = truncate_liftoff(&traj, traj.table_z, thresh)?;
    }
    let out_hz = hz.unwrap_or(config.eval.downsample_hz);
    if out_hz < traj.rate_hz {
        traj = downsample(&traj, out_hz)?;
    }
    save_trajectory(&traj, output)?;
    println!(
        "wrote {} frames at {:.3} Hz to {}",
        traj.frames.len(),
        traj.rate_hz,
        output.display()
    );
    Ok(())
}

fn load_tool(path: Option<&Path>) -> Result<Option<ToolSpec>> {
    path.map(import_tool).transpose()
}

pub fn rollout(
    config: &ExperimentConfig,
    policy: &str,
    episodes: usize,
    log_dir: &Path,
    tool: Option<&Path>,
    jobs: usize,
) -> Result<()> {
    let kind: PolicyKind = policy.parse()?;
    let model = RobotModel::bundled_default();
    let tool = load_tool(tool)?;
    let outcomes = batch::run_batch(config, &model, tool.as_ref(), kind, episodes, jobs, true)?;
    std::fs::create_dir_all(log_dir)?;
    for outcome in &outcomes {
        let mut lines = Vec::new();
        for record in &outcome.log {
            serde_json::to_writer(&mut lines, record).expect("record serializes");
            lines.push(b'\n');
        }
        write_atomic(
            &log_dir.join(format!("episode_{:05}.jsonl", outcome.episode)),
            &lines,
        )?;
    }
    let summaries: Vec<_> = outcomes
        .iter()
        .map(|o| {
            serde_json::json!({
                "episode": o.episode,
                "seed": o.seed,
                "steps": o.steps,
                "total_reward": o.total_reward,
                "success_count": o.success_count,
                "termination": o.termination,
            })
        })
        .collect();
    write_atomic(
        &log_dir.join("summary.json"),
        serde_json::to_string_pretty(&summaries).expect("serializes").as_bytes(),
    )?;
    println!("wrote {} episode logs to {}", outcomes.len(), log_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct PlanReport<'a> {
    mode: &'a str,
    table_z: f64,
    report: TrajOptReport,
    joint_trajectory: Vec<Vec<f64>>,
}

pub fn plan(
    config: &ExperimentConfig,
    mode: &str,
    goals_path: &Path,
    grab_path: &Path,
    robot: Option<&Path>,
    report_path: &Path,
    table_z: Option<f64>,
) -> Result<()> {
    let goals = load_trajectory(goals_path)?;
    let grab = GrabTransform::load(grab_path)?;
    let model = match robot {
        Some(p) => RobotModel::load(p)?,
        None => RobotModel::bundled_default(),
    };
    let table_z = table_z.unwrap_or(goals.table_z);
    let frame = model.frames()?.end_effector.clone();
    let targets = fixed_grasp_targets(&grab, &goals.poses().copied().collect::<Vec<_>>())?;
    let mut problem = TrajOptProblem::with_model_spheres(frame, targets, &model, table_z);
    let pc = &config.planner;
    problem.weight_translation = pc.weight_translation;
    problem.weight_rotation = pc.weight_rotation;
    problem.weight_smoothness = pc.weight_smoothness;
    problem.weight_limits = pc.weight_limits;
    problem.weight_collision = pc.weight_collision;
    problem.collision_margin = pc.collision_margin;
    problem.max_iters = pc.max_iters;
    problem.tolerance = pc.tolerance;

    let ik = IkOptions {
        max_iters: 600,
        ..pc.ik
    };
    let warm = warm_start_sequential(&model, &problem, model.default_q(), &ik)?;
    let (qs, report) = match mode {
        "dls" => {
            let report = evaluate_plan(&model, &problem, &warm)?;
            (warm, report)
        }
        "trajopt" => optimize_trajectory(&problem, &model, &warm)?,
        other => {
            return Err(Error::validation("mode", format!("unknown mode '{other}'")));
        }
    };
    let out = PlanReport {
        mode,
        table_z,
        report,
        joint_trajectory: qs,
    };
    write_atomic(
        report_path,
        serde_json::to_string_pretty(&out).expect("serializes").as_bytes(),
    )?;
    println!(
        "{} plan: min collision margin {:.4} m, report at {}",
        mode,
        out.report.min_collision_margin,
        report_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    epsilon: f64,
    rollouts: Vec<ProgressReport>,
    mean_progress_percent: f64,
}

fn progress_csv(rollouts: &[ProgressReport]) -> String {
    let mut out = String::from("rollout,goals_total,goals_reached,progress_percent,steps_used,failure\n");
    for (i, r) in rollouts.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            r.goals_total,
            r.goals_reached,
            r.progress_percent,
            r.steps_used,
            r.failure.as_deref().unwrap_or("")
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    config: &ExperimentConfig,
    rollout: Option<&Path>,
    policy: Option<&str>,
    goals_path: &Path,
    report_path: &Path,
    csv: Option<&Path>,
    episodes: usize,
    tool: Option<&Path>,
    jobs: usize,
) -> Result<()> {
    let goals = load_trajectory(goals_path)?;
    let epsilon = config.eval.epsilon;
    let budget = config.eval.step_budget;
    let rollouts: Vec<ProgressReport> = match (rollout, policy) {
        (Some(path), None) => {
            let recording = load_trajectory(path)?;
            let mut source = RecordedRollout::new(recording.poses().copied().collect());
            vec![evaluate_progress(&mut source, &goals, epsilon, budget)?]
        }
        (None, Some(policy)) => {
            let kind: PolicyKind = policy.parse()?;
            let model = RobotModel::bundled_default();
            let tool = load_tool(tool)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Error::validation("jobs", e.to_string()))?;
            pool.install(|| {
                use rayon::prelude::*;
                (0..episodes)
                    .into_par_iter()
                    .map(|i| {
                        evaluate_live_episode(config, &model, tool.as_ref(), kind, i, &goals)
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        }
        _ => {
            return Err(Error::validation(
                "eval",
                "provide exactly one of --rollout or --policy",
            ));
        }
    };
    let mean = rollouts.iter().map(|r| r.progress_percent).sum::<f64>()
        / rollouts.len().max(1) as f64;
    let report = EvalReport {
        epsilon,
        rollouts,
        mean_progress_percent: mean,
    };
    write_atomic(
        report_path,
        serde_json::to_string_pretty(&report).expect("serializes").as_bytes(),
    )?;
    if let Some(csv_path) = csv {
        write_atomic(csv_path, progress_csv(&report.rollouts).as_bytes())?;
    }
    println!(
        "mean task progress {:.1}% over {} rollout(s), report at {}",
        report.mean_progress_percent,
        report.rollouts.len(),
        report_path.display()
    );
    Ok(())
}

fn evaluate_live_episode(
    config: &ExperimentConfig,
    model: &RobotModel,
    tool: Option<&ToolSpec>,
    kind: PolicyKind,
    episode: usize,
    goals: &toolforge_core::traj::GoalTrajectory,
) -> Result<ProgressReport> {
    let seed = batch::episode_seed(config.master_seed, episode);
    let tool = match tool {
        Some(t) => t.clone(),
        None => sample_tool(
            rng::stream(config.master_seed, "batch.tool", episode as u64).gen(),
            &config.asset.ranges,
        )?,
    };
    let mut env = EpisodeEnv::new(
        model.clone(),
        tool,
        config.env,
        config.control,
        config.reward,
        config.dr,
    )?;
    env.reset(seed)?;
    let mut policy: Box<dyn Policy> = match kind {
        PolicyKind::Oracle => Box::new(OraclePolicy::new(
            model.clone(),
            &config.control,
            config.env.capture_radius,
        )),
        PolicyKind::Random => Box::new(RandomPolicy::new(seed, model.num_joints())),
        PolicyKind::Frozen => Box::new(FrozenPolicy::new(model.num_joints())),
    };
    let mut live = LiveRollout::new(&mut env, policy.as_mut());
    evaluate_progress(&mut live, goals, config.eval.epsilon, config.eval.step_budget)
}

pub fn report(log_dir: &Path, out: &Path, summary: Option<&Path>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(log_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .map(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("episode_") && n.ends_with(".jsonl")
                })
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::validation(
            "log",
            format!("no episode_*.jsonl files in {}", log_dir.display()),
        ));
    }
    let mut rewards =
        String::from("episode,step,r_smooth,r_approach,r_lift,r_goal,total,d,d_star\n");
    let mut summaries = String::from("episode,steps,total_reward,successes\n");
    for (episode, path) in entries.iter().enumerate() {
        let text = std::fs::read_to_string(path)?;
        let mut total = 0.0;
        let mut successes = 0u32;
        let mut steps = 0usize;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: StepRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                location: format!("line {}", line_no + 1),
                reason: e.to_string(),
            })?;
            rewards.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                episode,
                record.step,
                record.reward_terms.smooth,
                record.reward_terms.approach,
                record.reward_terms.lift,
                record.reward_terms.goal,
                record.reward_terms.total,
                record.d,
                record.d_star,
            ));
            total += record.reward_terms.total;
            if record.reward_terms.goal_reached {
                successes += 1;
            }
            steps += 1;
        }
        summaries.push_str(&format!("{episode},{steps},{total},{successes}\n"));
    }
    write_atomic(out, rewards.as_bytes())?;
    if let Some(summary_path) = summary {
        write_atomic(summary_path, summaries.as_bytes())?;
    }
    println!("wrote reward curves for {} episodes to {}", entries.len(), out.display());
    Ok(())
}
