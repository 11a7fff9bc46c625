//! Goal-trajectory post-processing and the closed-loop task-progress
//! evaluator.
//!
//! Trajectories are timestamped object pose sequences stored as JSONL: a
//! header record `{"rate_hz", "table_z"}` followed by one `{"t", "pose"}`
//! record per frame. Evaluation uses pointer semantics: the goal advances
//! to the next waypoint only once the current one is reached (strictly
//! below tolerance under the fixed reward keypoint scales), so execution
//! speed never affects the score. Timestamps are provenance only.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{keypoint_distance, Pose, REWARD_SCALES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajFrame {
    pub t: f64,
    pub pose: Pose,
}

/// Timestamped object goal sequence with source metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalTrajectory {
    pub rate_hz: f64,
    /// Height of the supporting table surface in the same frame as the
    /// poses.
    pub table_z: f64,
    pub frames: Vec<TrajFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    rate_hz: f64,
    table_z: f64,
}

impl GoalTrajectory {
    pub fn new(rate_hz: f64, table_z: f64, frames: Vec<TrajFrame>) -> Result<Self> {
        let traj = Self {
            rate_hz,
            table_z,
            frames,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::validation("frames", "trajectory needs >= 1 waypoint"));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::validation("rate_hz", "must be > 0"));
        }
        for pair in self.frames.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::validation(
                    "t",
                    format!("timestamps not strictly increasing at t={}", pair[1].t),
                ));
            }
        }
        Ok(())
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.frames.iter().map(|f| &f.pose)
    }
}

/// Keep every `round(rate / out_hz)`-th frame, starting from the first.
pub fn downsample(traj: &GoalTrajectory, out_hz: f64) -> Result<GoalTrajectory> {
    if !(out_hz > 0.0) {
        return Err(Error::validation("out_hz", "must be > 0"));
    }
    if out_hz > traj.rate_hz {
        return Err(Error::validation(
            "out_hz",
            format!("{} exceeds source rate {}", out_hz, traj.rate_hz),
        ));
    }
    let stride = (traj.rate_hz / out_hz).round().max(1.0) as usize;
    let frames: Vec<TrajFrame> = traj.frames.iter().step_by(stride).copied().collect();
    GoalTrajectory::new(traj.rate_hz / stride as f64, traj.table_z, frames)
}

/// Drop the static prefix: output starts at the first frame whose height
/// above `z_table` exceeds `z_thresh`.
pub fn truncate_liftoff(
    traj: &GoalTrajectory,
    z_table: f64,
    z_thresh: f64,
) -> Result<GoalTrajectory> {
    let start = traj
        .frames
        .iter()
        .position(|f| f.pose.translation.z - z_table > z_thresh);
    match start {
        Some(i) => GoalTrajectory::new(traj.rate_hz, traj.table_z, traj.frames[i..].to_vec()),
        None => {
            let max_z = traj
                .frames
                .iter()
                .map(|f| f.pose.translation.z - z_table)
                .fold(f64::NEG_INFINITY, f64::max);
            Err(Error::NeverLifted {
                max_z,
                thresh: z_thresh,
            })
        }
    }
}

pub fn save_trajectory(traj: &GoalTrajectory, path: &Path) -> Result<()> {
    traj.validate()?;
    let mut out = Vec::new();
    serde_json::to_writer(
        &mut out,
        &Header {
            rate_hz: traj.rate_hz,
            table_z: traj.table_z,
        },
    )
    .expect("header serializes");
    out.push(b'\n');
    for frame in &traj.frames {
        serde_json::to_writer(&mut out, frame).expect("frame serializes");
        out.push(b'\n');
    }
    crate::io::write_atomic(path, &out)
}

pub fn load_trajectory(path: &Path) -> Result<GoalTrajectory> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut header: Option<Header> = None;
    let mut frames = Vec::new();
    let parse_err = |line_no: usize, e: &dyn std::fmt::Display| Error::Parse {
        path: path.display().to_string(),
        location: format!("line {line_no}"),
        reason: e.to_string(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(serde_json::from_str(&line).map_err(|e| parse_err(line_no, &e))?);
            continue;
        }
        let frame: TrajFrame =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, &e))?;
        if let Some(prev) = frames.last() {
            let prev: &TrajFrame = prev;
            if frame.t <= prev.t {
                return Err(parse_err(line_no, &"timestamps not strictly increasing"));
            }
        }
        frames.push(frame);
    }
    let header = header.ok_or_else(|| parse_err(1, &"missing header record"))?;
    GoalTrajectory::new(header.rate_hz, header.table_z, frames)
}

/// One step of a rollout as seen by the evaluator.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    /// Episode continues; object pose after the step.
    Pose(Pose),
    /// Episode failed; evaluation stops and records the reason.
    Failed(String),
    /// Rollout exhausted.
    Ended,
}

/// Source of object poses, either a live environment or a recording.
pub trait RolloutSource {
    /// Advance one control step while the given waypoint is active.
    fn step(&mut self, current_goal: &Pose) -> StepOutcome;
}

/// A pre-recorded object pose sequence.
pub struct RecordedRollout {
    poses: std::vec::IntoIter<Pose>,
}

impl RecordedRollout {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self {
            poses: poses.into_iter(),
        }
    }
}

impl RolloutSource for RecordedRollout {
    fn step(&mut self, _goal: &Pose) -> StepOutcome {
        match self.poses.next() {
            Some(p) => StepOutcome::Pose(p),
            None => StepOutcome::Ended,
        }
    }
}

/// Closed-loop evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub goals_total: usize,
    pub goals_reached: usize,
    /// 100 * reached / total.
    pub progress_percent: f64,
    /// Steps spent on each reached goal.
    pub per_goal_steps: Vec<usize>,
    pub steps_used: usize,
    pub failure: Option<String>,
}

/// Run the closed-loop protocol: compare each step's object pose to the
/// active waypoint with the fixed reward scales, advance on d < epsilon,
/// stop on failure, exhaustion, or `step_budget`.
pub fn evaluate_progress<S: RolloutSource>(
    source: &mut S,
    goals: &GoalTrajectory,
    epsilon: f64,
    step_budget: usize,
) -> Result<ProgressReport> {
    goals.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon", "must be > 0"));
    }
    let total = goals.frames.len();
    let mut reached = 0usize;
    let mut steps_used = 0usize;
    let mut steps_this_goal = 0usize;
    let mut per_goal_steps = Vec::new();
    let mut failure = None;

    while reached < total && steps_used < step_budget {
        let goal = &goals.frames[reached].pose;
        match source.step(goal) {
            StepOutcome::Pose(object) => {
                steps_used += 1;
                steps_this_goal += 1;
                if keypoint_distance(&object, goal, &REWARD_SCALES) < epsilon {
                    per_goal_steps.push(steps_this_goal);
                    steps_this_goal = 0;
                    reached += 1;
                }
            }
            StepOutcome::Failed(reason) => {
                failure = Some(reason);
                break;
            }
            StepOutcome::Ended => break,
        }
    }
    Ok(ProgressReport {
        goals_total: total,
        goals_reached: reached,
        progress_percent: 100.0 * reached as f64 / total as f64,
        per_goal_steps,
        steps_used,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    fn traj_with_heights(zs: &[f64]) -> GoalTrajectory {
        let frames = zs
            .iter()
            .enumerate()
            .map(|(i, &z)| TrajFrame {
                t: i as f64 / 30.0,
                pose: Pose::from_translation(Vector3::new(0.0, 0.0, z)),
            })
            .collect();
        GoalTrajectory::new(30.0, 0.0, frames).unwrap()
    }

    fn linear_traj(n: usize, rate: f64) -> GoalTrajectory {
        let frames = (0..n)
            .map(|i| TrajFrame {
                t: i as f64 / rate,
                pose: Pose::from_translation(Vector3::new(i as f64 * 0.05, 0.0, 0.8)),
            })
            .collect();
        GoalTrajectory::new(rate, 0.63, frames).unwrap()
    }

    #[test]
    fn downsample_30_to_3() {
        let traj = linear_traj(300, 30.0);
        let out = downsample(&traj, 3.0).unwrap();
        assert_eq!(out.frames.len(), 30);
        assert_abs_diff_eq!(out.rate_hz, 3.0, epsilon = 1e-12);
        for (k, frame) in out.frames.iter().enumerate() {
            assert_eq!(frame.t, traj.frames[k * 10].t);
        }
    }

    #[test]
    fn downsample_identity_and_degenerate() {
        let traj = linear_traj(40, 30.0);
        let same = downsample(&traj, 30.0).unwrap();
        assert_eq!(same, traj);
        let single = linear_traj(1, 30.0);
        assert_eq!(downsample(&single, 3.0).unwrap().frames.len(), 1);
        assert!(downsample(&traj, 0.0).is_err());
        assert!(downsample(&traj, 60.0).is_err());
    }

    #[test]
    fn downsample_is_idempotent_at_same_rate() {
        let traj = linear_traj(300, 30.0);
        let once = downsample(&traj, 3.0).unwrap();
        let twice = downsample(&once, 3.0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn liftoff_truncation_threshold() {
        let traj = traj_with_heights(&[0.01, 0.05, 0.12, 0.2]);
        let out = truncate_liftoff(&traj, 0.0, 0.10).unwrap();
        assert_eq!(out.frames.len(), 2);
        assert_eq!(out.frames[0].t, traj.frames[2].t);

        let all_up = traj_with_heights(&[0.2, 0.3, 0.4]);
        assert_eq!(truncate_liftoff(&all_up, 0.0, 0.10).unwrap(), all_up);

        let never = traj_with_heights(&[0.01, 0.05, 0.09]);
        assert!(matches!(
            truncate_liftoff(&never, 0.0, 0.10),
            Err(Error::NeverLifted { .. })
        ));
        // boundary: exactly the threshold does not count
        let boundary = traj_with_heights(&[0.10]);
        assert!(truncate_liftoff(&boundary, 0.0, 0.10).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");
        let traj = linear_traj(25, 30.0);
        save_trajectory(&traj, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");

        // non-monotone timestamps
        std::fs::write(
            &path,
            "{\"rate_hz\":30.0,\"table_z\":0.0}\n\
             {\"t\":0.0,\"pose\":[0,0,0,1,0,0,0]}\n\
             {\"t\":0.0,\"pose\":[0,0,0,1,0,0,0]}\n",
        )
        .unwrap();
        match load_trajectory(&path) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 3"),
            other => panic!("expected parse error, got {other:?}"),
        }

        // missing quaternion -> named field in error
        std::fs::write(
            &path,
            "{\"rate_hz\":30.0,\"table_z\":0.0}\n{\"t\":0.0}\n",
        )
        .unwrap();
        match load_trajectory(&path) {
            Err(Error::Parse { reason, .. }) => assert!(reason.contains("pose"), "{reason}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn progress_full_and_partial() {
        let goals = linear_traj(10, 3.0);
        // visits every goal in order
        let mut full = RecordedRollout::new(goals.poses().copied().collect());
        let report = evaluate_progress(&mut full, &goals, 0.02, 1000).unwrap();
        assert_eq!(report.goals_reached, 10);
        assert_abs_diff_eq!(report.progress_percent, 100.0, epsilon = 1e-12);
        assert_eq!(report.per_goal_steps, vec![1; 10]);

        // dies after 3 goals
        let mut partial =
            RecordedRollout::new(goals.poses().take(3).copied().collect());
        let report = evaluate_progress(&mut partial, &goals, 0.02, 1000).unwrap();
        assert_eq!(report.goals_reached, 3);
        assert_abs_diff_eq!(report.progress_percent, 30.0, epsilon = 1e-12);
    }

    #[test]
    fn hovering_at_epsilon_does_not_count() {
        let goals = GoalTrajectory::new(
            3.0,
            0.0,
            vec![TrajFrame {
                t: 0.0,
                pose: Pose::identity(),
            }],
        )
        .unwrap();
        let eps = 0.02;
        // pure translation: keypoint distance equals the offset norm
        let hover = Pose::from_translation(Vector3::new(eps, 0.0, 0.0));
        let mut src = RecordedRollout::new(vec![hover; 50]);
        let report = evaluate_progress(&mut src, &goals, eps, 1000).unwrap();
        assert_eq!(report.goals_reached, 0);

        let inside = Pose::from_translation(Vector3::new(eps - 1e-9, 0.0, 0.0));
        let mut src = RecordedRollout::new(vec![inside]);
        let report = evaluate_progress(&mut src, &goals, eps, 1000).unwrap();
        assert_eq!(report.goals_reached, 1);
    }

    #[test]
    fn progress_monotone_in_prefix_length() {
        let goals = linear_traj(8, 3.0);
        let full: Vec<Pose> = goals.poses().copied().collect();
        let mut last = 0;
        for len in 0..=full.len() {
            let mut src = RecordedRollout::new(full[..len].to_vec());
            let report = evaluate_progress(&mut src, &goals, 0.02, 1000).unwrap();
            assert!(report.goals_reached >= last);
            last = report.goals_reached;
        }
    }

    #[test]
    fn duplicating_frames_leaves_score_unchanged() {
        // goals are 5 cm apart, far beyond the 2 cm tolerance, so each
        // frame can satisfy at most one waypoint
        let goals = linear_traj(6, 3.0);
        let rollout: Vec<Pose> = goals.poses().copied().collect();
        let stretched: Vec<Pose> = rollout
            .iter()
            .flat_map(|p| std::iter::repeat_n(*p, 4))
            .collect();
        let mut a = RecordedRollout::new(rollout);
        let mut b = RecordedRollout::new(stretched);
        let ra = evaluate_progress(&mut a, &goals, 0.02, 10_000).unwrap();
        let rb = evaluate_progress(&mut b, &goals, 0.02, 10_000).unwrap();
        assert_eq!(ra.goals_reached, rb.goals_reached);
        assert_eq!(ra.progress_percent, rb.progress_percent);
        assert_eq!(ra.failure, rb.failure);
    }

    #[test]
    fn budget_and_empty_goals() {
        let goals = linear_traj(5, 3.0);
        let far = Pose::from_translation(Vector3::new(10.0, 0.0, 0.0));
        let mut src = RecordedRollout::new(vec![far; 100]);
        let report = evaluate_progress(&mut src, &goals, 0.02, 17).unwrap();
        assert_eq!(report.steps_used, 17);
        assert_eq!(report.goals_reached, 0);

        let empty = GoalTrajectory {
            rate_hz: 3.0,
            table_z: 0.0,
            frames: vec![],
        };
        let mut src = RecordedRollout::new(vec![far]);
        assert!(evaluate_progress(&mut src, &empty, 0.02, 10).is_err());
    }

    #[test]
    fn failure_reason_recorded() {
        struct FailsAfter(usize);
        impl RolloutSource for FailsAfter {
            fn step(&mut self, _goal: &Pose) -> StepOutcome {
                if self.0 == 0 {
                    StepOutcome::Failed("dropped".into())
                } else {
                    self.0 -= 1;
                    StepOutcome::Pose(Pose::from_translation(Vector3::new(5.0, 0.0, 0.0)))
                }
            }
        }
        let goals = linear_traj(4, 3.0);
        let report = evaluate_progress(&mut FailsAfter(3), &goals, 0.02, 100).unwrap();
        assert_eq!(report.failure.as_deref(), Some("dropped"));
        assert_eq!(report.steps_used, 3);
    }
}
