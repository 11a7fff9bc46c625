//! Regenerates the bundled fixture files under assets/fixtures/.
//!
//! Run from the crate root: `cargo run -p toolforge-core --example
//! dump_fixtures -- <out_dir>`

use std::path::PathBuf;

use toolforge_core::fixtures;
use toolforge_core::robot::{default_robot_spec, RobotModel};
use toolforge_core::traj::save_trajectory;

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/assets/fixtures".into())
        .into();
    std::fs::create_dir_all(&out).expect("create output dir");

    let model = RobotModel::bundled_default();
    let goals = fixtures::rotation_fixture_goals(&model);
    save_trajectory(&goals, &out.join("rotation_goals.jsonl")).unwrap();
    fixtures::rotation_fixture_grab()
        .save(&out.join("rotation_grab.json"))
        .unwrap();

    let (eval_goals, eval_rollout, _) = fixtures::eval_fixture();
    save_trajectory(&eval_goals, &out.join("eval_goals.jsonl")).unwrap();
    save_trajectory(&eval_rollout, &out.join("eval_rollout.jsonl")).unwrap();

    let robot_json =
        serde_json::to_string_pretty(&default_robot_spec()).expect("robot spec serializes");
    toolforge_core::io::write_atomic(&out.join("default_robot.json"), robot_json.as_bytes())
        .unwrap();

    println!("fixtures written to {}", out.display());
}
