//! Generate a synthetic sweep dataset on disk and load it back.
//!
//! The default grid visits 153 gaze directions at each of 25 head poses
//! (3,825 rows per character); this demo uses the small grid to stay quick.
//! For the full-size dataset use the CLI:
//!
//! ```bash
//! gazecnn synth-gen --chars 15 --out /tmp/sweep --preset bright --seed 1
//! ```

use gazecnn::data::load_manifest;
use gazecnn::synth::{generate_dataset, make_characters, Preset, SweepGrid};

fn main() {
    let out = std::env::temp_dir().join("gazecnn_example_sweep");
    let characters = make_characters(2, Preset::Bright, 1);
    let grid = SweepGrid::small();

    let rows = generate_dataset(&characters, &grid, "bright", &out, 1).expect("generate");
    println!(
        "wrote {} rows ({} per character) to {}",
        rows.len(),
        grid.rows_per_character(),
        out.display()
    );

    let samples = load_manifest(&out.join("manifest.csv")).expect("load");
    println!("loaded {} samples back", samples.len());
    let s = &samples[0];
    println!(
        "first sample: subject {} head ({}, {}, {}) gaze ({}, {})",
        s.subject_id, s.head_pose[0], s.head_pose[1], s.head_pose[2], s.gaze[0], s.gaze[1]
    );

    let full = SweepGrid::default();
    println!(
        "default grid: {} gaze points x {} head poses = {} rows/character",
        full.gaze_points_per_head(),
        full.head_poses.len(),
        full.rows_per_character()
    );
}
