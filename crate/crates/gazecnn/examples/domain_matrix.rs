//! Cross-dataset train/test matrix over two synthetic lighting domains.
//!
//! Trains one model per source (bright, dim, and their union) and
//! evaluates each against leakage-free samples of every domain. The
//! combined-trained model is expected to have the smallest worst-case
//! (row-maximum) error: it is the most stable across domains.

use gazecnn::harness::{cross_dataset_matrix, TrainConfig};
use gazecnn::synth::{make_characters, render_samples, Preset, SweepGrid};
use std::time::Instant;

fn main() {
    let grid = SweepGrid::small();
    let bright_chars = make_characters(4, Preset::Bright, 5);
    let dim_chars = make_characters(4, Preset::Dim, 5);
    let datasets = vec![
        (
            "bright".to_string(),
            render_samples(&bright_chars, &grid, "bright", 5).expect("render bright"),
        ),
        (
            "dim".to_string(),
            render_samples(&dim_chars, &grid, "dim", 5).expect("render dim"),
        ),
    ];

    let config = TrainConfig {
        max_epochs: 40,
        batch_size: 16,
        patience: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let report = cross_dataset_matrix(&datasets, 4, &config).expect("matrix");

    print!("{:>10}", "train\\test");
    for name in &report.names {
        print!("{name:>12}");
    }
    println!("{:>12}", "row max");
    for (i, row) in report.cells.iter().enumerate() {
        print!("{:>10}", report.names[i]);
        for cell in row {
            print!("{:>12.3}", cell.mae_mean_deg);
        }
        println!("{:>12.3}", report.row_max_mae(i));
    }
    let combined = report.names.len() - 1;
    println!(
        "combined row max {:.3} vs singles {:.3} / {:.3}  ({:.0}s)",
        report.row_max_mae(combined),
        report.row_max_mae(0),
        report.row_max_mae(1),
        t0.elapsed().as_secs_f64()
    );
}
