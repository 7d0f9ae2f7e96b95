//! Subject-disjoint 4-fold cross-validation on a small synthetic sweep.
//!
//! Each character is one subject; no character's images ever appear in
//! both the training and the test side of a fold. The full-size protocol
//! (default sweep, 8+ characters) runs through the CLI:
//!
//! ```bash
//! gazecnn crossval --manifest sweep/manifest.csv --out reports --k 4
//! ```

use gazecnn::harness::{cross_validate, TrainConfig};
use gazecnn::synth::{make_characters, render_samples, Preset, SweepGrid};
use std::time::Instant;

fn main() {
    let characters = make_characters(4, Preset::Bright, 3);
    let samples = render_samples(&characters, &SweepGrid::small(), "bright", 3).expect("render");
    println!("{} samples, {} characters", samples.len(), characters.len());

    let config = TrainConfig {
        max_epochs: 40,
        batch_size: 16,
        patience: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let report = cross_validate(&samples, 4, &config).expect("cross-validation");
    for (i, fold) in report.folds.iter().enumerate() {
        println!(
            "fold {i}: MAE {:.3} +- {:.3} deg (max {:.3}, n {})",
            fold.mae_mean_deg, fold.mae_std_deg, fold.max_error_deg, fold.n_samples
        );
    }
    println!(
        "pooled: MAE {:.3} +- {:.3} deg over {} held-out samples ({:.0}s)",
        report.pooled.mae_mean_deg,
        report.pooled.mae_std_deg,
        report.pooled.n_samples,
        t0.elapsed().as_secs_f64()
    );
}
