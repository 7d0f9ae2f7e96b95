//! Appearance-based eye-gaze regression: a self-contained CNN training and
//! inference engine.
//!
//! The library reconstructs a compact gaze network (two 3x3 convolution +
//! max-pool stages, three fully connected layers, head pose fused into the
//! 53-unit last hidden layer, 2,092,342 trainable parameters), trains it
//! with MSE/Adam, evaluates mean absolute error in degrees, and ships the
//! full experimental protocol: mirroring augmentation, subject-disjoint
//! 4-fold cross-validation, and a cross-dataset train/test matrix. A
//! procedural sweep renderer generates labeled synthetic eye pairs so every
//! experiment runs without external data.
//!
//! Gradients are hand-written per layer and verified against central
//! finite differences in double precision; `gazecnn gradcheck` runs the
//! whole verification suite from the command line.
//!
//! ## Modules
//!
//! - [`tensor`], [`kernels`], [`rng`]: dense tensors, the forward/backward
//!   layer kernels (f32 and f64), and a splittable deterministic RNG.
//! - [`model`]: the network topology, forward/backward passes.
//! - [`checkpoint`]: bit-exact binary serialization with CRC32.
//! - [`optim`]: Adam, the MSE training loss, and the MAE metric.
//! - [`data`]: manifest CSV ingestion, eye cropping, preprocessing,
//!   mirroring augmentation, subject-disjoint fold splitting.
//! - [`synth`]: the procedural eye renderer and sweep-dataset generator.
//! - [`harness`]: training with early stopping, evaluation,
//!   cross-validation, the cross-dataset matrix.
//! - [`gradcheck`]: finite-difference verification suites.
//! - [`cli`], [`report`]: the command-line front end and report emitters.
//!
//! ## Runnable examples
//!
//! ```bash
//! cargo run --release --example generate_sweep      # synthetic dataset on disk
//! cargo run --release --example overfit_training    # memorize 32 samples to < 0.5 deg
//! cargo run --release --example gradient_check      # finite-difference suites
//! cargo run --release --example cross_validation    # small subject-disjoint CV
//! cargo run --release --example domain_matrix       # bright/dim/combined matrix
//! cargo run --release --example predict_gaze        # checkpoint round trip + inference
//! cargo run --release --example bench_speed         # forward/backward throughput
//! ```
//!
//! The `gazecnn` binary exposes the same capabilities as subcommands; see
//! `gazecnn help`.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod gradcheck;
pub mod harness;
pub mod img;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use harness::{EvalReport, TrainConfig};
pub use model::{GazeNet, NetDims};
pub use tensor::{Precision, Tensor};
