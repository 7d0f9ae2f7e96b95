//! Save a checkpoint, load it back, and run single-sample inference.
//!
//! Demonstrates the bit-exact checkpoint round trip and the prediction
//! path the `gazecnn predict` subcommand uses.

use std::sync::Arc;

use gazecnn::checkpoint::{load, save};
use gazecnn::data::GazeSample;
use gazecnn::harness::predict;
use gazecnn::model::GazeNet;
use gazecnn::rng::Rng;
use gazecnn::synth::{make_characters, render_eye_pair, Preset};

fn main() {
    let net = GazeNet::build(&mut Rng::new(11));
    println!("built network with {} parameters", net.param_count());

    let path = std::env::temp_dir().join("gazecnn_example.gznt");
    save(&net, &path).expect("save");
    let restored = load(&path).expect("load");
    assert_eq!(net, restored);
    println!("checkpoint round trip at {} is bitwise exact", path.display());

    let character = &make_characters(1, Preset::Bright, 11)[0];
    let head = [5.0f32, -10.0, 0.0];
    let gaze = [10.0f32, 20.0];
    let (left, right) = render_eye_pair(&character.params, &head, &gaze, 30, 90).expect("render");
    let sample = GazeSample {
        left_eye: Arc::new(left),
        right_eye: Arc::new(right),
        head_pose: head,
        gaze,
        subject_id: character.name.clone(),
        domain: "bright".into(),
    };
    let pred = predict(&restored, &sample).expect("predict");
    println!(
        "untrained prediction for true gaze ({:.1}, {:.1}): pitch={:.4} yaw={:.4}",
        gaze[0], gaze[1], pred[0], pred[1]
    );
    println!("train a checkpoint first for meaningful numbers (see overfit_training)");
}
