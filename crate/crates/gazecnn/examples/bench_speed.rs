//! Measure single-sample forward and forward+backward latency of the full
//! network, and the implied epoch cost.

use gazecnn::model::GazeNet;
use gazecnn::optim::mse_loss;
use gazecnn::rng::Rng;
use gazecnn::tensor::Tensor;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    let net = GazeNet::build(&mut rng);
    let eyes = Tensor::from_vec(
        &[3, 70, 210],
        (0..3 * 70 * 210).map(|_| rng.uniform(0.0, 1.0) as f32).collect(),
    )
    .unwrap();
    let head = [0.1f32, -0.2, 0.05];

    // warm up
    let (p, y, trace) = net.forward(&eyes, &head).unwrap();
    let (_, g) = mse_loss(&[p, y], &[1.0, 2.0]);
    let _ = net.backward(&trace, &g).unwrap();

    let n = 30;
    let t0 = Instant::now();
    for _ in 0..n {
        let (p, y, _trace) = net.forward(&eyes, &head).unwrap();
        std::hint::black_box((p, y));
    }
    let fwd = t0.elapsed().as_secs_f64() / n as f64;

    let t1 = Instant::now();
    for _ in 0..n {
        let (p, y, trace) = net.forward(&eyes, &head).unwrap();
        let (_, g) = mse_loss(&[p, y], &[1.0, 2.0]);
        let grads = net.backward(&trace, &g).unwrap();
        std::hint::black_box(grads.tensors.len());
    }
    let both = t1.elapsed().as_secs_f64() / n as f64;

    println!("forward:          {:.3} ms", fwd * 1e3);
    println!("forward+backward: {:.3} ms", both * 1e3);
    println!(
        "one epoch over the default 8-character sweep (45,900 mirrored rows): ~{:.0} s",
        both * 45_900.0
    );
}
