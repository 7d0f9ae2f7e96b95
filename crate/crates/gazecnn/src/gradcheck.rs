//! Finite-difference verification of every backward kernel and of the
//! assembled network.
//!
//! The checks perturb inputs through the *forward* kernels only, so they
//! are independent of the backward implementations they judge. Three
//! levels run:
//!
//! 1. per-kernel checks in double precision (random small shapes),
//! 2. a whole-network check on a reduced clone of the topology, every
//!    parameter finite-differenced in double precision,
//! 3. spot checks of parameters of the full network: the production
//!    single-precision backward pass against a double-precision
//!    finite-difference oracle.
//!
//! A sign-flip fault can be injected to demonstrate that the checker
//! actually detects broken gradients.

use crate::kernels::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward,
};
use crate::model::{GazeNet, NetDims};
use crate::optim::mse_loss;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Backward kernels into which a sign-flip fault can be injected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Conv2d,
    MaxPool,
    Linear,
    Relu,
    Mse,
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conv2d" => Ok(Kernel::Conv2d),
            "maxpool" => Ok(Kernel::MaxPool),
            "linear" => Ok(Kernel::Linear),
            "relu" => Ok(Kernel::Relu),
            "mse" => Ok(Kernel::Mse),
            other => Err(format!(
                "unknown kernel `{other}` (expected conv2d|maxpool|linear|relu|mse)"
            )),
        }
    }
}

/// Result of one check suite.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:28} {}  (max rel err {:.3e}, tol {:.0e}, {} trials)",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.tolerance,
            self.trials
        )
    }
}

const KERNEL_TRIALS: usize = 50;
const KERNEL_TOL: f64 = 1e-6;
const MSE_TOL: f64 = 1e-9;
const NETWORK_TOL: f64 = 1e-5;
const SPOT_TOL: f64 = 1e-4;
const SPOT_PARAMS: usize = 200;
const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let data = (0..shape.iter().product())
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Worst relative error between an analytic gradient tensor and central
/// finite differences of `loss` over the `pick`-th argument.
fn fd_compare(
    args: &[&Tensor<f64>],
    pick: usize,
    analytic: &Tensor<f64>,
    loss: &dyn Fn(&[Tensor<f64>]) -> f64,
) -> f64 {
    let owned: Vec<Tensor<f64>> = args.iter().map(|t| (*t).clone()).collect();
    let mut worst = 0.0f64;
    for i in 0..analytic.len() {
        let mut plus = owned.clone();
        plus[pick].data_mut()[i] += FD_STEP;
        let mut minus = owned.clone();
        minus[pick].data_mut()[i] -= FD_STEP;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic.data()[i], fd, 1e-6));
    }
    worst
}

fn maybe_flip(t: &mut Tensor<f64>, flip: bool) {
    if flip {
        for v in t.data_mut() {
            *v = -*v;
        }
    }
}

fn check_conv2d(rng: &mut Rng, flip: bool) -> CheckOutcome {
    let mut worst = 0.0f64;
    for _ in 0..KERNEL_TRIALS {
        let c_in = 1 + rng.below(3);
        let c_out = 1 + rng.below(3);
        let h = 3 + rng.below(4);
        let w = 3 + rng.below(4);
        let input = random_tensor(rng, &[c_in, h, w]);
        let weight = random_tensor(rng, &[c_out, c_in, 3, 3]);
        let bias = random_tensor(rng, &[c_out]);
        let proj = random_tensor(rng, &[c_out, h - 2, w - 2]);
        let loss = |args: &[Tensor<f64>]| -> f64 {
            let out = conv2d_forward(&args[0], &args[1], &args[2]).unwrap();
            out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let (mut gi, mut gw, mut gb) = conv2d_backward(&proj, &input, &weight).unwrap();
        maybe_flip(&mut gw, flip);
        maybe_flip(&mut gi, false);
        maybe_flip(&mut gb, false);
        let args = [&input, &weight, &bias];
        worst = worst
            .max(fd_compare(&args, 0, &gi, &loss))
            .max(fd_compare(&args, 1, &gw, &loss))
            .max(fd_compare(&args, 2, &gb, &loss));
    }
    CheckOutcome {
        name: "conv2d_backward".into(),
        trials: KERNEL_TRIALS,
        max_rel_err: worst,
        tolerance: KERNEL_TOL,
        passed: worst <= KERNEL_TOL,
    }
}

fn check_maxpool(rng: &mut Rng, flip: bool) -> CheckOutcome {
    let mut worst = 0.0f64;
    for _ in 0..KERNEL_TRIALS {
        let c = 1 + rng.below(2);
        let h = 3 + rng.below(5);
        let w = 3 + rng.below(5);
        // Spread the values так the argmax cannot flip under the FD step.
        let mut input = random_tensor(rng, &[c, h, w]);
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            *v += (i % 89) as f64 * 1e-3;
        }
        let (out, map) = maxpool_forward(&input).unwrap();
        let proj = random_tensor(rng, out.shape());
        let loss = |args: &[Tensor<f64>]| -> f64 {
            let (out, _) = maxpool_forward(&args[0]).unwrap();
            out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let mut gi = maxpool_backward(&proj, &map, input.shape()).unwrap();
        maybe_flip(&mut gi, flip);
        worst = worst.max(fd_compare(&[&input], 0, &gi, &loss));
    }
    CheckOutcome {
        name: "maxpool_backward".into(),
        trials: KERNEL_TRIALS,
        max_rel_err: worst,
        tolerance: KERNEL_TOL,
        passed: worst <= KERNEL_TOL,
    }
}

fn check_linear(rng: &mut Rng, flip: bool) -> CheckOutcome {
    let mut worst = 0.0f64;
    for _ in 0..KERNEL_TRIALS {
        let n = 1 + rng.below(7);
        let m = 1 + rng.below(7);
        let input = random_tensor(rng, &[n]);
        let weight = random_tensor(rng, &[m, n]);
        let bias = random_tensor(rng, &[m]);
        let proj = random_tensor(rng, &[m]);
        let loss = |args: &[Tensor<f64>]| -> f64 {
            let out = linear_forward(&args[0], &args[1], &args[2]).unwrap();
            out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let (mut gi, mut gw, gb) = linear_backward(&proj, &input, &weight).unwrap();
        maybe_flip(&mut gw, flip);
        maybe_flip(&mut gi, false);
        let args = [&input, &weight, &bias];
        worst = worst
            .max(fd_compare(&args, 0, &gi, &loss))
            .max(fd_compare(&args, 1, &gw, &loss))
            .max(fd_compare(&args, 2, &gb, &loss));
    }
    CheckOutcome {
        name: "linear_backward".into(),
        trials: KERNEL_TRIALS,
        max_rel_err: worst,
        tolerance: KERNEL_TOL,
        passed: worst <= KERNEL_TOL,
    }
}

fn check_relu(rng: &mut Rng, flip: bool) -> CheckOutcome {
    let mut worst = 0.0f64;
    for _ in 0..KERNEL_TRIALS {
        let n = 1 + rng.below(9);
        let mut input = random_tensor(rng, &[n]);
        for v in input.data_mut() {
            // keep away from the kink at zero
            if v.abs() < 0.05 {
                *v += if *v >= 0.0 { 0.1 } else { -0.1 };
            }
        }
        let proj = random_tensor(rng, &[n]);
        let loss = |args: &[Tensor<f64>]| -> f64 {
            relu(&args[0])
                .data()
                .iter()
                .zip(proj.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut gi = relu_backward(&proj, &input).unwrap();
        maybe_flip(&mut gi, flip);
        worst = worst.max(fd_compare(&[&input], 0, &gi, &loss));
    }
    CheckOutcome {
        name: "relu_backward".into(),
        trials: KERNEL_TRIALS,
        max_rel_err: worst,
        tolerance: KERNEL_TOL,
        passed: worst <= KERNEL_TOL,
    }
}

fn check_mse(rng: &mut Rng, flip: bool) -> CheckOutcome {
    let mut worst = 0.0f64;
    // The loss is quadratic: a coarse step has zero truncation error.
    let h = 1e-3;
    for _ in 0..KERNEL_TRIALS {
        let pred = [rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)];
        let target = [rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)];
        let (_, mut grad) = mse_loss(&pred, &target);
        if flip {
            grad = [-grad[0], -grad[1]];
        }
        for i in 0..2 {
            let mut plus = pred;
            plus[i] += h;
            let mut minus = pred;
            minus[i] -= h;
            let fd = (mse_loss(&plus, &target).0 - mse_loss(&minus, &target).0) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs());
        }
    }
    CheckOutcome {
        name: "mse_gradient".into(),
        trials: KERNEL_TRIALS,
        max_rel_err: worst,
        tolerance: MSE_TOL,
        passed: worst <= MSE_TOL,
    }
}

/// Reduced clone of the published topology used for whole-network
/// finite differences: 280 parameters, same layer stack and fusion point.
pub fn reduced_dims() -> NetDims {
    NetDims {
        in_h: 20,
        in_w: 32,
        conv1_ch: 2,
        conv2_ch: 3,
        fc1_out: 12,
        fc2_out: 5,
    }
}

fn check_reduced_network(rng: &mut Rng, flip: bool) -> CheckOutcome {
    let dims = reduced_dims();
    let net = GazeNet::<f64>::build_with_dims(dims, rng).unwrap();
    let eyes = Tensor::from_vec(
        &[3, dims.in_h, dims.in_w],
        (0..3 * dims.in_h * dims.in_w)
            .map(|_| rng.uniform(0.0, 1.0))
            .collect(),
    )
    .unwrap();
    let head = [
        rng.uniform(-0.5, 0.5),
        rng.uniform(-0.5, 0.5),
        rng.uniform(-0.5, 0.5),
    ];
    let target = [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)];

    let (p, y, trace) = net.forward(&eyes, &head).unwrap();
    let (_, grad2) = mse_loss(&[p, y], &target);
    let mut analytic = net.backward(&trace, &grad2).unwrap();
    if flip {
        maybe_flip(&mut analytic.tensors[0], true);
    }

    let loss_of = |n: &GazeNet<f64>| -> f64 {
        let (p, y, _) = n.forward(&eyes, &head).unwrap();
        mse_loss(&[p, y], &target).0
    };
    let mut worst = 0.0f64;
    let mut trials = 0usize;
    for ti in 0..10 {
        for ei in 0..analytic.tensors[ti].len() {
            let mut plus = net.clone();
            plus.params_mut()[ti].data_mut()[ei] += FD_STEP;
            let mut minus = net.clone();
            minus.params_mut()[ti].data_mut()[ei] -= FD_STEP;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.tensors[ti].data()[ei], fd, 1e-4));
            trials += 1;
        }
    }
    CheckOutcome {
        name: "network_reduced_full_fd".into(),
        trials,
        max_rel_err: worst,
        tolerance: NETWORK_TOL,
        passed: worst <= NETWORK_TOL,
    }
}

fn check_full_net_spots(rng: &mut Rng, flip: bool) -> CheckOutcome {
    let net32 = GazeNet::build(rng);
    let dims = net32.dims();
    let eyes32 = Tensor::<f32>::from_vec(
        &[3, dims.in_h, dims.in_w],
        (0..3 * dims.in_h * dims.in_w)
            .map(|_| rng.uniform(0.0, 1.0) as f32)
            .collect(),
    )
    .unwrap();
    let head32 = [
        rng.uniform(-0.4, 0.4) as f32,
        rng.uniform(-0.4, 0.4) as f32,
        rng.uniform(-0.4, 0.4) as f32,
    ];
    let target32 = [rng.uniform(-5.0, 5.0) as f32, rng.uniform(-5.0, 5.0) as f32];

    // Production path: single-precision forward and backward.
    let (p, y, trace) = net32.forward(&eyes32, &head32).unwrap();
    let (_, grad2) = mse_loss(&[p, y], &target32);
    let analytic = net32.backward(&trace, &grad2).unwrap();
    // Guard floor per tensor: a fraction of its largest gradient entry.
    let floors: Vec<f64> = analytic
        .tensors
        .iter()
        .map(|t| {
            let m = t
                .data()
                .iter()
                .fold(0.0f32, |acc, v| acc.max(v.abs()));
            (m as f64 * 1e-3).max(1e-6)
        })
        .collect();

    // Oracle: double-precision finite differences on the widened net.
    let net64 = net32.to_f64();
    let eyes64 = eyes32.to_f64();
    let head64 = [head32[0] as f64, head32[1] as f64, head32[2] as f64];
    let target64 = [target32[0] as f64, target32[1] as f64];
    let loss_of = |n: &GazeNet<f64>| -> f64 {
        let (p, y, _) = n.forward(&eyes64, &head64).unwrap();
        mse_loss(&[p, y], &target64).0
    };

    let sizes: Vec<usize> = net32.params().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..SPOT_PARAMS {
        let mut flat = rng.below(total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let mut plus = net64.clone();
        plus.params_mut()[ti].data_mut()[flat] += FD_STEP;
        let mut minus = net64.clone();
        minus.params_mut()[ti].data_mut()[flat] -= FD_STEP;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * FD_STEP);
        let mut an = analytic.tensors[ti].data()[flat] as f64;
        if flip {
            an = -an;
        }
        worst = worst.max(rel_err(an, fd, floors[ti]));
    }
    CheckOutcome {
        name: "network_full_spot_checks".into(),
        trials: SPOT_PARAMS,
        max_rel_err: worst,
        tolerance: SPOT_TOL,
        passed: worst <= SPOT_TOL,
    }
}

/// Run every finite-difference suite. `sign_flip` injects a fault into the
/// named backward kernel (or into the network-level checks) so callers can
/// verify the suites detect broken gradients.
pub fn run_all(seed: u64, sign_flip: Option<Kernel>) -> Vec<CheckOutcome> {
    let mut rng = Rng::new(seed);
    let flip = |k: Kernel| sign_flip == Some(k);
    vec![
        check_conv2d(&mut rng.split(), flip(Kernel::Conv2d)),
        check_maxpool(&mut rng.split(), flip(Kernel::MaxPool)),
        check_linear(&mut rng.split(), flip(Kernel::Linear)),
        check_relu(&mut rng.split(), flip(Kernel::Relu)),
        check_mse(&mut rng.split(), flip(Kernel::Mse)),
        check_reduced_network(&mut rng.split(), sign_flip == Some(Kernel::Conv2d)),
        check_full_net_spots(&mut rng.split(), sign_flip == Some(Kernel::Linear)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes_every_suite() {
        let outcomes = run_all(2024, None);
        assert_eq!(outcomes.len(), 7);
        for o in &outcomes {
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn sign_flips_are_detected_in_every_kernel() {
        for kernel in [
            Kernel::Conv2d,
            Kernel::MaxPool,
            Kernel::Linear,
            Kernel::Relu,
            Kernel::Mse,
        ] {
            let outcomes = run_all(2024, Some(kernel));
            assert!(
                outcomes.iter().any(|o| !o.passed),
                "sign flip in {kernel:?} went undetected"
            );
        }
    }

    #[test]
    fn outcomes_name_every_kernel() {
        let names: Vec<String> = run_all(1, None).into_iter().map(|o| o.name).collect();
        for want in [
            "conv2d_backward",
            "maxpool_backward",
            "linear_backward",
            "relu_backward",
            "mse_gradient",
            "network_reduced_full_fd",
            "network_full_spot_checks",
        ] {
            assert!(names.iter().any(|n| n == want), "missing {want}");
        }
    }
}
