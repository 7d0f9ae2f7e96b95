//! Adam optimizer, MSE training loss, and the MAE evaluation metric.

use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("adam_step: {0}")]
    ShapeMismatch(String),
    #[error(
        "adam_step: non-finite gradient {value} at element {element} of tensor {tensor}; step rejected"
    )]
    NonFiniteGradient {
        tensor: usize,
        element: usize,
        value: f64,
    },
    #[error("mae: empty input")]
    EmptyInput,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
}

/// Adam hyperparameters. Defaults follow the original method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(OptimError::InvalidHyper(format!("lr {} must be > 0", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(OptimError::InvalidHyper(format!("{name} {b} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(OptimError::InvalidHyper(format!("eps {} must be > 0", self.eps)));
        }
        Ok(())
    }
}

/// First/second moment accumulators plus the step counter, one moment pair
/// per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar = f32> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam step over a parameter list:
///
/// ```text
/// t <- t + 1
/// m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
///
/// Rejects the whole step, mutating nothing, if any gradient element is
/// non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<(), OptimError> {
    hyper.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(OptimError::ShapeMismatch(format!(
            "{} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(OptimError::ShapeMismatch(format!(
                "tensor {i}: param shape {:?} vs grad shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(element) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(OptimError::NonFiniteGradient {
                tensor: i,
                element,
                value: g.data()[element].as_f64(),
            });
        }
    }

    state.t += 1;
    let bc1 = T::from_f64(1.0 - hyper.beta1.powi(state.t as i32));
    let bc2 = T::from_f64(1.0 - hyper.beta2.powi(state.t as i32));
    let lr = T::from_f64(hyper.lr);
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let one_m_b1 = T::from_f64(1.0 - hyper.beta1);
    let one_m_b2 = T::from_f64(1.0 - hyper.beta2);
    let eps = T::from_f64(hyper.eps);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + one_m_b1 * gi;
            vd[i] = b2 * vd[i] + one_m_b2 * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean squared error over the two output components, with its gradient.
///
/// `loss = ((dp)^2 + (dy)^2) / 2`, `grad = (dp, dy)` where `d = pred -
/// target`; the 1/2 normalization makes the gradient exactly the
/// componentwise difference.
pub fn mse_loss<T: Scalar>(pred: &[T; 2], target: &[T; 2]) -> (T, [T; 2]) {
    let d0 = pred[0] - target[0];
    let d1 = pred[1] - target[1];
    let two = T::from_f64(2.0);
    ((d0 * d0 + d1 * d1) / two, [d0, d1])
}

/// Angular error of one prediction: mean of |pitch error| and |yaw error|,
/// in degrees.
pub fn sample_error(pred: &[f64; 2], target: &[f64; 2]) -> f64 {
    ((pred[0] - target[0]).abs() + (pred[1] - target[1]).abs()) / 2.0
}

/// Mean absolute error over a sample set: mean and population standard
/// deviation of the per-sample angular errors.
///
/// Per-sample errors are sorted before accumulation, so the result is
/// invariant under permutation of the samples.
pub fn mae(preds: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<(f64, f64), OptimError> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(OptimError::EmptyInput);
    }
    let mut errors: Vec<f64> = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| sample_error(p, t))
        .collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn scalar_tensor(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    /// Independent closed-form reimplementation of one Adam step on a
    /// scalar, used as the oracle for the tensor implementation.
    fn adam_oracle(
        p: f64,
        g: f64,
        m: f64,
        v: f64,
        t_after: u64,
        h: &AdamHyper,
    ) -> (f64, f64, f64) {
        let m_new = h.beta1 * m + (1.0 - h.beta1) * g;
        let v_new = h.beta2 * v + (1.0 - h.beta2) * g * g;
        let m_hat = m_new / (1.0 - h.beta1.powi(t_after as i32));
        let v_hat = v_new / (1.0 - h.beta2.powi(t_after as i32));
        (p - h.lr * m_hat / (v_hat.sqrt() + h.eps), m_new, v_new)
    }

    #[test]
    fn first_step_matches_hand_computed_values() {
        let mut p = scalar_tensor(1.0);
        let g = scalar_tensor(0.5);
        let hyper = AdamHyper::default();
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &hyper).unwrap();
        assert_eq!(state.step_count(), 1);
        // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
        assert!((state.m[0].data()[0] - 0.05).abs() < 1e-15);
        assert!((state.v[0].data()[0] - 0.00025).abs() < 1e-15);
        let expect = 1.0 - 1e-3 * 0.5 / (0.25f64.sqrt() + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
        assert!((p.data()[0] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn hundred_random_steps_match_closed_form_oracle() {
        let mut rng = Rng::new(101);
        for _ in 0..100 {
            let hyper = AdamHyper {
                lr: rng.uniform(1e-5, 1e-1),
                beta1: rng.uniform(0.0, 0.999),
                beta2: rng.uniform(0.5, 0.9999),
                eps: rng.uniform(1e-10, 1e-6),
            };
            let p0 = rng.uniform(-5.0, 5.0);
            let g0 = rng.uniform(-3.0, 3.0);
            let m0 = rng.uniform(-1.0, 1.0);
            let v0 = rng.uniform(0.0, 1.0);
            let t0 = rng.below(50) as u64;

            let mut p = scalar_tensor(p0);
            let g = scalar_tensor(g0);
            let mut state = AdamState {
                m: vec![scalar_tensor(m0)],
                v: vec![scalar_tensor(v0)],
                t: t0,
            };
            adam_step(&mut [&mut p], &[&g], &mut state, &hyper).unwrap();

            let (want_p, want_m, want_v) = adam_oracle(p0, g0, m0, v0, t0 + 1, &hyper);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            assert!(rel(p.data()[0], want_p) <= 1e-12, "{} vs {}", p.data()[0], want_p);
            assert!(rel(state.m[0].data()[0], want_m) <= 1e-12);
            assert!(rel(state.v[0].data()[0], want_v) <= 1e-12);
        }
    }

    #[test]
    fn zero_gradient_with_zero_state_leaves_params_unchanged() {
        let mut p = scalar_tensor(2.5);
        let g = scalar_tensor(0.0);
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).unwrap();
        assert_eq!(p.data()[0], 2.5);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut rng = Rng::new(7);
            let mut p =
                Tensor::<f32>::from_vec(&[4], (0..4).map(|i| i as f32 * 0.3).collect()).unwrap();
            let mut state = AdamState::new(&[&p]);
            for _ in 0..25 {
                let g = Tensor::from_vec(
                    &[4],
                    (0..4).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
                )
                .unwrap();
                adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).unwrap();
            }
            p.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_rejects_step_without_mutation() {
        let mut p = scalar_tensor(1.0);
        let g = scalar_tensor(f64::NAN);
        let mut state = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteGradient { tensor: 0, element: 0, .. }));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Tensor::<f64>::zeros(&[3]);
        let g = Tensor::<f64>::zeros(&[4]);
        let mut state = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).unwrap_err();
        assert!(err.to_string().contains("[3]") && err.to_string().contains("[4]"));
    }

    #[test]
    fn mse_perfect_prediction_is_zero() {
        let (loss, grad) = mse_loss(&[3.0f64, -2.0], &[3.0, -2.0]);
        assert_eq!(loss, 0.0);
        assert_eq!(grad, [0.0, 0.0]);
    }

    #[test]
    fn mse_mean_of_squares() {
        let (loss, grad) = mse_loss(&[2.0f64, 0.0], &[0.0, 0.0]);
        assert_eq!(loss, 2.0); // (4 + 0) / 2
        assert_eq!(grad, [2.0, 0.0]);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = Rng::new(117);
        for _ in 0..50 {
            let pred = [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)];
            let target = [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)];
            let (_, grad) = mse_loss(&pred, &target);
            // The loss is quadratic, so the central difference is exact up
            // to rounding; a coarse step keeps the rounding term tiny.
            let h = 1e-3;
            for i in 0..2 {
                let mut plus = pred;
                plus[i] += h;
                let mut minus = pred;
                minus[i] -= h;
                let fd = (mse_loss(&plus, &target).0 - mse_loss(&minus, &target).0) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-9, "fd {fd} vs grad {}", grad[i]);
            }
        }
    }

    #[test]
    fn mae_single_sample() {
        let (mean, std) = mae(&[[3.0, 1.0]], &[[0.0, 0.0]]).unwrap();
        assert_eq!(mean, 2.0);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn mae_two_samples() {
        // per-sample errors 1 and 3 -> mean 2, population std 1
        let preds = [[1.0, 1.0], [3.0, 3.0]];
        let targets = [[0.0, 0.0], [0.0, 0.0]];
        let (mean, std) = mae(&preds, &targets).unwrap();
        assert_eq!(mean, 2.0);
        assert_eq!(std, 1.0);
    }

    #[test]
    fn mae_rejects_empty_input() {
        assert!(matches!(mae(&[], &[]), Err(OptimError::EmptyInput)));
    }

    #[test]
    fn mae_symmetric_and_permutation_invariant() {
        let mut rng = Rng::new(131);
        let preds: Vec<[f64; 2]> = (0..20)
            .map(|_| [rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0)])
            .collect();
        let targets: Vec<[f64; 2]> = (0..20)
            .map(|_| [rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0)])
            .collect();
        let fwd = mae(&preds, &targets).unwrap();
        let swapped = mae(&targets, &preds).unwrap();
        assert_eq!(fwd, swapped);

        let mut order: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut order);
        let p2: Vec<[f64; 2]> = order.iter().map(|&i| preds[i]).collect();
        let t2: Vec<[f64; 2]> = order.iter().map(|&i| targets[i]).collect();
        assert_eq!(fwd, mae(&p2, &t2).unwrap());
    }
}
