//! Forward and backward kernels for every layer type the network uses:
//! 3x3 valid convolution (stride 1), 3x3 max pooling (stride 3), fully
//! connected layers, ReLU, and bilinear image resizing.
//!
//! All kernels are pure functions. Hot loops run over contiguous slices so
//! the compiler can vectorize them; reductions use fixed-width lane
//! accumulators, which pins the summation order and keeps results bitwise
//! reproducible for a given build.

use crate::tensor::{PoolIndexMap, Scalar, Tensor, TensorError};

const POOL: usize = 3;
const KSIZE: usize = 3;
const LANES: usize = 8;

/// Gradients with respect to (input, weight, bias).
pub type InputWeightBiasGrads<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

/// Dot product with a fixed 8-lane accumulation order.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); LANES];
    let mut chunks_a = a.chunks_exact(LANES);
    let mut chunks_b = b.chunks_exact(LANES);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for i in 0..LANES {
            lanes[i] = lanes[i] + ca[i] * cb[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail = tail + *x * *y;
    }
    let mut acc = tail;
    for lane in lanes {
        acc = acc + lane;
    }
    acc
}

/// out += scale * src
fn axpy<T: Scalar>(out: &mut [T], scale: T, src: &[T]) {
    debug_assert_eq!(out.len(), src.len());
    for (o, s) in out.iter_mut().zip(src) {
        *o = *o + scale * *s;
    }
}

fn sum<T: Scalar>(values: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    let mut chunks = values.chunks_exact(LANES);
    for c in &mut chunks {
        for i in 0..LANES {
            lanes[i] = lanes[i] + c[i];
        }
    }
    let mut acc = T::zero();
    for v in chunks.remainder() {
        acc = acc + *v;
    }
    for lane in lanes {
        acc = acc + lane;
    }
    acc
}

fn expect_rank3<T: Scalar>(
    op: &'static str,
    name: &str,
    t: &Tensor<T>,
) -> Result<(usize, usize, usize), TensorError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(TensorError::shape(
            op,
            format!("{name} must have rank 3, got shape {s:?}"),
        )),
    }
}

/// 3x3 valid convolution, stride 1, no padding.
///
/// `input` is `C_in x H x W`, `weight` is `C_out x C_in x 3 x 3`, `bias` is
/// `C_out`; the output is `C_out x (H-2) x (W-2)`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    const OP: &str = "conv2d_forward";
    let (c_in, h, w) = expect_rank3(OP, "input", input)?;
    let (c_out, wc_in, kh, kw) = match *weight.shape() {
        [o, c, kh, kw] => (o, c, kh, kw),
        ref s => {
            return Err(TensorError::shape(
                OP,
                format!("weight must have rank 4, got shape {s:?}"),
            ))
        }
    };
    if kh != KSIZE || kw != KSIZE {
        return Err(TensorError::shape(
            OP,
            format!("kernel must be {KSIZE}x{KSIZE}, got {kh}x{kw}"),
        ));
    }
    if wc_in != c_in {
        return Err(TensorError::shape(
            OP,
            format!(
                "weight shape {:?} expects {wc_in} input channels, input shape {:?} has {c_in}",
                weight.shape(),
                input.shape()
            ),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(TensorError::shape(
            OP,
            format!(
                "bias shape {:?} does not match {c_out} output channels of weight {:?}",
                bias.shape(),
                weight.shape()
            ),
        ));
    }
    if h < KSIZE || w < KSIZE {
        return Err(TensorError::invalid(
            OP,
            format!("input {h}x{w} is smaller than the {KSIZE}x{KSIZE} kernel"),
        ));
    }

    let (oh, ow) = (h - 2, w - 2);
    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    let out_data = out.data_mut();
    let in_data = input.data();
    let w_data = weight.data();
    for o in 0..c_out {
        let plane = &mut out_data[o * oh * ow..(o + 1) * oh * ow];
        let b = bias.data()[o];
        plane.iter_mut().for_each(|v| *v = b);
        for c in 0..c_in {
            let in_plane = &in_data[c * h * w..(c + 1) * h * w];
            let taps = &w_data[(o * c_in + c) * 9..(o * c_in + c) * 9 + 9];
            for y in 0..oh {
                let row = &mut plane[y * ow..(y + 1) * ow];
                for ky in 0..KSIZE {
                    let in_row = &in_plane[(y + ky) * w..(y + ky + 1) * w];
                    for kx in 0..KSIZE {
                        axpy(row, taps[ky * 3 + kx], &in_row[kx..kx + ow]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d_forward` with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<InputWeightBiasGrads<T>, TensorError> {
    const OP: &str = "conv2d_backward";
    let (c_in, h, w) = expect_rank3(OP, "input", input)?;
    let (c_out, wc_in) = match *weight.shape() {
        [o, c, KSIZE, KSIZE] => (o, c),
        ref s => {
            return Err(TensorError::shape(
                OP,
                format!("weight must be [C_out, C_in, 3, 3], got {s:?}"),
            ))
        }
    };
    if wc_in != c_in {
        return Err(TensorError::shape(
            OP,
            format!(
                "weight {:?} vs input {:?}: channel mismatch",
                weight.shape(),
                input.shape()
            ),
        ));
    }
    let (oh, ow) = (h - 2, w - 2);
    if grad_out.shape() != [c_out, oh, ow] {
        return Err(TensorError::shape(
            OP,
            format!(
                "grad_out shape {:?} does not match forward output [{c_out}, {oh}, {ow}]",
                grad_out.shape()
            ),
        ));
    }

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    let mut grad_bias = Tensor::zeros(&[c_out]);

    let g_data = grad_out.data();
    let in_data = input.data();
    let w_data = weight.data();
    let gi = grad_input.data_mut();
    let gw = grad_weight.data_mut();
    let gb = grad_bias.data_mut();

    for o in 0..c_out {
        let g_plane = &g_data[o * oh * ow..(o + 1) * oh * ow];
        gb[o] = sum(g_plane);
        for c in 0..c_in {
            let in_plane = &in_data[c * h * w..(c + 1) * h * w];
            let gi_plane = &mut gi[c * h * w..(c + 1) * h * w];
            let taps = &w_data[(o * c_in + c) * 9..(o * c_in + c) * 9 + 9];
            let gtaps = &mut gw[(o * c_in + c) * 9..(o * c_in + c) * 9 + 9];
            for y in 0..oh {
                let g_row = &g_plane[y * ow..(y + 1) * ow];
                for ky in 0..KSIZE {
                    let in_row = &in_plane[(y + ky) * w..(y + ky + 1) * w];
                    let gi_row = &mut gi_plane[(y + ky) * w..(y + ky + 1) * w];
                    for kx in 0..KSIZE {
                        gtaps[ky * 3 + kx] =
                            gtaps[ky * 3 + kx] + dot(g_row, &in_row[kx..kx + ow]);
                        axpy(&mut gi_row[kx..kx + ow], taps[ky * 3 + kx], g_row);
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

/// 3x3 max pooling with stride 3. Trailing rows/columns that do not fill a
/// window are dropped. Ties resolve to the lowest flat index.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
) -> Result<(Tensor<T>, PoolIndexMap), TensorError> {
    const OP: &str = "maxpool_forward";
    let (c, h, w) = expect_rank3(OP, "input", input)?;
    if h < POOL || w < POOL {
        return Err(TensorError::invalid(
            OP,
            format!("input {h}x{w} is smaller than the {POOL}x{POOL} window"),
        ));
    }
    let (oh, ow) = (h / POOL, w / POOL);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut indices = vec![0usize; c * oh * ow];
    let in_data = input.data();
    let out_data = out.data_mut();
    for ch in 0..c {
        let plane_base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = in_data[plane_base + (y * POOL) * w + x * POOL];
                let mut best_idx = plane_base + (y * POOL) * w + x * POOL;
                for ky in 0..POOL {
                    let row_base = plane_base + (y * POOL + ky) * w + x * POOL;
                    for kx in 0..POOL {
                        let v = in_data[row_base + kx];
                        if v > best {
                            best = v;
                            best_idx = row_base + kx;
                        }
                    }
                }
                out_data[(ch * oh + y) * ow + x] = best;
                indices[(ch * oh + y) * ow + x] = best_idx;
            }
        }
    }
    Ok((out, PoolIndexMap::new(vec![c, oh, ow], indices)))
}

/// Routes `grad_out` back to the argmax positions recorded by the matching
/// forward call; every other input position receives zero.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    index_map: &PoolIndexMap,
    input_shape: &[usize],
) -> Result<Tensor<T>, TensorError> {
    const OP: &str = "maxpool_backward";
    if grad_out.shape() != index_map.shape() {
        return Err(TensorError::shape(
            OP,
            format!(
                "grad_out shape {:?} does not match index map shape {:?}",
                grad_out.shape(),
                index_map.shape()
            ),
        ));
    }
    let mut grad_input = Tensor::zeros(input_shape);
    let len = grad_input.len();
    let gi = grad_input.data_mut();
    for (&idx, &g) in index_map.indices().iter().zip(grad_out.data()) {
        if idx >= len {
            return Err(TensorError::CorruptIndexMap { index: idx, len });
        }
        gi[idx] = gi[idx] + g;
    }
    Ok(grad_input)
}

/// Fully connected layer: `out = weight . input + bias` with `weight` of
/// shape `M x N`.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    const OP: &str = "linear_forward";
    let (m, n) = match *weight.shape() {
        [m, n] => (m, n),
        ref s => {
            return Err(TensorError::shape(
                OP,
                format!("weight must have rank 2, got shape {s:?}"),
            ))
        }
    };
    if input.shape() != [n] {
        return Err(TensorError::shape(
            OP,
            format!(
                "input shape {:?} does not match weight {:?} (wants [{n}])",
                input.shape(),
                weight.shape()
            ),
        ));
    }
    if bias.shape() != [m] {
        return Err(TensorError::shape(
            OP,
            format!(
                "bias shape {:?} does not match weight {:?} (wants [{m}])",
                bias.shape(),
                weight.shape()
            ),
        ));
    }
    let mut out = Tensor::zeros(&[m]);
    let out_data = out.data_mut();
    let w = weight.data();
    for row in 0..m {
        out_data[row] = dot(&w[row * n..(row + 1) * n], input.data()) + bias.data()[row];
    }
    Ok(out)
}

/// Gradients of `linear_forward`:
/// `grad_weight[m][n] = grad_out[m] * input[n]`, `grad_input = weight^T .
/// grad_out`, `grad_bias = grad_out`.
pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<InputWeightBiasGrads<T>, TensorError> {
    const OP: &str = "linear_backward";
    let (m, n) = match *weight.shape() {
        [m, n] => (m, n),
        ref s => {
            return Err(TensorError::shape(
                OP,
                format!("weight must have rank 2, got shape {s:?}"),
            ))
        }
    };
    if input.shape() != [n] || grad_out.shape() != [m] {
        return Err(TensorError::shape(
            OP,
            format!(
                "grad_out {:?} / input {:?} do not match weight {:?}",
                grad_out.shape(),
                input.shape(),
                weight.shape()
            ),
        ));
    }
    let mut grad_input = Tensor::zeros(&[n]);
    let mut grad_weight = Tensor::zeros(&[m, n]);
    let w = weight.data();
    let gw = grad_weight.data_mut();
    for row in 0..m {
        let g = grad_out.data()[row];
        axpy(grad_input.data_mut(), g, &w[row * n..(row + 1) * n]);
        let gw_row = &mut gw[row * n..(row + 1) * n];
        for (dst, src) in gw_row.iter_mut().zip(input.data()) {
            *dst = g * *src;
        }
    }
    Ok((grad_input, grad_weight, grad_out.clone()))
}

/// Elementwise max(0, x).
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Gradient mask of ReLU: passes gradient where the forward input was > 0.
pub fn relu_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    if grad_out.shape() != input.shape() {
        return Err(TensorError::shape(
            "relu_backward",
            format!(
                "grad_out shape {:?} does not match input shape {:?}",
                grad_out.shape(),
                input.shape()
            ),
        ));
    }
    let mut out = grad_out.clone();
    for (g, x) in out.data_mut().iter_mut().zip(input.data()) {
        if *x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// Bilinear resize of a `C x H x W` image with corner-aligned sampling.
/// A singleton output axis samples the input's center.
pub fn bilinear_resize<T: Scalar>(
    image: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>, TensorError> {
    const OP: &str = "bilinear_resize";
    let (c, h, w) = expect_rank3(OP, "image", image)?;
    if h < 2 || w < 2 {
        return Err(TensorError::invalid(
            OP,
            format!("input {h}x{w} must be at least 2x2"),
        ));
    }
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::invalid(
            OP,
            format!("degenerate output size {out_h}x{out_w}"),
        ));
    }

    // Corner-aligned source coordinate for output index i along an axis.
    let coord = |i: usize, out_n: usize, in_n: usize| -> (usize, usize, f64) {
        let src = if out_n == 1 {
            (in_n - 1) as f64 / 2.0
        } else {
            i as f64 * (in_n - 1) as f64 / (out_n - 1) as f64
        };
        let lo = (src.floor() as usize).min(in_n - 1);
        let hi = (lo + 1).min(in_n - 1);
        (lo, hi, src - lo as f64)
    };

    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|x| coord(x, out_w, w)).collect();
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let out_data = out.data_mut();
    let in_data = image.data();
    for ch in 0..c {
        let plane = &in_data[ch * h * w..(ch + 1) * h * w];
        for y in 0..out_h {
            let (y0, y1, fy) = coord(y, out_h, h);
            let fy = T::from_f64(fy);
            let row0 = &plane[y0 * w..(y0 + 1) * w];
            let row1 = &plane[y1 * w..(y1 + 1) * w];
            let out_row = &mut out_data[(ch * out_h + y) * out_w..(ch * out_h + y + 1) * out_w];
            for (dst, &(x0, x1, fx)) in out_row.iter_mut().zip(&cols) {
                let fx = T::from_f64(fx);
                let top = row0[x0] + fx * (row0[x1] - row0[x0]);
                let bot = row1[x0] + fx * (row1[x1] - row1[x0]);
                *dst = top + fy * (bot - top);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let data = (0..shape.iter().product())
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Relative error with a guard for near-zero gradients.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central finite difference of `loss` w.r.t. every element of the
    /// tensor selected by `pick` out of `args`.
    fn fd_grad(
        args: &[&Tensor<f64>],
        pick: usize,
        loss: &dyn Fn(&[Tensor<f64>]) -> f64,
    ) -> Tensor<f64> {
        let h = 1e-5;
        let owned: Vec<Tensor<f64>> = args.iter().map(|t| (*t).clone()).collect();
        let mut grad = Tensor::zeros(owned[pick].shape());
        for i in 0..grad.len() {
            let mut plus = owned.clone();
            plus[pick].data_mut()[i] += h;
            let mut minus = owned.clone();
            minus[pick].data_mut()[i] -= h;
            grad.data_mut()[i] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        grad
    }

    fn assert_close_tensor(analytic: &Tensor<f64>, numeric: &Tensor<f64>, tol: f64, what: &str) {
        for (i, (a, b)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            let e = rel_err(*a, *b);
            assert!(
                e <= tol,
                "{what}[{i}]: analytic {a:.10e} vs numeric {b:.10e} (rel err {e:.3e})"
            );
        }
    }

    // conv2d

    #[test]
    fn conv_output_shape_matches_first_layer() {
        let input = Tensor::<f32>::zeros(&[3, 70, 210]);
        let weight = Tensor::<f32>::zeros(&[9, 3, 3, 3]);
        let bias = Tensor::<f32>::zeros(&[9]);
        let out = conv2d_forward(&input, &weight, &bias).unwrap();
        assert_eq!(out.shape(), &[9, 68, 208]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_single_window_of_ones_sums_to_nine() {
        let input = Tensor::<f32>::full(&[1, 3, 3], 1.0);
        let weight = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let bias = Tensor::<f32>::zeros(&[1]);
        let out = conv2d_forward(&input, &weight, &bias).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_both_shapes() {
        let input = Tensor::<f32>::zeros(&[2, 5, 5]);
        let weight = Tensor::<f32>::zeros(&[4, 3, 3, 3]);
        let bias = Tensor::<f32>::zeros(&[4]);
        let err = conv2d_forward(&input, &weight, &bias).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[4, 3, 3, 3]") && msg.contains("[2, 5, 5]"), "{msg}");
    }

    #[test]
    fn conv_backward_bias_of_unit_grad_is_window_count() {
        let input = Tensor::<f64>::full(&[1, 3, 3], 1.0);
        let weight = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let grad_out = Tensor::<f64>::full(&[1, 1, 1], 1.0);
        let (_, _, gb) = conv2d_backward(&grad_out, &input, &weight).unwrap();
        assert_eq!(gb.data(), &[1.0]);
    }

    #[test]
    fn conv_backward_zero_grad_gives_zero_everything() {
        let mut rng = Rng::new(5);
        let input = random_tensor(&mut rng, &[2, 6, 7]);
        let weight = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let grad_out = Tensor::<f64>::zeros(&[3, 4, 5]);
        let (gi, gw, gb) = conv2d_backward(&grad_out, &input, &weight).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::new(11);
        for trial in 0..50 {
            let c_in = 1 + rng.below(3);
            let c_out = 1 + rng.below(3);
            let h = 3 + rng.below(4);
            let w = 3 + rng.below(4);
            let input = random_tensor(&mut rng, &[c_in, h, w]);
            let weight = random_tensor(&mut rng, &[c_out, c_in, 3, 3]);
            let bias = random_tensor(&mut rng, &[c_out]);
            let proj = random_tensor(&mut rng, &[c_out, h - 2, w - 2]);

            // scalar loss = <proj, conv(input, weight, bias)>
            let loss = |args: &[Tensor<f64>]| -> f64 {
                let out = conv2d_forward(&args[0], &args[1], &args[2]).unwrap();
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let (gi, gw, gb) = conv2d_backward(&proj, &input, &weight).unwrap();
            let args = [&input, &weight, &bias];
            assert_close_tensor(&gi, &fd_grad(&args, 0, &loss), 1e-6, "grad_input");
            assert_close_tensor(&gw, &fd_grad(&args, 1, &loss), 1e-6, "grad_weight");
            assert_close_tensor(&gb, &fd_grad(&args, 2, &loss), 1e-6, "grad_bias");
            let _ = trial;
        }
    }

    // maxpool

    #[test]
    fn maxpool_shapes_match_both_network_layers() {
        let a = Tensor::<f32>::zeros(&[9, 68, 208]);
        let (out, _) = maxpool_forward(&a).unwrap();
        assert_eq!(out.shape(), &[9, 22, 69]);

        let b = Tensor::<f32>::zeros(&[26, 20, 67]);
        let (out, _) = maxpool_forward(&b).unwrap();
        assert_eq!(out.shape(), &[26, 6, 22]);
    }

    #[test]
    fn maxpool_ties_pick_lowest_flat_index() {
        let input = Tensor::<f32>::full(&[1, 6, 6], 2.5);
        let (out, map) = maxpool_forward(&input).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.5));
        // First cell of each window: rows 0/3, cols 0/3.
        assert_eq!(map.indices(), &[0, 3, 18, 21]);
    }

    #[test]
    fn maxpool_drops_uncovered_fringe() {
        // 5x7 -> 1x2 windows; bottom rows and rightmost column ignored.
        let mut input = Tensor::<f32>::zeros(&[1, 5, 7]);
        input.set(&[0, 4, 6], 99.0); // in the fringe
        input.set(&[0, 1, 1], 1.0);
        input.set(&[0, 2, 4], 2.0);
        let (out, _) = maxpool_forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2]);
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let c = 1 + rng.below(3);
            let h = 3 + rng.below(7);
            let w = 3 + rng.below(7);
            let input = random_tensor(&mut rng, &[c, h, w]);
            let (out, map) = maxpool_forward(&input).unwrap();
            let grad_out = random_tensor(&mut rng, out.shape());
            let gi = maxpool_backward(&grad_out, &map, input.shape()).unwrap();
            let got: f64 = gi.data().iter().sum();
            let want: f64 = grad_out.data().iter().sum();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_backward_matches_finite_differences() {
        let mut rng = Rng::new(23);
        for _ in 0..50 {
            let c = 1 + rng.below(2);
            let h = 3 + rng.below(5);
            let w = 3 + rng.below(5);
            // Margins well above the FD step keep the argmax stable.
            let mut input = random_tensor(&mut rng, &[c, h, w]);
            for (i, v) in input.data_mut().iter_mut().enumerate() {
                *v += (i % 97) as f64 * 1e-3;
            }
            let (out, map) = maxpool_forward(&input).unwrap();
            let proj = random_tensor(&mut rng, out.shape());
            let loss = |args: &[Tensor<f64>]| -> f64 {
                let (out, _) = maxpool_forward(&args[0]).unwrap();
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let gi = maxpool_backward(&proj, &map, input.shape()).unwrap();
            assert_close_tensor(&gi, &fd_grad(&[&input], 0, &loss), 1e-6, "grad_input");
        }
    }

    #[test]
    fn maxpool_backward_zero_grad_gives_zero_input_grad() {
        let mut rng = Rng::new(19);
        let input = random_tensor(&mut rng, &[2, 7, 8]);
        let (out, map) = maxpool_forward(&input).unwrap();
        let zero_grad = Tensor::<f64>::zeros(out.shape());
        let gi = maxpool_backward(&zero_grad, &map, input.shape()).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_backward_rejects_out_of_range_index() {
        let map = PoolIndexMap::new(vec![1, 1, 1], vec![500]);
        let grad_out = Tensor::<f32>::full(&[1, 1, 1], 1.0);
        let err = maxpool_backward(&grad_out, &map, &[1, 3, 3]).unwrap_err();
        assert!(matches!(err, TensorError::CorruptIndexMap { index: 500, len: 9 }));
    }

    // linear

    #[test]
    fn linear_identity_weight_passes_input_through() {
        let n = 7;
        let mut weight = Tensor::<f32>::zeros(&[n, n]);
        for i in 0..n {
            weight.set(&[i, i], 1.0);
        }
        let input = Tensor::from_vec(&[n], (0..n).map(|v| v as f32).collect()).unwrap();
        let out = linear_forward(&input, &weight, &Tensor::zeros(&[n])).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn linear_rejects_mismatched_input() {
        let weight = Tensor::<f32>::zeros(&[2, 5]);
        let input = Tensor::<f32>::zeros(&[4]);
        let bias = Tensor::<f32>::zeros(&[2]);
        let err = linear_forward(&input, &weight, &bias).unwrap_err();
        assert!(err.to_string().contains("[4]"), "{err}");
    }

    #[test]
    fn linear_backward_unit_grad_selects_bias_row() {
        let mut rng = Rng::new(31);
        let weight = random_tensor(&mut rng, &[3, 4]);
        let input = random_tensor(&mut rng, &[4]);
        let grad_out = Tensor::from_vec(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        let (_, gw, gb) = linear_backward(&grad_out, &input, &weight).unwrap();
        assert_eq!(gb.data(), grad_out.data());
        // Only row 0 of grad_weight is populated.
        assert_eq!(&gw.data()[0..4], input.data());
        assert!(gw.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = Rng::new(37);
        for _ in 0..50 {
            let n = 1 + rng.below(6);
            let m = 1 + rng.below(6);
            let input = random_tensor(&mut rng, &[n]);
            let weight = random_tensor(&mut rng, &[m, n]);
            let bias = random_tensor(&mut rng, &[m]);
            let proj = random_tensor(&mut rng, &[m]);
            let loss = |args: &[Tensor<f64>]| -> f64 {
                let out = linear_forward(&args[0], &args[1], &args[2]).unwrap();
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let (gi, gw, gb) = linear_backward(&proj, &input, &weight).unwrap();
            let args = [&input, &weight, &bias];
            assert_close_tensor(&gi, &fd_grad(&args, 0, &loss), 1e-6, "grad_input");
            assert_close_tensor(&gw, &fd_grad(&args, 1, &loss), 1e-6, "grad_weight");
            assert_close_tensor(&gb, &fd_grad(&args, 2, &loss), 1e-6, "grad_bias");
        }
    }

    #[test]
    fn linear_zero_input_zeroes_grad_weight() {
        let weight = Tensor::<f64>::full(&[2, 3], 0.5);
        let input = Tensor::<f64>::zeros(&[3]);
        let grad_out = Tensor::<f64>::full(&[2], 1.0);
        let (_, gw, _) = linear_backward(&grad_out, &input, &weight).unwrap();
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }

    // relu

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_backward_masks_non_positive() {
        let x = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let g = Tensor::from_vec(&[3], vec![5.0f32, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences_away_from_kink() {
        let mut rng = Rng::new(41);
        for _ in 0..50 {
            let n = 1 + rng.below(8);
            let mut input = random_tensor(&mut rng, &[n]);
            // keep every element away from x = 0
            for v in input.data_mut() {
                if v.abs() < 0.05 {
                    *v += 0.1 * v.signum().max(0.0) * 2.0 - 0.1;
                }
            }
            let proj = random_tensor(&mut rng, &[n]);
            let loss = |args: &[Tensor<f64>]| -> f64 {
                relu(&args[0])
                    .data()
                    .iter()
                    .zip(proj.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let gi = relu_backward(&proj, &input).unwrap();
            assert_close_tensor(&gi, &fd_grad(&[&input], 0, &loss), 1e-6, "grad");
        }
    }

    // bilinear resize

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = Tensor::<f32>::full(&[3, 4, 6], 0.37);
        let out = bilinear_resize(&img, 9, 5).unwrap();
        assert_eq!(out.shape(), &[3, 9, 5]);
        assert!(out.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn resize_identity_is_bitwise_equal() {
        let mut rng = Rng::new(43);
        let img = random_tensor(&mut rng, &[3, 5, 8]);
        let out = bilinear_resize(&img, 5, 8).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn resize_ramp_interpolates_midpoint() {
        // rows [[0,1],[0,1]] widened to 3 columns: middle column is 0.5
        let img = Tensor::from_vec(&[1, 2, 2], vec![0.0f64, 1.0, 0.0, 1.0]).unwrap();
        let mut rgb = Tensor::zeros(&[3, 2, 2]);
        for c in 0..3 {
            for i in 0..4 {
                rgb.data_mut()[c * 4 + i] = img.data()[i];
            }
        }
        let out = bilinear_resize(&rgb, 2, 3).unwrap();
        for c in 0..3 {
            assert_eq!(out.at(&[c, 0, 0]), 0.0);
            assert_eq!(out.at(&[c, 0, 1]), 0.5);
            assert_eq!(out.at(&[c, 0, 2]), 1.0);
        }
    }

    #[test]
    fn resize_respects_input_range() {
        let mut rng = Rng::new(47);
        let img = random_tensor(&mut rng, &[3, 6, 9]);
        let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = bilinear_resize(&img, 23, 31).unwrap();
        for &v in out.data() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn resize_rejects_degenerate_output() {
        let img = Tensor::<f32>::zeros(&[3, 4, 4]);
        assert!(bilinear_resize(&img, 0, 5).is_err());
        assert!(bilinear_resize(&img, 5, 0).is_err());
    }

    #[test]
    fn kernels_are_deterministic() {
        let mut rng = Rng::new(53);
        let input = random_tensor(&mut rng, &[2, 8, 9]);
        let weight = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let bias = random_tensor(&mut rng, &[3]);
        let a = conv2d_forward(&input, &weight, &bias).unwrap();
        let b = conv2d_forward(&input, &weight, &bias).unwrap();
        assert_eq!(a.data(), b.data());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn conv_and_pool_shapes_follow_the_rules(
                c_in in 1usize..4,
                c_out in 1usize..4,
                h in 3usize..14,
                w in 3usize..14,
            ) {
                let input = Tensor::<f32>::zeros(&[c_in, h, w]);
                let weight = Tensor::<f32>::zeros(&[c_out, c_in, 3, 3]);
                let bias = Tensor::<f32>::zeros(&[c_out]);
                let out = conv2d_forward(&input, &weight, &bias).unwrap();
                prop_assert_eq!(out.shape(), &[c_out, h - 2, w - 2]);

                let (pooled, map) = maxpool_forward(&input).unwrap();
                prop_assert_eq!(pooled.shape(), &[c_in, h / 3, w / 3]);
                prop_assert_eq!(map.shape(), pooled.shape());
            }

            #[test]
            fn maxpool_routing_conserves_gradient_mass(
                c in 1usize..4,
                h in 3usize..12,
                w in 3usize..12,
                seed in any::<u64>(),
            ) {
                let mut rng = crate::rng::Rng::new(seed);
                let input = random_tensor(&mut rng, &[c, h, w]);
                let (out, map) = maxpool_forward(&input).unwrap();
                let grad_out = random_tensor(&mut rng, out.shape());
                let gi = maxpool_backward(&grad_out, &map, input.shape()).unwrap();
                let routed: f64 = gi.data().iter().sum();
                let sent: f64 = grad_out.data().iter().sum();
                prop_assert!((routed - sent).abs() < 1e-9);
            }

            #[test]
            fn resize_never_leaves_the_input_range(
                out_h in 1usize..20,
                out_w in 1usize..20,
                seed in any::<u64>(),
            ) {
                let mut rng = crate::rng::Rng::new(seed);
                let h = 2 + rng.below(6);
                let w = 2 + rng.below(6);
                let img = random_tensor(&mut rng, &[3, h, w]);
                let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let out = bilinear_resize(&img, out_h, out_w).unwrap();
                for &v in out.data() {
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}
