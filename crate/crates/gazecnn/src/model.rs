//! The gaze regression network: two 3x3 convolution + 3x3/3 max-pool
//! stages, three fully connected layers, and late fusion of the head pose
//! into the last hidden layer.
//!
//! With the default dimensions the layer stack produces
//!
//! ```text
//! conv1   9 x 68 x 208      252 params
//! pool1   9 x 22 x 69
//! conv2  26 x 20 x 67     2,132 params
//! pool2  26 x  6 x 22
//! fc1    600           2,059,800 params
//! fc2     50 (+3 head angles -> 53 fused)  30,050 params
//! fc3      2                 108 params
//! ```
//!
//! for 2,092,342 trainable scalars in total. The 53-unit fused layer is the
//! 50-unit fc2 output concatenated with the three head-pose angles; fc3 is
//! the only layer after the fusion point, so for fixed eye input the output
//! is an affine function of the head pose.

use thiserror::Error;

use crate::kernels::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward,
};
use crate::rng::Rng;
use crate::tensor::{PoolIndexMap, Scalar, Tensor, TensorError};

/// Number of head-pose angles fused into the last hidden layer.
pub const HEAD_ANGLES: usize = 3;
/// Number of regression outputs (pitch, yaw).
pub const OUTPUTS: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("forward: eye input shape {got:?} does not match expected {want:?}")]
    BadInput { got: Vec<usize>, want: Vec<usize> },
    #[error("backward: trace does not belong to this network ({0})")]
    TraceMismatch(String),
    #[error("invalid network dimensions: {0}")]
    BadDims(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Network topology. `PAPER` is the published architecture; reduced clones
/// of the same shape family keep gradient checks affordable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetDims {
    pub in_h: usize,
    pub in_w: usize,
    pub conv1_ch: usize,
    pub conv2_ch: usize,
    pub fc1_out: usize,
    pub fc2_out: usize,
}

impl NetDims {
    pub const PAPER: NetDims = NetDims {
        in_h: 70,
        in_w: 210,
        conv1_ch: 9,
        conv2_ch: 26,
        fc1_out: 600,
        fc2_out: 50,
    };

    pub fn conv1_out(&self) -> [usize; 3] {
        [self.conv1_ch, self.in_h - 2, self.in_w - 2]
    }

    pub fn pool1_out(&self) -> [usize; 3] {
        let [c, h, w] = self.conv1_out();
        [c, h / 3, w / 3]
    }

    pub fn conv2_out(&self) -> [usize; 3] {
        let [_, h, w] = self.pool1_out();
        [self.conv2_ch, h - 2, w - 2]
    }

    pub fn pool2_out(&self) -> [usize; 3] {
        let [c, h, w] = self.conv2_out();
        [c, h / 3, w / 3]
    }

    pub fn flatten_len(&self) -> usize {
        self.pool2_out().iter().product()
    }

    pub fn fused_len(&self) -> usize {
        self.fc2_out + HEAD_ANGLES
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_h < 3 || self.in_w < 3 {
            return Err(ModelError::BadDims(format!(
                "input {}x{} smaller than one conv window",
                self.in_h, self.in_w
            )));
        }
        let [_, h1, w1] = self.pool1_out();
        if h1 < 3 || w1 < 3 {
            return Err(ModelError::BadDims(format!(
                "first pooled map {h1}x{w1} too small for the second conv"
            )));
        }
        let [_, h2, w2] = self.pool2_out();
        if h2 == 0 || w2 == 0 || self.conv1_ch == 0 || self.conv2_ch == 0 {
            return Err(ModelError::BadDims(format!(
                "second pooled map {h2}x{w2} is empty"
            )));
        }
        if self.fc1_out == 0 || self.fc2_out == 0 {
            return Err(ModelError::BadDims("zero-width fc layer".into()));
        }
        Ok(())
    }
}

/// Full parameter set plus fixed topology of the gaze network.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeNet<T: Scalar = f32> {
    dims: NetDims,
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
    pub fc3_w: Tensor<T>,
    pub fc3_b: Tensor<T>,
}

/// Gradient of every parameter tensor, shape-congruent with [`GazeNet`].
#[derive(Clone, Debug)]
pub struct NetGrads<T: Scalar = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> NetGrads<T> {
    pub fn zeros_like(net: &GazeNet<T>) -> Self {
        NetGrads {
            tensors: net.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v * factor;
            }
        }
    }
}

/// Activations cached by `forward` for use by `backward`.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Scalar = f32> {
    dims: NetDims,
    eyes: Tensor<T>,
    conv1_pre: Tensor<T>,
    pool1_out: Tensor<T>,
    pool1_map: PoolIndexMap,
    conv2_pre: Tensor<T>,
    pool2_out: Tensor<T>,
    pool2_map: PoolIndexMap,
    fc1_pre: Tensor<T>,
    fc2_in: Tensor<T>,
    fc2_pre: Tensor<T>,
    fused: Tensor<T>,
    output: [T; 2],
}

impl<T: Scalar> ForwardTrace<T> {
    /// The activation shape sequence of the layer stack, one entry per
    /// layer: conv1, pool1, conv2, pool2, fc1, fused hidden layer, output.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.conv1_pre.shape().to_vec(),
            self.pool1_out.shape().to_vec(),
            self.conv2_pre.shape().to_vec(),
            self.pool2_out.shape().to_vec(),
            self.fc1_pre.shape().to_vec(),
            self.fused.shape().to_vec(),
            vec![OUTPUTS],
        ]
    }

    pub fn output(&self) -> [T; 2] {
        self.output
    }
}

pub const PARAM_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "fc3.weight",
    "fc3.bias",
];

impl GazeNet<f32> {
    /// Build the published architecture with seeded initialization.
    pub fn build(rng: &mut Rng) -> GazeNet<f32> {
        GazeNet::build_with_dims(NetDims::PAPER, rng).expect("paper dims are valid")
    }
}

impl<T: Scalar> GazeNet<T> {
    /// Weights drawn uniformly from +-sqrt(6 / fan_in), biases zero.
    pub fn build_with_dims(dims: NetDims, rng: &mut Rng) -> Result<GazeNet<T>, ModelError> {
        dims.validate()?;
        let mut init = |shape: &[usize], fan_in: usize| -> Tensor<T> {
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..shape.iter().product())
                .map(|_| T::from_f64(rng.uniform(-bound, bound)))
                .collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        let flat = dims.flatten_len();
        let fused = dims.fused_len();
        Ok(GazeNet {
            dims,
            conv1_w: init(&[dims.conv1_ch, 3, 3, 3], 3 * 9),
            conv1_b: Tensor::zeros(&[dims.conv1_ch]),
            conv2_w: init(&[dims.conv2_ch, dims.conv1_ch, 3, 3], dims.conv1_ch * 9),
            conv2_b: Tensor::zeros(&[dims.conv2_ch]),
            fc1_w: init(&[dims.fc1_out, flat], flat),
            fc1_b: Tensor::zeros(&[dims.fc1_out]),
            fc2_w: init(&[dims.fc2_out, dims.fc1_out], dims.fc1_out),
            fc2_b: Tensor::zeros(&[dims.fc2_out]),
            fc3_w: init(&[OUTPUTS, fused], fused),
            fc3_b: Tensor::zeros(&[OUTPUTS]),
        })
    }

    /// All-zero parameters; forward output is identically (0, 0).
    pub fn zeroed(dims: NetDims) -> Result<GazeNet<T>, ModelError> {
        dims.validate()?;
        let flat = dims.flatten_len();
        let fused = dims.fused_len();
        Ok(GazeNet {
            dims,
            conv1_w: Tensor::zeros(&[dims.conv1_ch, 3, 3, 3]),
            conv1_b: Tensor::zeros(&[dims.conv1_ch]),
            conv2_w: Tensor::zeros(&[dims.conv2_ch, dims.conv1_ch, 3, 3]),
            conv2_b: Tensor::zeros(&[dims.conv2_ch]),
            fc1_w: Tensor::zeros(&[dims.fc1_out, flat]),
            fc1_b: Tensor::zeros(&[dims.fc1_out]),
            fc2_w: Tensor::zeros(&[dims.fc2_out, dims.fc1_out]),
            fc2_b: Tensor::zeros(&[dims.fc2_out]),
            fc3_w: Tensor::zeros(&[OUTPUTS, fused]),
            fc3_b: Tensor::zeros(&[OUTPUTS]),
        })
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn params(&self) -> [&Tensor<T>; 10] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.fc3_w,
            &self.fc3_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 10] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.fc3_w,
            &mut self.fc3_b,
        ]
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Parameter counts of the five parameterized layers, conv1..fc3,
    /// weights and biases combined.
    pub fn per_layer_counts(&self) -> [usize; 5] {
        [
            self.conv1_w.len() + self.conv1_b.len(),
            self.conv2_w.len() + self.conv2_b.len(),
            self.fc1_w.len() + self.fc1_b.len(),
            self.fc2_w.len() + self.fc2_b.len(),
            self.fc3_w.len() + self.fc3_b.len(),
        ]
    }

    /// Exact widening to double precision.
    pub fn to_f64(&self) -> GazeNet<f64> {
        GazeNet {
            dims: self.dims,
            conv1_w: self.conv1_w.to_f64(),
            conv1_b: self.conv1_b.to_f64(),
            conv2_w: self.conv2_w.to_f64(),
            conv2_b: self.conv2_b.to_f64(),
            fc1_w: self.fc1_w.to_f64(),
            fc1_b: self.fc1_b.to_f64(),
            fc2_w: self.fc2_w.to_f64(),
            fc2_b: self.fc2_b.to_f64(),
            fc3_w: self.fc3_w.to_f64(),
            fc3_b: self.fc3_b.to_f64(),
        }
    }

    /// Run the network on one eye tensor (`3 x in_h x in_w`, values in
    /// [0, 1]) and a head pose scaled to roughly [-1, 1]. Returns predicted
    /// (pitch, yaw) in degrees plus the trace needed by `backward`.
    pub fn forward(
        &self,
        eyes: &Tensor<T>,
        head_pose: &[T; HEAD_ANGLES],
    ) -> Result<(T, T, ForwardTrace<T>), ModelError> {
        let want = [3, self.dims.in_h, self.dims.in_w];
        if eyes.shape() != want {
            return Err(ModelError::BadInput {
                got: eyes.shape().to_vec(),
                want: want.to_vec(),
            });
        }
        let conv1_pre = conv2d_forward(eyes, &self.conv1_w, &self.conv1_b)?;
        let (pool1_out, pool1_map) = maxpool_forward(&relu(&conv1_pre))?;
        let conv2_pre = conv2d_forward(&pool1_out, &self.conv2_w, &self.conv2_b)?;
        let (pool2_out, pool2_map) = maxpool_forward(&relu(&conv2_pre))?;
        let flat = pool2_out.reshaped(&[self.dims.flatten_len()])?;
        let fc1_pre = linear_forward(&flat, &self.fc1_w, &self.fc1_b)?;
        let fc2_in = relu(&fc1_pre);
        let fc2_pre = linear_forward(&fc2_in, &self.fc2_w, &self.fc2_b)?;
        let fc2_out = relu(&fc2_pre);

        let mut fused_data = Vec::with_capacity(self.dims.fused_len());
        fused_data.extend_from_slice(fc2_out.data());
        fused_data.extend_from_slice(head_pose);
        let fused = Tensor::from_vec(&[self.dims.fused_len()], fused_data)?;

        let out = linear_forward(&fused, &self.fc3_w, &self.fc3_b)?;
        let output = [out.data()[0], out.data()[1]];
        Ok((
            output[0],
            output[1],
            ForwardTrace {
                dims: self.dims,
                eyes: eyes.clone(),
                conv1_pre,
                pool1_out,
                pool1_map,
                conv2_pre,
                pool2_out,
                pool2_map,
                fc1_pre,
                fc2_in,
                fc2_pre,
                fused,
                output,
            },
        ))
    }

    /// Gradients of a scalar loss with respect to every parameter, given
    /// the loss gradient at the two outputs. Input gradients are not
    /// exposed; inputs are data.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_output: &[T; OUTPUTS],
    ) -> Result<NetGrads<T>, ModelError> {
        if trace.dims != self.dims {
            return Err(ModelError::TraceMismatch(format!(
                "trace dims {:?} vs net dims {:?}",
                trace.dims, self.dims
            )));
        }
        let g_out = Tensor::from_vec(&[OUTPUTS], grad_output.to_vec())?;
        let (g_fused, g_fc3_w, g_fc3_b) = linear_backward(&g_out, &trace.fused, &self.fc3_w)?;

        // Split off the head-pose columns; only the fc2 part propagates.
        let g_fc2_out =
            Tensor::from_vec(&[self.dims.fc2_out], g_fused.data()[..self.dims.fc2_out].to_vec())?;
        let g_fc2_pre = relu_backward(&g_fc2_out, &trace.fc2_pre)?;
        let (g_fc2_in, g_fc2_w, g_fc2_b) = linear_backward(&g_fc2_pre, &trace.fc2_in, &self.fc2_w)?;
        let g_fc1_pre = relu_backward(&g_fc2_in, &trace.fc1_pre)?;
        let flat = trace.pool2_out.reshaped(&[self.dims.flatten_len()])?;
        let (g_flat, g_fc1_w, g_fc1_b) = linear_backward(&g_fc1_pre, &flat, &self.fc1_w)?;

        let g_pool2 = g_flat.reshaped(&self.dims.pool2_out())?;
        let g_relu2 = maxpool_backward(&g_pool2, &trace.pool2_map, &self.dims.conv2_out())?;
        let g_conv2 = relu_backward(&g_relu2, &trace.conv2_pre)?;
        let (g_pool1, g_conv2_w, g_conv2_b) =
            conv2d_backward(&g_conv2, &trace.pool1_out, &self.conv2_w)?;

        let g_relu1 = maxpool_backward(&g_pool1, &trace.pool1_map, &self.dims.conv1_out())?;
        let g_conv1 = relu_backward(&g_relu1, &trace.conv1_pre)?;
        let (_, g_conv1_w, g_conv1_b) = conv2d_backward(&g_conv1, &trace.eyes, &self.conv1_w)?;

        Ok(NetGrads {
            tensors: vec![
                g_conv1_w, g_conv1_b, g_conv2_w, g_conv2_b, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b,
                g_fc3_w, g_fc3_b,
            ],
        })
    }
}
