//! Per-view fully connected autoencoders with hand-written backpropagation
//! and an Adam optimizer.
//!
//! Hidden layers use ReLU. The last encoder layer (the latent) and the last
//! decoder layer are linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

/// One affine layer, `y = x W + b` with `W` of shape fan_in x fan_out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        LayerParams {
            weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction"),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        for i in 0..y.rows() {
            for (o, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(y)
    }
}

/// Layer stack with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LayerParams>,
}

/// Intermediates kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Matrix>,
    /// Output of the final layer.
    pub output: Matrix,
}

impl Mlp {
    /// Builds layers along `widths` (input width first).
    pub fn xavier(widths: &[usize], rng: &mut RngStream) -> Self {
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| LayerParams::xavier(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| LayerParams::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, LayerParams::fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, LayerParams::fan_out)
    }

    /// Widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(LayerParams::fan_out));
        w
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_width() {
            return Err(Error::contract(format!(
                "input width {} does not match layer width {}",
                x.cols(),
                self.input_width()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&current)?;
            if l != last {
                y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut current, y));
        }
        Ok(ForwardCache {
            inputs,
            output: current,
        })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the forward input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Matrix,
        grads: &mut [LayerParams],
    ) -> Result<Matrix> {
        if grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols()
        {
            return Err(Error::contract("output gradient shape differs from forward output"));
        }
        let mut delta = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            grads[l].weight.add_assign(&input.t_matmul(&delta)?)?;
            for row in delta.iter_rows() {
                for (g, d) in grads[l].bias.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut upstream = delta.matmul_t(&layer.weight)?;
            if l > 0 {
                // ReLU gate: the layer input is the previous post-activation
                for (u, x) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if *x <= 0.0 {
                        *u = 0.0;
                    }
                }
            }
            delta = upstream;
        }
        Ok(delta)
    }

    fn zero_like(&self) -> Vec<LayerParams> {
        self.layers
            .iter()
            .map(|l| LayerParams::zeros(l.fan_in(), l.fan_out()))
            .collect()
    }
}

/// Encoder/decoder pair for one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewAutoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// All per-view autoencoders. Decoder widths mirror the encoder widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderStack {
    pub views: Vec<ViewAutoencoder>,
}

impl AutoencoderStack {
    /// `view_dims[v]` is the input width of view `v`; `hidden` lists the
    /// encoder layer widths ending with the shared latent width.
    pub fn init(view_dims: &[usize], hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        Self::validate_widths(view_dims, hidden)?;
        let views = view_dims
            .iter()
            .map(|&d| {
                let widths = encoder_widths(d, hidden);
                let mut rev = widths.clone();
                rev.reverse();
                let encoder = Mlp::xavier(&widths, rng);
                let decoder = Mlp::xavier(&rev, rng);
                ViewAutoencoder { encoder, decoder }
            })
            .collect();
        Ok(AutoencoderStack { views })
    }

    /// Same shapes as [`AutoencoderStack::init`], every parameter zero.
    pub fn zeros(view_dims: &[usize], hidden: &[usize]) -> Result<Self> {
        Self::validate_widths(view_dims, hidden)?;
        let views = view_dims
            .iter()
            .map(|&d| {
                let widths = encoder_widths(d, hidden);
                let mut rev = widths.clone();
                rev.reverse();
                ViewAutoencoder {
                    encoder: Mlp::zeros(&widths),
                    decoder: Mlp::zeros(&rev),
                }
            })
            .collect();
        Ok(AutoencoderStack { views })
    }

    fn validate_widths(view_dims: &[usize], hidden: &[usize]) -> Result<()> {
        if view_dims.is_empty() || hidden.is_empty() {
            return Err(Error::config("need at least one view and one encoder layer"));
        }
        if view_dims.iter().chain(hidden).any(|&w| w == 0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.views[0].encoder.output_width()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.encoder.input_width()).collect()
    }

    fn view(&self, v: usize) -> Result<&ViewAutoencoder> {
        self.views
            .get(v)
            .ok_or_else(|| Error::contract(format!("view index {v} out of range")))
    }

    pub fn encode(&self, input: &Matrix, v: usize) -> Result<Matrix> {
        self.view(v)?.encoder.forward(input)
    }

    pub fn decode(&self, latent: &Matrix, v: usize) -> Result<Matrix> {
        self.view(v)?.decoder.forward(latent)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in a fixed order (view, encoder then decoder, layer,
    /// weight then bias).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for view in &self.views {
            for layer in view.encoder.layers.iter().chain(&view.decoder.layers) {
                out.push(layer.weight.as_slice());
                out.push(layer.bias.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for view in &mut self.views {
            for layer in view
                .encoder
                .layers
                .iter_mut()
                .chain(view.decoder.layers.iter_mut())
            {
                out.push(layer.weight.as_mut_slice());
                out.push(layer.bias.as_mut_slice());
            }
        }
        out
    }
}

fn encoder_widths(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w
}

/// Gradients shaped like an [`AutoencoderStack`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub views: Vec<ViewGradients>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewGradients {
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
}

impl GradientSet {
    pub fn zeros_like(stack: &AutoencoderStack) -> Self {
        GradientSet {
            views: stack
                .views
                .iter()
                .map(|v| ViewGradients {
                    encoder: v.encoder.zero_like(),
                    decoder: v.decoder.zero_like(),
                })
                .collect(),
        }
    }

    /// Same order as [`AutoencoderStack::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for view in &self.views {
            for layer in view.encoder.iter().chain(&view.decoder) {
                out.push(layer.weight.as_slice());
                out.push(layer.bias.as_slice());
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Adam moments and step counter for every parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(stack: &AutoencoderStack, learning_rate: f64) -> Self {
        let shapes: Vec<usize> = stack.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected Adam update of `stack` in place.
    pub fn step(&mut self, stack: &mut AutoencoderStack, grads: &GradientSet) -> Result<()> {
        let grad_tensors = grads.tensors();
        let mut params = stack.tensors_mut();
        if grad_tensors.len() != params.len()
            || params.len() != self.first_moment.len()
            || params
                .iter()
                .zip(&grad_tensors)
                .zip(&self.first_moment)
                .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::contract("gradient/optimizer shapes differ from parameters"));
        }
        self.step += 1;
        let t = self.step as f64;
        let correction1 = 1.0 - self.beta1.powf(t);
        let correction2 = 1.0 - self.beta2.powf(t);
        for (k, param) in params.iter_mut().enumerate() {
            let grad = grad_tensors[k];
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_layer_identity(width: usize) -> AutoencoderStack {
        let layer = LayerParams {
            weight: Matrix::identity(width),
            bias: vec![0.0; width],
        };
        AutoencoderStack {
            views: vec![ViewAutoencoder {
                encoder: Mlp {
                    layers: vec![layer.clone()],
                },
                decoder: Mlp {
                    layers: vec![layer],
                },
            }],
        }
    }

    /// Forward pass written out loop by loop, independent of `Mlp::forward`.
    fn reference_forward(mlp: &Mlp, x: &Matrix) -> Matrix {
        let mut rows: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
        for (l, layer) in mlp.layers.iter().enumerate() {
            rows = rows
                .iter()
                .map(|r| {
                    (0..layer.fan_out())
                        .map(|j| {
                            let mut acc = layer.bias[j];
                            for (i, xi) in r.iter().enumerate() {
                                acc += xi * layer.weight.get(i, j);
                            }
                            if l + 1 < mlp.layers.len() {
                                acc.max(0.0)
                            } else {
                                acc
                            }
                        })
                        .collect()
                })
                .collect();
        }
        Matrix::from_rows(&rows).unwrap()
    }

    fn random_input(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_network_encodes_and_decodes_to_zero() {
        let stack = AutoencoderStack::zeros(&[3], &[4, 2]).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 1.0, 1.0]]).unwrap();
        let z = stack.encode(&x, 0).unwrap();
        assert_eq!(z, Matrix::zeros(2, 2));
        assert_eq!(stack.decode(&z, 0).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let stack = single_layer_identity(2);
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(stack.encode(&x, 0).unwrap(), x);
        assert_eq!(stack.decode(&x, 0).unwrap(), x);
    }

    #[test]
    fn forward_matches_reference_trace() {
        let mut rng = RngStream::new(5);
        let stack = AutoencoderStack::init(&[4], &[6, 3], &mut rng).unwrap();
        let x = random_input(&mut rng, 5, 4);
        let z = stack.encode(&x, 0).unwrap();
        let z_ref = reference_forward(&stack.views[0].encoder, &x);
        let xr = stack.decode(&z, 0).unwrap();
        let xr_ref = reference_forward(&stack.views[0].decoder, &z_ref);
        for (a, b) in z.as_slice().iter().zip(z_ref.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
        for (a, b) in xr.as_slice().iter().zip(xr_ref.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let stack = AutoencoderStack::zeros(&[3], &[2]).unwrap();
        assert!(stack.encode(&Matrix::zeros(1, 4), 0).is_err());
        assert!(stack.decode(&Matrix::zeros(1, 3), 0).is_err());
        assert!(stack.encode(&Matrix::zeros(1, 3), 1).is_err());
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let mut rng = RngStream::new(1);
        let stack = AutoencoderStack::init(&[50, 20], &[128, 32], &mut rng).unwrap();
        for view in &stack.views {
            let mut enc = view.encoder.widths();
            enc.reverse();
            assert_eq!(enc, view.decoder.widths());
        }
        assert_eq!(stack.latent_dim(), 32);
        assert_eq!(stack.input_dims(), vec![50, 20]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = AutoencoderStack::init(&[100], &[100], &mut RngStream::new(9)).unwrap();
        let b = AutoencoderStack::init(&[100], &[100], &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 200.0).sqrt();
        for view in &a.views {
            for layer in view.encoder.layers.iter().chain(&view.decoder.layers) {
                assert!(layer.weight.as_slice().iter().all(|w| w.abs() <= bound));
                assert!(layer.bias.iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn linear_model_hand_gradient() {
        // L = ½(w_d·w_e·x − x)² with w_e = 0, w_d = 1, x = 1 gives dL/dw_e = −1
        let stack = AutoencoderStack {
            views: vec![ViewAutoencoder {
                encoder: Mlp {
                    layers: vec![LayerParams::zeros(1, 1)],
                },
                decoder: Mlp {
                    layers: vec![LayerParams {
                        weight: Matrix::identity(1),
                        bias: vec![0.0],
                    }],
                },
            }],
        };
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let view = &stack.views[0];
        let enc = view.encoder.forward_cached(&x).unwrap();
        let dec = view.decoder.forward_cached(&enc.output).unwrap();
        let residual = Matrix::from_vec(1, 1, vec![dec.output.get(0, 0) - 1.0]).unwrap();
        let mut grads = GradientSet::zeros_like(&stack);
        let dz = view
            .decoder
            .backward(&dec, &residual, &mut grads.views[0].decoder)
            .unwrap();
        view.encoder
            .backward(&enc, &dz, &mut grads.views[0].encoder)
            .unwrap();
        assert_eq!(grads.views[0].encoder[0].weight.get(0, 0), -1.0);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut stack = AutoencoderStack::init(&[3], &[2], &mut RngStream::new(2)).unwrap();
        let before = stack.clone();
        let mut adam = AdamState::new(&stack, 1e-3);
        let zero = GradientSet::zeros_like(&stack);
        adam.step(&mut stack, &zero).unwrap();
        adam.step(&mut stack, &zero).unwrap();
        assert_eq!(stack, before);
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut stack = AutoencoderStack::zeros(&[1], &[1]).unwrap();
        let mut adam = AdamState::new(&stack, 1e-3);
        let mut grads = GradientSet::zeros_like(&stack);
        grads.views[0].encoder[0].weight.set(0, 0, 1.0);
        adam.step(&mut stack, &grads).unwrap();
        let w1 = stack.views[0].encoder.layers[0].weight.get(0, 0);
        // m̂ = 1, v̂ = 1, step = lr / (1 + 1e-8)
        assert_relative_eq!(w1, -1e-3 / (1.0 + 1e-8), epsilon = 1e-15);
        adam.step(&mut stack, &grads).unwrap();
        let w2 = stack.views[0].encoder.layers[0].weight.get(0, 0);
        assert!(w2 < w1);
    }

    #[test]
    fn adam_rejects_mismatched_gradients() {
        let mut stack = AutoencoderStack::zeros(&[2], &[1]).unwrap();
        let other = AutoencoderStack::zeros(&[3], &[1]).unwrap();
        let mut adam = AdamState::new(&stack, 1e-3);
        assert!(adam.step(&mut stack, &GradientSet::zeros_like(&other)).is_err());
    }
}
