//! Small dense feedforward engine with hand-written forward/backward passes,
//! an Adam optimizer, and a finite-difference gradient checker. All arithmetic
//! is f64 and deterministic: no threading, index-ordered reductions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// [out×in]
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A plain multilayer perceptron. Consecutive layer dimensions chain and all
/// parameters stay finite; both are checked at construction.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::dims(
                    layer.weight.rows().to_string(),
                    layer.bias.len().to_string(),
                    "bias length",
                ));
            }
            if !layer.weight.is_finite() || !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("layer parameters"));
            }
            if k > 0 && layers[k - 1].weight.rows() != layer.weight.cols() {
                return Err(Error::dims(
                    layers[k - 1].weight.rows().to_string(),
                    layer.weight.cols().to_string(),
                    "layer dimension chain",
                ));
            }
        }
        let input_dim = layers[0].weight.cols();
        let output_dim = layers[layers.len() - 1].weight.rows();
        Ok(DenseNet {
            layers,
            input_dim,
            output_dim,
        })
    }

    /// MLP with ReLU hidden layers and an identity output layer. Weights are
    /// seeded uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut weight = Matrix::zeros(fan_out, fan_in);
            for v in weight.data_mut() {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * bound;
            }
            let activation = if k + 1 < dims.len() - 1 {
                Activation::Relu
            } else {
                Activation::Identity
            };
            layers.push(Layer {
                weight,
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        DenseNet::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Flatten all parameters, layer by layer, weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dims(
                self.num_params().to_string(),
                params.len().to_string(),
                "flat parameter vector",
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weight.data_mut();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }
}

/// Intermediates needed by [`net_backward`]; produced by [`net_forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one); length = #layers.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    preacts: Vec<Matrix>,
    /// Per-layer (in, out) dims, to detect caches from a different network.
    shape: Vec<(usize, usize)>,
}

pub fn net_forward(net: &DenseNet, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if batch.cols() != net.input_dim {
        return Err(Error::dims(
            net.input_dim.to_string(),
            batch.cols().to_string(),
            "forward batch width",
        ));
    }
    if !batch.is_finite() {
        return Err(Error::NonFinite("forward batch"));
    }
    let n = batch.rows();
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut preacts = Vec::with_capacity(net.layers.len());
    let mut current = batch.clone();
    for layer in &net.layers {
        let mut pre = current.mul_transpose(&layer.weight);
        for i in 0..n {
            let row = pre.row_mut(i);
            for (v, b) in row.iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let mut post = pre.clone();
        for v in post.data_mut() {
            *v = layer.activation.apply(*v);
        }
        inputs.push(current);
        preacts.push(pre);
        current = post;
    }
    let cache = ForwardCache {
        inputs,
        preacts,
        shape: net
            .layers
            .iter()
            .map(|l| (l.weight.cols(), l.weight.rows()))
            .collect(),
    };
    Ok((current, cache))
}

/// Per-layer gradients in the same layout as the layers themselves.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl ParamGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

pub fn net_backward(
    net: &DenseNet,
    cache: &ForwardCache,
    output_grad: &Matrix,
) -> Result<(ParamGrads, Matrix)> {
    let net_shape: Vec<(usize, usize)> = net
        .layers
        .iter()
        .map(|l| (l.weight.cols(), l.weight.rows()))
        .collect();
    if cache.shape != net_shape {
        return Err(Error::InvalidConfig(
            "forward cache does not match this network".into(),
        ));
    }
    let n = cache.inputs[0].rows();
    if output_grad.rows() != n || output_grad.cols() != net.output_dim {
        return Err(Error::dims(
            format!("{}x{}", n, net.output_dim),
            format!("{}x{}", output_grad.rows(), output_grad.cols()),
            "output gradient",
        ));
    }
    let mut grads: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(net.layers.len());
    let mut upstream = output_grad.clone();
    for (k, layer) in net.layers.iter().enumerate().rev() {
        let pre = &cache.preacts[k];
        let input = &cache.inputs[k];
        let out_dim = layer.weight.rows();
        let in_dim = layer.weight.cols();

        // d loss / d preact
        let mut gpre = upstream;
        for i in 0..n {
            let row = gpre.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v *= layer.activation.derivative(pre[(i, j)]);
            }
        }

        let mut wgrad = Matrix::zeros(out_dim, in_dim);
        let mut bgrad = vec![0.0; out_dim];
        for i in 0..n {
            let g = gpre.row(i);
            let x = input.row(i);
            for o in 0..out_dim {
                bgrad[o] += g[o];
                let wrow = wgrad.row_mut(o);
                for (wv, xv) in wrow.iter_mut().zip(x) {
                    *wv += g[o] * xv;
                }
            }
        }

        // d loss / d input = gpre · W
        let mut igrad = Matrix::zeros(n, in_dim);
        for i in 0..n {
            let g = gpre.row(i);
            let dst = igrad.row_mut(i);
            for o in 0..out_dim {
                let wrow = layer.weight.row(o);
                for (d, wv) in dst.iter_mut().zip(wrow) {
                    *d += g[o] * wv;
                }
            }
        }

        grads.push((wgrad, bgrad));
        upstream = igrad;
    }
    grads.reverse();
    Ok((ParamGrads { layers: grads }, upstream))
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize, learning_rate: f64) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dims(
            state.m.len().to_string(),
            format!("params {} / grads {}", params.len(), grads.len()),
            "adam shapes",
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    if !params.iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("parameters after adam step"));
    }
    Ok(())
}

/// Outcome of comparing an analytic gradient against central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error per parameter entry.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub pass: bool,
    pub step: f64,
    pub tolerance: f64,
}

/// Central finite differences of `loss` at `params`, compared entrywise with
/// `analytic`. Relative error uses denominator max(|fd|, |analytic|, 1e-3) so
/// near-zero gradients are compared absolutely at the noise floor.
pub fn finite_diff_check(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    analytic: &[f64],
    params: &[f64],
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::dims(
            params.len().to_string(),
            analytic.len().to_string(),
            "analytic gradient length",
        ));
    }
    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = loss(&work)?;
        work[i] = orig - step;
        let down = loss(&work)?;
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("loss at perturbed point"));
        }
        let fd = (up - down) / (2.0 * step);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-3);
        let rel = (fd - analytic[i]).abs() / denom;
        per_param.push(rel);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error: max_rel,
        pass: max_rel <= tolerance,
        step,
        tolerance,
    })
}
