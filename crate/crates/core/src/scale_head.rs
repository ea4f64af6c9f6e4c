//! Per-sample scale predictor s(x): an MLP over frozen unit embeddings with a
//! positivity activation, trained through the scale slot of the per-sample
//! loss. Centroids are co-trained (renormalized after every step) unless
//! frozen.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{init_centroids, CentroidMatrix, UnitEmbeddings};
use crate::error::{Error, Result};
use crate::gradnet::{adam_step, net_backward, net_forward, DenseNet, OptimizerState};
use crate::linalg::Matrix;
use crate::losses::{angular_margin_loss_free, DEFAULT_COSINE_CLAMP};

pub const HEAD_MAGIC: &[u8; 4] = b"SFH1";

/// Maps the net's scalar pre-activation a to a non-negative scale s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationFamily {
    /// s = exp(a)
    Exp,
    /// s = c * sigmoid(a), s in (0, c)
    SigmC(f64),
    /// s = lo + (hi - lo) * sigmoid(a), s in (lo, hi)
    ShiftedSigm(f64, f64),
    /// s = c * max(a, 0); can hit exactly zero
    ReluC(f64),
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl ActivationFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationFamily::Exp => Ok(()),
            ActivationFamily::SigmC(c) | ActivationFamily::ReluC(c) => {
                if c > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("activation coefficient {} must be > 0", c)))
                }
            }
            ActivationFamily::ShiftedSigm(lo, hi) => {
                if lo >= 0.0 && hi > lo {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "shifted sigmoid needs hi > lo >= 0, got ({}, {})",
                        lo, hi
                    )))
                }
            }
        }
    }

    pub fn apply(&self, a: f64) -> f64 {
        match *self {
            ActivationFamily::Exp => a.exp(),
            ActivationFamily::SigmC(c) => c * sigmoid(a),
            ActivationFamily::ShiftedSigm(lo, hi) => lo + (hi - lo) * sigmoid(a),
            ActivationFamily::ReluC(c) => c * a.max(0.0),
        }
    }

    pub fn derivative(&self, a: f64) -> f64 {
        match *self {
            ActivationFamily::Exp => a.exp(),
            ActivationFamily::SigmC(c) => {
                let s = sigmoid(a);
                c * s * (1.0 - s)
            }
            ActivationFamily::ShiftedSigm(lo, hi) => {
                let s = sigmoid(a);
                (hi - lo) * s * (1.0 - s)
            }
            ActivationFamily::ReluC(c) => {
                if a > 0.0 {
                    c
                } else {
                    0.0
                }
            }
        }
    }

    /// Parse "exp", "sigm:<c>", "shifted_sigm:<lo>:<hi>", "relu:<c>".
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("unknown activation family \"{}\"", s));
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let fam = match parts.as_slice() {
            ["exp"] => ActivationFamily::Exp,
            ["sigm", c] => ActivationFamily::SigmC(num(c)?),
            ["shifted_sigm", lo, hi] => ActivationFamily::ShiftedSigm(num(lo)?, num(hi)?),
            ["relu", c] => ActivationFamily::ReluC(num(c)?),
            _ => return Err(bad()),
        };
        fam.validate()?;
        Ok(fam)
    }
}

impl std::fmt::Display for ActivationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            ActivationFamily::Exp => write!(f, "exp"),
            ActivationFamily::SigmC(c) => write!(f, "sigm:{}", c),
            ActivationFamily::ShiftedSigm(lo, hi) => write!(f, "shifted_sigm:{}:{}", lo, hi),
            ActivationFamily::ReluC(c) => write!(f, "relu:{}", c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleHeadConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: ActivationFamily,
}

impl Default for ScaleHeadConfig {
    /// Two hidden layers and 64*sigmoid, the most stable combination.
    fn default() -> Self {
        ScaleHeadConfig {
            hidden_layers: 2,
            hidden_width: 128,
            activation: ActivationFamily::SigmC(64.0),
        }
    }
}

impl ScaleHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.hidden_layers) {
            return Err(Error::InvalidConfig(format!(
                "hidden layer count {} not in 1..=4",
                self.hidden_layers
            )));
        }
        if self.hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        self.activation.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ScaleHead {
    net: DenseNet,
    config: ScaleHeadConfig,
}

impl ScaleHead {
    pub fn init(input_dim: usize, config: ScaleHeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let hidden = vec![config.hidden_width; config.hidden_layers];
        let net = DenseNet::mlp(input_dim, &hidden, 1, seed)?;
        Ok(ScaleHead { net, config })
    }

    /// All-zero parameters; useful as a known fixed point (a(x) = 0).
    pub fn zeroed(input_dim: usize, config: ScaleHeadConfig) -> Result<Self> {
        let mut head = ScaleHead::init(input_dim, config, 0)?;
        let zeros = vec![0.0; head.net.num_params()];
        head.net.set_params_flat(&zeros)?;
        Ok(head)
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn config(&self) -> &ScaleHeadConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Scalar pre-activations a(x) for a batch.
    pub fn pre_activations(&self, batch: &Matrix) -> Result<Vec<f64>> {
        let (out, _) = net_forward(&self.net, batch)?;
        Ok(out.data().to_vec())
    }
}

pub fn head_forward(head: &ScaleHead, unit_embeddings: &Matrix) -> Result<Vec<f64>> {
    let pre = head.pre_activations(unit_embeddings)?;
    Ok(pre.iter().map(|&a| head.config.activation.apply(a)).collect())
}

/// Scales plus a confidence ranking (descending scale, ties by index).
#[derive(Debug, Clone)]
pub struct ScalePrediction {
    pub scales: Vec<f64>,
    /// Permutation: ranking[0] is the most confident sample index.
    pub ranking: Vec<usize>,
}

pub fn predict_scales(head: &ScaleHead, unit_embeddings: &Matrix) -> Result<ScalePrediction> {
    let scales = head_forward(head, unit_embeddings)?;
    let ranking = rank_descending(&scales);
    Ok(ScalePrediction { scales, ranking })
}

pub(crate) fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub freeze_centroids: bool,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            freeze_centroids: false,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean loss per epoch; empty for zero epochs.
    pub epoch_losses: Vec<f64>,
    pub head: ScaleHead,
    pub centroids: CentroidMatrix,
}

/// Scale floor fed to the loss so ReLU-family heads (which emit exact zeros)
/// stay inside the loss domain; the activation derivative is zero there, so
/// gradients are unaffected.
const SCALE_FLOOR: f64 = 1e-12;

pub fn train_head(
    unit: &UnitEmbeddings,
    head_config: ScaleHeadConfig,
    margin: f64,
    train_config: &TrainConfig,
) -> Result<TrainReport> {
    head_config.validate()?;
    train_config.validate()?;
    let n = unit.len();
    let d = unit.dim();
    let mut head = ScaleHead::init(d, head_config, train_config.seed)?;
    let mut centroids = init_centroids(unit)?;
    let num_classes = centroids.num_classes();

    let mut head_params = head.net.params_flat();
    let mut head_opt = OptimizerState::new(head_params.len(), train_config.learning_rate)?;
    let mut cent_opt = OptimizerState::new(num_classes * d, train_config.learning_rate)?;

    let mut epoch_losses = Vec::with_capacity(train_config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..train_config.epochs {
        if train_config.shuffle {
            let mut rng =
                ChaCha8Rng::seed_from_u64(train_config.seed.wrapping_add(1 + epoch as u64));
            // Fisher-Yates over a fresh index vector each epoch
            order = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
        }
        let mut total = 0.0;
        for chunk in order.chunks(train_config.batch_size) {
            let mut batch = Matrix::zeros(chunk.len(), d);
            let mut labels = Vec::with_capacity(chunk.len());
            for (row, &idx) in chunk.iter().enumerate() {
                batch.row_mut(row).copy_from_slice(unit.unit_vectors().row(idx));
                labels.push(unit.labels()[idx]);
            }
            let (pre, cache) = net_forward(&head.net, &batch)?;
            let scales: Vec<f64> = pre
                .data()
                .iter()
                .map(|&a| head.config.activation.apply(a).max(SCALE_FLOOR))
                .collect();
            let loss_res = angular_margin_loss_free(
                &batch,
                centroids.matrix(),
                &labels,
                &scales,
                margin,
                DEFAULT_COSINE_CLAMP,
            )?;
            if !loss_res.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss_res.loss * chunk.len() as f64;

            // chain d(loss)/d(s) through the positivity activation
            let grad_scales = loss_res.grad_scales.as_ref().expect("per-sample mode");
            let mut out_grad = Matrix::zeros(chunk.len(), 1);
            for i in 0..chunk.len() {
                out_grad[(i, 0)] =
                    grad_scales[i] * head.config.activation.derivative(pre[(i, 0)]);
            }
            let (param_grads, _) = net_backward(&head.net, &cache, &out_grad)?;
            adam_step(&mut head_params, &param_grads.flat(), &mut head_opt)?;
            head.net.set_params_flat(&head_params)?;

            if !train_config.freeze_centroids {
                let mut flat: Vec<f64> = centroids.matrix().data().to_vec();
                adam_step(&mut flat, loss_res.grad_centroids.data(), &mut cent_opt)?;
                centroids.update_renormalized(|m| m.data_mut().copy_from_slice(&flat))?;
            }
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses,
        head,
        centroids,
    })
}

fn activation_tag(fam: ActivationFamily) -> (u8, f64, f64) {
    match fam {
        ActivationFamily::Exp => (0, 0.0, 0.0),
        ActivationFamily::SigmC(c) => (1, c, 0.0),
        ActivationFamily::ShiftedSigm(lo, hi) => (2, lo, hi),
        ActivationFamily::ReluC(c) => (3, c, 0.0),
    }
}

/// Head checkpoint: magic "SFH1", config block, parameters as f64 LE in layer
/// order. Round trips are bit-exact.
pub fn write_head(path: &Path, head: &ScaleHead) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(HEAD_MAGIC)?;
    w.write_all(&(head.input_dim() as u32).to_le_bytes())?;
    w.write_all(&(head.config.hidden_layers as u32).to_le_bytes())?;
    w.write_all(&(head.config.hidden_width as u32).to_le_bytes())?;
    let (tag, p0, p1) = activation_tag(head.config.activation);
    w.write_all(&[tag])?;
    w.write_all(&p0.to_le_bytes())?;
    w.write_all(&p1.to_le_bytes())?;
    let params = head.net.params_flat();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_head(path: &Path) -> Result<ScaleHead> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != HEAD_MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {:?} (expected \"SFH1\")",
            magic
        )));
    }
    let input_dim = read_u32(&mut r, "input dim")? as usize;
    let hidden_layers = read_u32(&mut r, "hidden layer count")? as usize;
    let hidden_width = read_u32(&mut r, "hidden width")? as usize;
    let mut tag = [0u8; 1];
    read_exact(&mut r, &mut tag, "activation tag")?;
    let p0 = read_f64(&mut r, "activation parameter 0")?;
    let p1 = read_f64(&mut r, "activation parameter 1")?;
    let activation = match tag[0] {
        0 => ActivationFamily::Exp,
        1 => ActivationFamily::SigmC(p0),
        2 => ActivationFamily::ShiftedSigm(p0, p1),
        3 => ActivationFamily::ReluC(p0),
        t => return Err(Error::Format(format!("unknown activation tag {}", t))),
    };
    let config = ScaleHeadConfig {
        hidden_layers,
        hidden_width,
        activation,
    };
    let mut head = ScaleHead::init(input_dim, config, 0)?;
    let count = read_u64(&mut r, "parameter count")? as usize;
    if count != head.net.num_params() {
        return Err(Error::Format(format!(
            "parameter count {} does not match architecture ({} expected)",
            count,
            head.net.num_params()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(read_f64(&mut r, "parameter")?);
    }
    head.net.set_params_flat(&params)?;
    Ok(head)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated head file while reading {}", what)))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}
