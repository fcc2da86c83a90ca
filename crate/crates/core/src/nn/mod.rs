//! Dense feed-forward networks with hand-written backward passes.
//!
//! A forward pass returns a [`Trace`] holding every layer input and output;
//! backward consumes a trace, so one network can be evaluated on several
//! batches inside a single loss and have all contributions summed into its
//! gradient buffers. Buffers accumulate until [`Parameters::zero_grad`].

mod gradcheck;
mod loss;
mod snapshot;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{softmax_backward, softmax_cross_entropy, softmax_rows, CrossEntropy};
pub use snapshot::{NamedTensor, ParamSnapshot, SNAPSHOT_FORMAT};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    /// Row-wise softmax, computed with max subtraction.
    Softmax,
}

impl Activation {
    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Sigmoid => z.map(sigmoid),
            Activation::Softmax => softmax_rows(z),
        }
    }

    /// Gradient w.r.t. the pre-activation given the activation output `y`.
    fn backward(self, y: &Matrix, g: &Matrix) -> Result<Matrix> {
        match self {
            Activation::Identity => Ok(g.clone()),
            Activation::Relu => y.zip_map(g, |y, g| if y > 0.0 { g } else { 0.0 }),
            Activation::Sigmoid => y.zip_map(g, |y, g| g * y * (1.0 - y)),
            Activation::Softmax => softmax_backward(y, g),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        let cfg = Self {
            learning_rate,
            momentum,
            weight_decay,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be nonnegative"));
        }
        Ok(())
    }

    /// One momentum step on a flat parameter block:
    /// `v ← momentum·v + g + weight_decay·w`, then `w ← w − lr·v`.
    pub fn apply(&self, w: &mut [f64], g: &[f64], v: &mut [f64]) {
        for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *w;
            *w -= self.learning_rate * *v;
        }
    }
}

/// Anything that owns trainable parameters with matching gradient and
/// momentum buffers. Parameter order is fixed for the lifetime of the value.
pub trait Parameters {
    fn param_count(&self) -> usize;
    fn collect_params(&self, out: &mut Vec<f64>);
    fn collect_grads(&self, out: &mut Vec<f64>);
    /// Overwrites parameters from the front of `src`; returns how many were consumed.
    fn assign_params(&mut self, src: &[f64]) -> usize;
    fn zero_grad(&mut self);
    fn sgd_step(&mut self, cfg: &SgdConfig);
    /// Clears momentum buffers.
    fn reset_momentum(&mut self);

    fn params_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.collect_params(&mut v);
        v
    }

    fn grads_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.collect_grads(&mut v);
        v
    }
}

/// Hex SHA-256 over the little-endian bit patterns of every parameter.
pub fn checksum<P: Parameters + ?Sized>(p: &P) -> String {
    checksum_values(&p.params_vec())
}

pub fn checksum_values(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weight: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    #[serde(skip)]
    grad_w: Option<Matrix>,
    #[serde(skip)]
    grad_b: Vec<f64>,
    #[serde(skip)]
    mom_w: Option<Matrix>,
    #[serde(skip)]
    mom_b: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::Shape("layer dims must be > 0".into()));
        }
        let (r, c) = weight.shape();
        Ok(Self {
            grad_w: Some(Matrix::zeros(r, c)),
            grad_b: vec![0.0; c],
            mom_w: Some(Matrix::zeros(r, c)),
            mom_b: vec![0.0; c],
            weight,
            bias,
            activation,
        })
    }

    /// Uniform Glorot init (He bound for ReLU layers), zero bias.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self::new(
            Matrix::from_vec(in_dim, out_dim, data)?,
            vec![0.0; out_dim],
            activation,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    // serde skips the buffers, so they are rebuilt lazily after deserialization
    fn ensure_buffers(&mut self) {
        let (r, c) = self.weight.shape();
        if self.grad_w.is_none() {
            self.grad_w = Some(Matrix::zeros(r, c));
            self.grad_b = vec![0.0; c];
        }
        if self.mom_w.is_none() {
            self.mom_w = Some(Matrix::zeros(r, c));
            self.mom_b = vec![0.0; c];
        }
    }
}

/// The values a forward pass leaves behind for backward.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("trace of a non-empty net")
    }

    pub fn into_output(mut self) -> Matrix {
        self.outputs.pop().expect("trace of a non-empty net")
    }

    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    #[serde(skip)]
    #[doc(hidden)]
    cached: Option<CachedTrace>,
}

// PartialEq on the net ignores the cached trace.
#[derive(Debug, Clone)]
struct CachedTrace(Trace);

impl PartialEq for CachedTrace {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            cached: None,
        })
    }

    /// Multi-layer perceptron over `dims` (`dims.len() - 1` layers). Hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn mlp<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("an MLP needs at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::random(dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Trace> {
        if batch.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input columns, batch has {}",
                self.in_dim(),
                batch.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let z = x.matmul(&layer.weight)?.add_row_broadcast(&layer.bias)?;
            let y = layer.activation.apply(&z);
            inputs.push(x);
            x = y.clone();
            outputs.push(y);
        }
        Ok(Trace { inputs, outputs })
    }

    /// Output only; nothing is retained.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(Trace::into_output)
    }

    /// Backpropagates `upstream` (gradient w.r.t. the network output) through
    /// `trace`, adds parameter gradients into the buffers and returns the
    /// gradient w.r.t. the network input.
    pub fn backward(&mut self, trace: &Trace, upstream: &Matrix) -> Result<Matrix> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "trace has {} layers, network has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        if upstream.shape() != trace.output().shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {}x{} for output {}x{}",
                upstream.rows(),
                upstream.cols(),
                trace.output().rows(),
                trace.output().cols()
            )));
        }
        let mut g = upstream.clone();
        for (l, layer) in self.layers.iter_mut().enumerate().rev() {
            if trace.inputs[l].cols() != layer.in_dim() {
                return Err(Error::State(format!("trace layer {l} does not match this network")));
            }
            layer.ensure_buffers();
            let g_pre = layer.activation.backward(&trace.outputs[l], &g)?;
            let dw = trace.inputs[l].t_matmul(&g_pre)?;
            layer.grad_w.as_mut().expect("buffers").add_assign(&dw)?;
            for (gb, s) in layer.grad_b.iter_mut().zip(g_pre.sum_rows()) {
                *gb += s;
            }
            g = g_pre.matmul_t(&layer.weight)?;
        }
        Ok(g)
    }

    /// Forward pass that keeps its trace inside the network for
    /// [`DenseNet::backward_cached`].
    pub fn forward_cached(&mut self, batch: &Matrix) -> Result<Matrix> {
        let trace = self.forward(batch)?;
        let out = trace.output().clone();
        self.cached = Some(CachedTrace(trace));
        Ok(out)
    }

    pub fn backward_cached(&mut self, upstream: &Matrix) -> Result<Matrix> {
        let trace = self
            .cached
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let res = self.backward(&trace.0, upstream);
        self.cached = Some(trace);
        res
    }

    /// Named tensors (`<prefix>layers.<i>.weight` / `.bias`) for snapshots.
    pub fn named_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("{prefix}layers.{i}.weight"),
                shape: vec![l.in_dim(), l.out_dim()],
                data: l.weight.as_slice().to_vec(),
            });
            out.push(NamedTensor {
                name: format!("{prefix}layers.{i}.bias"),
                shape: vec![l.out_dim()],
                data: l.bias.clone(),
            });
        }
        out
    }

    /// Loads parameters from a snapshot; names and shapes must match exactly.
    pub fn load_named(&mut self, prefix: &str, snap: &ParamSnapshot) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let w = snap.get(&format!("{prefix}layers.{i}.weight"), &[l.in_dim(), l.out_dim()])?;
            let b = snap.get(&format!("{prefix}layers.{i}.bias"), &[l.out_dim()])?;
            l.weight.as_mut_slice().copy_from_slice(w);
            l.bias.copy_from_slice(b);
        }
        Ok(())
    }
}

impl Parameters for DenseNet {
    fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }

    fn collect_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }

    fn collect_grads(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            match &l.grad_w {
                Some(g) => {
                    out.extend_from_slice(g.as_slice());
                    out.extend_from_slice(&l.grad_b);
                }
                None => out.extend(std::iter::repeat_n(0.0, l.in_dim() * l.out_dim() + l.out_dim())),
            }
        }
    }

    fn assign_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&src[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
        at
    }

    fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.ensure_buffers();
            l.grad_w.as_mut().expect("buffers").as_mut_slice().fill(0.0);
            l.grad_b.fill(0.0);
        }
    }

    fn sgd_step(&mut self, cfg: &SgdConfig) {
        for l in &mut self.layers {
            l.ensure_buffers();
            let gw = l.grad_w.as_ref().expect("buffers");
            cfg.apply(
                l.weight.as_mut_slice(),
                gw.as_slice(),
                l.mom_w.as_mut().expect("buffers").as_mut_slice(),
            );
            cfg.apply(&mut l.bias, &l.grad_b, &mut l.mom_b);
        }
    }

    fn reset_momentum(&mut self) {
        for l in &mut self.layers {
            l.ensure_buffers();
            l.mom_w.as_mut().expect("buffers").as_mut_slice().fill(0.0);
            l.mom_b.fill(0.0);
        }
    }
}
