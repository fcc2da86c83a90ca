//! Sparse attention over feature channels.
//!
//! A batch of extractor outputs is encoded sample-wise, summed over the
//! batch, softmax-normalized and decoded into per-channel logits `e`. The
//! channel mask is `σ(100·e)`, close to binary but differentiable, and is
//! multiplied into every feature row. The sum (not a mean) makes the
//! embedding depend on batch size, so runs fix the batch size up front.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::Matrix;
use crate::nn::{
    sigmoid, softmax_backward, softmax_rows, Activation, DenseLayer, DenseNet, NamedTensor,
    ParamSnapshot, Parameters, SgdConfig, Trace,
};
use crate::{Error, Result};

pub const MASK_SHARPNESS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainEmbedding {
    pub e: Vec<f64>,
    /// Row-order-independent digest of the batch that produced `e`.
    pub batch_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMask {
    a: Vec<f64>,
}

impl ChannelMask {
    pub fn ones(dim: usize) -> Self {
        Self { a: vec![1.0; dim] }
    }

    pub fn from_values(a: Vec<f64>) -> Self {
        Self { a }
    }

    pub fn values(&self) -> &[f64] {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Fraction of channels within `tol` of 0 or 1.
    pub fn binary_fraction(&self, tol: f64) -> f64 {
        let n = self.a.iter().filter(|&&v| (v - v.round()).abs() < tol).count();
        n as f64 / self.a.len() as f64
    }

    pub fn rounded(&self) -> Vec<u8> {
        self.a.iter().map(|&v| if v >= 0.5 { 1 } else { 0 }).collect()
    }
}

/// `a_j = σ(100·e_j)`.
pub fn build_mask(e: &DomainEmbedding) -> ChannelMask {
    ChannelMask {
        a: e.e.iter().map(|&v| sigmoid(MASK_SHARPNESS * v)).collect(),
    }
}

/// Every feature row multiplied channel-wise by the mask.
pub fn masked_features(phi_out: &Matrix, mask: &ChannelMask) -> Result<Matrix> {
    if phi_out.cols() != mask.dim() {
        return Err(Error::Shape(format!(
            "mask of dim {} on features of dim {}",
            mask.dim(),
            phi_out.cols()
        )));
    }
    phi_out.mul_row_broadcast(&mask.a)
}

/// Backward of [`masked_features`]: gradients w.r.t. the features and the mask.
pub fn masked_features_backward(
    phi_out: &Matrix,
    mask: &ChannelMask,
    grad_out: &Matrix,
) -> Result<(Matrix, Vec<f64>)> {
    if grad_out.shape() != phi_out.shape() {
        return Err(Error::Shape("masked feature gradient shape".into()));
    }
    let g_phi = grad_out.mul_row_broadcast(&mask.a)?;
    let g_mask = grad_out.hadamard(phi_out)?.sum_rows();
    Ok((g_phi, g_mask))
}

fn fingerprint(batch: &Matrix) -> String {
    let mut rows: Vec<[u8; 32]> = batch
        .iter_rows()
        .map(|r| {
            let mut h = Sha256::new();
            for v in r {
                h.update(v.to_bits().to_le_bytes());
            }
            h.finalize().into()
        })
        .collect();
    rows.sort_unstable();
    let mut h = Sha256::new();
    for r in &rows {
        h.update(r);
    }
    hex::encode(&h.finalize()[..8])
}

/// Intermediate values of one mask computation, consumed by [`SamState::backward`].
#[derive(Debug, Clone)]
pub struct SamTrace {
    enc: Trace,
    soft: Matrix,
    dec: Trace,
    mask: ChannelMask,
}

impl SamTrace {
    pub fn mask(&self) -> &ChannelMask {
        &self.mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamInit {
    /// Width of the batch code between encoder and decoder.
    pub encoder_dim: usize,
    /// Decoder weights start uniform in `±decoder_weight_scale`.
    pub decoder_weight_scale: f64,
    /// Decoder bias start value; positive values open every channel.
    pub decoder_bias: f64,
}

impl Default for SamInit {
    fn default() -> Self {
        Self {
            encoder_dim: 16,
            decoder_weight_scale: 0.0,
            decoder_bias: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamState {
    encoder: DenseNet,
    decoder: DenseNet,
    encoder_frozen: bool,
}

impl SamState {
    pub fn new(encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        if encoder.layers().len() != 1 || decoder.layers().len() != 1 {
            return Err(Error::Shape("encoder and decoder are single affine layers".into()));
        }
        if encoder.out_dim() != decoder.in_dim() || decoder.out_dim() != encoder.in_dim() {
            return Err(Error::Shape(format!(
                "encoder {}→{} and decoder {}→{} do not chain back to the feature dim",
                encoder.in_dim(),
                encoder.out_dim(),
                decoder.in_dim(),
                decoder.out_dim()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            encoder_frozen: false,
        })
    }

    pub fn random<R: Rng + ?Sized>(feature_dim: usize, init: &SamInit, rng: &mut R) -> Result<Self> {
        let encoder = DenseNet::new(vec![DenseLayer::random(
            feature_dim,
            init.encoder_dim,
            Activation::Identity,
            rng,
        )?])?;
        let s = init.decoder_weight_scale;
        let w = (0..init.encoder_dim * feature_dim)
            .map(|_| if s > 0.0 { rng.random_range(-s..s) } else { 0.0 })
            .collect();
        let decoder = DenseNet::new(vec![DenseLayer::new(
            Matrix::from_vec(init.encoder_dim, feature_dim, w)?,
            vec![init.decoder_bias; feature_dim],
            Activation::Identity,
        )?])?;
        Self::new(encoder, decoder)
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut DenseNet {
        &mut self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet {
        &mut self.encoder
    }

    pub fn encoder_frozen(&self) -> bool {
        self.encoder_frozen
    }

    /// While frozen the encoder's parameter gradients are dropped and
    /// optimizer steps leave it untouched. Gradients still pass through it
    /// to the feature extractor.
    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        self.encoder_frozen = frozen;
        if frozen {
            self.encoder.zero_grad();
        }
    }

    fn trace(&self, feats: &Matrix) -> Result<SamTrace> {
        if feats.rows() == 0 {
            return Err(Error::Input("domain embedding of an empty batch".into()));
        }
        let enc = self.encoder.forward(feats)?;
        let summed = Matrix::row_vector(&enc.output().sum_rows());
        let soft = softmax_rows(&summed);
        let dec = self.decoder.forward(&soft)?;
        let mask = ChannelMask {
            a: dec.output().row(0).iter().map(|&v| sigmoid(MASK_SHARPNESS * v)).collect(),
        };
        Ok(SamTrace {
            enc,
            soft,
            dec,
            mask,
        })
    }

    /// Decoder output `e = A_d(softmax(Σ_j A_e(x_j)))` for a batch.
    pub fn domain_embedding(&self, feats: &Matrix) -> Result<DomainEmbedding> {
        let tr = self.trace(feats)?;
        Ok(DomainEmbedding {
            e: tr.dec.output().row(0).to_vec(),
            batch_fingerprint: fingerprint(feats),
        })
    }

    /// Pre-softmax batch code `Σ_j A_e(x_j)`.
    pub fn batch_code(&self, feats: &Matrix) -> Result<Vec<f64>> {
        Ok(self.encoder.predict(feats)?.sum_rows())
    }

    pub fn mask(&self, feats: &Matrix) -> Result<ChannelMask> {
        Ok(self.trace(feats)?.mask)
    }

    pub fn mask_traced(&self, feats: &Matrix) -> Result<SamTrace> {
        self.trace(feats)
    }

    /// Backpropagates a gradient w.r.t. the mask into decoder (and, unless
    /// frozen, encoder) buffers. Returns the gradient w.r.t. the batch of
    /// features the mask was computed from.
    pub fn backward(&mut self, tr: &SamTrace, grad_mask: &[f64]) -> Result<Matrix> {
        if grad_mask.len() != tr.mask.dim() {
            return Err(Error::Shape("mask gradient length".into()));
        }
        let de: Vec<f64> = grad_mask
            .iter()
            .zip(&tr.mask.a)
            .map(|(g, a)| g * MASK_SHARPNESS * a * (1.0 - a))
            .collect();
        let ds = self.decoder.backward(&tr.dec, &Matrix::row_vector(&de))?;
        let dh = softmax_backward(&tr.soft, &ds)?;
        let rows = tr.enc.input().rows();
        let mut up = Matrix::zeros(rows, dh.cols());
        for r in 0..rows {
            up.row_mut(r).copy_from_slice(dh.row(0));
        }
        let g_in = self.encoder.backward(&tr.enc, &up)?;
        if self.encoder_frozen {
            self.encoder.zero_grad();
        }
        Ok(g_in)
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut v = self.encoder.named_tensors("sam.encoder.");
        v.extend(self.decoder.named_tensors("sam.decoder."));
        v
    }

    pub fn load_named(&mut self, snap: &ParamSnapshot) -> Result<()> {
        self.encoder.load_named("sam.encoder.", snap)?;
        self.decoder.load_named("sam.decoder.", snap)
    }
}

impl Parameters for SamState {
    fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    fn collect_params(&self, out: &mut Vec<f64>) {
        self.encoder.collect_params(out);
        self.decoder.collect_params(out);
    }

    fn collect_grads(&self, out: &mut Vec<f64>) {
        self.encoder.collect_grads(out);
        self.decoder.collect_grads(out);
    }

    fn assign_params(&mut self, src: &[f64]) -> usize {
        let n = self.encoder.assign_params(src);
        n + self.decoder.assign_params(&src[n..])
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    fn sgd_step(&mut self, cfg: &SgdConfig) {
        if self.encoder_frozen {
            self.encoder.zero_grad();
        } else {
            self.encoder.sgd_step(cfg);
        }
        self.decoder.sgd_step(cfg);
    }

    fn reset_momentum(&mut self) {
        self.encoder.reset_momentum();
        self.decoder.reset_momentum();
    }
}
