//! Frame-wise twin encoder with a shared projection head.
//!
//! The learnable branch and the frozen branch start from identical weights.
//! Only the top `n_frozen..` layers of the learnable branch and the shared
//! head receive gradients; the frozen branch contributes to the head only.

mod checkpoint;
mod encoder;
mod head;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{encode, encode_layers, Activation, Encoded, EncoderCache, EncoderParams, Layer};
pub use head::{project_l2, ProjectedOutput, ProjectionCache, ProjectionHead, NORM_EPS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::softdtw::{normalized_divergence, SoftDtwConfig};
use crate::types::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Layer widths from input to output; `dims.len() - 1` layers.
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub n_frozen: usize,
    pub projection_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: vec![40, 64, 64, 64, 64],
            activation: Activation::Tanh,
            n_frozen: 2,
            projection_dim: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "model dims need at least two positive entries, got {:?}",
                self.dims
            )));
        }
        if self.n_frozen >= self.dims.len() - 1 {
            return Err(Error::Config(format!(
                "n_frozen {} leaves no learnable layer out of {}",
                self.n_frozen,
                self.dims.len() - 1
            )));
        }
        let top = *self.dims.last().unwrap();
        if self.projection_dim == 0 || self.projection_dim > top {
            return Err(Error::Config(format!(
                "projection_dim must be in 1..={top}, got {}",
                self.projection_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(weight: &Matrix) -> Self {
        Self {
            weight: Matrix::zeros(weight.rows(), weight.cols()),
            bias: vec![0.0; weight.rows()],
        }
    }

    fn add(&mut self, other: &LayerGrad) {
        self.weight.add_scaled(&other.weight, 1.0);
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.weight.scale(s);
        self.bias.iter_mut().for_each(|b| *b *= s);
    }
}

/// Parameter gradients for one encoder plus the head. `layers[l]` is `None`
/// for layers that receive no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGrad>>,
    pub head: LayerGrad,
}

impl Gradients {
    pub fn zeros(params: &EncoderParams, head: &ProjectionHead) -> Self {
        Self {
            layers: params
                .layers()
                .iter()
                .enumerate()
                .map(|(l, layer)| (l >= params.n_frozen()).then(|| LayerGrad::zeros_like(&layer.weight)))
                .collect(),
            head: LayerGrad::zeros_like(&head.weight),
        }
    }

    /// Adds `other` in place. Layers that are `None` in `self` stay `None`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.add(b);
            }
        }
        self.head.add(&other.head);
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().flatten().for_each(|g| g.scale(s));
        self.head.scale(s);
    }

    /// Flat views in the order used by [`TwinEncoder::learnable_tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.push(g.weight.as_slice());
            out.push(g.bias.as_slice());
        }
        out.push(self.head.weight.as_slice());
        out.push(self.head.bias.as_slice());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Forward state of one branch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BranchForward {
    pub encoded: Encoded,
    pub projected: ProjectedOutput,
}

impl BranchForward {
    pub fn representation(&self) -> &FeatureSequence {
        &self.encoded.output
    }

    pub fn projection(&self) -> &FeatureSequence {
        &self.projected.output
    }
}

pub fn forward_branch(
    params: &EncoderParams,
    head: &ProjectionHead,
    feats: &FeatureSequence,
    learnable: bool,
) -> Result<BranchForward> {
    let encoded = encode(params, feats, learnable)?;
    let projected = project_l2(head, &encoded.output)?;
    Ok(BranchForward { encoded, projected })
}

/// Reverse mode from `upstream = d loss / d X` (projected output) back to the
/// head and, when `learnable`, to the trainable encoder layers.
pub fn backward(
    params: &EncoderParams,
    head: &ProjectionHead,
    branch: &BranchForward,
    upstream: &Matrix,
    learnable: bool,
) -> Result<Gradients> {
    let (head_grad, dz) = head::backward(head, &branch.projected.cache, upstream)?;
    let layers = if learnable {
        let cache = branch
            .encoded
            .cache
            .as_ref()
            .ok_or_else(|| Error::MissingCache("encoder was run without caching".into()))?;
        encoder::backward(params, cache, dz)?
    } else {
        vec![None; params.layers().len()]
    };
    Ok(Gradients {
        layers,
        head: head_grad,
    })
}

/// Learnable encoder, frozen encoder and the shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinEncoder {
    pub learnable: EncoderParams,
    pub frozen: EncoderParams,
    pub head: ProjectionHead,
}

/// Loss and gradients for one (learnable input, frozen input) pair.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub loss: f64,
    pub grads: Gradients,
}

impl TwinEncoder {
    /// Both branches start from `encoder`.
    pub fn new(encoder: EncoderParams, head: ProjectionHead) -> Result<Self> {
        if head.input_dim() != encoder.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "head expects {} inputs, encoder produces {}",
                head.input_dim(),
                encoder.output_dim()
            )));
        }
        Ok(Self {
            frozen: encoder.clone(),
            learnable: encoder,
            head,
        })
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = EncoderParams::init(&cfg.dims, cfg.activation, cfg.n_frozen, rng)?;
        let head = ProjectionHead::init(*cfg.dims.last().unwrap(), cfg.projection_dim, rng)?;
        Self::new(encoder, head)
    }

    /// `L_norm(F(M_learnable(a)), F(M_frozen(b)))` and its gradients.
    pub fn pair_loss(
        &self,
        to_learnable: &FeatureSequence,
        to_frozen: &FeatureSequence,
        cfg: &SoftDtwConfig,
    ) -> Result<PairLoss> {
        let a = forward_branch(&self.learnable, &self.head, to_learnable, true)?;
        let b = forward_branch(&self.frozen, &self.head, to_frozen, false)?;
        let div = normalized_divergence(a.projection(), b.projection(), cfg)?;
        let mut grads = backward(&self.learnable, &self.head, &a, &div.grad_x, true)?;
        let frozen_grads = backward(&self.frozen, &self.head, &b, &div.grad_y, false)?;
        grads.head.add(&frozen_grads.head);
        Ok(PairLoss {
            loss: div.value,
            grads,
        })
    }

    /// Loss only, for finite-difference checks and evaluation.
    pub fn pair_value(
        &self,
        to_learnable: &FeatureSequence,
        to_frozen: &FeatureSequence,
        cfg: &SoftDtwConfig,
    ) -> Result<f64> {
        let a = forward_branch(&self.learnable, &self.head, to_learnable, false)?;
        let b = forward_branch(&self.frozen, &self.head, to_frozen, false)?;
        Ok(normalized_divergence(a.projection(), b.projection(), cfg)?.value)
    }

    /// Mutable flat views of every trainable tensor: for each learnable layer
    /// its weight then bias, then the head weight and bias.
    pub fn learnable_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let n_frozen = self.learnable.n_frozen();
        let mut out = Vec::new();
        for layer in self.learnable.layers_mut().iter_mut().skip(n_frozen) {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.head.weight.as_mut_slice());
        out.push(self.head.bias.as_mut_slice());
        out
    }

    /// Hash of everything that must never change during training: the whole
    /// frozen branch and the frozen bottom of the learnable branch.
    pub fn frozen_fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.frozen.fingerprint());
        h.update(self.learnable.frozen_fingerprint());
        h.finalize().into()
    }
}
