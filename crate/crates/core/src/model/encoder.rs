use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Affine map `W x + b` followed by an activation. `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.output_dim());
        for t in 0..input.rows() {
            let x = input.row(t);
            for (o, y) in out.row_mut(t).iter_mut().enumerate() {
                let w = self.weight.row(o);
                let pre = self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                *y = self.activation.apply(pre);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
    n_frozen: usize,
}

impl EncoderParams {
    pub fn new(layers: Vec<Layer>, n_frozen: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if n_frozen >= layers.len() {
            return Err(Error::Config(format!(
                "n_frozen {n_frozen} must be below the layer count {}",
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if l > 0 && layers[l - 1].output_dim() != layer.input_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} expects {} inputs but layer {} produces {}",
                    layer.input_dim(),
                    l - 1,
                    layers[l - 1].output_dim()
                )));
            }
        }
        Ok(Self { layers, n_frozen })
    }

    /// Fan-in uniform weights in `[-1/sqrt(in), 1/sqrt(in)]`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        n_frozen: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "encoder needs at least input and output widths".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let bound = 1.0 / (d_in as f64).sqrt();
                let data = (0..d_in * d_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                Layer {
                    weight: Matrix::from_vec(d_out, d_in, data),
                    bias: vec![0.0; d_out],
                    activation,
                }
            })
            .collect();
        Self::new(layers, n_frozen)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_frozen(&self) -> usize {
        self.n_frozen
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    fn hash_layers(&self, count: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((count as u64).to_le_bytes());
        for layer in &self.layers[..count] {
            h.update((layer.weight.rows() as u64).to_le_bytes());
            h.update((layer.weight.cols() as u64).to_le_bytes());
            h.update([layer.activation.tag()]);
            for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// SHA-256 over every layer's shape, activation and exact bit pattern.
    pub fn fingerprint(&self) -> [u8; 32] {
        self.hash_layers(self.layers.len())
    }

    /// Same as [`fingerprint`](Self::fingerprint) restricted to the frozen bottom layers.
    pub fn frozen_fingerprint(&self) -> [u8; 32] {
        self.hash_layers(self.n_frozen)
    }
}

/// Per-layer activations: `activations[0]` is the input and
/// `activations[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub activations: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub output: FeatureSequence,
    pub cache: Option<EncoderCache>,
}

fn to_matrix(feats: &FeatureSequence) -> Matrix {
    Matrix::from_vec(feats.len(), feats.dim(), feats.as_slice().to_vec())
}

fn to_sequence(m: Matrix, hop: Option<f64>) -> Result<FeatureSequence> {
    let (rows, cols) = m.shape();
    let seq = FeatureSequence::new(m.into_vec(), rows, cols)?;
    Ok(match hop {
        Some(h) => seq.with_frame_hop(h),
        None => seq,
    })
}

fn check_input(params: &EncoderParams, feats: &FeatureSequence) -> Result<()> {
    if feats.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "encoder expects {}-dim frames, got {}",
            params.input_dim(),
            feats.dim()
        )));
    }
    Ok(())
}

/// Applies every layer frame by frame. The output does not depend on
/// `learnable`; it only decides whether activations are cached for backprop.
pub fn encode(params: &EncoderParams, feats: &FeatureSequence, learnable: bool) -> Result<Encoded> {
    check_input(params, feats)?;
    let mut current = to_matrix(feats);
    let mut activations = Vec::new();
    for layer in &params.layers {
        let next = layer.forward(&current);
        if learnable {
            activations.push(current);
        }
        current = next;
    }
    let cache = learnable.then(|| {
        activations.push(current.clone());
        EncoderCache { activations }
    });
    Ok(Encoded {
        output: to_sequence(current, feats.frame_hop_s())?,
        cache,
    })
}

/// Output of every layer, bottom to top.
pub fn encode_layers(params: &EncoderParams, feats: &FeatureSequence) -> Result<Vec<FeatureSequence>> {
    check_input(params, feats)?;
    let mut current = to_matrix(feats);
    let mut outputs = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        current = layer.forward(&current);
        outputs.push(to_sequence(current.clone(), feats.frame_hop_s())?);
    }
    Ok(outputs)
}

/// Gradients of the trainable layers given `d loss / d output`.
pub(super) fn backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    upstream: Matrix,
) -> Result<Vec<Option<LayerGrad>>> {
    let n_layers = params.layers.len();
    if cache.activations.len() != n_layers + 1 {
        return Err(Error::MissingCache(format!(
            "expected {} cached activations, found {}",
            n_layers + 1,
            cache.activations.len()
        )));
    }
    let mut grads = vec![None; n_layers];
    let mut g = upstream;
    for l in (params.n_frozen..n_layers).rev() {
        let layer = &params.layers[l];
        let (input, output) = (&cache.activations[l], &cache.activations[l + 1]);
        if g.shape() != output.shape() {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient {:?} vs layer {l} output {:?}",
                g.shape(),
                output.shape()
            )));
        }
        // d loss / d pre-activation
        for (gv, &y) in g.as_mut_slice().iter_mut().zip(output.as_slice()) {
            *gv *= layer.activation.derivative_from_output(y);
        }
        let mut dw = Matrix::zeros(layer.output_dim(), layer.input_dim());
        let mut db = vec![0.0; layer.output_dim()];
        for t in 0..g.rows() {
            let (gt, xt) = (g.row(t), input.row(t));
            for (o, &go) in gt.iter().enumerate() {
                db[o] += go;
                for (w, &x) in dw.row_mut(o).iter_mut().zip(xt) {
                    *w += go * x;
                }
            }
        }
        if l > params.n_frozen {
            let mut below = Matrix::zeros(g.rows(), layer.input_dim());
            for t in 0..g.rows() {
                let gt = g.row(t).to_vec();
                let out = below.row_mut(t);
                for (o, &go) in gt.iter().enumerate() {
                    for (b, &w) in out.iter_mut().zip(layer.weight.row(o)) {
                        *b += go * w;
                    }
                }
            }
            g = below;
        }
        grads[l] = Some(LayerGrad { weight: dw, bias: db });
    }
    Ok(grads)
}
