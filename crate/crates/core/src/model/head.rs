use rand::Rng;

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::FeatureSequence;

/// Guard on the L2 norm; frames with a smaller norm are divided by this instead.
pub const NORM_EPS: f64 = 1e-12;

/// Linear projection `P x D` followed by per-frame L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::DimensionMismatch(format!(
                "head bias has {} entries for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if weight.rows() == 0 || weight.rows() > weight.cols() {
            return Err(Error::Config(format!(
                "projection must not widen: {} -> {}",
                weight.cols(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let data = (0..input_dim * output_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self::new(
            Matrix::from_vec(output_dim, input_dim, data),
            vec![0.0; output_dim],
        )
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionCache {
    input: Matrix,
    pre_norm: Matrix,
    norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectedOutput {
    pub output: FeatureSequence,
    pub cache: ProjectionCache,
}

pub fn project_l2(head: &ProjectionHead, z: &FeatureSequence) -> Result<ProjectedOutput> {
    if z.dim() != head.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "head expects {}-dim frames, got {}",
            head.input_dim(),
            z.dim()
        )));
    }
    let (t_len, p) = (z.len(), head.output_dim());
    let mut pre = Matrix::zeros(t_len, p);
    let mut out = Vec::with_capacity(t_len * p);
    let mut norms = Vec::with_capacity(t_len);
    for (t, zt) in z.frames().enumerate() {
        let v = pre.row_mut(t);
        for (o, slot) in v.iter_mut().enumerate() {
            *slot = head.bias[o] + head.weight.row(o).iter().zip(zt).map(|(w, x)| w * x).sum::<f64>();
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = norm.max(NORM_EPS);
        out.extend(v.iter().map(|a| a / denom));
        norms.push(norm);
    }
    let mut output = FeatureSequence::new(out, t_len, p)?;
    if let Some(h) = z.frame_hop_s() {
        output = output.with_frame_hop(h);
    }
    Ok(ProjectedOutput {
        output,
        cache: ProjectionCache {
            input: Matrix::from_vec(t_len, z.dim(), z.as_slice().to_vec()),
            pre_norm: pre,
            norms,
        },
    })
}

/// Head gradient and `d loss / d z` from `d loss / d x`.
pub(super) fn backward(
    head: &ProjectionHead,
    cache: &ProjectionCache,
    upstream: &Matrix,
) -> Result<(LayerGrad, Matrix)> {
    if upstream.shape() != cache.pre_norm.shape() {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient {:?} vs projection output {:?}",
            upstream.shape(),
            cache.pre_norm.shape()
        )));
    }
    let (t_len, p) = cache.pre_norm.shape();
    let d = head.input_dim();
    let mut dw = Matrix::zeros(p, d);
    let mut db = vec![0.0; p];
    let mut dz = Matrix::zeros(t_len, d);
    let mut dv = vec![0.0; p];
    for t in 0..t_len {
        let (v, g, norm) = (cache.pre_norm.row(t), upstream.row(t), cache.norms[t]);
        if norm > NORM_EPS {
            // (I - x x^T) g / |v| with x = v / |v|
            let proj: f64 = v.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / norm;
            for k in 0..p {
                dv[k] = (g[k] - v[k] / norm * proj) / norm;
            }
        } else {
            for k in 0..p {
                dv[k] = g[k] / NORM_EPS;
            }
        }
        let zt = cache.input.row(t);
        let dzt = dz.row_mut(t);
        for (o, &go) in dv.iter().enumerate() {
            db[o] += go;
            for (w, &x) in dw.row_mut(o).iter_mut().zip(zt) {
                *w += go * x;
            }
            for (dzk, &w) in dzt.iter_mut().zip(head.weight.row(o)) {
                *dzk += go * w;
            }
        }
    }
    Ok((LayerGrad { weight: dw, bias: db }, dz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_head(d: usize) -> ProjectionHead {
        ProjectionHead::new(Matrix::identity(d), vec![0.0; d]).unwrap()
    }

    #[test]
    fn three_four_five() {
        let z = FeatureSequence::from_rows(&[[3.0, 4.0]]).unwrap();
        let out = project_l2(&identity_head(2), &z).unwrap().output;
        assert_eq!(out.as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn zero_frame_is_guarded() {
        let z = FeatureSequence::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let out = project_l2(&identity_head(3), &z).unwrap().output;
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_frames_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = ProjectionHead::init(10, 4, &mut rng).unwrap();
        let data: Vec<f64> = (0..70).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let z = FeatureSequence::new(data, 7, 10).unwrap();
        let out = project_l2(&head, &z).unwrap().output;
        for f in out.frames() {
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_widening_and_mismatch() {
        assert!(ProjectionHead::new(Matrix::zeros(5, 3), vec![0.0; 5]).is_err());
        assert!(ProjectionHead::new(Matrix::zeros(2, 3), vec![0.0; 3]).is_err());
        let z = FeatureSequence::from_rows(&[[1.0]]).unwrap();
        assert!(project_l2(&identity_head(2), &z).is_err());
    }
}
