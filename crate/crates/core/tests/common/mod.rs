#![allow(dead_code)]

use rand::Rng;
use softcorr::FeatureSequence;

/// Gradient components smaller than this in absolute difference are treated
/// as agreeing; central differences at h = 1e-5 cannot resolve below it.
pub const FD_ABS_FLOOR: f64 = 1e-8;

pub fn random_seq<R: Rng>(rng: &mut R, len: usize, dim: usize) -> FeatureSequence {
    let data = (0..len * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureSequence::new(data, len, dim).unwrap()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn grads_agree(analytic: f64, numeric: f64, rel_tol: f64) -> bool {
    (analytic - numeric).abs() <= FD_ABS_FLOOR || relative_error(analytic, numeric) <= rel_tol
}
