//! Small dense helpers on row-major `Vec<f64>` matrices.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

/// Haar-distributed random orthogonal `d x d` matrix (row-major), from the
/// QR decomposition of a Gaussian matrix with the sign of `R`'s diagonal
/// folded into `Q`.
pub fn random_rotation(d: usize, rng: &mut crate::Rng) -> Vec<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(q[(i, j)]);
        }
    }
    out
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// `m * v` for a row-major square matrix.
pub fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|i| m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `m^T * v` for a row-major square matrix.
pub fn matvec_t(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut out = vec![0.0; d];
    for (i, vi) in v.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += m[i * d + j] * vi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from;

    #[test]
    fn rotation_is_orthogonal() {
        for d in [1, 2, 3, 5, 10] {
            let r = random_rotation(d, &mut rng_from(d as u64, &[]));
            for i in 0..d {
                for j in 0..d {
                    let dot: f64 = (0..d).map(|k| r[k * d + i] * r[k * d + j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn transpose_inverts_rotation() {
        let r = random_rotation(4, &mut rng_from(1, &[]));
        let v = vec![1.0, -2.0, 0.5, 3.0];
        let back = matvec_t(&r, &matvec(&r, &v));
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
