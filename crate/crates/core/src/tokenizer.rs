//! Turns a sample `(X, Y)` into a set of kNN tokens.
//!
//! Each column of `X` and `Y` is z-standardized, both are zero-padded to
//! `nu` columns and concatenated into an `n x 2nu` matrix `T`. Token `i` is
//! `(t_i, t_j1 - t_i, ..., t_j(k-1) - t_i)` where `j1..` are the `k - 1`
//! nearest neighbours of point `i` in standardized decision space, nearest
//! first, ties going to the smaller index.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::problem::Sample;

/// Columns whose population std is at or below this map to zeros.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenMeta {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub nu: usize,
    pub stride: usize,
    pub n_original: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    /// `n_tokens x (2 k nu)`.
    pub tokens: Array2<f64>,
    pub meta: TokenMeta,
}

impl TokenSet {
    pub fn n_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn width(&self) -> usize {
        self.tokens.ncols()
    }
}

pub fn standardize(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n });
    }
    let mut out = m.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std > STD_EPS {
            col.mapv_inplace(|v| (v - mean) / std);
        } else {
            col.fill(0.0);
        }
    }
    Ok(out)
}

pub fn pad_and_concat(xs: ArrayView2<f64>, ys: ArrayView2<f64>, nu: usize) -> Result<Array2<f64>> {
    let (n, d, m) = (xs.nrows(), xs.ncols(), ys.ncols());
    if ys.nrows() != n {
        return Err(Error::Shape(format!("X has {n} rows, Y has {}", ys.nrows())));
    }
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and m >= 1, got d={d}, m={m}"
        )));
    }
    if d + m > nu {
        return Err(Error::DimensionalViolation { d, m, nu });
    }
    let mut t = Array2::zeros((n, 2 * nu));
    t.slice_mut(s![.., ..d]).assign(&xs);
    t.slice_mut(s![.., nu..nu + m]).assign(&ys);
    Ok(t)
}

/// Indices of the `k - 1` nearest neighbours of every row, measured over
/// the first `nu` columns.
pub fn neighbours(t: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = t.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { need: k, got: n });
    }
    let nu = t.ncols() / 2;
    let dec = t.slice(s![.., ..nu]);
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let xi = dec.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let dist: f64 = xi
                .iter()
                .zip(dec.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cand.push((dist, j));
        }
        if k > 1 {
            cand.select_nth_unstable_by(k - 2, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let mut nn: Vec<(f64, usize)> = cand[..k - 1].to_vec();
        nn.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(nn.into_iter().map(|p| p.1).collect());
    }
    Ok(out)
}

/// Builds the `n x 2k nu` token matrix from a standardized, padded `T`.
pub fn knn_embed(t: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    let n = t.nrows();
    let w = t.ncols();
    let nn = neighbours(t, k)?;
    let mut tokens = Array2::zeros((n, k * w));
    for (i, nbrs) in nn.iter().enumerate() {
        let ti = t.row(i);
        tokens.slice_mut(s![i, ..w]).assign(&ti);
        for (slot, &j) in nbrs.iter().enumerate() {
            let off = (slot + 1) * w;
            let mut block = tokens.slice_mut(s![i, off..off + w]);
            for ((dst, a), b) in block.iter_mut().zip(t.row(j)).zip(ti) {
                *dst = a - b;
            }
        }
    }
    Ok(tokens)
}

/// Keeps every `s`-th token (indices `0, s, 2s, ...`).
pub fn apply_stride(ts: TokenSet, s: usize) -> Result<TokenSet> {
    if s < 1 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let keep: Vec<usize> = (0..ts.n_tokens()).step_by(s).collect();
    Ok(TokenSet {
        tokens: ts.tokens.select(Axis(0), &keep),
        meta: TokenMeta {
            stride: ts.meta.stride * s,
            ..ts.meta
        },
    })
}

pub fn tokenize(sample: &Sample, k: usize, nu: usize, stride: usize) -> Result<TokenSet> {
    let xs = standardize(sample.x.view())?;
    let ys = standardize(sample.y.view())?;
    let t = pad_and_concat(xs.view(), ys.view(), nu)?;
    let tokens = knn_embed(t.view(), k)?;
    let ts = TokenSet {
        tokens,
        meta: TokenMeta {
            d: sample.d(),
            m: sample.m(),
            k,
            nu,
            stride: 1,
            n_original: sample.n(),
        },
    };
    apply_stride(ts, stride)
}

/// Plain-text matrix with 12 significant digits, one row per line.
pub fn format_matrix(m: ArrayView2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.11e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad number `{v}`"),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged matrix".into()));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat())
        .map_err(|e| Error::Shape(e.to_string()))
}
