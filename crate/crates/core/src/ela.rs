//! Classical ELA features (dispersion, y-distribution, meta-model, FDC,
//! nearest-better clustering) and the feature diagnostics SNR and
//! aggregated correlation maps.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::problem::Sample;
use crate::util::{mean_std, pearson};

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.02, 0.05, 0.1, 0.25];
pub const SNR_IMPUTE: f64 = 1e12;
pub const SNR_SIGMA_FLOOR: f64 = 1e-12;
pub const COEF_RATIO_CAP: f64 = 1e12;

pub type FeatureMap = Vec<(String, f64)>;

fn single_objective(sample: &Sample) -> Result<ArrayView1<'_, f64>> {
    if sample.m() != 1 {
        return Err(Error::InvalidArgument(format!("expected one objective, got {}", sample.m())));
    }
    Ok(sample.y.column(0))
}

fn need(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::TooFewPoints { need: min, got: n });
    }
    Ok(())
}

fn dist(x: &ArrayView2<f64>, a: usize, b: usize) -> f64 {
    x.row(a).iter().zip(x.row(b)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Indices sorted by ascending y; ties keep the lower index first.
fn rank_by_y(y: &ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    idx
}

fn mean_pairwise(x: &ArrayView2<f64>, idx: &[usize]) -> f64 {
    let mut s = 0.0;
    let mut c = 0usize;
    for (i, &a) in idx.iter().enumerate() {
        for &b in &idx[i + 1..] {
            s += dist(x, a, b);
            c += 1;
        }
    }
    s / c as f64
}

/// For each fraction `q`, ratio and difference between the mean pairwise
/// distance of the best `ceil(q n)` points and that of all points.
pub fn dispersion(sample: &Sample, fractions: &[f64]) -> Result<FeatureMap> {
    let y = single_objective(sample)?;
    let n = sample.n();
    need(n, 10)?;
    let x = sample.x.view();
    let order = rank_by_y(&y);
    let full = mean_pairwise(&x, &order);
    let mut out = Vec::with_capacity(2 * fractions.len());
    for &q in fractions {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidArgument(format!("fraction {q} outside (0, 1]")));
        }
        let k = (q * n as f64).ceil() as usize;
        if k < 2 {
            return Err(Error::TooFewPoints { need: (2.0 / q).ceil() as usize, got: n });
        }
        let best = mean_pairwise(&x, &order[..k]);
        let tag = format!("{:02}", (q * 100.0).round() as u32);
        let ratio = if full > 0.0 { best / full } else { 1.0 };
        out.push((format!("disp.ratio_{tag}"), ratio));
        out.push((format!("disp.diff_{tag}"), best - full));
    }
    Ok(out)
}

/// Skewness and excess kurtosis of y (population moments).
pub fn ydist(sample: &Sample) -> Result<FeatureMap> {
    let y = single_objective(sample)?;
    need(y.len(), 4)?;
    let v = y.to_vec();
    let (mu, sd) = mean_std(&v);
    if sd <= 0.0 {
        return Err(Error::Degenerate("y has zero variance".into()));
    }
    let n = v.len() as f64;
    let m3 = v.iter().map(|a| (a - mu).powi(3)).sum::<f64>() / n;
    let m4 = v.iter().map(|a| (a - mu).powi(4)).sum::<f64>() / n;
    Ok(vec![("ydist.skewness".into(), m3 / sd.powi(3)), ("ydist.kurtosis".into(), m4 / sd.powi(4) - 3.0)])
}

struct Fit {
    adj_r2: f64,
    coef: Vec<f64>,
}

fn least_squares(design: DMatrix<f64>, y: &DVector<f64>) -> Result<Fit> {
    let (n, p) = design.shape();
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(Error::Degenerate("singular design matrix".into()));
    }
    let beta = svd.solve(y, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    let resid = y - &design * &beta;
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst <= 0.0 {
        return Err(Error::Degenerate("y has zero variance".into()));
    }
    let r2 = 1.0 - resid.norm_squared() / sst;
    let adj_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p) as f64;
    Ok(Fit { adj_r2, coef: beta.iter().skip(1).copied().collect() })
}

/// Max/min absolute coefficient, capped at `COEF_RATIO_CAP`; all-zero
/// coefficients give 1.
fn abs_ratio(c: &[f64]) -> f64 {
    let max = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = c.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max == 0.0 {
        return 1.0;
    }
    max / min.max(max / COEF_RATIO_CAP)
}

/// Adjusted R^2 of linear and linear-plus-squares least-squares models, and
/// the max/min absolute coefficient ratios of the linear terms and of the
/// squared terms.
pub fn meta(sample: &Sample) -> Result<FeatureMap> {
    let y = single_objective(sample)?;
    let (n, d) = (sample.n(), sample.d());
    need(n, d * (d + 3) / 2 + 2)?;
    let x = &sample.x;
    let yv = DVector::from_iterator(n, y.iter().copied());
    let lin = least_squares(DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] }), &yv)?;
    let quad = least_squares(
        DMatrix::from_fn(n, 2 * d + 1, |i, j| match j {
            0 => 1.0,
            j if j <= d => x[[i, j - 1]],
            j => x[[i, j - d - 1]].powi(2),
        }),
        &yv,
    )?;
    Ok(vec![
        ("meta.lin_r2".into(), lin.adj_r2),
        ("meta.quad_r2".into(), quad.adj_r2),
        ("meta.lin_coef_ratio".into(), abs_ratio(&lin.coef)),
        ("meta.quad_coef_ratio".into(), abs_ratio(&quad.coef[d..])),
    ])
}

/// Pearson correlation of `y - y_best` with the distance to the best point.
pub fn fdc(sample: &Sample) -> Result<f64> {
    let y = single_objective(sample)?;
    need(sample.n(), 3)?;
    let x = sample.x.view();
    let best = rank_by_y(&y)[0];
    let dy: Vec<f64> = y.iter().map(|v| v - y[best]).collect();
    let dx: Vec<f64> = (0..sample.n()).map(|i| dist(&x, i, best)).collect();
    pearson(&dy, &dx).ok_or_else(|| Error::Degenerate("zero variance in fitness or distance".into()))
}

/// Nearest-neighbour and nearest-better-neighbour distances. The best point
/// has no better neighbour; its distance is the largest nearest-neighbour
/// distance in the sample.
pub fn nbc_distances(sample: &Sample) -> Result<(Vec<f64>, Vec<f64>)> {
    let y = single_objective(sample)?;
    let n = sample.n();
    need(n, 3)?;
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::Degenerate("all objective values equal".into()));
    }
    let x = sample.x.view();
    let best = rank_by_y(&y)[0];
    let mut nn = vec![f64::INFINITY; n];
    let mut nb = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dij = dist(&x, i, j);
            nn[i] = nn[i].min(dij);
            if y[j] < y[i] {
                nb[i] = nb[i].min(dij);
            }
        }
    }
    let max_nn = nn.iter().fold(0.0f64, |m, &v| m.max(v));
    for (i, v) in nb.iter_mut().enumerate() {
        // Points tied with the best value have no strictly better neighbour.
        if !v.is_finite() {
            debug_assert!(y[i] == y[best]);
            *v = max_nn;
        }
    }
    Ok((nn, nb))
}

pub fn nbc(sample: &Sample) -> Result<FeatureMap> {
    let (nn, nb) = nbc_distances(sample)?;
    let (mnn, snn) = mean_std(&nn);
    let (mnb, snb) = mean_std(&nb);
    let mean_ratio = if mnb > 0.0 { mnn / mnb } else { 1.0 };
    let sd_ratio = if snb > 0.0 { snn / snb } else { 1.0 };
    let cor = pearson(&nn, &nb).unwrap_or(0.0);
    Ok(vec![
        ("nbc.nn_nb_mean_ratio".into(), mean_ratio),
        ("nbc.nn_nb_sd_ratio".into(), sd_ratio),
        ("nbc.nb_cor".into(), cor),
    ])
}

/// All baseline features in a fixed order.
pub fn ela_features(sample: &Sample) -> Result<FeatureMap> {
    let mut out = dispersion(sample, &DEFAULT_FRACTIONS)?;
    out.extend(ydist(sample)?);
    out.extend(meta(sample)?);
    out.push(("fdc.cor".into(), fdc(sample)?));
    out.extend(nbc(sample)?);
    Ok(out)
}

pub fn ela_feature_names() -> Vec<String> {
    let mut v = Vec::new();
    for q in DEFAULT_FRACTIONS {
        let tag = format!("{:02}", (q * 100.0).round() as u32);
        v.push(format!("disp.ratio_{tag}"));
        v.push(format!("disp.diff_{tag}"));
    }
    for s in ["ydist.skewness", "ydist.kurtosis", "meta.lin_r2", "meta.quad_r2", "meta.lin_coef_ratio", "meta.quad_coef_ratio", "fdc.cor", "nbc.nn_nb_mean_ratio", "nbc.nn_nb_sd_ratio", "nbc.nb_cor"] {
        v.push(s.into());
    }
    v
}

/// Per-feature `mu^2 / sigma^2` over the rows of `features`
/// (instances x features); `sigma < 1e-12` is imputed as `1e12`.
pub fn snr(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    need(features.len(), 2)?;
    let f = features[0].len();
    if features.iter().any(|r| r.len() != f) {
        return Err(Error::Shape("ragged feature matrix".into()));
    }
    Ok((0..f)
        .map(|j| {
            let col: Vec<f64> = features.iter().map(|r| r[j]).collect();
            let (mu, sd) = mean_std(&col);
            if sd < SNR_SIGMA_FLOOR {
                SNR_IMPUTE
            } else {
                mu * mu / (sd * sd)
            }
        })
        .collect())
}

/// Mean of the per-group SNR vectors.
pub fn snr_grouped(groups: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = groups.iter().map(|g| snr(g)).collect::<Result<_>>()?;
    let first = per.first().ok_or_else(|| Error::InvalidArgument("no groups".into()))?;
    let mut out = vec![0.0; first.len()];
    for p in &per {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v / per.len() as f64;
        }
    }
    Ok(out)
}

pub fn snr_csv(names: &[String], values: &[f64]) -> String {
    let mut s = String::from("feature,snr\n");
    for (n, v) in names.iter().zip(values) {
        writeln!(s, "{n},{v:.10e}").unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrMethod {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrOptions {
    pub method: CorrMethod,
    /// Aggregate absolute correlations (otherwise signed).
    pub absolute: bool,
}

impl Default for CorrOptions {
    fn default() -> Self {
        CorrOptions { method: CorrMethod::Pearson, absolute: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrReport {
    /// Row-major `f x f`; NaN where no group defines the pair.
    pub matrix: Vec<f64>,
    pub features: usize,
    pub groups_used: usize,
    pub warnings: Vec<String>,
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Per-group correlation matrices, mean-aggregated. Groups with fewer than
/// three instances are skipped with a warning; a pair with a constant
/// feature in some group is left out of that group's contribution.
pub fn corr_report(groups: &[Vec<Vec<f64>>], opts: CorrOptions) -> Result<CorrReport> {
    let f = groups.iter().flat_map(|g| g.first()).map(Vec::len).next().unwrap_or(0);
    if f < 2 {
        return Err(Error::InvalidArgument("need at least 2 features".into()));
    }
    let mut sum = vec![0.0; f * f];
    let mut cnt = vec![0usize; f * f];
    let mut warnings = Vec::new();
    let mut used = 0;
    for (gi, g) in groups.iter().enumerate() {
        if g.iter().any(|r| r.len() != f) {
            return Err(Error::Shape(format!("group {gi} has a row of the wrong width")));
        }
        if g.len() < 3 {
            warnings.push(format!("group {gi}: {} instances, skipped", g.len()));
            continue;
        }
        used += 1;
        let cols: Vec<Vec<f64>> = (0..f)
            .map(|j| {
                let c: Vec<f64> = g.iter().map(|r| r[j]).collect();
                if opts.method == CorrMethod::Spearman {
                    ranks(&c)
                } else {
                    c
                }
            })
            .collect();
        for a in 0..f {
            for b in a..f {
                if let Some(mut c) = pearson(&cols[a], &cols[b]) {
                    if a == b {
                        c = 1.0;
                    }
                    if opts.absolute {
                        c = c.abs();
                    }
                    for (i, j) in [(a, b), (b, a)] {
                        sum[i * f + j] += c;
                        cnt[i * f + j] += 1;
                    }
                    if a == b {
                        sum[a * f + a] -= c;
                        cnt[a * f + a] -= 1;
                    }
                }
            }
        }
    }
    let matrix = sum.iter().zip(&cnt).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect();
    Ok(CorrReport { matrix, features: f, groups_used: used, warnings })
}

impl CorrReport {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.matrix[a * self.features + b]
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("feature");
        for n in names {
            write!(s, ",{n}").unwrap();
        }
        s.push('\n');
        for (a, n) in names.iter().enumerate() {
            s.push_str(n);
            for b in 0..self.features {
                let v = self.get(a, b);
                if v.is_nan() {
                    s.push_str(",nan");
                } else {
                    write!(s, ",{v:.6}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    /// Heat map as a PNG, `cell` pixels per entry. Values map from white
    /// (0) to dark blue (1), negative values toward red; NaN is grey.
    pub fn to_png(&self, cell: usize) -> Result<Vec<u8>> {
        let side = (self.features * cell) as u32;
        let mut data = Vec::with_capacity((side * side * 3) as usize);
        for py in 0..side as usize {
            for px in 0..side as usize {
                let v = self.get(py / cell, px / cell);
                let rgb = if v.is_nan() {
                    [160, 160, 160]
                } else if v >= 0.0 {
                    let t = v.min(1.0);
                    [(255.0 * (1.0 - t)) as u8, (255.0 * (1.0 - 0.8 * t)) as u8, (255.0 - 100.0 * t) as u8]
                } else {
                    let t = (-v).min(1.0);
                    [(255.0 - 75.0 * t) as u8, (255.0 * (1.0 - t)) as u8, (255.0 * (1.0 - t)) as u8]
                };
                data.extend_from_slice(&rgb);
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, side, side);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::InvalidArgument(e.to_string()))?;
            w.write_image_data(&data).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        Ok(out)
    }
}
