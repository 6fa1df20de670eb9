//! Noiseless BBOB-style function families with seeded instance
//! transformations (rotation, shift, objective offset).

use std::f64::consts::PI;

use rand::Rng as _;

use crate::linalg::{identity, matvec, matvec_t, random_rotation};
use crate::util::rng_from;

pub const NAMES: [&str; 24] = [
    "Sphere",
    "Ellipsoidal separable",
    "Rastrigin separable",
    "Bueche-Rastrigin",
    "Linear Slope",
    "Attractive Sector",
    "Step Ellipsoidal",
    "Rosenbrock",
    "Rosenbrock rotated",
    "Ellipsoidal high conditioned",
    "Discus",
    "Bent Cigar",
    "Sharp Ridge",
    "Different Powers",
    "Rastrigin multimodal",
    "Weierstrass",
    "Schaffer F7",
    "Schaffer F7 moderately ill-conditioned",
    "Griewank-Rosenbrock",
    "Schwefel",
    "Gallagher 101 Peaks",
    "Gallagher 21 Peaks",
    "Katsuura",
    "Lunacek bi-Rastrigin",
];

const SCHWEFEL_OPT: f64 = 4.209_687_462_275_036;
const SCHWEFEL_CONST: f64 = 4.189_828_872_724_339;

#[derive(Debug, Clone, PartialEq)]
pub struct GallagherPeaks {
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Diagonal of each peak's (permuted, normalized) conditioning matrix.
    pub scales: Vec<Vec<f64>>,
}

/// One concrete function instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BbobFunction {
    pub fid: u8,
    pub d: usize,
    pub x_opt: Vec<f64>,
    pub f_opt: f64,
    /// Row-major rotations.
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    /// Random +-1 vector used by the slope, Schwefel and Lunacek families.
    pub signs: Vec<f64>,
    pub peaks: Option<GallagherPeaks>,
}

fn ratio(i: usize, d: usize) -> f64 {
    if d > 1 {
        i as f64 / (d - 1) as f64
    } else {
        0.0
    }
}

/// `diag(alpha^(i / (2(d-1))))` applied to `v`.
fn lambda(alpha: f64, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    v.iter()
        .enumerate()
        .map(|(i, x)| x * alpha.powf(0.5 * ratio(i, d)))
        .collect()
}

fn t_osz_scalar(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let xh = x.abs().ln();
    let (c1, c2) = if x > 0.0 { (10.0, 7.9) } else { (5.5, 3.1) };
    x.signum() * (xh + 0.049 * ((c1 * xh).sin() + (c2 * xh).sin())).exp()
}

fn t_osz(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| t_osz_scalar(x)).collect()
}

fn t_asy(beta: f64, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x > 0.0 {
                x.powf(1.0 + beta * ratio(i, d) * x.sqrt())
            } else {
                x
            }
        })
        .collect()
}

fn f_pen(x: &[f64]) -> f64 {
    x.iter().map(|v| (v.abs() - 5.0).max(0.0).powi(2)).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn rastrigin(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    10.0 * (d - z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>()) + sq_norm(z)
}

fn ellipsoid(z: &[f64]) -> f64 {
    let d = z.len();
    z.iter()
        .enumerate()
        .map(|(i, v)| 10f64.powf(6.0 * ratio(i, d)) * v * v)
        .sum()
}

/// Plain Rosenbrock sum, minimized at `z = (1, ..., 1)`.
pub fn rosenbrock_raw(z: &[f64]) -> f64 {
    z.windows(2)
        .map(|w| 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2))
        .sum()
}

fn rosen_scale(d: usize) -> f64 {
    (d as f64).sqrt().max(8.0) / 8.0
}

fn schaffer(z: &[f64]) -> f64 {
    let d = z.len();
    let s: f64 = z
        .windows(2)
        .map(|w| {
            let s = (w[0] * w[0] + w[1] * w[1]).sqrt();
            s.sqrt() + s.sqrt() * (50.0 * s.powf(0.2)).sin().powi(2)
        })
        .sum();
    (s / (d - 1).max(1) as f64).powi(2)
}

fn gallagher(peaks: &GallagherPeaks, r: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let best = peaks
        .centers
        .iter()
        .zip(&peaks.weights)
        .zip(&peaks.scales)
        .map(|((c, w), s)| {
            let z = matvec(r, &sub(x, c));
            let quad: f64 = z.iter().zip(s).map(|(zi, si)| si * zi * zi).sum();
            w * (-quad / (2.0 * d as f64)).exp()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    t_osz_scalar(10.0 - best).powi(2) + f_pen(x)
}

impl BbobFunction {
    /// Builds instance `instance_seed` of family `fid` in dimension `d`.
    /// Seed 0 is the canonical untransformed instance (identity rotations,
    /// zero shift where the family allows it, `f_opt = 0`).
    pub fn new(fid: u8, d: usize, instance_seed: u64) -> Self {
        assert!((1..=24).contains(&fid));
        let mut rng = rng_from(instance_seed, &[fid as u64, d as u64, 0xBB0B]);
        let canonical = instance_seed == 0;
        let (r, q) = if canonical {
            (identity(d), identity(d))
        } else {
            (random_rotation(d, &mut rng), random_rotation(d, &mut rng))
        };
        let mut x_opt: Vec<f64> = if canonical {
            vec![0.0; d]
        } else {
            (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()
        };
        let signs: Vec<f64> = if canonical {
            vec![1.0; d]
        } else {
            (0..d)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        };
        let f_opt = if canonical {
            0.0
        } else {
            (rng.random_range(-100.0f64..100.0) * 100.0).round() / 100.0
        };
        let mut peaks = None;
        match fid {
            4 => {
                for (i, v) in x_opt.iter_mut().enumerate() {
                    if i % 2 == 0 {
                        *v = v.abs();
                    }
                }
            }
            5 => x_opt = signs.iter().map(|s| 5.0 * s).collect(),
            8 => {
                if !canonical {
                    x_opt.iter_mut().for_each(|v| *v *= 0.75);
                }
            }
            9 | 19 => {
                let c = rosen_scale(d);
                x_opt = matvec_t(&r, &vec![0.5 / c; d]);
            }
            20 => x_opt = signs.iter().map(|s| 0.5 * SCHWEFEL_OPT * s).collect(),
            24 => x_opt = signs.iter().map(|s| 1.25 * s).collect(),
            21 | 22 => {
                let p = make_peaks(fid, d, &mut rng);
                x_opt = p.centers[0].clone();
                peaks = Some(p);
            }
            _ => {}
        }
        BbobFunction {
            fid,
            d,
            x_opt,
            f_opt,
            r,
            q,
            signs,
            peaks,
        }
    }

    pub fn name(&self) -> &'static str {
        NAMES[self.fid as usize - 1]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.raw(x) + self.f_opt
    }

    fn rot(&self, v: &[f64]) -> Vec<f64> {
        matvec(&self.r, v)
    }

    fn qrot(&self, v: &[f64]) -> Vec<f64> {
        matvec(&self.q, v)
    }

    fn raw(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let df = d as f64;
        let shifted = sub(x, &self.x_opt);
        match self.fid {
            1 => sq_norm(&shifted),
            2 => ellipsoid(&t_osz(&shifted)),
            3 => rastrigin(&lambda(10.0, &t_asy(0.2, &t_osz(&shifted)))),
            4 => {
                let mut z = t_osz(&shifted);
                for (i, v) in z.iter_mut().enumerate() {
                    let s = 10f64.powf(0.5 * ratio(i, d));
                    *v *= if *v > 0.0 && i % 2 == 0 { 10.0 * s } else { s };
                }
                rastrigin(&z) + 100.0 * f_pen(x)
            }
            5 => (0..d)
                .map(|i| {
                    let xo = self.x_opt[i];
                    let z = if xo * x[i] < 25.0 { x[i] } else { xo };
                    let s = xo.signum() * 10f64.powf(ratio(i, d));
                    5.0 * s.abs() - s * z
                })
                .sum(),
            6 => {
                let z = self.qrot(&lambda(10.0, &self.rot(&shifted)));
                let s: f64 = z
                    .iter()
                    .zip(&self.x_opt)
                    .map(|(zi, xo)| {
                        let w = if zi * xo > 0.0 { 100.0 } else { 1.0 };
                        (w * zi).powi(2)
                    })
                    .sum();
                t_osz_scalar(s).powf(0.9)
            }
            7 => {
                let zh = lambda(10.0, &self.rot(&shifted));
                let zt: Vec<f64> = zh
                    .iter()
                    .map(|&v| {
                        if v.abs() > 0.5 {
                            (0.5 + v).floor()
                        } else {
                            (0.5 + 10.0 * v).floor() / 10.0
                        }
                    })
                    .collect();
                let z = self.qrot(&zt);
                let e: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(i, v)| 10f64.powf(2.0 * ratio(i, d)) * v * v)
                    .sum();
                0.1 * (zh[0].abs() / 1e4).max(e) + f_pen(x)
            }
            8 => {
                let c = rosen_scale(d);
                let z: Vec<f64> = shifted.iter().map(|v| c * v + 1.0).collect();
                rosenbrock_raw(&z)
            }
            9 => {
                let c = rosen_scale(d);
                let z: Vec<f64> = self.rot(x).iter().map(|v| c * v + 0.5).collect();
                rosenbrock_raw(&z)
            }
            10 => ellipsoid(&t_osz(&self.rot(&shifted))),
            11 => {
                let z = t_osz(&self.rot(&shifted));
                1e6 * z[0] * z[0] + z[1..].iter().map(|v| v * v).sum::<f64>()
            }
            12 => {
                let z = self.rot(&t_asy(0.5, &self.rot(&shifted)));
                z[0] * z[0] + 1e6 * z[1..].iter().map(|v| v * v).sum::<f64>()
            }
            13 => {
                let z = self.qrot(&lambda(10.0, &self.rot(&shifted)));
                z[0] * z[0] + 100.0 * z[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            14 => {
                let z = self.rot(&shifted);
                z.iter()
                    .enumerate()
                    .map(|(i, v)| v.abs().powf(2.0 + 4.0 * ratio(i, d)))
                    .sum::<f64>()
                    .sqrt()
            }
            15 => {
                let inner = t_asy(0.2, &t_osz(&self.rot(&shifted)));
                rastrigin(&self.rot(&lambda(10.0, &self.qrot(&inner))))
            }
            16 => {
                let z = self.rot(&lambda(0.01, &self.qrot(&t_osz(&self.rot(&shifted)))));
                let f0: f64 = (0..12)
                    .map(|k| 0.5f64.powi(k) * (PI * 3f64.powi(k)).cos())
                    .sum();
                let s: f64 = z
                    .iter()
                    .map(|zi| {
                        (0..12)
                            .map(|k| {
                                0.5f64.powi(k) * (2.0 * PI * 3f64.powi(k) * (zi + 0.5)).cos()
                            })
                            .sum::<f64>()
                    })
                    .sum();
                10.0 * (s / df - f0).powi(3) + 10.0 / df * f_pen(x)
            }
            17 | 18 => {
                let alpha = if self.fid == 17 { 10.0 } else { 1000.0 };
                let z = lambda(alpha, &self.qrot(&t_asy(0.5, &self.rot(&shifted))));
                schaffer(&z) + 10.0 * f_pen(x)
            }
            19 => {
                let c = rosen_scale(d);
                let z: Vec<f64> = self.rot(x).iter().map(|v| c * v + 0.5).collect();
                let s: f64 = z
                    .windows(2)
                    .map(|w| {
                        let s = 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2);
                        s / 4000.0 - s.cos()
                    })
                    .sum();
                10.0 / (d - 1).max(1) as f64 * s + 10.0
            }
            20 => {
                let two_abs: Vec<f64> = self.x_opt.iter().map(|v| 2.0 * v.abs()).collect();
                let xh: Vec<f64> = x
                    .iter()
                    .zip(&self.signs)
                    .map(|(v, s)| 2.0 * s * v)
                    .collect();
                let mut zh = xh.clone();
                for i in 1..d {
                    zh[i] = xh[i] + 0.25 * (xh[i - 1] - two_abs[i - 1]);
                }
                let z: Vec<f64> = lambda(10.0, &sub(&zh, &two_abs))
                    .iter()
                    .zip(&two_abs)
                    .map(|(v, t)| 100.0 * (v + t))
                    .collect();
                let s: f64 = z.iter().map(|zi| zi * zi.abs().sqrt().sin()).sum();
                let scaled: Vec<f64> = z.iter().map(|v| v / 100.0).collect();
                -s / (100.0 * df) + SCHWEFEL_CONST + 100.0 * f_pen(&scaled)
            }
            21 | 22 => gallagher(self.peaks.as_ref().expect("peaks"), &self.r, x),
            23 => {
                let z = self.qrot(&lambda(100.0, &self.rot(&shifted)));
                let expo = 10.0 / df.powf(1.2);
                let prod: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(i, zi)| {
                        let s: f64 = (1..=32)
                            .map(|j| {
                                let p = 2f64.powi(j) * zi;
                                (p - p.round()).abs() / 2f64.powi(j)
                            })
                            .sum();
                        (1.0 + (i + 1) as f64 * s).powf(expo)
                    })
                    .product();
                10.0 / (df * df) * prod - 10.0 / (df * df) + f_pen(x)
            }
            24 => {
                let mu0 = 2.5;
                let s = 1.0 - 1.0 / (2.0 * (df + 20.0).sqrt() - 8.2);
                let mu1 = -((mu0 * mu0 - 1.0) / s).sqrt();
                let xh: Vec<f64> = x
                    .iter()
                    .zip(&self.signs)
                    .map(|(v, sg)| 2.0 * sg * v)
                    .collect();
                let a: f64 = xh.iter().map(|v| (v - mu0).powi(2)).sum();
                let b: f64 = df + s * xh.iter().map(|v| (v - mu1).powi(2)).sum::<f64>();
                let centered: Vec<f64> = xh.iter().map(|v| v - mu0).collect();
                let z = self.qrot(&lambda(100.0, &self.rot(&centered)));
                a.min(b) + 10.0 * (df - z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>())
                    + 1e4 * f_pen(x)
            }
            _ => unreachable!("fid checked in constructor"),
        }
    }
}

fn make_peaks(fid: u8, d: usize, rng: &mut crate::Rng) -> GallagherPeaks {
    use rand::seq::SliceRandom;
    let (n, first_alpha, spread, opt_range) = if fid == 21 {
        (101usize, 1000.0f64, 5.0, 4.0)
    } else {
        (21usize, 1e6, 4.9, 3.92)
    };
    let mut alphas: Vec<f64> = (0..n - 1)
        .map(|j| 1000f64.powf(2.0 * j as f64 / (n - 2) as f64))
        .collect();
    alphas.shuffle(rng);
    let mut centers = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        let range = if i == 0 { opt_range } else { spread };
        centers.push((0..d).map(|_| rng.random_range(-range..range)).collect());
        weights.push(if i == 0 {
            10.0
        } else {
            1.1 + 8.0 * (i - 1) as f64 / (n - 2) as f64
        });
        let alpha = if i == 0 { first_alpha } else { alphas[i - 1] };
        let mut diag: Vec<f64> = (0..d)
            .map(|k| alpha.powf(0.5 * ratio(k, d)) / alpha.powf(0.25))
            .collect();
        diag.shuffle(rng);
        scales.push(diag);
    }
    GallagherPeaks {
        centers,
        weights,
        scales,
    }
}
