//! Initial designs: i.i.d. uniform and Latin Hypercube samples of a box.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::Bounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    #[default]
    Uniform,
    Lhs,
}

impl Sampler {
    pub fn sample(self, bounds: &Bounds, n: usize, rng: &mut crate::Rng) -> Result<Array2<f64>> {
        match self {
            Sampler::Uniform => uniform_sample(bounds, n, rng),
            Sampler::Lhs => lhs_sample(bounds, n, rng),
        }
    }
}

impl std::str::FromStr for Sampler {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Sampler::Uniform),
            "lhs" => Ok(Sampler::Lhs),
            _ => Err(crate::Error::InvalidArgument(format!("unknown sampler `{s}`"))),
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(crate::Error::InvalidArgument("sample size must be >= 1".into()));
    }
    Ok(())
}

pub fn uniform_sample(bounds: &Bounds, n: usize, rng: &mut crate::Rng) -> Result<Array2<f64>> {
    bounds.validate()?;
    check_n(n)?;
    let d = bounds.dim();
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.random_range(bounds.lo[j]..bounds.hi[j]);
        }
    }
    Ok(x)
}

/// Latin Hypercube: every dimension is cut into `n` equal bins holding
/// exactly one point each, jittered uniformly inside its bin.
pub fn lhs_sample(bounds: &Bounds, n: usize, rng: &mut crate::Rng) -> Result<Array2<f64>> {
    bounds.validate()?;
    check_n(n)?;
    let d = bounds.dim();
    let mut x = Array2::zeros((n, d));
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        let width = (bounds.hi[j] - bounds.lo[j]) / n as f64;
        for (i, &bin) in perm.iter().enumerate() {
            let v = bounds.lo[j] + (bin as f64 + rng.random::<f64>()) * width;
            // Rounding can push the last bin onto the upper edge.
            x[[i, j]] = v.min(bounds.lo[j] + (bin as f64 + 1.0 - 1e-12) * width).min(bounds.hi[j]);
        }
    }
    Ok(x)
}

pub fn sample_size(d: usize, multiplier: usize) -> usize {
    multiplier * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from;
    use proptest::prelude::*;

    fn occupancy(x: &Array2<f64>, bounds: &Bounds) -> Vec<Vec<usize>> {
        let n = x.nrows();
        (0..x.ncols())
            .map(|j| {
                let width = (bounds.hi[j] - bounds.lo[j]) / n as f64;
                let mut counts = vec![0; n];
                for i in 0..n {
                    let bin = (((x[[i, j]] - bounds.lo[j]) / width).floor() as usize).min(n - 1);
                    counts[bin] += 1;
                }
                counts
            })
            .collect()
    }

    #[test]
    fn uniform_support_and_moments() {
        let b = Bounds::cube(2, 0.0, 1.0);
        let x = uniform_sample(&b, 1000, &mut rng_from(1, &[])).unwrap();
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        let sigma = 1.0 / (12.0f64 * 1000.0).sqrt();
        for j in 0..2 {
            let mean = x.column(j).mean().unwrap();
            assert!((mean - 0.5).abs() < 3.0 * sigma, "mean {mean}");
        }
        assert_eq!(x, uniform_sample(&b, 1000, &mut rng_from(1, &[])).unwrap());
    }

    #[test]
    fn lhs_one_point_per_bin() {
        let b = Bounds::cube(1, 0.0, 4.0);
        let x = lhs_sample(&b, 4, &mut rng_from(2, &[])).unwrap();
        assert_eq!(occupancy(&x, &b), vec![vec![1; 4]]);
        let b3 = Bounds::cube(3, -5.0, 5.0);
        let x3 = lhs_sample(&b3, 10, &mut rng_from(3, &[])).unwrap();
        assert!(occupancy(&x3, &b3).iter().all(|c| c.iter().all(|&k| k == 1)));
    }

    #[test]
    fn lhs_marginal_mean() {
        let b = Bounds::cube(2, -5.0, 5.0);
        let x = lhs_sample(&b, 100, &mut rng_from(4, &[])).unwrap();
        let tol = 3.0 * 10.0 / (12.0f64 * 100.0).sqrt();
        for j in 0..2 {
            assert!(x.column(j).mean().unwrap().abs() < tol);
        }
    }

    #[test]
    fn empty_box_is_an_error() {
        let b = Bounds { lo: vec![0.0, 1.0], hi: vec![1.0, 1.0] };
        assert!(uniform_sample(&b, 3, &mut rng_from(0, &[])).is_err());
        assert!(lhs_sample(&b, 3, &mut rng_from(0, &[])).is_err());
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(sample_size(2, 25), 50);
        assert_eq!(sample_size(10, 50), 500);
        assert_eq!(sample_size(1, 1), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn lhs_occupancy_exact(n in 1usize..2000, d in 1usize..4, seed in any::<u64>()) {
            let b = Bounds::cube(d, -3.0, 7.0);
            let x = lhs_sample(&b, n, &mut rng_from(seed, &[])).unwrap();
            prop_assert!(x.iter().all(|v| (-3.0..=7.0).contains(v)));
            for counts in occupancy(&x, &b) {
                prop_assert!(counts.iter().all(|&k| k == 1));
            }
        }
    }
}
