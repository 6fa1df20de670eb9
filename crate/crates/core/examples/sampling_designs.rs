//! Draws uniform and Latin Hypercube designs and shows the stratification
//! of the latter: every one of the n equal-width bins per axis holds one
//! point.
//!
//! `cargo run --example sampling_designs -- [n]`

use deep_ela::sampling::Sampler;
use deep_ela::util::rng_from;
use deep_ela::Bounds;

fn occupied_bins(col: ndarray::ArrayView1<f64>, lo: f64, hi: f64) -> usize {
    let n = col.len();
    let mut seen = vec![false; n];
    for &v in col {
        seen[(((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1)] = true;
    }
    seen.iter().filter(|&&s| s).count()
}

fn main() -> deep_ela::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let bounds = Bounds::cube(3, -5.0, 5.0);
    for sampler in [Sampler::Uniform, Sampler::Lhs] {
        let x = sampler.sample(&bounds, n, &mut rng_from(7, &[]))?;
        let bins: Vec<usize> = x.columns().into_iter().map(|c| occupied_bins(c, -5.0, 5.0)).collect();
        println!("{sampler:?}: {n} points, occupied bins per axis {bins:?}");
    }
    Ok(())
}
