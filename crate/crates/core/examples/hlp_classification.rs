//! Predicts the high-level properties of the 24 single-objective functions
//! from classical features with a kNN classifier.
//!
//! `cargo run --release --example hlp_classification`

use deep_ela::downstream::{hlp_csv, hlp_experiment, ElaExtractor, HlpConfig};
use deep_ela::sampling::Sampler;

fn main() -> deep_ela::Result<()> {
    let cfg = HlpConfig {
        dims: vec![2],
        train_seeds: (1..=10).collect(),
        test_seeds: (11..=15).collect(),
        k: 5,
        multiplier: 50,
        sampler: Sampler::Uniform,
        seed: 0,
    };
    print!("{}", hlp_csv(&hlp_experiment(&ElaExtractor, &cfg)?));
    Ok(())
}
