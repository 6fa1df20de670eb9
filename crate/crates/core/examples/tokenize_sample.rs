//! Turns a sample of the sphere function into kNN tokens and shows that
//! the tokens ignore affine rescaling of the inputs and outputs.
//!
//! `cargo run --example tokenize_sample`

use deep_ela::benchmarks::{make_benchmark, BenchmarkId};
use deep_ela::sampling::Sampler;
use deep_ela::tokenizer::{format_matrix, tokenize};
use deep_ela::util::rng_from;
use deep_ela::Sample;

fn main() -> deep_ela::Result<()> {
    let inst = make_benchmark(BenchmarkId::bbob(1, 0), 2)?;
    let sample = Sample::draw(&inst, 8, Sampler::Uniform, &mut rng_from(1, &[]))?;
    let ts = tokenize(&sample, 3, 4, 1)?;
    println!("{} tokens of width {} (k=3, nu=4)", ts.n_tokens(), ts.width());
    print!("{}", format_matrix(ts.tokens.view()));
    let scaled = Sample::new(sample.x.mapv(|v| 3.0 * v - 1.0), sample.y.mapv(|v| 0.01 * v + 42.0))?;
    let again = tokenize(&scaled, 3, 4, 1)?;
    let diff = (&ts.tokens - &again.tokens).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("max deviation after rescaling: {diff:.2e}");
    Ok(())
}
