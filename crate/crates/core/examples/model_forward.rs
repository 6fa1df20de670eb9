//! Runs an untrained tiny backbone on a benchmark sample, prints the
//! feature vector, saves a checkpoint and reloads it.
//!
//! `cargo run --example model_forward`

use deep_ela::benchmarks::{make_benchmark, BenchmarkId};
use deep_ela::model::{load_checkpoint, save_checkpoint, BackboneConfig, DeepEla, Preset};
use deep_ela::sampling::{sample_size, Sampler};
use deep_ela::util::rng_from;
use deep_ela::Sample;

fn main() -> deep_ela::Result<()> {
    let model: DeepEla<f64> = DeepEla::new(BackboneConfig::preset(Preset::Tiny), 0)?;
    let inst = make_benchmark(BenchmarkId::bbob(3, 1), 2)?;
    let sample = Sample::draw(&inst, sample_size(2, 50), Sampler::Lhs, &mut rng_from(0, &[]))?;
    let features = model.forward_features(&model.tokenize(&sample)?)?;
    println!("{} features: {:.4?}", features.len(), features);

    let dir = tempfile::tempdir().map_err(|e| deep_ela::Error::io(".", e))?;
    let path = dir.path().join("tiny.ckpt");
    save_checkpoint(&path, &model.checkpoint(toml::Table::new()))?;
    let back: DeepEla<f64> = DeepEla::from_checkpoint(&load_checkpoint(&path)?)?;
    let again = back.forward_features(&back.tokenize(&sample)?)?;
    println!("reloaded model reproduces the features bit for bit: {}", again == features);
    Ok(())
}
