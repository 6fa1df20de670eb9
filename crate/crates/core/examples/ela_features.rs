//! Classical landscape features of three benchmark functions.
//!
//! `cargo run --example ela_features`

use deep_ela::benchmarks::{make_benchmark, BenchmarkId};
use deep_ela::ela::{ela_feature_names, ela_features};
use deep_ela::sampling::{sample_size, Sampler};
use deep_ela::util::rng_from;
use deep_ela::Sample;

fn main() -> deep_ela::Result<()> {
    let fids = [1u8, 15, 20];
    let mut table = Vec::new();
    for &fid in &fids {
        let inst = make_benchmark(BenchmarkId::bbob(fid, 1), 3)?;
        let sample = Sample::draw(&inst, sample_size(3, 50), Sampler::Uniform, &mut rng_from(fid as u64, &[]))?;
        table.push(ela_features(&sample)?);
    }
    println!("{:<24}{:>12}{:>12}{:>12}", "feature", "f1", "f15", "f20");
    for (i, name) in ela_feature_names().iter().enumerate() {
        print!("{name:<24}");
        for row in &table {
            print!("{:>12.4}", row[i].1);
        }
        println!();
    }
    Ok(())
}
