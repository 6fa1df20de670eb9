//! Non-dominated filtering and the 2-D hypervolume of a ZDT1 sample.
//!
//! `cargo run --example pareto_hypervolume`

use deep_ela::benchmarks::{make_benchmark, BenchmarkId, Family, ZdtFunction};
use deep_ela::downstream::{hypervolume_2d, pareto_front};
use deep_ela::sampling::Sampler;
use deep_ela::util::rng_from;
use deep_ela::Sample;

fn main() -> deep_ela::Result<()> {
    let inst = make_benchmark(BenchmarkId { family: Family::Zdt(ZdtFunction::Zdt1), instance_seed: 0 }, 2)?;
    let sample = Sample::draw(&inst, 200, Sampler::Lhs, &mut rng_from(3, &[]))?;
    let points: Vec<Vec<f64>> = sample.y.rows().into_iter().map(|r| r.to_vec()).collect();
    let front = pareto_front(&points);
    let pairs: Vec<[f64; 2]> = front.iter().map(|p| [p[0], p[1]]).collect();
    let reference = [1.1, 11.0];
    println!("{} of {} points are non-dominated", front.len(), points.len());
    println!("hypervolume w.r.t. {reference:?}: {:.6}", hypervolume_2d(&pairs, reference)?);
    Ok(())
}
