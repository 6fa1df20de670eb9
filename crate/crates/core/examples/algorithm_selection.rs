//! Per-instance algorithm selection on a synthetic portfolio: a local
//! solver that wins on unimodal groups, a global one that wins on
//! multimodal groups and a generalist. Scores are relERT per function
//! group next to the single best and virtual best solvers.
//!
//! `cargo run --release --example algorithm_selection`

use deep_ela::benchmarks::function_group;
use deep_ela::downstream::{aas_experiment, extract_features, AasConfig, ElaExtractor, MetricKind, PerfRecord, PerfTable, Split, SuiteSpec};
use deep_ela::sampling::Sampler;

fn main() -> deep_ela::Result<()> {
    let suite = SuiteSpec::bbob(vec![2], (1..=10).collect());
    let features = extract_features(&ElaExtractor, &suite, Sampler::Uniform, 50, 0)?.dataset;
    let mut records = Vec::new();
    for key in suite.keys() {
        let deep_ela::benchmarks::Family::Bbob(fid) = key.family else { continue };
        let g = function_group(fid) as f64;
        let jitter = 1.0 + 0.05 * ((key.instance_seed * 7 + fid as u64) % 5) as f64;
        for (algorithm, ert) in [("local", 500.0 * g * g), ("global", 4000.0 / g), ("generalist", 2500.0)] {
            records.push(PerfRecord { instance: key.instance(), algorithm: algorithm.into(), repetition: 0, value: Some(ert * jitter) });
        }
    }
    let perf = PerfTable { metric: MetricKind::Ert, records };
    let cfg = AasConfig { split: Split::SeedFolds(5), k: 5, multiplier: 50, failure_penalty: 1e7 };
    let report = aas_experiment(&features, &perf, &cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}
