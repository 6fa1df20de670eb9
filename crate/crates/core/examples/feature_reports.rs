//! Signal-to-noise ratios and the aggregated correlation matrix of the
//! classical features over repeated samples of a few functions.
//!
//! `cargo run --example feature_reports`

use deep_ela::benchmarks::Family;
use deep_ela::downstream::{extract_features, ElaExtractor, SuiteSpec};
use deep_ela::ela::{corr_report, snr_csv, snr_grouped, CorrOptions};
use deep_ela::sampling::Sampler;

fn main() -> deep_ela::Result<()> {
    let suite = SuiteSpec { families: (1..=6).map(Family::Bbob).collect(), dims: vec![2], instance_seeds: vec![1], repetitions: 8 };
    let ds = extract_features(&ElaExtractor, &suite, Sampler::Uniform, 50, 0)?.dataset;
    let mut groups: Vec<Vec<Vec<f64>>> = Vec::new();
    for chunk in ds.rows.chunk_by(|a, b| a.key.family == b.key.family) {
        groups.push(chunk.iter().map(|r| r.values.clone()).collect());
    }
    print!("{}", snr_csv(&ds.names, &snr_grouped(&groups)?));
    let rep = corr_report(&groups, CorrOptions::default())?;
    println!("mean |corr| over {} groups, first five features:", rep.groups_used);
    for a in 0..5 {
        let row: Vec<String> = (0..5).map(|b| format!("{:.2}", rep.get(a, b))).collect();
        println!("{:<22} {}", ds.names[a], row.join(" "));
    }
    Ok(())
}
