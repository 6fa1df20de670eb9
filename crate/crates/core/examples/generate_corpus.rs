//! Generates a few random problem instances, prints their expression
//! records and round-trips them through the corpus format.
//!
//! `cargo run --example generate_corpus -- [count] [d]`

use deep_ela::randgen::{generate_instance_seeded, parse_corpus, write_corpus, GeneratorConfig};
use deep_ela::util::derive_seed;

fn main() -> deep_ela::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let d: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let config = GeneratorConfig::default();
    let mut instances = Vec::new();
    let mut attempts = 0;
    for i in 0..count {
        let (inst, stats) = generate_instance_seeded(d, 1, &config, derive_seed(1, &[i as u64]))?;
        attempts += stats.attempts;
        instances.push(inst);
    }
    let corpus = write_corpus(&instances)?;
    print!("{corpus}");
    assert_eq!(parse_corpus(&corpus)?, instances);
    println!("# {count} accepted out of {attempts} attempts");
    Ok(())
}
