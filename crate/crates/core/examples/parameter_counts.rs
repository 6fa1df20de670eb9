//! Parameter counts of every preset next to the published reference
//! values, with the layer conventions behind them.
//!
//! `cargo run --example parameter_counts`

use deep_ela::model::{params_report, Preset, COUNT_CONVENTIONS};

fn main() {
    print!("{}\n{}", params_report(&[Preset::Tiny, Preset::Medium, Preset::Large]), COUNT_CONVENTIONS);
}
