//! Contrastive pretraining of the tiny preset on freshly generated problems.
//!
//! `cargo run --release --example pretrain_tiny -- [steps]`

use std::time::Instant;

use deep_ela::model::{BackboneConfig, Preset};
use deep_ela::pretrain::{alignment_report, heldout_instances, InstanceSource, TrainConfig, Trainer};
use deep_ela::randgen::GeneratorConfig;
use deep_ela::util::rng_from;

fn main() -> deep_ela::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let backbone = BackboneConfig::preset(Preset::Tiny);
    let config = TrainConfig { seed: 1, ..TrainConfig::default() }.with_steps(steps);
    let gen = GeneratorConfig::default();
    let mut trainer: Trainer<f32> = Trainer::new(backbone, config.clone(), InstanceSource::Generator(gen.clone()))?;
    let held = heldout_instances(100, &config, backbone.nu, &gen, 12345)?;
    let before = alignment_report(&trainer.model, &held, config.multiplier, &config.augment, &mut rng_from(9, &[]))?;
    println!("untrained alignment: {before:?}");
    let start = Instant::now();
    let log = trainer.run(steps, |_, lb| {
        if lb.step % 100 == 0 || lb.step == 1 {
            println!("step {:5} loss {:.5} pos {:.3} neg {:.3} lr {:.2e} ({:.2}s/step)",
                lb.step, lb.loss, lb.pos_cos, lb.neg_cos, lb.lr, start.elapsed().as_secs_f64() / lb.step as f64);
        }
        Ok(())
    })?;
    let w = (steps / 20).max(1);
    let head: f64 = log[..w].iter().map(|l| l.loss).sum::<f64>() / w as f64;
    let tail: f64 = log[steps - w..].iter().map(|l| l.loss).sum::<f64>() / w as f64;
    println!("first {w} mean {head:.5}, last {w} mean {tail:.5}, ratio {:.3}", tail / head);
    let after = alignment_report(&trainer.model, &held, config.multiplier, &config.augment, &mut rng_from(9, &[]))?;
    println!("trained alignment: {after:?}");
    Ok(())
}
