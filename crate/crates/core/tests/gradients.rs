use deep_ela::model::{BackboneConfig, DeepEla};
use deep_ela::pretrain::{loss_gradcheck, make_views, AugmentationSpec, TrainConfig};
use deep_ela::randgen::{generate_instance, GeneratorConfig};
use deep_ela::util::rng_from;

fn micro() -> BackboneConfig {
    BackboneConfig { nu: 2, k: 2, depth: 1, heads: 2, d_model: 8, n_feat: 4, stride: 1, dropout: 0.1 }
}

#[test]
fn full_loss_matches_central_differences() {
    let cfg = micro();
    let model: DeepEla<f64> = DeepEla::new(cfg, 3).unwrap();
    let mut rng = rng_from(5, &[]);
    let gen = GeneratorConfig::default();
    let views: Vec<_> = (0..3)
        .map(|_| {
            let inst = generate_instance(1, 1, &gen, &mut rng).unwrap();
            let (a, b) = make_views(&inst, 10, &AugmentationSpec::default(), &mut rng).unwrap();
            (model.tokenize(&a).unwrap(), model.tokenize(&b).unwrap())
        })
        .collect();
    let tc = TrainConfig { tau: 0.1, ..TrainConfig::default() };
    let gc = loss_gradcheck(&model, &views, &tc, &rng, 1e-4, 1e-6).unwrap();
    assert!(gc.checked == model.student.numel() && gc.checked <= 5000, "{gc:?}");
    assert!(gc.max_rel < 1e-4, "{gc:?}");
}
