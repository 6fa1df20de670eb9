//! Random single- and multi-objective problems built from operator
//! expression trees, plus the acceptance filter that discards degenerate
//! instances.

mod expr;
mod record;

pub use expr::{
    BinaryOp, ExprNode, OperatorWeights, Reduction, UnaryOp, DIV_GUARD, EXP_CAP, LOG_GUARD,
    SATURATION,
};
pub use record::{parse_corpus, parse_record, write_corpus, write_record};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Bounds, Objective, Origin, ProblemInstance};
use crate::sampling::uniform_sample;
use crate::util::{mean_std, rng_from};

pub const DEFAULT_LOWER: usize = 4;
pub const DEFAULT_UPPER: usize = 32;
pub const DEFAULT_VALUE_CAP: f64 = 1e7;
pub const DEFAULT_MIN_STD: f64 = 0.1;
pub const DEFAULT_RETRY_BUDGET: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub d: usize,
    pub op_bounds: (usize, usize),
    pub seed: u64,
    pub value_cap: f64,
    pub min_std: f64,
    /// Probe sample size for the filter; `None` means `50 * d`.
    pub probe_size: Option<usize>,
    pub retry_budget: usize,
    pub weights: OperatorWeights,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            d: 2,
            op_bounds: (DEFAULT_LOWER, DEFAULT_UPPER),
            seed: 0,
            value_cap: DEFAULT_VALUE_CAP,
            min_std: DEFAULT_MIN_STD,
            probe_size: None,
            retry_budget: DEFAULT_RETRY_BUDGET,
            weights: OperatorWeights::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn new(d: usize, seed: u64) -> Self {
        GeneratorConfig {
            d,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.op_bounds;
        if self.d < 1 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!(
                "operator bounds must satisfy 1 <= lower <= upper, got ({lo}, {hi})"
            )));
        }
        if !(self.min_std > 0.0) || !(self.value_cap > 0.0) {
            return Err(Error::Config("min_std and value_cap must be positive".into()));
        }
        if self.probe_size.is_some_and(|p| p < 2) {
            return Err(Error::Config("probe_size must be >= 2".into()));
        }
        if self.retry_budget == 0 {
            return Err(Error::Config("retry_budget must be >= 1".into()));
        }
        self.weights.validate()
    }

    pub fn probe_size_for(&self, d: usize) -> usize {
        self.probe_size.unwrap_or(50 * d)
    }
}

/// Draws a tree whose operator count is uniform in `config.op_bounds`.
pub fn generate_tree(config: &GeneratorConfig, rng: &mut crate::Rng) -> ExprNode {
    let (lo, hi) = config.op_bounds;
    let budget = rng.random_range(lo..=hi);
    expr::grow(budget, config.d, &config.weights, rng)
}

/// Filter outcome per objective; `Accepted` iff all three conditions hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    NonFinite,
    LowStd,
    OutOfRange,
}

/// Probes one objective on `probe` points (already drawn) and classifies it.
pub fn judge(values: Option<&[f64]>, config: &GeneratorConfig) -> Verdict {
    let Some(values) = values else {
        return Verdict::NonFinite;
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Verdict::NonFinite;
    }
    if values.iter().any(|v| v.abs() > config.value_cap) {
        return Verdict::OutOfRange;
    }
    let (_, std) = mean_std(values);
    if std < config.min_std {
        return Verdict::LowStd;
    }
    Verdict::Accepted
}

/// Probes `instance` with a fresh uniform sample and applies the filter to
/// every objective.
pub fn accept_instance(
    instance: &ProblemInstance,
    config: &GeneratorConfig,
    rng: &mut crate::Rng,
) -> bool {
    let n = config.probe_size_for(instance.d()).max(2);
    let Ok(x) = uniform_sample(&instance.bounds, n, rng) else {
        return false;
    };
    instance.objectives.iter().all(|obj| {
        let values = obj.evaluate(x.view()).ok();
        judge(values.as_deref(), config) == Verdict::Accepted
    })
}

/// Per-instance generation statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationStats {
    pub attempts: usize,
    pub accepted: usize,
}

/// Generates an accepted `d`-dimensional instance with `m` independent
/// random objectives on `[-5, 5]^d`. The instance seed is drawn from `rng`
/// and recorded in the origin, so the instance is reproducible from it.
pub fn generate_instance(
    d: usize,
    m: usize,
    config: &GeneratorConfig,
    rng: &mut crate::Rng,
) -> Result<ProblemInstance> {
    let seed = rng.random::<u64>();
    generate_instance_seeded(d, m, config, seed).map(|(inst, _)| inst)
}

pub fn generate_instance_seeded(
    d: usize,
    m: usize,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<(ProblemInstance, GenerationStats)> {
    if d < 1 || m < 1 {
        return Err(Error::InvalidArgument(format!("need d >= 1 and m >= 1, got d={d}, m={m}")));
    }
    let cfg = GeneratorConfig {
        d,
        ..config.clone()
    };
    cfg.validate()?;
    let bounds = Bounds::cube(d, -5.0, 5.0);
    let mut rng = rng_from(seed, &[d as u64, m as u64]);
    let mut stats = GenerationStats::default();
    let mut objectives = Vec::with_capacity(m);
    for objective in 0..m {
        let mut found = None;
        for _ in 0..cfg.retry_budget {
            stats.attempts += 1;
            let tree = generate_tree(&cfg, &mut rng);
            let probe = uniform_sample(&bounds, cfg.probe_size_for(d), &mut rng)?;
            let values = tree.evaluate(probe.view()).ok();
            if judge(values.as_deref(), &cfg) == Verdict::Accepted {
                found = Some(tree);
                break;
            }
        }
        match found {
            Some(tree) => {
                stats.accepted += 1;
                objectives.push(Objective::Tree(tree));
            }
            None => {
                return Err(Error::RetryBudgetExhausted {
                    objective,
                    attempts: cfg.retry_budget,
                })
            }
        }
    }
    Ok((
        ProblemInstance {
            objectives,
            bounds,
            origin: Origin::Random { seed },
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from;
    use ndarray::Array2;

    fn tree_instance(tree: ExprNode, d: usize) -> ProblemInstance {
        ProblemInstance {
            objectives: vec![Objective::Tree(tree)],
            bounds: Bounds::cube(d, -5.0, 5.0),
            origin: Origin::Random { seed: 0 },
        }
    }

    #[test]
    fn same_seed_same_tree() {
        let cfg = GeneratorConfig::new(3, 7);
        let a = generate_tree(&cfg, &mut rng_from(7, &[]));
        let b = generate_tree(&cfg, &mut rng_from(7, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_seeds_give_distinct_trees() {
        let cfg = GeneratorConfig::new(3, 0);
        let trees: std::collections::HashSet<String> = (0..100u64)
            .map(|s| generate_tree(&cfg, &mut rng_from(s, &[])).to_string())
            .collect();
        assert!(trees.len() >= 99, "only {} distinct trees", trees.len());
    }

    #[test]
    fn operator_count_within_bounds() {
        let cfg = GeneratorConfig {
            op_bounds: (4, 9),
            ..GeneratorConfig::new(2, 0)
        };
        let mut rng = rng_from(1, &[]);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            let t = generate_tree(&cfg, &mut rng);
            let c = t.operator_count();
            assert!((4..=9).contains(&c));
            t.validate(2).unwrap();
            seen.insert(c);
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn constant_objective_rejected() {
        let inst = tree_instance(ExprNode::Const(5.0), 2);
        assert!(!accept_instance(&inst, &GeneratorConfig::new(2, 0), &mut rng_from(0, &[])));
    }

    #[test]
    fn huge_objective_rejected() {
        let tree = ExprNode::Binary(
            BinaryOp::Add,
            Box::new(ExprNode::Const(1e8)),
            Box::new(ExprNode::Var(0)),
        );
        let inst = tree_instance(tree, 2);
        assert!(!accept_instance(&inst, &GeneratorConfig::new(2, 0), &mut rng_from(0, &[])));
    }

    #[test]
    fn linear_objective_accepted() {
        // Std of U(-5, 5) is 10/sqrt(12) ~ 2.89, far above 0.1.
        let inst = tree_instance(ExprNode::Var(0), 2);
        let cfg = GeneratorConfig {
            probe_size: Some(64),
            ..GeneratorConfig::new(2, 0)
        };
        let x = uniform_sample(&inst.bounds, 64, &mut rng_from(3, &[])).unwrap();
        let (_, std) = mean_std(&x.column(0).to_vec());
        assert!((std - 10.0 / 12f64.sqrt()).abs() < 0.6);
        assert!(accept_instance(&inst, &cfg, &mut rng_from(3, &[])));
    }

    #[test]
    fn generated_instance_shape_and_filter() {
        let cfg = GeneratorConfig::new(2, 0);
        let inst = generate_instance(2, 1, &cfg, &mut rng_from(11, &[])).unwrap();
        assert_eq!((inst.d(), inst.m()), (2, 1));
        assert_eq!(inst.bounds, Bounds::cube(2, -5.0, 5.0));
    }

    #[test]
    fn multi_objective_objectives_differ() {
        let cfg = GeneratorConfig::new(2, 0);
        let probe = uniform_sample(&Bounds::cube(2, -5.0, 5.0), 100, &mut rng_from(5, &[])).unwrap();
        let mut differing = 0;
        for s in 0..100u64 {
            let inst = generate_instance(2, 2, &cfg, &mut rng_from(s, &[99])).unwrap();
            let y: Array2<f64> = inst.evaluate(probe.view()).unwrap();
            if y.column(0) != y.column(1) {
                differing += 1;
            }
        }
        assert!(differing >= 99, "{differing}");
    }

    #[test]
    fn unreachable_min_std_exhausts_budget() {
        let cfg = GeneratorConfig {
            min_std: 1e6,
            retry_budget: 50,
            ..GeneratorConfig::new(2, 0)
        };
        let err = generate_instance(2, 1, &cfg, &mut rng_from(0, &[])).unwrap_err();
        assert!(matches!(err, Error::RetryBudgetExhausted { attempts: 50, .. }));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            GeneratorConfig { op_bounds: (0, 3), ..Default::default() },
            GeneratorConfig { op_bounds: (5, 3), ..Default::default() },
            GeneratorConfig { min_std: 0.0, ..Default::default() },
            GeneratorConfig { value_cap: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
