//! Evaluation suites: 24 single-objective BBOB-style families with their
//! high-level property labels, and ZDT1-3 for the bi-objective harness.

mod bbob;

pub use bbob::{rosenbrock_raw, BbobFunction, GallagherPeaks, NAMES};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::problem::{Bounds, Objective, Origin, ProblemInstance};

pub const SUPPORTED_DIMS: [usize; 4] = [2, 3, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Multimodality {
    None,
    Low,
    Med,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GlobalStructure {
    None,
    Weak,
    Med,
    Strong,
    Deceptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Funnel {
    Yes,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HlpLabel {
    pub multimodality: Multimodality,
    pub global_structure: GlobalStructure,
    pub funnel: Funnel,
}

impl Multimodality {
    pub fn as_str(self) -> &'static str {
        match self {
            Multimodality::None => "none",
            Multimodality::Low => "low",
            Multimodality::Med => "med",
            Multimodality::High => "high",
        }
    }
}

impl GlobalStructure {
    pub fn as_str(self) -> &'static str {
        match self {
            GlobalStructure::None => "none",
            GlobalStructure::Weak => "weak",
            GlobalStructure::Med => "med",
            GlobalStructure::Strong => "strong",
            GlobalStructure::Deceptive => "deceptive",
        }
    }
}

impl Funnel {
    pub fn as_str(self) -> &'static str {
        match self {
            Funnel::Yes => "yes",
            Funnel::None => "none",
        }
    }
}

/// The three landscape properties used for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Property {
    Multimodality,
    GlobalStructure,
    Funnel,
}

impl Property {
    pub const ALL: [Property; 3] = [
        Property::Multimodality,
        Property::GlobalStructure,
        Property::Funnel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Property::Multimodality => "multimodality",
            Property::GlobalStructure => "global_structure",
            Property::Funnel => "funnel",
        }
    }
}

impl HlpLabel {
    pub fn get(&self, p: Property) -> &'static str {
        match p {
            Property::Multimodality => self.multimodality.as_str(),
            Property::GlobalStructure => self.global_structure.as_str(),
            Property::Funnel => self.funnel.as_str(),
        }
    }
}

use Funnel as F;
use GlobalStructure as G;
use Multimodality as M;

const HLP_TABLE: [(M, G, F); 24] = [
    (M::None, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::High, G::Strong, F::Yes),
    (M::High, G::Strong, F::Yes),
    (M::None, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::Low, G::None, F::Yes),
    (M::Low, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::None, G::None, F::Yes),
    (M::High, G::Strong, F::Yes),
    (M::High, G::Med, F::None),
    (M::High, G::Med, F::Yes),
    (M::High, G::Med, F::Yes),
    (M::High, G::Strong, F::Yes),
    (M::Med, G::Deceptive, F::Yes),
    (M::Med, G::None, F::None),
    (M::Low, G::None, F::None),
    (M::High, G::None, F::None),
    (M::High, G::Weak, F::Yes),
];

pub fn hlp_labels(fid: u8) -> Result<HlpLabel> {
    if !(1..=24).contains(&fid) {
        return Err(Error::UnknownBenchmark(format!("f{fid}")));
    }
    let (multimodality, global_structure, funnel) = HLP_TABLE[fid as usize - 1];
    Ok(HlpLabel {
        multimodality,
        global_structure,
        funnel,
    })
}

/// BBOB function groups 1-5, 6-9, 10-14, 15-19, 20-24.
pub fn function_group(fid: u8) -> u8 {
    match fid {
        1..=5 => 1,
        6..=9 => 2,
        10..=14 => 3,
        15..=19 => 4,
        _ => 5,
    }
}

/// Suite listing as CSV: `fid,name,multimodality,global_structure,funnel`.
pub fn suite_csv() -> String {
    let mut out = String::from("fid,name,multimodality,global_structure,funnel\n");
    for fid in 1..=24u8 {
        let l = hlp_labels(fid).expect("fid in range");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fid,
            NAMES[fid as usize - 1],
            l.multimodality.as_str(),
            l.global_structure.as_str(),
            l.funnel.as_str()
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ZdtFunction {
    Zdt1,
    Zdt2,
    Zdt3,
}

impl ZdtFunction {
    /// Evaluates on `[-5, 5]^2`, mapped affinely onto ZDT's `[0, 1]^2`.
    pub fn eval(&self, x: &[f64]) -> [f64; 2] {
        let u: Vec<f64> = x.iter().map(|v| ((v + 5.0) / 10.0).clamp(0.0, 1.0)).collect();
        let f1 = u[0];
        let tail = &u[1..];
        let g = 1.0 + 9.0 * tail.iter().sum::<f64>() / tail.len().max(1) as f64;
        let h = f1 / g;
        let f2 = match self {
            ZdtFunction::Zdt1 => g * (1.0 - h.sqrt()),
            ZdtFunction::Zdt2 => g * (1.0 - h * h),
            ZdtFunction::Zdt3 => g * (1.0 - h.sqrt() - h * (10.0 * std::f64::consts::PI * f1).sin()),
        };
        [f1, f2]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ZdtFunction::Zdt1 => "zdt1",
            ZdtFunction::Zdt2 => "zdt2",
            ZdtFunction::Zdt3 => "zdt3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Bbob(u8),
    Zdt(ZdtFunction),
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Bbob(fid) => write!(f, "f{fid}"),
            Family::Zdt(z) => f.write_str(z.name()),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zdt1" => Ok(Family::Zdt(ZdtFunction::Zdt1)),
            "zdt2" => Ok(Family::Zdt(ZdtFunction::Zdt2)),
            "zdt3" => Ok(Family::Zdt(ZdtFunction::Zdt3)),
            _ => {
                let fid = s
                    .strip_prefix('f')
                    .and_then(|v| v.parse::<u8>().ok())
                    .filter(|f| (1..=24).contains(f))
                    .ok_or_else(|| Error::UnknownBenchmark(s.to_string()))?;
                Ok(Family::Bbob(fid))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BenchmarkId {
    pub family: Family,
    pub instance_seed: u64,
}

impl BenchmarkId {
    pub fn bbob(fid: u8, instance_seed: u64) -> Self {
        BenchmarkId {
            family: Family::Bbob(fid),
            instance_seed,
        }
    }
}

pub fn make_benchmark(id: BenchmarkId, d: usize) -> Result<ProblemInstance> {
    let objectives = match id.family {
        Family::Bbob(fid) => {
            if !(1..=24).contains(&fid) {
                return Err(Error::UnknownBenchmark(format!("f{fid}")));
            }
            if !SUPPORTED_DIMS.contains(&d) {
                return Err(Error::UnsupportedDimension {
                    what: format!("f{fid}"),
                    d,
                });
            }
            vec![Objective::Bbob(Box::new(BbobFunction::new(fid, d, id.instance_seed)))]
        }
        Family::Zdt(function) => {
            if d != 2 {
                return Err(Error::UnsupportedDimension {
                    what: function.name().into(),
                    d,
                });
            }
            (0..2).map(|index| Objective::Zdt { function, index }).collect()
        }
    };
    Ok(ProblemInstance {
        objectives,
        bounds: Bounds::cube(d, -5.0, 5.0),
        origin: Origin::Benchmark {
            id: id.family.to_string(),
            instance_seed: id.instance_seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from;
    use ndarray::Array2;
    use rand::Rng as _;

    fn eval1(inst: &ProblemInstance, x: &[f64]) -> f64 {
        let m = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        inst.evaluate(m.view()).unwrap()[[0, 0]]
    }

    #[test]
    fn table_rows() {
        let l = hlp_labels(1).unwrap();
        assert_eq!((l.multimodality, l.global_structure, l.funnel), (M::None, G::None, F::Yes));
        let l = hlp_labels(23).unwrap();
        assert_eq!((l.multimodality, l.global_structure, l.funnel), (M::High, G::None, F::None));
        let l = hlp_labels(20).unwrap();
        assert_eq!((l.multimodality, l.global_structure, l.funnel), (M::Med, G::Deceptive, F::Yes));
        assert!(hlp_labels(0).is_err());
        assert!(hlp_labels(25).is_err());
    }

    #[test]
    fn csv_matches_checked_in_table() {
        let expected = include_str!("../../tests/data/hlp_table.csv");
        assert_eq!(suite_csv(), expected);
    }

    #[test]
    fn sphere_at_origin() {
        let inst = make_benchmark(BenchmarkId::bbob(1, 0), 2).unwrap();
        assert_eq!(eval1(&inst, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn rosenbrock_optimum() {
        assert_eq!(rosenbrock_raw(&[1.0, 1.0]), 0.0);
        let f = BbobFunction::new(8, 2, 0);
        assert!(f.eval(&[0.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn every_family_attains_f_opt_at_x_opt() {
        for fid in 1..=24u8 {
            for &d in &SUPPORTED_DIMS {
                for seed in [0u64, 3, 17] {
                    let f = BbobFunction::new(fid, d, seed);
                    let v = f.eval(&f.x_opt);
                    assert!(
                        (v - f.f_opt).abs() < 1e-6,
                        "f{fid} d={d} seed={seed}: {v} vs {}",
                        f.f_opt
                    );
                    // x_opt is a minimum over a local random probe.
                    let mut rng = rng_from(seed, &[fid as u64]);
                    for _ in 0..20 {
                        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
                        assert!(f.eval(&x) >= f.f_opt - 1e-9, "f{fid} below optimum");
                    }
                }
            }
        }
    }

    #[test]
    fn evaluation_deterministic_and_finite() {
        let mut rng = rng_from(5, &[]);
        for fid in 1..=24u8 {
            for &d in &SUPPORTED_DIMS {
                let a = make_benchmark(BenchmarkId::bbob(fid, 7), d).unwrap();
                let b = make_benchmark(BenchmarkId::bbob(fid, 7), d).unwrap();
                for _ in 0..200 {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
                    let (va, vb) = (eval1(&a, &x), eval1(&b, &x));
                    assert!(va.is_finite());
                    assert_eq!(va.to_bits(), vb.to_bits());
                }
            }
        }
    }

    #[test]
    fn unsupported_requests() {
        assert!(make_benchmark(BenchmarkId::bbob(1, 1), 4).is_err());
        assert!(make_benchmark(BenchmarkId::bbob(25, 1), 2).is_err());
        let zdt = BenchmarkId { family: Family::Zdt(ZdtFunction::Zdt1), instance_seed: 0 };
        assert!(make_benchmark(zdt, 3).is_err());
        assert_eq!(make_benchmark(zdt, 2).unwrap().m(), 2);
        assert!("f0".parse::<Family>().is_err());
        assert_eq!("zdt2".parse::<Family>().unwrap(), Family::Zdt(ZdtFunction::Zdt2));
    }

    #[test]
    fn zdt_front_endpoints() {
        // x2 = -5 maps to u2 = 0 (g = 1): the Pareto-optimal set.
        let [f1, f2] = ZdtFunction::Zdt1.eval(&[-5.0, -5.0]);
        assert_eq!((f1, f2), (0.0, 1.0));
        let [f1, f2] = ZdtFunction::Zdt2.eval(&[5.0, -5.0]);
        assert_eq!((f1, f2), (1.0, 0.0));
    }
}
