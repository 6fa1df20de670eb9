//! Evaluatable optimization problems: decision box, objectives and provenance.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::benchmarks::{BbobFunction, ZdtFunction};
use crate::error::{Error, Result};
use crate::randgen::ExprNode;

/// Axis-aligned decision box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Shape(format!(
                "bounds need matching non-empty lo/hi, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        let b = Bounds { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        Bounds {
            lo: vec![lo; d],
            hi: vec![hi; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (dim, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(lo < hi) {
                return Err(Error::EmptyBox { dim, lo, hi });
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn random_point(&self, rng: &mut crate::Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| rng.random_range(l..h))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Random { seed: u64 },
    Benchmark { id: String, instance_seed: u64 },
}

/// One objective of a problem instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Tree(ExprNode),
    Bbob(Box<BbobFunction>),
    /// Objective `index` (0 or 1) of a bi-objective ZDT function.
    Zdt { function: ZdtFunction, index: usize },
}

impl Objective {
    /// Evaluates the objective on every row of `x`.
    pub fn evaluate(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            Objective::Tree(tree) => tree.evaluate(x),
            Objective::Bbob(f) => {
                let out: Vec<f64> = x.rows().into_iter().map(|r| f.eval(&r.to_vec())).collect();
                check_finite(&out)?;
                Ok(out)
            }
            Objective::Zdt { function, index } => {
                let out: Vec<f64> = x
                    .rows()
                    .into_iter()
                    .map(|r| function.eval(&r.to_vec())[*index])
                    .collect();
                check_finite(&out)?;
                Ok(out)
            }
        }
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(point) => Err(Error::NonFinite { point }),
        None => Ok(()),
    }
}

/// An evaluatable optimization problem with `d` decision variables and
/// `m` objectives (all minimized).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub objectives: Vec<Objective>,
    pub bounds: Bounds,
    pub origin: Origin,
}

impl ProblemInstance {
    pub fn d(&self) -> usize {
        self.bounds.dim()
    }

    pub fn m(&self) -> usize {
        self.objectives.len()
    }

    /// Evaluates all objectives, returning an `n x m` matrix.
    pub fn evaluate(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d() {
            return Err(Error::Shape(format!(
                "instance has d={}, sample has {} columns",
                self.d(),
                x.ncols()
            )));
        }
        let mut y = Array2::zeros((x.nrows(), self.m()));
        for (j, obj) in self.objectives.iter().enumerate() {
            let col = obj.evaluate(x)?;
            for (i, v) in col.into_iter().enumerate() {
                y[[i, j]] = v;
            }
        }
        Ok(y)
    }
}

/// Paired decision and objective matrices drawn from one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl Sample {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!(
                "sample has {} decision rows but {} objective rows",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(Sample { x, y })
    }

    /// Draws `x` from the instance box with `sampler` and evaluates it.
    pub fn draw(
        instance: &ProblemInstance,
        n: usize,
        sampler: crate::sampling::Sampler,
        rng: &mut crate::Rng,
    ) -> Result<Self> {
        let x = sampler.sample(&instance.bounds, n, rng)?;
        let y = instance.evaluate(x.view())?;
        Ok(Sample { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }
}
