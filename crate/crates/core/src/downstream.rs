//! Downstream evaluation: feature extraction over benchmark suites, kNN
//! classification of high-level properties, Pareto utilities, and
//! per-instance algorithm selection scored by relERT / relHV.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::benchmarks::{function_group, hlp_labels, make_benchmark, BenchmarkId, Family, Property};
use crate::ela::{ela_feature_names, ela_features};
use crate::error::{Error, Result};
use crate::model::DeepEla;
use crate::problem::Sample;
use crate::sampling::{sample_size, Sampler};
use crate::tensor::Scalar;
use crate::util::rng_from;

/// `(family, dimension, instance seed)` plus the repetition index of the
/// sample drawn from it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceKey {
    pub family: Family,
    pub dim: usize,
    pub instance_seed: u64,
    pub rep: usize,
}

impl InstanceKey {
    /// Instance identifier shared with performance tables, e.g. `f3_d2_i7`.
    pub fn instance(&self) -> String {
        format!("{}_d{}_i{}", self.family, self.dim, self.instance_seed)
    }

    pub fn id(&self) -> String {
        format!("{}_r{}", self.instance(), self.rep)
    }

    /// Parses `instance()` or `id()` output (repetition defaults to 0).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad instance key `{s}`"));
        let mut parts = s.split('_');
        let family = Family::from_str(parts.next().ok_or_else(bad)?)?;
        let dim = parts.next().and_then(|p| p.strip_prefix('d')).and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let instance_seed = parts.next().and_then(|p| p.strip_prefix('i')).and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let rep = match parts.next() {
            Some(p) => p.strip_prefix('r').and_then(|p| p.parse().ok()).ok_or_else(bad)?,
            None => 0,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(InstanceKey { family, dim, instance_seed, rep })
    }

    fn family_code(&self) -> u64 {
        self.family.to_string().bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub key: InstanceKey,
    pub values: Vec<f64>,
}

/// Feature vectors of one source (`deep` or `ela`) with a fixed width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub source: String,
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDataset {
    pub fn new(source: &str, names: Vec<String>) -> Self {
        FeatureDataset { source: source.into(), names, rows: Vec::new() }
    }

    pub fn push(&mut self, key: InstanceKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::Shape(format!("{} features for {}, expected {}", values.len(), key.id(), self.names.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite feature for {}", key.id())));
        }
        self.rows.push(FeatureRow { key, values });
        Ok(())
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    /// Long-format CSV: `instance_id,fid,dim,instance_seed,feature_name,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("instance_id,fid,dim,instance_seed,feature_name,value\n");
        for r in &self.rows {
            for (n, v) in self.names.iter().zip(&r.values) {
                writeln!(s, "{},{},{},{},{},{:.17e}", r.key.id(), r.key.family, r.key.dim, r.key.instance_seed, n, v).unwrap();
            }
        }
        s
    }

    pub fn from_csv(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "instance_id,fid,dim,instance_seed,feature_name,value" => {}
            _ => return Err(Error::Parse { line: 1, msg: "missing feature CSV header".into() }),
        }
        let mut names: Vec<String> = Vec::new();
        let mut rows: Vec<(InstanceKey, Vec<f64>)> = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(perr(format!("expected 6 fields, got {}", f.len())));
            }
            let key = InstanceKey::parse(f[0]).map_err(|e| perr(e.to_string()))?;
            let v: f64 = f[5].parse().map_err(|_| perr(format!("bad value `{}`", f[5])))?;
            match rows.last_mut() {
                Some((k, vals)) if *k == key => vals.push(v),
                _ => rows.push((key, vec![v])),
            }
            if rows.len() == 1 {
                names.push(f[4].to_string());
            }
        }
        let mut ds = FeatureDataset::new(source, names);
        for (k, v) in rows {
            ds.push(k, v)?;
        }
        Ok(ds)
    }

    /// Mean feature vector per instance (over repetitions), keyed by
    /// [`InstanceKey::instance`].
    pub fn by_instance(&self) -> BTreeMap<String, (InstanceKey, Vec<f64>)> {
        let mut acc: BTreeMap<String, (InstanceKey, Vec<f64>, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc
                .entry(r.key.instance())
                .or_insert_with(|| (InstanceKey { rep: 0, ..r.key.clone() }, vec![0.0; r.values.len()], 0));
            for (a, v) in e.1.iter_mut().zip(&r.values) {
                *a += v;
            }
            e.2 += 1;
        }
        acc.into_iter()
            .map(|(k, (key, sum, c))| (k, (key, sum.into_iter().map(|v| v / c as f64).collect())))
            .collect()
    }
}

/// Anything that maps a sample to a fixed-width feature vector.
pub trait FeatureExtractor {
    fn source(&self) -> &str;
    fn feature_names(&self) -> Vec<String>;
    /// Rejects instance shapes the extractor cannot handle.
    fn check(&self, d: usize, m: usize) -> Result<()>;
    fn features(&self, sample: &Sample) -> Result<Vec<f64>>;
}

impl<T: Scalar> FeatureExtractor for DeepEla<T> {
    fn source(&self) -> &str {
        "deep"
    }

    fn feature_names(&self) -> Vec<String> {
        (0..self.config.n_feat).map(|i| format!("deep.{i}")).collect()
    }

    fn check(&self, d: usize, m: usize) -> Result<()> {
        if d + m > self.config.nu {
            return Err(Error::DimensionalViolation { d, m, nu: self.config.nu });
        }
        Ok(())
    }

    fn features(&self, sample: &Sample) -> Result<Vec<f64>> {
        let ts = self.tokenize(sample)?;
        Ok(self.forward_features(&ts)?.into_iter().map(|v| v.f64()).collect())
    }
}

/// Classical single-objective ELA features.
#[derive(Debug, Clone, Copy, Default)]
pub struct ElaExtractor;

impl FeatureExtractor for ElaExtractor {
    fn source(&self) -> &str {
        "ela"
    }

    fn feature_names(&self) -> Vec<String> {
        ela_feature_names()
    }

    fn check(&self, _d: usize, m: usize) -> Result<()> {
        if m != 1 {
            return Err(Error::InvalidArgument(format!("classical features need one objective, got {m}")));
        }
        Ok(())
    }

    fn features(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(ela_features(sample)?.into_iter().map(|(_, v)| v).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub families: Vec<Family>,
    pub dims: Vec<usize>,
    pub instance_seeds: Vec<u64>,
    pub repetitions: usize,
}

impl SuiteSpec {
    pub fn bbob(dims: Vec<usize>, instance_seeds: Vec<u64>) -> Self {
        SuiteSpec { families: (1..=24).map(Family::Bbob).collect(), dims, instance_seeds, repetitions: 1 }
    }

    pub fn keys(&self) -> Vec<InstanceKey> {
        let mut out = Vec::new();
        for &dim in &self.dims {
            for &family in &self.families {
                for &instance_seed in &self.instance_seeds {
                    for rep in 0..self.repetitions {
                        out.push(InstanceKey { family, dim, instance_seed, rep });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractReport {
    pub dataset: FeatureDataset,
    /// `(instance id, reason)` for every skipped key.
    pub skipped: Vec<(String, String)>,
}

/// Samples `multiplier * d` points per key and extracts features. Each key
/// has its own RNG stream, so results do not depend on suite order.
pub fn extract_features<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    suite: &SuiteSpec,
    sampler: Sampler,
    multiplier: usize,
    seed: u64,
) -> Result<ExtractReport> {
    let mut dataset = FeatureDataset::new(extractor.source(), extractor.feature_names());
    let mut skipped = Vec::new();
    for key in suite.keys() {
        let inst = match make_benchmark(BenchmarkId { family: key.family, instance_seed: key.instance_seed }, key.dim) {
            Ok(i) => i,
            Err(e @ Error::UnsupportedDimension { .. }) => {
                skipped.push((key.id(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Err(e) = extractor.check(inst.d(), inst.m()) {
            skipped.push((key.id(), e.to_string()));
            continue;
        }
        let mut rng = rng_from(seed, &[key.family_code(), key.instance_seed, key.dim as u64, key.rep as u64]);
        let x = sampler.sample(&inst.bounds, sample_size(key.dim, multiplier), &mut rng)?;
        let y = inst.evaluate(x.view())?;
        let feats = extractor.features(&Sample::new(x, y)?);
        match feats {
            Ok(v) if v.iter().all(|f| f.is_finite()) => dataset.push(key, v)?,
            Ok(_) => skipped.push((key.id(), "non-finite feature".into())),
            Err(e) => skipped.push((key.id(), e.to_string())),
        }
    }
    Ok(ExtractReport { dataset, skipped })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean k-nearest-neighbour majority vote. Neighbour ties go to the
/// lower training index; vote ties to the smaller summed neighbour
/// distance, then the lexicographically smaller label.
pub fn knn_classify(train: &[Vec<f64>], labels: &[String], test: &[Vec<f64>], k: usize) -> Result<Vec<String>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if labels.len() != train.len() {
        return Err(Error::Shape(format!("{} labels for {} training rows", labels.len(), train.len())));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} training rows", train.len())));
    }
    Ok(test
        .iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, t)| (sq_dist(q, t), i)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
            for &(dd, i) in &d[..k] {
                let e = votes.entry(labels[i].as_str()).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += dd.sqrt();
            }
            votes
                .into_iter()
                .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(b.0)))
                .map(|(l, _)| l.to_string())
                .expect("k >= 1")
        })
        .collect())
}

/// Unweighted mean of per-class F1 over the classes present in `labels`.
pub fn macro_f1(predictions: &[String], labels: &[String]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labels".into()));
    }
    let classes: BTreeSet<&String> = labels.iter().collect();
    let mut total = 0.0;
    for c in &classes {
        let tp = predictions.iter().zip(labels).filter(|(p, l)| p == c && l == c).count() as f64;
        let fp = predictions.iter().zip(labels).filter(|(p, l)| p == c && l != c).count() as f64;
        let fneg = predictions.iter().zip(labels).filter(|(p, l)| p != c && l == c).count() as f64;
        let denom = 2.0 * tp + fp + fneg;
        total += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    Ok(total / classes.len() as f64)
}

/// Most frequent label; ties to the lexicographically smaller one.
pub fn majority_label(labels: &[String]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts.into_iter().min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0))).map(|(l, _)| l.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HlpConfig {
    pub dims: Vec<usize>,
    pub train_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    pub k: usize,
    pub multiplier: usize,
    pub sampler: Sampler,
    pub seed: u64,
}

impl Default for HlpConfig {
    fn default() -> Self {
        HlpConfig {
            dims: vec![2],
            train_seeds: (1..=100).collect(),
            test_seeds: (125..=150).collect(),
            k: 5,
            multiplier: 50,
            sampler: Sampler::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HlpRow {
    pub property: Property,
    pub dim: usize,
    pub macro_f1: f64,
    /// Macro-F1 of always predicting the training majority class.
    pub baseline_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn fid_of(key: &InstanceKey) -> Result<u8> {
    match key.family {
        Family::Bbob(f) => Ok(f),
        other => Err(Error::InvalidArgument(format!("no property labels for {other}"))),
    }
}

/// Property classification on pre-extracted train and test features, one
/// classifier per (property, dimension).
pub fn hlp_from_datasets(train: &FeatureDataset, test: &FeatureDataset, dims: &[usize], k: usize) -> Result<Vec<HlpRow>> {
    let mut out = Vec::new();
    for p in Property::ALL {
        for &dim in dims {
            let pick = |ds: &FeatureDataset| -> Result<(Vec<Vec<f64>>, Vec<String>)> {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for r in ds.rows.iter().filter(|r| r.key.dim == dim) {
                    x.push(r.values.clone());
                    y.push(hlp_labels(fid_of(&r.key)?)?.get(p).to_string());
                }
                Ok((x, y))
            };
            let (xtr, ytr) = pick(train)?;
            let (xte, yte) = pick(test)?;
            if xtr.is_empty() || xte.is_empty() {
                continue;
            }
            let pred = knn_classify(&xtr, &ytr, &xte, k.min(xtr.len()))?;
            let major = majority_label(&ytr).expect("non-empty");
            let base = vec![major; yte.len()];
            out.push(HlpRow {
                property: p,
                dim,
                macro_f1: macro_f1(&pred, &yte)?,
                baseline_f1: macro_f1(&base, &yte)?,
                n_train: xtr.len(),
                n_test: xte.len(),
            });
        }
    }
    Ok(out)
}

/// Extracts features of all 24 BBOB functions on the train and test seed
/// ranges and classifies each high-level property.
pub fn hlp_experiment<E: FeatureExtractor + ?Sized>(extractor: &E, cfg: &HlpConfig) -> Result<Vec<HlpRow>> {
    let train = extract_features(extractor, &SuiteSpec::bbob(cfg.dims.clone(), cfg.train_seeds.clone()), cfg.sampler, cfg.multiplier, cfg.seed)?;
    let test = extract_features(extractor, &SuiteSpec::bbob(cfg.dims.clone(), cfg.test_seeds.clone()), cfg.sampler, cfg.multiplier, cfg.seed)?;
    hlp_from_datasets(&train.dataset, &test.dataset, &cfg.dims, cfg.k)
}

pub fn hlp_csv(rows: &[HlpRow]) -> String {
    let mut s = String::from("property,dim,macro_f1,majority_baseline,n_train,n_test\n");
    for r in rows {
        writeln!(s, "{},{},{:.6},{:.6},{},{}", r.property.as_str(), r.dim, r.macro_f1, r.baseline_f1, r.n_train, r.n_test).unwrap();
    }
    s
}

/// `a` weakly better everywhere and strictly better somewhere (minimization).
pub fn pareto_dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("objective vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y))
}

/// Non-dominated points in input order, each distinct point once.
pub fn pareto_front(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dominated = points.iter().enumerate().any(|(j, q)| j != i && pareto_dominates(q, p).unwrap_or(false));
        if !dominated && !out.contains(p) {
            out.push(p.clone());
        }
    }
    out
}

/// Area dominated by `front` and bounded by `reference` (minimization).
pub fn hypervolume_2d(front: &[[f64; 2]], reference: [f64; 2]) -> Result<f64> {
    if let Some(p) = front.iter().find(|p| !(p[0] < reference[0] && p[1] < reference[1])) {
        return Err(Error::InvalidArgument(format!("point {p:?} does not dominate the reference {reference:?}")));
    }
    let mut pts: Vec<[f64; 2]> = front.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut hv = 0.0;
    let mut best_y = reference[1];
    for p in pts {
        if p[1] < best_y {
            hv += (reference[0] - p[0]) * (best_y - p[1]);
            best_y = p[1];
        }
    }
    Ok(hv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    /// Expected running time in evaluations (lower is better).
    Ert,
    /// Hypervolume (higher is better).
    Hv,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ert => "ert",
            MetricKind::Hv => "hv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfRecord {
    pub instance: String,
    pub algorithm: String,
    pub repetition: u32,
    /// `None` marks a failed run.
    pub value: Option<f64>,
}

/// Algorithm performance per instance, one metric kind per table.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfTable {
    pub metric: MetricKind,
    pub records: Vec<PerfRecord>,
}

pub const PERF_HEADER: &str = "instance_key,algorithm,repetition,metric,value";

impl PerfTable {
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == PERF_HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: format!("expected header `{PERF_HEADER}`") }),
        }
        let mut metric = None;
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(perr(format!("expected 5 fields, got {}", f.len())));
            }
            let m = match f[3] {
                "ert" => MetricKind::Ert,
                "hv" => MetricKind::Hv,
                other => return Err(perr(format!("unknown metric `{other}`"))),
            };
            if *metric.get_or_insert(m) != m {
                return Err(perr("mixed metric kinds".into()));
            }
            let value = if f[4] == "failed" {
                None
            } else {
                let v: f64 = f[4].parse().map_err(|_| perr(format!("bad value `{}`", f[4])))?;
                let ok = match m {
                    MetricKind::Ert => v > 0.0 && v.is_finite(),
                    MetricKind::Hv => v >= 0.0 && v.is_finite(),
                };
                if !ok {
                    return Err(perr(format!("invalid {} value {v}", m.as_str())));
                }
                Some(v)
            };
            records.push(PerfRecord {
                instance: f[0].to_string(),
                algorithm: f[1].to_string(),
                repetition: f[2].parse().map_err(|_| perr(format!("bad repetition `{}`", f[2])))?,
                value,
            });
        }
        let metric = metric.ok_or_else(|| Error::MissingRecords("empty performance table".into()))?;
        Ok(PerfTable { metric, records })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{PERF_HEADER}\n");
        for r in &self.records {
            let v = r.value.map_or("failed".to_string(), |v| format!("{v}"));
            writeln!(s, "{},{},{},{},{}", r.instance, r.algorithm, r.repetition, self.metric.as_str(), v).unwrap();
        }
        s
    }

    /// Mean value per (instance, algorithm) over repetitions. Failed ERT
    /// runs count as `failure_penalty`, failed HV runs as 0. Errors when
    /// some pair is missing.
    pub fn matrix(&self, failure_penalty: f64) -> Result<PerfMatrix> {
        let algorithms: Vec<String> = self.records.iter().map(|r| r.algorithm.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut acc: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
        for r in &self.records {
            let v = r.value.unwrap_or(match self.metric {
                MetricKind::Ert => failure_penalty,
                MetricKind::Hv => 0.0,
            });
            let e = acc.entry(r.instance.clone()).or_default().entry(r.algorithm.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        let mut missing = Vec::new();
        let mut values = BTreeMap::new();
        for (inst, per) in acc {
            let mut row = Vec::with_capacity(algorithms.len());
            for a in &algorithms {
                match per.get(a) {
                    Some(&(s, c)) => row.push(s / c as f64),
                    None => missing.push(format!("{inst}/{a}")),
                }
            }
            values.insert(inst, row);
        }
        if !missing.is_empty() {
            return Err(Error::MissingRecords(missing.join(", ")));
        }
        Ok(PerfMatrix { metric: self.metric, algorithms, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfMatrix {
    pub metric: MetricKind,
    pub algorithms: Vec<String>,
    pub values: BTreeMap<String, Vec<f64>>,
}

impl PerfMatrix {
    /// Index of the best algorithm on `instance`; ties to the smaller name.
    pub fn best(&self, instance: &str) -> Option<usize> {
        let row = self.values.get(instance)?;
        let better = |a: f64, b: f64| match self.metric {
            MetricKind::Ert => a < b,
            MetricKind::Hv => a > b,
        };
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if better(v, row[best]) {
                best = i;
            }
        }
        Some(best)
    }

    /// Single best solver over `instances` by mean `score` (lower wins for
    /// ERT, higher for HV); ties to the smaller name.
    fn sbs(&self, instances: &[&str], score: impl Fn(&str, usize) -> f64) -> usize {
        let n = instances.len() as f64;
        let means: Vec<f64> = (0..self.algorithms.len()).map(|a| instances.iter().map(|i| score(i, a)).sum::<f64>() / n).collect();
        let mut best = 0;
        for a in 1..means.len() {
            let better = match self.metric {
                MetricKind::Ert => means[a] < means[best],
                MetricKind::Hv => means[a] > means[best],
            };
            if better {
                best = a;
            }
        }
        best
    }
}

/// `(ert + sample_cost) / ert_vbs`; the virtual best carries no sample cost.
pub fn relert(ert: f64, ert_vbs: f64, sample_cost: f64) -> Result<f64> {
    if !(ert_vbs > 0.0) || !(ert > 0.0) || sample_cost < 0.0 {
        return Err(Error::InvalidArgument(format!("relERT needs positive ERTs and cost >= 0, got ({ert}, {ert_vbs}, {sample_cost})")));
    }
    Ok((ert + sample_cost) / ert_vbs)
}

pub const RELHV_EPS: f64 = 1e-8;

/// `(hv - hv_sbs + eps) / (hv_vbs - hv_sbs + eps)`.
pub fn relhv(hv: f64, hv_sbs: f64, hv_vbs: f64) -> Result<f64> {
    if hv_vbs < hv_sbs {
        return Err(Error::Inconsistent(format!("VBS hypervolume {hv_vbs} below SBS {hv_sbs}")));
    }
    Ok((hv - hv_sbs + RELHV_EPS) / (hv_vbs - hv_sbs + RELHV_EPS))
}

/// How instances are split into training and test parts.
#[derive(Debug, Clone, PartialEq)]
pub enum Split {
    /// Cross-validation over instance seeds: the i-th distinct seed (in
    /// ascending order) lands in fold `i % folds`.
    SeedFolds(usize),
    /// Fixed training seeds; all other seeds are test instances.
    TrainSeeds(BTreeSet<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub dim: usize,
    pub group: String,
    pub instances: usize,
    pub sbs: f64,
    pub selector: f64,
    pub vbs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub metric: MetricKind,
    pub rows: Vec<SelectionRow>,
    /// Per test instance: `(instance, selected algorithm)`.
    pub choices: Vec<(String, String)>,
}

impl SelectionReport {
    pub fn to_csv(&self) -> String {
        let m = match self.metric {
            MetricKind::Ert => "relert",
            MetricKind::Hv => "relhv",
        };
        let mut s = String::from("metric,dim,group,instances,sbs,selector,vbs\n");
        for r in &self.rows {
            writeln!(s, "{m},{},{},{},{:.6},{:.6},{:.6}", r.dim, r.group, r.instances, r.sbs, r.selector, r.vbs).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AasConfig {
    pub split: Split,
    pub k: usize,
    /// Sample cost per instance is `multiplier * d` evaluations (ERT only).
    pub multiplier: usize,
    /// ERT charged for failed runs.
    pub failure_penalty: f64,
}

fn group_name(key: &InstanceKey) -> String {
    match key.family {
        Family::Bbob(f) => format!("g{}", function_group(f)),
        Family::Zdt(_) => "zdt".into(),
    }
}

/// Per-instance algorithm selection with a kNN selector. Labels are the
/// best algorithm per training instance; scores are relERT or relHV on the
/// test instances, grouped by dimension and function group (plus `all`).
pub fn aas_experiment(features: &FeatureDataset, perf: &PerfTable, cfg: &AasConfig) -> Result<SelectionReport> {
    let pm = perf.matrix(cfg.failure_penalty)?;
    let feats = features.by_instance();
    let unjoined: Vec<&String> = pm.values.keys().filter(|k| !feats.contains_key(*k)).collect();
    if !unjoined.is_empty() {
        let names: Vec<&str> = unjoined.iter().map(|s| s.as_str()).collect();
        return Err(Error::MissingRecords(format!("no features for: {}", names.join(", "))));
    }
    let keys: Vec<(&String, &InstanceKey)> = pm.values.keys().map(|k| (k, &feats[k].0)).collect();
    let seeds: Vec<u64> = keys.iter().map(|(_, k)| k.instance_seed).collect::<BTreeSet<_>>().into_iter().collect();
    let folds: Vec<(BTreeSet<u64>, BTreeSet<u64>)> = match &cfg.split {
        Split::SeedFolds(f) => {
            if *f < 2 {
                return Err(Error::InvalidArgument("need at least 2 folds".into()));
            }
            (0..*f)
                .map(|fold| {
                    let test: BTreeSet<u64> = seeds.iter().enumerate().filter(|(i, _)| i % f == fold).map(|(_, s)| *s).collect();
                    let train = seeds.iter().filter(|s| !test.contains(s)).copied().collect();
                    (train, test)
                })
                .collect()
        }
        Split::TrainSeeds(tr) => vec![(tr.clone(), seeds.iter().filter(|s| !tr.contains(s)).copied().collect())],
    };
    // Per test instance: (dim, group, sbs, selector, vbs).
    let mut scored: Vec<(usize, String, f64, f64, f64)> = Vec::new();
    let mut choices = Vec::new();
    let score = |inst: &str, alg: usize, cost: f64| -> Result<f64> {
        let row = &pm.values[inst];
        let b = pm.best(inst).expect("known instance");
        match pm.metric {
            MetricKind::Ert => relert(row[alg], row[b], cost),
            MetricKind::Hv => Ok(row[alg]),
        }
    };
    for (train, test) in folds {
        let tr: Vec<&(&String, &InstanceKey)> = keys.iter().filter(|(_, k)| train.contains(&k.instance_seed)).collect();
        let te: Vec<&(&String, &InstanceKey)> = keys.iter().filter(|(_, k)| test.contains(&k.instance_seed)).collect();
        if tr.is_empty() || te.is_empty() {
            continue;
        }
        let tr_names: Vec<&str> = tr.iter().map(|(n, _)| n.as_str()).collect();
        let sbs = pm.sbs(&tr_names, |i, a| score(i, a, 0.0).expect("validated table"));
        let xtr: Vec<Vec<f64>> = tr.iter().map(|(n, _)| feats[*n].1.clone()).collect();
        let ytr: Vec<String> = tr.iter().map(|(n, _)| pm.algorithms[pm.best(n).expect("known")].clone()).collect();
        let xte: Vec<Vec<f64>> = te.iter().map(|(n, _)| feats[*n].1.clone()).collect();
        let pred = knn_classify(&xtr, &ytr, &xte, cfg.k.min(xtr.len()))?;
        for ((name, key), p) in te.iter().zip(pred) {
            let a = pm.algorithms.iter().position(|x| *x == p).expect("label is an algorithm");
            let vbs = pm.best(name).expect("known");
            let cost = (cfg.multiplier * key.dim) as f64;
            let (s_sbs, s_sel, s_vbs) = match pm.metric {
                MetricKind::Ert => (score(name, sbs, 0.0)?, score(name, a, cost)?, score(name, vbs, 0.0)?),
                MetricKind::Hv => {
                    let row = &pm.values[name.as_str()];
                    let (hs, hv) = (row[sbs], row[vbs]);
                    (relhv(hs, hs, hv)?, relhv(row[a], hs, hv)?, relhv(hv, hs, hv)?)
                }
            };
            scored.push((key.dim, group_name(key), s_sbs, s_sel, s_vbs));
            choices.push((name.to_string(), p));
        }
    }
    let mut groups: BTreeMap<(usize, String), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (dim, g, a, b, c) in scored {
        groups.entry((dim, g)).or_default().push((a, b, c));
        groups.entry((dim, "all".into())).or_default().push((a, b, c));
    }
    let rows = groups
        .into_iter()
        .map(|((dim, group), v)| {
            let n = v.len() as f64;
            SelectionRow {
                dim,
                group,
                instances: v.len(),
                sbs: v.iter().map(|t| t.0).sum::<f64>() / n,
                selector: v.iter().map(|t| t.1).sum::<f64>() / n,
                vbs: v.iter().map(|t| t.2).sum::<f64>() / n,
            }
        })
        .collect();
    choices.sort();
    Ok(SelectionReport { metric: pm.metric, rows, choices })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn knn_rules() {
        let train = vec![vec![0.0], vec![1.0], vec![5.0]];
        assert_eq!(knn_classify(&train, &s(&["a", "a", "b"]), &[vec![5.0]], 1).unwrap(), s(&["b"]));
        assert_eq!(knn_classify(&train, &s(&["a", "a", "b"]), &[vec![4.0]], 3).unwrap(), s(&["a"]));
        // 2 vs 2 at k = 4: distances b = 1 + 1, a = 1.5 + 2.
        let train = vec![vec![-1.5], vec![2.0], vec![1.0], vec![-1.0], vec![9.0]];
        let got = knn_classify(&train, &s(&["a", "a", "b", "b", "a"]), &[vec![0.0]], 4).unwrap();
        assert_eq!(got, s(&["b"]));
        assert!(knn_classify(&[], &[], &[vec![0.0]], 1).is_err());
    }

    #[test]
    fn macro_f1_fixtures() {
        assert_eq!(macro_f1(&s(&["a", "b"]), &s(&["a", "b"])).unwrap(), 1.0);
        let m = macro_f1(&s(&["A", "A", "A", "A"]), &s(&["A", "A", "B", "B"])).unwrap();
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&s(&["x", "x"]), &s(&["x", "x"])).unwrap(), 1.0);
        assert!(macro_f1(&s(&["x"]), &s(&["x", "y"])).is_err());
    }

    #[test]
    fn pareto_basics() {
        assert!(pareto_dominates(&[1.0, 1.0], &[2.0, 2.0]).unwrap());
        assert!(!pareto_dominates(&[1.0, 2.0], &[2.0, 1.0]).unwrap());
        assert!(!pareto_dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(pareto_dominates(&[1.0], &[1.0, 2.0]).is_err());
        let f = pareto_front(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![2.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(f, vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
    }

    #[test]
    fn hypervolume_fixtures() {
        assert_eq!(hypervolume_2d(&[[1.0, 2.0], [2.0, 1.0]], [3.0, 3.0]).unwrap(), 3.0);
        assert_eq!(hypervolume_2d(&[[1.0, 1.0]], [3.0, 3.0]).unwrap(), 4.0);
        assert!(hypervolume_2d(&[[3.0, 3.0]], [3.0, 3.0]).is_err());
        assert_eq!(hypervolume_2d(&[[1.0, 1.0], [2.0, 2.0], [1.0, 1.0]], [3.0, 3.0]).unwrap(), 4.0);
    }

    #[test]
    fn relative_metrics() {
        assert_eq!(relert(200.0, 100.0, 0.0).unwrap(), 2.0);
        assert_eq!(relert(100.0, 100.0, 50.0 * 2.0).unwrap(), 2.0);
        assert_eq!(relhv(0.7, 0.2, 0.7).unwrap(), 1.0);
        assert_eq!(relhv(0.5, 0.5, 0.5).unwrap(), 1.0);
        assert_eq!(relhv(0.2, 0.2, 0.7).unwrap(), (0.2 - 0.2 + 1e-8) / (0.7 - 0.2 + 1e-8));
        assert!((relhv(0.2, 0.2, 0.7).unwrap() - 2e-8).abs() < 1e-15);
        assert!(relhv(0.2, 0.7, 0.2).is_err());
    }

    #[test]
    fn instance_key_round_trip() {
        let k = InstanceKey { family: Family::Bbob(7), dim: 3, instance_seed: 12, rep: 2 };
        assert_eq!(k.id(), "f7_d3_i12_r2");
        assert_eq!(InstanceKey::parse(&k.id()).unwrap(), k);
        assert_eq!(InstanceKey::parse("zdt1_d2_i1").unwrap().rep, 0);
        assert!(InstanceKey::parse("f7_x3_i1").is_err());
    }

    fn toy(metric: &str, rows: &[(&str, &str, f64)]) -> PerfTable {
        let mut t = format!("{PERF_HEADER}\n");
        for (i, a, v) in rows {
            t.push_str(&format!("{i},{a},0,{metric},{v}\n"));
        }
        PerfTable::from_csv(&t).unwrap()
    }

    fn feature_set(keys: &[(&str, f64)]) -> FeatureDataset {
        let mut ds = FeatureDataset::new("test", vec!["x".into()]);
        for (k, v) in keys {
            ds.push(InstanceKey::parse(k).unwrap(), vec![*v]).unwrap();
        }
        ds
    }

    #[test]
    fn dominant_algorithm_gives_unit_scores() {
        let inst: Vec<String> = (1..=6).map(|i| format!("f1_d2_i{i}")).collect();
        let mut rows = Vec::new();
        for i in &inst {
            rows.push((i.as_str(), "good", 10.0));
            rows.push((i.as_str(), "bad", 50.0));
        }
        let perf = toy("ert", &rows);
        let fk: Vec<(&str, f64)> = inst.iter().enumerate().map(|(j, i)| (i.as_str(), j as f64)).collect();
        let cfg = AasConfig { split: Split::SeedFolds(3), k: 1, multiplier: 0, failure_penalty: 1e6 };
        let rep = aas_experiment(&feature_set(&fk), &perf, &cfg).unwrap();
        for r in &rep.rows {
            assert_eq!((r.sbs, r.selector, r.vbs), (1.0, 1.0, 1.0));
        }
        let hv: Vec<(&str, &str, f64)> = rows.iter().map(|(i, a, v)| (*i, *a, 1.0 / v)).collect();
        let rep = aas_experiment(&feature_set(&fk), &toy("hv", &hv), &cfg).unwrap();
        assert!(rep.rows.iter().all(|r| r.selector == 1.0 && r.vbs == 1.0 && r.sbs == 1.0));
    }

    #[test]
    fn separable_winners_reach_vbs() {
        let mut rows = Vec::new();
        let mut fk = Vec::new();
        let names: Vec<String> = (1..=10).map(|i| format!("f2_d2_i{i}")).collect();
        for (i, n) in names.iter().enumerate() {
            let left = i % 2 == 0;
            rows.push((n.as_str(), "a", if left { 10.0 } else { 100.0 }));
            rows.push((n.as_str(), "b", if left { 100.0 } else { 12.0 }));
            fk.push((n.as_str(), if left { 0.0 } else { 10.0 }));
        }
        let cfg = AasConfig { split: Split::TrainSeeds((1..=6).collect()), k: 1, multiplier: 0, failure_penalty: 1e6 };
        let rep = aas_experiment(&feature_set(&fk), &toy("ert", &rows), &cfg).unwrap();
        let all = rep.rows.iter().find(|r| r.group == "all").unwrap();
        assert_eq!(all.selector, 1.0);
        assert!(all.sbs > 1.0);
        assert_eq!(rep.choices.len(), 4);
    }

    #[test]
    fn perf_table_validation() {
        let t = format!("{PERF_HEADER}\nf1_d2_i1,a,0,ert,failed\nf1_d2_i1,a,1,ert,30\n");
        let p = PerfTable::from_csv(&t).unwrap();
        assert_eq!(p.matrix(100.0).unwrap().values["f1_d2_i1"], vec![65.0]);
        assert!(PerfTable::from_csv(&format!("{PERF_HEADER}\nf1_d2_i1,a,0,ert,-3\n")).is_err());
        let t = format!("{PERF_HEADER}\nf1_d2_i1,a,0,ert,3\nf1_d2_i2,b,0,ert,4\n");
        assert!(matches!(PerfTable::from_csv(&t).unwrap().matrix(1.0), Err(Error::MissingRecords(_))));
        assert_eq!(PerfTable::from_csv(&p.to_csv()).unwrap(), p);
    }

    #[test]
    fn feature_csv_round_trip() {
        let mut ds = FeatureDataset::new("ela", vec!["a".into(), "b".into()]);
        ds.push(InstanceKey::parse("f1_d2_i1_r0").unwrap(), vec![0.1, -2.5e-7]).unwrap();
        ds.push(InstanceKey::parse("f1_d2_i1_r1").unwrap(), vec![0.3, 1.0 / 3.0]).unwrap();
        let back = FeatureDataset::from_csv(&ds.to_csv(), "ela").unwrap();
        assert_eq!(back, ds);
        assert!(ds.push(InstanceKey::parse("f1_d2_i2").unwrap(), vec![f64::NAN, 0.0]).is_err());
        let avg = ds.by_instance();
        assert!((avg["f1_d2_i1"].1[0] - 0.2).abs() < 1e-15);
    }
}
