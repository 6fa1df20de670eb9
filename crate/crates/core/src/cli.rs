//! The `deep-ela` command line: argument parsing, config files and the
//! subcommand drivers. [`run`] returns the process exit code.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::benchmarks::Family;
use crate::downstream::{
    aas_experiment, extract_features, hlp_csv, hlp_experiment, AasConfig, ElaExtractor, FeatureDataset,
    FeatureExtractor, HlpConfig, InstanceKey, PerfTable, Split, SuiteSpec,
};
use crate::ela::{corr_report, snr_csv, snr_grouped, CorrMethod, CorrOptions};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, params_report, save_checkpoint, BackboneConfig, DeepEla, Preset, COUNT_CONVENTIONS};
use crate::pretrain::{metrics_row, InstanceSource, TrainConfig, Trainer};
use crate::randgen::{generate_instance_seeded, parse_corpus, write_corpus, GeneratorConfig};
use crate::sampling::Sampler;
use crate::tensor::Scalar;
use crate::util::{derive_seed, read_to_string, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "deep-ela", version, about = "Learned and classical landscape features for black-box optimization")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Floating-point width of model computations.
    #[arg(long, global = true, value_enum, default_value_t = Precision::P64)]
    pub precision: Precision,
    /// Worker threads; computation is sequential, so values above 1 change nothing.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    #[value(name = "32")]
    P32,
    #[value(name = "64")]
    P64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus of random problem instances.
    Gen(GenArgs),
    /// Contrastive pretraining; writes a checkpoint and a metrics CSV.
    Pretrain(PretrainArgs),
    /// Learned features of benchmark instances.
    Extract(ExtractArgs),
    /// Classical ELA features of benchmark instances.
    Ela(SuiteArgs),
    /// Feature diagnostics.
    #[command(subcommand)]
    Report(ReportCmd),
    /// High-level property classification.
    Hlp(HlpArgs),
    /// Per-instance algorithm selection.
    Aas(AasArgs),
    /// Parameter counts per preset next to the reference values.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training instances; without it instances are generated on the fly.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "tiny")]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Overrides the configured run length. With `--resume` it sets the new
    /// total, counted from step 0.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from a checkpoint written by this command.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SuiteArgs {
    /// Functions, e.g. `1-24`, `1,3,5` or `zdt1`.
    #[arg(long, default_value = "1-24")]
    pub fids: String,
    #[arg(long, default_value = "2")]
    pub dims: String,
    #[arg(long, default_value = "1-5")]
    pub seeds: String,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 50)]
    pub multiplier: usize,
    #[arg(long, default_value = "uniform")]
    pub sampler: Sampler,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub suite: SuiteArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    /// One group per (function, dimension).
    FunctionDim,
    /// One group per (function, instance, dimension); repetitions are the members.
    FunctionInstanceDim,
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    /// Per-feature signal-to-noise ratio.
    Snr {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = GroupBy::FunctionDim)]
        group_by: GroupBy,
    },
    /// Aggregated feature correlation matrix (CSV and PNG).
    Corr {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GroupBy::FunctionDim)]
        group_by: GroupBy,
        #[arg(long)]
        spearman: bool,
        /// Aggregate signed instead of absolute correlations.
        #[arg(long)]
        signed: bool,
    },
}

#[derive(Debug, Args)]
pub struct HlpArgs {
    /// Learned features from this checkpoint; classical ELA when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "2")]
    pub dims: String,
    #[arg(long, default_value = "1-100")]
    pub train_seeds: String,
    #[arg(long, default_value = "125-150")]
    pub test_seeds: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 50)]
    pub multiplier: usize,
    #[arg(long, default_value = "uniform")]
    pub sampler: Sampler,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AasArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub perf: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub k: usize,
    /// Cross-validation folds over instance seeds.
    #[arg(long, default_value_t = 5, conflicts_with = "train_seeds")]
    pub folds: usize,
    /// Fixed training seeds instead of cross-validation.
    #[arg(long)]
    pub train_seeds: Option<String>,
    /// Sample cost is `multiplier * d` evaluations per instance.
    #[arg(long, default_value_t = 50)]
    pub multiplier: usize,
    #[arg(long, default_value_t = 1e7)]
    pub failure_penalty: f64,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long = "preset", default_values = ["medium", "large"])]
    pub presets: Vec<Preset>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Corpus generation settings (`gen --config`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenFile {
    pub count: usize,
    pub d: usize,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default)]
    pub generator: GeneratorConfig,
}

fn one() -> usize {
    1
}

/// Pretraining settings (`pretrain --config`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainFile {
    pub train: TrainConfig,
    /// Replaces the preset when given.
    pub backbone: Option<BackboneConfig>,
    pub generator: GeneratorConfig,
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
}

/// `1-5,8,10-12` style integer lists.
pub fn parse_list(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("bad list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

pub fn parse_families(s: &str) -> Result<Vec<Family>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.starts_with("zdt") || part.starts_with('f') {
            out.push(Family::from_str(part)?);
        } else {
            for fid in parse_list(part)? {
                let fid = u8::try_from(fid).map_err(|_| Error::UnknownBenchmark(format!("f{fid}")))?;
                out.push(Family::from_str(&format!("f{fid}"))?);
            }
        }
    }
    Ok(out)
}

fn dims(s: &str) -> Result<Vec<usize>> {
    Ok(parse_list(s)?.into_iter().map(|d| d as usize).collect())
}

impl SuiteArgs {
    fn spec(&self) -> Result<SuiteSpec> {
        Ok(SuiteSpec {
            families: parse_families(&self.fids)?,
            dims: dims(&self.dims)?,
            instance_seeds: parse_list(&self.seeds)?,
            repetitions: self.reps,
        })
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed),
        Command::Pretrain(a) => match cli.precision {
            Precision::P32 => cmd_pretrain::<f32>(a, cli.seed),
            Precision::P64 => cmd_pretrain::<f64>(a, cli.seed),
        },
        Command::Extract(a) => match cli.precision {
            Precision::P32 => cmd_extract::<f32>(a, cli.seed),
            Precision::P64 => cmd_extract::<f64>(a, cli.seed),
        },
        Command::Ela(a) => cmd_ela(a, cli.seed),
        Command::Report(r) => cmd_report(r),
        Command::Hlp(a) => match cli.precision {
            Precision::P32 => cmd_hlp::<f32>(a, cli.seed),
            Precision::P64 => cmd_hlp::<f64>(a, cli.seed),
        },
        Command::Aas(a) => cmd_aas(a),
        Command::Params(a) => cmd_params(a),
    }
}

pub fn cmd_gen(a: &GenArgs, seed: u64) -> Result<()> {
    let cfg: GenFile = parse_toml(&a.config)?;
    if cfg.count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let mut instances = Vec::with_capacity(cfg.count);
    let mut attempts = 0usize;
    let mut ops: BTreeMap<&'static str, usize> = BTreeMap::new();
    for i in 0..cfg.count {
        let (inst, stats) = generate_instance_seeded(cfg.d, cfg.m, &cfg.generator, derive_seed(seed, &[i as u64]))?;
        attempts += stats.attempts;
        for o in &inst.objectives {
            if let crate::problem::Objective::Tree(t) = o {
                t.visit_operators(&mut |name| *ops.entry(name).or_default() += 1);
            }
        }
        instances.push(inst);
    }
    write_atomic(&a.out, write_corpus(&instances)?.as_bytes())?;
    let mut stats = toml::Table::new();
    stats.insert("instances".into(), (cfg.count as i64).into());
    stats.insert("objectives".into(), ((cfg.count * cfg.m) as i64).into());
    stats.insert("attempts".into(), (attempts as i64).into());
    stats.insert("acceptance_rate".into(), ((cfg.count * cfg.m) as f64 / attempts as f64).into());
    let hist: toml::Table = ops.into_iter().map(|(k, v)| (k.to_string(), toml::Value::from(v as i64))).collect();
    stats.insert("operators".into(), hist.into());
    let text = toml::to_string(&stats).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&suffixed(&a.out, ".stats.toml"), text.as_bytes())?;
    Ok(())
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_pretrain<T: Scalar>(a: &PretrainArgs, seed: u64) -> Result<()> {
    let file: PretrainFile = match &a.config {
        Some(p) => parse_toml(p)?,
        None => PretrainFile::default(),
    };
    let source = match &a.corpus {
        Some(p) => InstanceSource::Corpus(parse_corpus(&read_to_string(p)?)?),
        None => InstanceSource::Generator(file.generator.clone()),
    };
    let metrics_path = a.metrics.clone().unwrap_or_else(|| suffixed(&a.out, ".metrics.csv"));
    let mut metrics = String::from("step,loss,pos_cos,neg_cos,lr\n");
    let mut trainer: Trainer<T> = match &a.resume {
        Some(p) => {
            let mut tr = Trainer::resume(&load_checkpoint(p)?, source)?;
            if let Some(s) = a.steps {
                tr.config = tr.config.clone().with_steps(s);
            }
            // Keep earlier rows up to the resumed step.
            if let Ok(old) = std::fs::read_to_string(&metrics_path) {
                for line in old.lines().skip(1) {
                    let step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
                    if step.is_some_and(|s| s <= tr.step) {
                        metrics.push_str(line);
                        metrics.push('\n');
                    }
                }
            }
            tr
        }
        None => {
            let backbone = file.backbone.unwrap_or_else(|| BackboneConfig::preset(a.preset));
            let mut train = TrainConfig { seed, ..file.train };
            if let Some(s) = a.steps {
                train = train.with_steps(s);
            }
            Trainer::new(backbone, train, source)?
        }
    };
    let remaining = trainer.config.steps().saturating_sub(trainer.step as usize);
    let every = trainer.config.checkpoint_every;
    let (out, mpath) = (a.out.clone(), metrics_path.clone());
    trainer.run(remaining, |tr, lb| {
        metrics.push_str(&metrics_row(lb));
        if every > 0 && lb.step % every as u64 == 0 {
            save_checkpoint(&out, &tr.checkpoint()?)?;
            write_atomic(&mpath, metrics.as_bytes())?;
        }
        Ok(())
    })?;
    save_checkpoint(&a.out, &trainer.checkpoint()?)?;
    write_atomic(&metrics_path, metrics.as_bytes())
}

fn load_model<T: Scalar>(path: &Path) -> Result<DeepEla<T>> {
    DeepEla::from_checkpoint(&load_checkpoint(path)?)
}

fn write_extraction<E: FeatureExtractor + ?Sized>(ex: &E, s: &SuiteArgs, seed: u64) -> Result<()> {
    let rep = extract_features(ex, &s.spec()?, s.sampler, s.multiplier, seed)?;
    for (id, why) in &rep.skipped {
        eprintln!("skipped {id}: {why}");
    }
    write_atomic(&s.out, rep.dataset.to_csv().as_bytes())
}

fn cmd_extract<T: Scalar>(a: &ExtractArgs, seed: u64) -> Result<()> {
    write_extraction(&load_model::<T>(&a.model)?, &a.suite, seed)
}

fn cmd_ela(a: &SuiteArgs, seed: u64) -> Result<()> {
    write_extraction(&ElaExtractor, a, seed)
}

fn read_features(path: &Path) -> Result<FeatureDataset> {
    FeatureDataset::from_csv(&read_to_string(path)?, "file")
}

pub fn group_rows(ds: &FeatureDataset, by: GroupBy) -> Vec<Vec<Vec<f64>>> {
    let mut groups: BTreeMap<(Family, usize, Option<u64>), Vec<Vec<f64>>> = BTreeMap::new();
    for r in &ds.rows {
        let inst = match by {
            GroupBy::FunctionDim => None,
            GroupBy::FunctionInstanceDim => Some(r.key.instance_seed),
        };
        groups.entry((r.key.family, r.key.dim, inst)).or_default().push(r.values.clone());
    }
    groups.into_values().collect()
}

fn cmd_report(r: &ReportCmd) -> Result<()> {
    match r {
        ReportCmd::Snr { features, out, group_by } => {
            let ds = read_features(features)?;
            let v = snr_grouped(&group_rows(&ds, *group_by))?;
            write_atomic(out, snr_csv(&ds.names, &v).as_bytes())
        }
        ReportCmd::Corr { features, out, png, group_by, spearman, signed } => {
            let ds = read_features(features)?;
            let opts = CorrOptions { method: if *spearman { CorrMethod::Spearman } else { CorrMethod::Pearson }, absolute: !signed };
            let rep = corr_report(&group_rows(&ds, *group_by), opts)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            if rep.groups_used == 0 {
                return Err(Error::Degenerate("every group has fewer than 3 instances".into()));
            }
            write_atomic(out, rep.to_csv(&ds.names).as_bytes())?;
            if let Some(p) = png {
                write_atomic(p, &rep.to_png(16)?)?;
            }
            Ok(())
        }
    }
}

fn cmd_hlp<T: Scalar>(a: &HlpArgs, seed: u64) -> Result<()> {
    let cfg = HlpConfig {
        dims: dims(&a.dims)?,
        train_seeds: parse_list(&a.train_seeds)?,
        test_seeds: parse_list(&a.test_seeds)?,
        k: a.k,
        multiplier: a.multiplier,
        sampler: a.sampler,
        seed,
    };
    let rows = match &a.model {
        Some(p) => hlp_experiment(&load_model::<T>(p)?, &cfg)?,
        None => hlp_experiment(&ElaExtractor, &cfg)?,
    };
    write_atomic(&a.out, hlp_csv(&rows).as_bytes())
}

fn cmd_aas(a: &AasArgs) -> Result<()> {
    let features = read_features(&a.features)?;
    let perf = PerfTable::from_csv(&read_to_string(&a.perf)?)?;
    for k in perf.records.iter().map(|r| &r.instance).collect::<BTreeSet<_>>() {
        InstanceKey::parse(k)?;
    }
    let split = match &a.train_seeds {
        Some(s) => Split::TrainSeeds(parse_list(s)?.into_iter().collect()),
        None => Split::SeedFolds(a.folds),
    };
    let cfg = AasConfig { split, k: a.k, multiplier: a.multiplier, failure_penalty: a.failure_penalty };
    let rep = aas_experiment(&features, &perf, &cfg)?;
    write_atomic(&a.out, rep.to_csv().as_bytes())
}

fn cmd_params(a: &ParamsArgs) -> Result<()> {
    let text = format!("{}\n{}", params_report(&a.presets), COUNT_CONVENTIONS);
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
