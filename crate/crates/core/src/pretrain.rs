//! Contrastive student/teacher pretraining.
//!
//! Each instance yields two augmented views. The student projects both
//! views through the shared backbone, its extractor and its head; the
//! teacher runs the shared backbone in eval mode followed by its own
//! extractor and head, without gradients. The loss pairs student view 1 with teacher
//! view 2 and vice versa.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{backbone_trunk, extract, head, tokens_tensor, BackboneConfig, Ctx, DeepEla};
use crate::problem::{ProblemInstance, Sample};
use crate::randgen::{generate_instance, GeneratorConfig};
use crate::sampling::{sample_size, uniform_sample};
use crate::tensor::{rel_error, BnState, GradCheck, Mode, Scalar, Tape, Tensor, Var};
use crate::tokenizer::TokenSet;
use crate::util::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub rotate: bool,
    pub invert: bool,
    pub permute_columns: bool,
    pub independent_resample: bool,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec { rotate: true, invert: true, permute_columns: true, independent_resample: true }
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        AugmentationSpec { rotate: false, invert: false, permute_columns: false, independent_resample: false }
    }

    pub fn any(&self) -> bool {
        self.rotate || self.invert || self.permute_columns || self.independent_resample
    }
}

/// Rotation, sign inversion and column shuffles of one sample. `X` is
/// mapped to `[-1, 1]` box coordinates, transformed about the center and
/// mapped back; `Y` was evaluated beforehand and is only permuted.
fn augment(instance: &ProblemInstance, x: &Array2<f64>, y: &Array2<f64>, spec: &AugmentationSpec, rng: &mut Rng) -> Result<Sample> {
    let d = x.ncols();
    let center = instance.bounds.center();
    let half: Vec<f64> = instance.bounds.lo.iter().zip(&instance.bounds.hi).map(|(l, h)| 0.5 * (h - l)).collect();
    let rot = if spec.rotate { linalg::random_rotation(d, rng) } else { linalg::identity(d) };
    let signs: Vec<f64> = (0..d)
        .map(|_| if spec.invert && rng.random::<bool>() { -1.0 } else { 1.0 })
        .collect();
    let mut xcols: Vec<usize> = (0..d).collect();
    let mut ycols: Vec<usize> = (0..y.ncols()).collect();
    if spec.permute_columns {
        xcols.shuffle(rng);
        ycols.shuffle(rng);
    }
    let mut xa = Array2::zeros(x.dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let u: Vec<f64> = (0..d).map(|j| (row[j] - center[j]) / half[j]).collect();
        let v = linalg::matvec(&rot, &u);
        for (jj, &j) in xcols.iter().enumerate() {
            xa[[i, jj]] = center[j] + half[j] * signs[j] * v[j];
        }
    }
    let ya = y.select(ndarray::Axis(1), &ycols);
    Sample::new(xa, ya)
}

/// Two views of `instance` with `n` points each.
pub fn make_views(instance: &ProblemInstance, n: usize, spec: &AugmentationSpec, rng: &mut Rng) -> Result<(Sample, Sample)> {
    let x1 = uniform_sample(&instance.bounds, n, rng)?;
    let y1 = instance.evaluate(x1.view())?;
    let (x2, y2) = if spec.independent_resample {
        let x2 = uniform_sample(&instance.bounds, n, rng)?;
        let y2 = instance.evaluate(x2.view())?;
        (x2, y2)
    } else {
        (x1.clone(), y1.clone())
    };
    let a = augment(instance, &x1, &y1, spec, rng)?;
    let b = augment(instance, &x2, &y2, spec, rng)?;
    Ok((a, b))
}

/// `2 tau * mean_i(-log softmax(P T^T / tau)_ii)` on a tape. `target`
/// should be a constant node.
pub fn info_nce<T: Scalar>(tape: &mut Tape<T>, p: Var, target: Var, tau: f64) -> Result<Var> {
    if tape.shape(p) != tape.shape(target) {
        return Err(Error::Shape(format!("projections {:?} vs targets {:?}", tape.shape(p), tape.shape(target))));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    let s = tape.matmul_nt(p, target, 1.0 / tau)?;
    if !tape.value(s).all_finite() {
        return Err(Error::NonFiniteLoss { step: 0, detail: "non-finite logits".into() });
    }
    let ls = tape.log_softmax_rows(s, 1.0)?;
    let d = tape.diag(ls)?;
    let m = tape.mean(d);
    Ok(tape.scale(m, -2.0 * tau))
}

/// `(info_nce(P1, T2) + info_nce(P2, T1)) / 2`.
pub fn symmetric_loss<T: Scalar>(tape: &mut Tape<T>, p1: Var, p2: Var, t1: Var, t2: Var, tau: f64) -> Result<Var> {
    let a = info_nce(tape, p1, t2, tau)?;
    let b = info_nce(tape, p2, t1, tau)?;
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, 0.5))
}

/// Plain evaluation of [`info_nce`] on matrices.
pub fn info_nce_value(p: &Tensor<f64>, target: &Tensor<f64>, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(p.clone()), tape.leaf(target.clone()));
    let l = info_nce(&mut tape, a, b, tau)?;
    Ok(tape.scalar(l))
}

pub fn symmetric_loss_value(p1: &Tensor<f64>, p2: &Tensor<f64>, t1: &Tensor<f64>, t2: &Tensor<f64>, tau: f64) -> Result<f64> {
    Ok(0.5 * (info_nce_value(p1, t2, tau)? + info_nce_value(p2, t1, tau)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub tau: f64,
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub lr: f64,
    /// Fraction of optimizer steps spent in linear warmup.
    pub warmup_frac: f64,
    pub grad_accum: usize,
    pub ema_momentum: f64,
    pub bn_momentum: f64,
    pub multiplier: usize,
    pub d_range: (usize, usize),
    pub m_range: (usize, usize),
    pub seed: u64,
    pub augment: AugmentationSpec,
    /// L2-normalize projection rows before the similarity matrix.
    pub normalize: bool,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            tau: 0.05,
            epochs: 1,
            instances_per_epoch: 128_000,
            lr: 1e-3,
            warmup_frac: 0.02,
            grad_accum: 1,
            ema_momentum: 0.01,
            bn_momentum: 0.1,
            multiplier: 25,
            d_range: (2, 3),
            m_range: (1, 2),
            seed: 0,
            augment: AugmentationSpec::default(),
            normalize: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Batches per run: `epochs * ceil(instances_per_epoch / batch_size)`.
    pub fn steps(&self) -> usize {
        self.epochs * self.instances_per_epoch.div_ceil(self.batch_size.max(1))
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.epochs = 1;
        self.instances_per_epoch = steps * self.batch_size;
        self
    }

    pub fn validate(&self, nu: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau <= 0.3) {
            return bad(format!("tau must be in (0, 0.3], got {}", self.tau));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2".into());
        }
        if self.grad_accum < 1 || self.multiplier < 1 {
            return bad("grad_accum and multiplier must be >= 1".into());
        }
        if !(self.ema_momentum > 0.0 && self.ema_momentum <= 1.0) {
            return bad(format!("ema_momentum must be in (0, 1], got {}", self.ema_momentum));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(0.0..=1.0).contains(&self.warmup_frac) || self.lr < 0.0 {
            return bad("bn_momentum and warmup_frac must be in [0, 1], lr >= 0".into());
        }
        let ((dl, dh), (ml, mh)) = (self.d_range, self.m_range);
        if dl < 1 || dl > dh || ml < 1 || ml > mh {
            return bad(format!("bad ranges d {:?}, m {:?}", self.d_range, self.m_range));
        }
        if dl + ml > nu {
            return Err(Error::DimensionalViolation { d: dl, m: ml, nu });
        }
        if !self.augment.any() {
            return bad("at least one augmentation must be active".into());
        }
        Ok(())
    }

    fn warmup_steps(&self) -> usize {
        let opt_steps = self.steps().div_ceil(self.grad_accum);
        ((self.warmup_frac * opt_steps as f64).ceil() as usize).max(1)
    }

    /// Learning rate at optimizer step `t` (0-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        self.lr * ((t + 1) as f64 / self.warmup_steps() as f64).min(1.0)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(shapes: impl Iterator<Item = (usize, usize)>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes.map(|(r, c)| (Tensor::zeros(r, c), Tensor::zeros(r, c))).unzip();
        Adam { m, v, t: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let c1 = T::of(1.0 - ADAM_BETA1.powi(self.t as i32));
        let c2 = T::of(1.0 - ADAM_BETA2.powi(self.t as i32));
        let (lr, eps, one) = (T::of(lr), T::of(ADAM_EPS), T::one());
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub step: u64,
    pub loss: f64,
    pub pos_cos: f64,
    pub neg_cos: f64,
    pub lr: f64,
    /// Whether this call ended with an optimizer update.
    pub updated: bool,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine of matching rows and of all non-matching row pairs.
fn pair_cosines<T: Scalar>(p: &Tensor<T>, t: &Tensor<T>) -> (f64, f64) {
    let j = p.rows();
    let rows = |m: &Tensor<T>| -> Vec<Vec<f64>> { (0..j).map(|i| m.row(i).iter().map(|v| v.f64()).collect()).collect() };
    let (pr, tr) = (rows(p), rows(t));
    let (mut pos, mut neg) = (0.0, 0.0);
    for a in 0..j {
        for b in 0..j {
            let c = cosine(&pr[a], &tr[b]);
            if a == b {
                pos += c;
            } else {
                neg += c;
            }
        }
    }
    let pairs = (j * (j - 1)).max(1) as f64;
    (pos / j as f64, neg / pairs)
}

/// Where training instances come from.
#[derive(Debug, Clone)]
pub enum InstanceSource {
    /// Uniform draws (with replacement) from a fixed corpus.
    Corpus(Vec<ProblemInstance>),
    /// Fresh instances from the random generator.
    Generator(GeneratorConfig),
}

/// Teacher targets of both views: eval-mode shared backbone, teacher
/// extractor and head with running batch-norm statistics, row-normalized
/// when the config asks for it. No gradient flows into them.
pub fn teacher_targets<T: Scalar>(model: &DeepEla<T>, views: &[(TokenSet, TokenSet)], tc: &TrainConfig) -> Result<[Tensor<T>; 2]> {
    let first: Vec<TokenSet> = views.iter().map(|v| v.0.clone()).collect();
    let second: Vec<TokenSet> = views.iter().map(|v| v.1.clone()).collect();
    let mut out = [model.teacher_projection(&first)?, model.teacher_projection(&second)?];
    if tc.normalize {
        for t in &mut out {
            let mut tape = Tape::new();
            let v = tape.leaf(std::mem::replace(t, Tensor::zeros(0, 0)));
            let n = tape.l2_normalize_rows(v);
            *t = tape.value(n).clone();
        }
    }
    Ok(out)
}

/// Records the symmetric loss of one batch of view pairs against fixed
/// `targets` on `tape`, with the student parameters bound as tape
/// parameters. Returns the loss and the student projections of both views.
pub fn contrastive_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &DeepEla<T>,
    views: &[(TokenSet, TokenSet)],
    targets: &[Tensor<T>; 2],
    tc: &TrainConfig,
    student_bn: &mut BnState<T>,
    rng: &mut Rng,
) -> Result<(Var, [Var; 2])> {
    let cfg = model.config;
    let mut fs = [Vec::new(), Vec::new()];
    for (a, b) in views {
        for (v, ts) in [a, b].into_iter().enumerate() {
            let mut ctx = Ctx::new(tape, &model.student, true, Mode::Train, rng, cfg.dropout);
            let x = ctx.tape.leaf(tokens_tensor(ts));
            let h = backbone_trunk(&mut ctx, &cfg, x)?;
            fs[v].push(extract(&mut ctx, h)?);
        }
    }
    let mut proj = Vec::with_capacity(2);
    for f in &fs {
        let mut ctx = Ctx::new(tape, &model.student, true, Mode::Train, rng, cfg.dropout);
        let fb = ctx.tape.concat_rows(f)?;
        let p = head(&mut ctx, fb, student_bn, tc.bn_momentum)?;
        proj.push(if tc.normalize { tape.l2_normalize_rows(p) } else { p });
    }
    let t0 = tape.leaf(targets[0].clone());
    let t1 = tape.leaf(targets[1].clone());
    let loss = symmetric_loss(tape, proj[0], proj[1], t0, t1, tc.tau)?;
    Ok((loss, [proj[0], proj[1]]))
}

/// Central-difference check of [`contrastive_loss`] against its tape
/// gradient for every student parameter entry. Dropout masks are frozen by
/// replaying the same `rng` state for every evaluation.
pub fn loss_gradcheck(
    model: &DeepEla<f64>,
    views: &[(TokenSet, TokenSet)],
    tc: &TrainConfig,
    rng: &Rng,
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let targets = teacher_targets(model, views, tc)?;
    let eval = |m: &DeepEla<f64>, grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let mut bn = m.student_bn.clone();
        let (loss, _) = contrastive_loss(&mut tape, m, views, &targets, tc, &mut bn, &mut rng.clone())?;
        let value = tape.scalar(loss);
        let mut out = Vec::new();
        if grads {
            tape.backward(loss)?;
            for pid in 0..m.student.len() {
                let p = m.student.get(pid);
                out.push(tape.param_grad(pid).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())));
            }
        }
        Ok((value, out))
    };
    let (_, analytic) = eval(model, true)?;
    let mut work = model.clone();
    let mut gc = GradCheck { max_rel: 0.0, max_abs: 0.0, checked: 0 };
    for (pid, g) in analytic.iter().enumerate() {
        for e in 0..g.len() {
            let orig = model.student.get(pid).data()[e];
            work.student.get_mut(pid).data_mut()[e] = orig + h;
            let up = eval(&work, false)?.0;
            work.student.get_mut(pid).data_mut()[e] = orig - h;
            let down = eval(&work, false)?.0;
            work.student.get_mut(pid).data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g.data()[e];
            gc.max_abs = gc.max_abs.max((a - numeric).abs());
            gc.max_rel = gc.max_rel.max(rel_error(a, numeric, floor));
            gc.checked += 1;
        }
    }
    Ok(gc)
}

pub struct Trainer<T: Scalar> {
    pub model: DeepEla<T>,
    pub config: TrainConfig,
    pub adam: Adam<T>,
    pub step: u64,
    source: InstanceSource,
    rng: Rng,
    accum: Vec<Tensor<T>>,
    micro: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(backbone: BackboneConfig, config: TrainConfig, source: InstanceSource) -> Result<Self> {
        config.validate(backbone.nu)?;
        if let InstanceSource::Corpus(c) = &source {
            if c.is_empty() {
                return Err(Error::InvalidArgument("empty training corpus".into()));
            }
            if let Some(bad) = c.iter().find(|i| i.d() + i.m() > backbone.nu) {
                return Err(Error::DimensionalViolation { d: bad.d(), m: bad.m(), nu: backbone.nu });
            }
        }
        let model = DeepEla::new(backbone, config.seed)?;
        let adam = Adam::new(model.student.iter().map(|(_, t)| t.shape()));
        let accum = model.student.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        let rng = crate::util::rng_from(config.seed, &[0x7EA1]);
        Ok(Trainer { model, config, adam, step: 0, source, rng, accum, micro: 0 })
    }

    /// Draws the next batch of instances.
    pub fn next_batch(&mut self) -> Result<Vec<ProblemInstance>> {
        let j = self.config.batch_size;
        match &self.source {
            InstanceSource::Corpus(c) => Ok((0..j).map(|_| c[self.rng.random_range(0..c.len())].clone()).collect()),
            InstanceSource::Generator(g) => {
                let ((dl, dh), (ml, mh)) = (self.config.d_range, self.config.m_range);
                let nu = self.model.config.nu;
                let mut out = Vec::with_capacity(j);
                while out.len() < j {
                    let d = self.rng.random_range(dl..=dh);
                    let m = self.rng.random_range(ml..=mh);
                    if d + m > nu {
                        continue;
                    }
                    out.push(generate_instance(d, m, g, &mut self.rng)?);
                }
                Ok(out)
            }
        }
    }

    fn views(&mut self, batch: &[ProblemInstance]) -> Result<Vec<(TokenSet, TokenSet)>> {
        let mut out = Vec::with_capacity(batch.len());
        for inst in batch {
            let n = sample_size(inst.d(), self.config.multiplier);
            let (a, b) = make_views(inst, n, &self.config.augment, &mut self.rng)?;
            out.push((self.model.tokenize(&a)?, self.model.tokenize(&b)?));
        }
        Ok(out)
    }

    /// One batch: forward, backward, gradient accumulation, and every
    /// `grad_accum` calls an Adam update followed by the EMA update.
    pub fn train_step(&mut self, batch: &[ProblemInstance]) -> Result<LossBreakdown> {
        let views = self.views(batch)?;
        let tc = self.config.clone();
        let mut tape: Tape<T> = Tape::new();
        let mut sbn = self.model.student_bn.clone();
        let targets = teacher_targets(&self.model, &views, &tc)?;
        let (loss, proj) = contrastive_loss(&mut tape, &self.model, &views, &targets, &tc, &mut sbn, &mut self.rng)
            .map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step: self.step + 1, detail },
                other => other,
            })?;
        let step = self.step + 1;
        let value = tape.scalar(loss).f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, detail: format!("loss = {value}") });
        }
        let (p1, c1) = pair_cosines(tape.value(proj[0]), &targets[1]);
        let (p2, c2) = pair_cosines(tape.value(proj[1]), &targets[0]);
        let scaled = tape.scale(loss, 1.0 / tc.grad_accum as f64);
        tape.backward(scaled)?;
        for (pid, acc) in self.accum.iter_mut().enumerate() {
            if let Some(g) = tape.param_grad(pid) {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        drop(tape);
        self.model.student_bn = sbn;
        self.micro += 1;
        self.step = step;
        let opt_t = self.adam.t as usize;
        let lr = tc.lr_at(opt_t);
        let mut updated = false;
        if self.micro == tc.grad_accum {
            let mut params: Vec<&mut Tensor<T>> = self.model.student.values_mut().iter_mut().collect();
            self.adam.step(&mut params, &self.accum, lr);
            for a in &mut self.accum {
                a.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
            self.micro = 0;
            self.model.ema_update(tc.ema_momentum)?;
            updated = true;
        }
        Ok(LossBreakdown { step, loss: value, pos_cos: 0.5 * (p1 + p2), neg_cos: 0.5 * (c1 + c2), lr, updated })
    }

    /// Runs `steps` batches, calling `on_step` after each.
    pub fn run(&mut self, steps: usize, mut on_step: impl FnMut(&Self, &LossBreakdown) -> Result<()>) -> Result<Vec<LossBreakdown>> {
        let mut log = Vec::with_capacity(steps);
        for _ in 0..steps {
            let batch = self.next_batch()?;
            let lb = self.train_step(&batch)?;
            on_step(self, &lb)?;
            log.push(lb);
        }
        Ok(log)
    }

    /// Full training state: model, optimizer moments, counters and RNG.
    pub fn checkpoint(&self) -> Result<crate::model::Checkpoint<T>> {
        let mut state = toml::Table::new();
        state.insert("step".into(), toml::Value::Integer(self.step as i64));
        state.insert("adam_t".into(), toml::Value::Integer(self.adam.t as i64));
        state.insert("micro".into(), toml::Value::Integer(self.micro as i64));
        state.insert("rng".into(), toml::Value::String(rng_to_hex(&self.rng)));
        let train = toml::Value::try_from(&self.config).map_err(|e| Error::Config(e.to_string()))?;
        state.insert("train".into(), train);
        let mut ck = self.model.checkpoint(state);
        for (i, (name, _)) in self.model.student.iter().enumerate() {
            ck.tensors.insert(format!("adam/m/{name}"), self.adam.m[i].clone());
            ck.tensors.insert(format!("adam/v/{name}"), self.adam.v[i].clone());
            ck.tensors.insert(format!("accum/{name}"), self.accum[i].clone());
        }
        Ok(ck)
    }

    /// Restores a trainer from [`Trainer::checkpoint`] output.
    pub fn resume(ck: &crate::model::Checkpoint<T>, source: InstanceSource) -> Result<Self> {
        let st = &ck.header.state;
        let missing = |k: &str| Error::MissingRecords(format!("training state `{k}`"));
        let config: TrainConfig = st
            .get("train")
            .cloned()
            .ok_or_else(|| missing("train"))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut tr = Trainer::new(ck.header.backbone, config, source)?;
        tr.model.load_records(&ck.tensors)?;
        let int = |k: &str| st.get(k).and_then(toml::Value::as_integer).ok_or_else(|| missing(k));
        tr.step = int("step")? as u64;
        tr.adam.t = int("adam_t")? as u64;
        tr.micro = int("micro")? as usize;
        tr.rng = rng_from_hex(st.get("rng").and_then(toml::Value::as_str).ok_or_else(|| missing("rng"))?)?;
        let names: Vec<String> = tr.model.student.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            let get = |prefix: &str| {
                ck.tensors
                    .get(&format!("{prefix}/{name}"))
                    .cloned()
                    .ok_or_else(|| Error::MissingRecords(format!("tensor `{prefix}/{name}`")))
            };
            tr.adam.m[i] = get("adam/m")?;
            tr.adam.v[i] = get("adam/v")?;
            tr.accum[i] = get("accum")?;
        }
        Ok(tr)
    }
}

fn rng_to_hex(rng: &Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{:x}:{:x}", rng.get_stream(), rng.get_word_pos())
}

fn rng_from_hex(s: &str) -> Result<Rng> {
    let bad = || Error::CorruptCheckpoint(format!("bad rng state `{s}`"));
    let mut parts = s.split(':');
    let seed_hex = parts.next().ok_or_else(bad)?;
    if seed_hex.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let stream = u64::from_str_radix(parts.next().ok_or_else(bad)?, 16).map_err(|_| bad())?;
    let pos = u128::from_str_radix(parts.next().ok_or_else(bad)?, 16).map_err(|_| bad())?;
    let mut rng = Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

pub fn metrics_csv(rows: &[LossBreakdown]) -> String {
    let mut s = String::from("step,loss,pos_cos,neg_cos,lr\n");
    for r in rows {
        s.push_str(&metrics_row(r));
    }
    s
}

pub fn metrics_row(r: &LossBreakdown) -> String {
    format!("{},{:.12e},{:.6},{:.6},{:.6e}\n", r.step, r.loss, r.pos_cos, r.neg_cos, r.lr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    pub instances: usize,
    pub pos_mean: f64,
    pub neg_mean: f64,
    /// Share of instances whose positive similarity exceeds their mean
    /// similarity to the other instances.
    pub fraction: f64,
}

/// Feature-level view agreement on held-out instances.
pub fn alignment_report<T: Scalar>(
    model: &DeepEla<T>,
    instances: &[ProblemInstance],
    multiplier: usize,
    spec: &AugmentationSpec,
    rng: &mut Rng,
) -> Result<AlignmentReport> {
    let n = instances.len();
    if n < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n });
    }
    let mut fa = Vec::with_capacity(n);
    let mut fb = Vec::with_capacity(n);
    for inst in instances {
        let (a, b) = make_views(inst, sample_size(inst.d(), multiplier), spec, rng)?;
        let to64 = |v: Vec<T>| v.into_iter().map(|x| x.f64()).collect::<Vec<f64>>();
        fa.push(to64(model.forward_features(&model.tokenize(&a)?)?));
        fb.push(to64(model.forward_features(&model.tokenize(&b)?)?));
    }
    let (mut pos, mut neg, mut wins) = (0.0, 0.0, 0usize);
    for i in 0..n {
        let p = cosine(&fa[i], &fb[i]);
        let ng = (0..n).filter(|&k| k != i).map(|k| cosine(&fa[i], &fb[k])).sum::<f64>() / (n - 1) as f64;
        pos += p;
        neg += ng;
        if p > ng {
            wins += 1;
        }
    }
    Ok(AlignmentReport {
        instances: n,
        pos_mean: pos / n as f64,
        neg_mean: neg / n as f64,
        fraction: wins as f64 / n as f64,
    })
}

/// Held-out generated instances with `d + m <= nu`.
pub fn heldout_instances(count: usize, config: &TrainConfig, nu: usize, gen: &GeneratorConfig, seed: u64) -> Result<Vec<ProblemInstance>> {
    let mut rng = Rng::seed_from_u64(seed);
    let ((dl, dh), (ml, mh)) = (config.d_range, config.m_range);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let d = rng.random_range(dl..=dh);
        let m = rng.random_range(ml..=mh);
        if d + m <= nu {
            out.push(generate_instance(d, m, gen, &mut rng)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Bounds, Objective, Origin};
    use crate::randgen::{ExprNode, Reduction};

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v).unwrap()
    }

    fn sphere_instance(d: usize) -> ProblemInstance {
        let e = ExprNode::Reduce(Reduction::Squares(vec![1.0; d]));
        ProblemInstance { objectives: vec![Objective::Tree(e)], bounds: Bounds::cube(d, -5.0, 5.0), origin: Origin::Random { seed: 0 } }
    }

    #[test]
    fn info_nce_closed_forms() {
        let one = t(1, 3, &[0.3, -2.0, 1.0]);
        assert_eq!(info_nce_value(&one, &one, 0.05).unwrap(), 0.0);
        let eye = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let want = 2.0 * 0.05 * (1.0 + (-20.0f64).exp()).ln();
        assert!((info_nce_value(&eye, &eye, 0.05).unwrap() - want).abs() < 1e-10 * want.max(1e-300) + 1e-20);
        let flat = t(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = info_nce_value(&flat, &flat, 0.05).unwrap();
        assert!((f - 0.1 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_loss_swaps_views() {
        let p1 = t(2, 2, &[1.0, 0.2, -0.3, 0.8]);
        let p2 = t(2, 2, &[0.5, 0.1, 0.4, -0.6]);
        let t1 = t(2, 2, &[0.9, 0.0, 0.1, 1.1]);
        let t2 = t(2, 2, &[0.2, 0.7, -0.5, 0.3]);
        let a = symmetric_loss_value(&p1, &p2, &t1, &t2, 0.1).unwrap();
        let b = symmetric_loss_value(&p2, &p1, &t2, &t1, 0.1).unwrap();
        assert!((a - b).abs() < 1e-15);
        let bad = t(3, 2, &[0.0; 6]);
        assert!(info_nce_value(&p1, &bad, 0.1).is_err());
    }

    #[test]
    fn info_nce_gradient() {
        let mut rng = Rng::seed_from_u64(3);
        let p = Tensor::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let target = Tensor::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let gc = crate::tensor::gradcheck(&[p], 1e-5, 1e-6, |tape, v| {
            let tv = tape.leaf(target.clone());
            info_nce(tape, v[0], tv, 0.2)
        })
        .unwrap();
        assert!(gc.max_rel < 1e-5, "{gc:?}");
    }

    #[test]
    fn views_without_augmentation_coincide() {
        let inst = sphere_instance(2);
        let mut rng = Rng::seed_from_u64(1);
        let (a, b) = make_views(&inst, 30, &AugmentationSpec::none(), &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inversion_only_flips_standardized_columns() {
        let inst = sphere_instance(3);
        let spec = AugmentationSpec { invert: true, ..AugmentationSpec::none() };
        let mut rng = Rng::seed_from_u64(2);
        let x = uniform_sample(&inst.bounds, 20, &mut rng).unwrap();
        let y = inst.evaluate(x.view()).unwrap();
        let plain = Sample::new(x.clone(), y.clone()).unwrap();
        let flipped = augment(&inst, &x, &y, &spec, &mut rng).unwrap();
        let za = crate::tokenizer::standardize(plain.x.view()).unwrap();
        let zb = crate::tokenizer::standardize(flipped.x.view()).unwrap();
        for j in 0..3 {
            let same = (0..20).all(|i| (za[[i, j]] - zb[[i, j]]).abs() < 1e-12);
            let neg = (0..20).all(|i| (za[[i, j]] + zb[[i, j]]).abs() < 1e-12);
            assert!(same || neg);
        }
        assert_eq!(plain.y, flipped.y);
    }

    #[test]
    fn config_validation() {
        let c = TrainConfig::default();
        c.validate(4).unwrap();
        assert_eq!(c.steps(), 2000);
        assert!(TrainConfig { tau: 0.5, ..c.clone() }.validate(4).is_err());
        assert!(TrainConfig { batch_size: 1, ..c.clone() }.validate(4).is_err());
        assert!(matches!(
            TrainConfig { d_range: (3, 3), m_range: (2, 2), ..c.clone() }.validate(4),
            Err(Error::DimensionalViolation { .. })
        ));
        assert!(TrainConfig { augment: AugmentationSpec::none(), ..c.clone() }.validate(4).is_err());
        assert!((c.lr_at(0) - 1e-3 / 40.0).abs() < 1e-18);
        assert_eq!(c.lr_at(39), 1e-3);
        assert_eq!(c.lr_at(1000), 1e-3);
    }

    #[test]
    fn rng_state_round_trip() {
        let mut rng = Rng::seed_from_u64(77);
        let _: u64 = rng.random();
        let back = rng_from_hex(&rng_to_hex(&rng)).unwrap();
        let (mut a, mut b) = (rng, back);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        assert!(rng_from_hex("zz").is_err());
    }
}
