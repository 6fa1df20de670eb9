//! Set-transformer backbone, projection heads and checkpoints.
//!
//! Shapes for one token set of `n` tokens:
//!
//! ```text
//! tokens n x 2k nu -> Linear+GLU -> n x D
//!   depth x { h = x + MHA(LN(x)); x = h + FF(LN(h)) }
//! -> LN -> Linear+GLU -> n x F -> mean over tokens -> tanh -> 1 x F
//! ```
//!
//! The feed-forward branch is `Linear(D -> 4D) -> GLU -> Linear(2D -> D) ->
//! dropout`, i.e. the 4x hidden width is the pre-gate width.
//!
//! Student and teacher share the backbone. The teacher owns its own
//! extractor and head, updated only by [`DeepEla::ema_update`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Sample;
use crate::tensor::{BnState, Mode, Scalar, Tape, Tensor, Var};
use crate::tokenizer::{self, TokenSet};
use crate::util::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub nu: usize,
    pub k: usize,
    pub depth: usize,
    pub heads: usize,
    pub d_model: usize,
    pub n_feat: usize,
    pub stride: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Medium,
    Large,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "medium" => Ok(Preset::Medium),
            "large" => Ok(Preset::Large),
            _ => Err(Error::InvalidArgument(format!("unknown preset `{s}` (tiny|medium|large)"))),
        }
    }
}

/// Published backbone and total parameter counts of the reference models.
pub fn reference_counts(preset: Preset) -> Option<(usize, usize)> {
    match preset {
        Preset::Medium => Some((2_263_296, 2_355_456)),
        Preset::Large => Some((9_189_888, 9_558_528)),
        Preset::Tiny => None,
    }
}

impl BackboneConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => BackboneConfig {
                nu: 4,
                k: 4,
                depth: 3,
                heads: 4,
                d_model: 32,
                n_feat: 8,
                stride: 1,
                dropout: 0.1,
            },
            Preset::Medium => BackboneConfig {
                nu: 6,
                k: 8,
                depth: 6,
                heads: 4,
                d_model: 192,
                n_feat: 24,
                stride: 1,
                dropout: 0.1,
            },
            Preset::Large => BackboneConfig {
                nu: 12,
                k: 16,
                depth: 6,
                heads: 8,
                d_model: 384,
                n_feat: 48,
                stride: 2,
                dropout: 0.1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nu < 2 || self.k < 1 || self.depth < 1 || self.n_feat < 1 || self.stride < 1 {
            return bad(format!("need nu >= 2 and k, depth, n_feat, stride >= 1: {self:?}"));
        }
        if self.heads < 1 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn token_width(&self) -> usize {
        2 * self.k * self.nu
    }

    pub fn head_hidden(&self) -> usize {
        2 * self.n_feat
    }

    pub fn proj_dim(&self) -> usize {
        8 * self.n_feat
    }
}

/// Parameter shapes in initialization order: `(name, rows, cols)`.
fn linear_shapes(out: &mut Vec<(String, usize, usize)>, name: &str, i: usize, o: usize) {
    out.push((format!("{name}.w"), i, o));
    out.push((format!("{name}.b"), 1, o));
}

fn ln_shapes(out: &mut Vec<(String, usize, usize)>, name: &str, c: usize) {
    out.push((format!("{name}.g"), 1, c));
    out.push((format!("{name}.b"), 1, c));
}

/// Extractor and head shapes; these exist once for the student and once
/// for the teacher.
fn shared_shapes(cfg: &BackboneConfig) -> Vec<(String, usize, usize)> {
    let (d, f, h) = (cfg.d_model, cfg.n_feat, cfg.head_hidden());
    let mut s = Vec::new();
    linear_shapes(&mut s, "extractor", d, 2 * f);
    linear_shapes(&mut s, "head.l1", f, 2 * h);
    linear_shapes(&mut s, "head.l2", h, 2 * h);
    linear_shapes(&mut s, "head.l3", h, cfg.proj_dim());
    s
}

pub fn student_shapes(cfg: &BackboneConfig) -> Vec<(String, usize, usize)> {
    let d = cfg.d_model;
    let mut s = Vec::new();
    linear_shapes(&mut s, "embed", cfg.token_width(), 2 * d);
    for b in 0..cfg.depth {
        let p = format!("blocks.{b}");
        ln_shapes(&mut s, &format!("{p}.ln_a"), d);
        for m in ["q", "k", "v", "o"] {
            linear_shapes(&mut s, &format!("{p}.attn.{m}"), d, d);
        }
        ln_shapes(&mut s, &format!("{p}.ln_b"), d);
        linear_shapes(&mut s, &format!("{p}.ff1"), d, 8 * d / 2);
        linear_shapes(&mut s, &format!("{p}.ff2"), 2 * d, d);
    }
    ln_shapes(&mut s, "ln_final", d);
    s.extend(shared_shapes(cfg));
    s
}

/// Scalar parameter count. The backbone is everything up to and including
/// the extractor; `with_heads` adds the student head and the teacher's
/// extractor and head.
pub fn param_count(cfg: &BackboneConfig, with_heads: bool) -> usize {
    let numel = |s: &[(String, usize, usize)]| s.iter().map(|(_, r, c)| r * c).sum::<usize>();
    let student = student_shapes(cfg);
    let head: Vec<_> = student.iter().filter(|(n, _, _)| n.starts_with("head.")).cloned().collect();
    let backbone = numel(&student) - numel(&head);
    if with_heads {
        backbone + numel(&head) + numel(&shared_shapes(cfg))
    } else {
        backbone
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> usize {
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.values[id]
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}

/// Forward-pass context: which store parameters come from and whether they
/// are trainable on this tape.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    trainable: bool,
    pub mode: Mode,
    pub rng: &'a mut Rng,
    dropout: f64,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        store: &'a ParamStore<T>,
        trainable: bool,
        mode: Mode,
        rng: &'a mut Rng,
        dropout: f64,
    ) -> Self {
        Ctx { tape, store, trainable, mode, rng, dropout }
    }

    fn p(&mut self, name: &str) -> Result<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Error::TreeMismatch(format!("missing parameter `{name}`")))?;
        let value = self.store.get(id);
        Ok(if self.trainable { self.tape.param(id, value) } else { self.tape.leaf(value.clone()) })
    }

    fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        self.tape.linear(x, w, b)
    }

    fn ln(&mut self, x: Var, name: &str) -> Result<Var> {
        let g = self.p(&format!("{name}.g"))?;
        let b = self.p(&format!("{name}.b"))?;
        self.tape.layer_norm(x, g, b)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        self.tape.dropout(x, self.dropout, self.mode, self.rng)
    }
}

/// Multi-head self attention of block `block`. Returns the output and the
/// per-head attention matrices.
pub fn mha<T: Scalar>(ctx: &mut Ctx<T>, x: Var, block: usize, heads: usize) -> Result<(Var, Vec<Var>)> {
    let p = format!("blocks.{block}.attn");
    let d = ctx.tape.shape(x).1;
    let dh = d / heads;
    let q = ctx.linear(x, &format!("{p}.q"))?;
    let k = ctx.linear(x, &format!("{p}.k"))?;
    let v = ctx.linear(x, &format!("{p}.v"))?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = ctx.tape.slice_cols(q, h * dh, dh)?;
        let kh = ctx.tape.slice_cols(k, h * dh, dh)?;
        let vh = ctx.tape.slice_cols(v, h * dh, dh)?;
        let s = ctx.tape.matmul_nt(qh, kh, scale)?;
        let a = ctx.tape.softmax_rows(s, 1.0)?;
        outs.push(ctx.tape.matmul(a, vh)?);
        attn.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { ctx.tape.concat_cols(&outs)? };
    Ok((ctx.linear(cat, &format!("{p}.o"))?, attn))
}

/// Embedding and transformer blocks up to the final layer norm: `n x D`.
pub fn backbone_trunk<T: Scalar>(ctx: &mut Ctx<T>, cfg: &BackboneConfig, tokens: Var) -> Result<Var> {
    let width = ctx.tape.shape(tokens).1;
    if width != cfg.token_width() {
        return Err(Error::Shape(format!(
            "token width {width} does not match 2 k nu = {}",
            cfg.token_width()
        )));
    }
    let e = ctx.linear(tokens, "embed")?;
    let mut x = ctx.tape.glu(e)?;
    for b in 0..cfg.depth {
        let p = format!("blocks.{b}");
        let n = ctx.ln(x, &format!("{p}.ln_a"))?;
        let (a, _) = mha(ctx, n, b, cfg.heads)?;
        let h = ctx.tape.add(x, a)?;
        let n = ctx.ln(h, &format!("{p}.ln_b"))?;
        let f = ctx.linear(n, &format!("{p}.ff1"))?;
        let f = ctx.tape.glu(f)?;
        let f = ctx.linear(f, &format!("{p}.ff2"))?;
        let f = ctx.dropout(f)?;
        x = ctx.tape.add(h, f)?;
    }
    ctx.ln(x, "ln_final")
}

/// Extractor, mean pooling and tanh: `n x D -> 1 x F`.
pub fn extract<T: Scalar>(ctx: &mut Ctx<T>, trunk: Var) -> Result<Var> {
    let e = ctx.linear(trunk, "extractor")?;
    let g = ctx.tape.glu(e)?;
    let m = ctx.tape.mean_rows(g)?;
    Ok(ctx.tape.tanh(m))
}

/// Projection head on a `j x F` batch of features.
pub fn head<T: Scalar>(ctx: &mut Ctx<T>, feats: Var, bn: &mut BnState<T>, bn_momentum: f64) -> Result<Var> {
    let mut x = feats;
    for l in ["head.l1", "head.l2"] {
        let y = ctx.linear(x, l)?;
        let y = ctx.tape.glu(y)?;
        x = ctx.dropout(y)?;
    }
    let y = ctx.linear(x, "head.l3")?;
    let mode = ctx.mode;
    ctx.tape.batch_norm(y, bn, bn_momentum, mode)
}

pub fn tokens_tensor<T: Scalar>(ts: &TokenSet) -> Tensor<T> {
    let (r, c) = ts.tokens.dim();
    Tensor::from_fn(r, c, |i, j| T::of(ts.tokens[[i, j]]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepEla<T: Scalar> {
    pub config: BackboneConfig,
    pub student: ParamStore<T>,
    pub teacher: ParamStore<T>,
    pub student_bn: BnState<T>,
    pub teacher_bn: BnState<T>,
}

impl<T: Scalar> DeepEla<T> {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases, unit
    /// layer-norm gains. The teacher starts as a copy of the student.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = util::rng_from(seed, &[0x1417]);
        let mut student = ParamStore::new();
        let shapes = student_shapes(&config);
        let fan_in: HashMap<String, usize> = shapes
            .iter()
            .filter(|(n, _, _)| n.ends_with(".w"))
            .map(|(n, r, _)| (n.trim_end_matches(".w").to_string(), *r))
            .collect();
        for (name, r, c) in &shapes {
            let (base, kind) = name.rsplit_once('.').expect("dotted name");
            let t = if let Some(&fi) = fan_in.get(base) {
                let a = 1.0 / (fi as f64).sqrt();
                Tensor::from_fn(*r, *c, |_, _| T::of(rng.random_range(-a..a)))
            } else if kind == "g" {
                Tensor::filled(*r, *c, T::one())
            } else {
                Tensor::zeros(*r, *c)
            };
            student.add(name, t);
        }
        let mut teacher = ParamStore::new();
        for (name, _, _) in shared_shapes(&config) {
            teacher.add(&name, student.by_name(&name).expect("shared shape").clone());
        }
        let p = config.proj_dim();
        Ok(DeepEla { config, student, teacher, student_bn: BnState::new(p), teacher_bn: BnState::new(p) })
    }

    pub fn tokenize(&self, sample: &Sample) -> Result<TokenSet> {
        tokenizer::tokenize(sample, self.config.k, self.config.nu, self.config.stride)
    }

    fn ctx<'a>(&'a self, tape: &'a mut Tape<T>, rng: &'a mut Rng, teacher: bool) -> Ctx<'a, T> {
        let store = if teacher { &self.teacher } else { &self.student };
        Ctx::new(tape, store, false, Mode::Eval, rng, self.config.dropout)
    }

    /// Eval-mode feature vector in `[-1, 1]^F`.
    pub fn forward_features(&self, ts: &TokenSet) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let mut rng = Rng::seed_from_u64(0);
        let mut ctx = self.ctx(&mut tape, &mut rng, false);
        let x = ctx.tape.leaf(tokens_tensor(ts));
        let h = backbone_trunk(&mut ctx, &self.config, x)?;
        let f = extract(&mut ctx, h)?;
        Ok(tape.value(f).data().to_vec())
    }

    /// Student projections of a batch, one row per token set. Train mode
    /// uses dropout and batch statistics and updates the running stats.
    pub fn forward_projection(&mut self, batch: &[TokenSet], mode: Mode, rng: &mut Rng, bn_momentum: f64) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut bn = self.student_bn.clone();
        let mut ctx = Ctx::new(&mut tape, &self.student, false, mode, rng, self.config.dropout);
        let mut rows = Vec::with_capacity(batch.len());
        for ts in batch {
            let x = ctx.tape.leaf(tokens_tensor(ts));
            let h = backbone_trunk(&mut ctx, &self.config, x)?;
            rows.push(extract(&mut ctx, h)?);
        }
        let f = ctx.tape.concat_rows(&rows)?;
        let p = head(&mut ctx, f, &mut bn, bn_momentum)?;
        let out = tape.value(p).clone();
        self.student_bn = bn;
        Ok(out)
    }

    /// Eval-mode teacher projections (shared backbone, teacher extractor and
    /// head, running batch-norm statistics).
    pub fn teacher_projection(&self, batch: &[TokenSet]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut rng = Rng::seed_from_u64(0);
        let mut rows = Vec::with_capacity(batch.len());
        for ts in batch {
            let mut ctx = self.ctx(&mut tape, &mut rng, false);
            let x = ctx.tape.leaf(tokens_tensor(ts));
            let h = backbone_trunk(&mut ctx, &self.config, x)?;
            let mut tctx = self.ctx(&mut tape, &mut rng, true);
            rows.push(extract(&mut tctx, h)?);
        }
        let mut bn = self.teacher_bn.clone();
        let mut tctx = self.ctx(&mut tape, &mut rng, true);
        let f = tctx.tape.concat_rows(&rows)?;
        let p = head(&mut tctx, f, &mut bn, 0.0)?;
        Ok(tape.value(p).clone())
    }

    /// `teacher <- (1 - mu) teacher + mu student` for every teacher tensor
    /// and the batch-norm running statistics.
    pub fn ema_update(&mut self, mu: f64) -> Result<()> {
        ema_stores(&mut self.teacher, &self.student, mu)?;
        let m = T::of(mu);
        let keep = T::one() - m;
        for (t, s) in self.teacher_bn.mean.iter_mut().zip(&self.student_bn.mean) {
            *t = keep * *t + m * *s;
        }
        for (t, s) in self.teacher_bn.var.iter_mut().zip(&self.student_bn.var) {
            *t = keep * *t + m * *s;
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (n, t) in self.student.iter() {
            out.push((format!("student/{n}"), t.clone()));
        }
        for (n, t) in self.teacher.iter() {
            out.push((format!("teacher/{n}"), t.clone()));
        }
        let p = self.config.proj_dim();
        let row = |v: &Vec<T>| Tensor::from_vec(1, p, v.clone()).expect("bn width");
        out.push(("bn/student.mean".into(), row(&self.student_bn.mean)));
        out.push(("bn/student.var".into(), row(&self.student_bn.var)));
        out.push(("bn/teacher.mean".into(), row(&self.teacher_bn.mean)));
        out.push(("bn/teacher.var".into(), row(&self.teacher_bn.var)));
        out
    }

    /// Overwrites every tensor of this model from `records`, checking names
    /// and shapes against the current configuration.
    pub fn load_records(&mut self, records: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        let expected = self.to_records();
        for (name, want) in &expected {
            let got = records.get(name).ok_or_else(|| Error::MissingRecords(format!("tensor `{name}`")))?;
            if got.shape() != want.shape() {
                return Err(Error::TensorShapeMismatch {
                    name: name.clone(),
                    found: vec![got.rows(), got.cols()],
                    expected: vec![want.rows(), want.cols()],
                });
            }
        }
        for (name, _) in expected {
            let t = records[&name].clone();
            if let Some(n) = name.strip_prefix("student/") {
                let id = self.student.id(n).expect("known name");
                *self.student.get_mut(id) = t;
            } else if let Some(n) = name.strip_prefix("teacher/") {
                let id = self.teacher.id(n).expect("known name");
                *self.teacher.get_mut(id) = t;
            } else {
                let v = t.into_vec();
                match name.as_str() {
                    "bn/student.mean" => self.student_bn.mean = v,
                    "bn/student.var" => self.student_bn.var = v,
                    "bn/teacher.mean" => self.teacher_bn.mean = v,
                    _ => self.teacher_bn.var = v,
                }
            }
        }
        Ok(())
    }
}

pub fn ema_stores<T: Scalar>(teacher: &mut ParamStore<T>, student: &ParamStore<T>, mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::InvalidArgument(format!("EMA momentum must be in (0, 1], got {mu}")));
    }
    let m = T::of(mu);
    let keep = T::one() - m;
    for id in 0..teacher.len() {
        let name = teacher.name(id).to_string();
        let s = student
            .by_name(&name)
            .ok_or_else(|| Error::TreeMismatch(format!("student has no `{name}`")))?;
        let t = teacher.get_mut(id);
        if s.shape() != t.shape() {
            return Err(Error::TreeMismatch(format!("`{name}` differs in shape")));
        }
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = keep * *a + m * b;
        }
    }
    Ok(())
}

pub const MAGIC: &[u8; 4] = b"DELA";
pub const VERSION: u32 = 1;

/// Checkpoint header stored as TOML text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub precision: u32,
    pub backbone: BackboneConfig,
    /// Free-form training state (step counter, RNG position, train config).
    #[serde(default)]
    pub state: toml::Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

/// Byte layout, all integers little endian:
///
/// ```text
/// "DELA" | u32 version | u32 len | header TOML (len bytes)
/// u32 count | count x { u32 len | name | u8 bytes-per-value | u32 rows | u32 cols | payload }
/// ```
pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let header = toml::to_string(&ck.header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ck.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push((T::BITS / 8) as u8);
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.data() {
            if T::BITS == 32 {
                out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.f64().to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::CorruptCheckpoint(format!("truncated while reading {what}")));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(4, what)?.read_exact(&mut b).expect("length checked");
        Ok(u32::from_le_bytes(b))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { buf: bytes };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let hlen = r.u32("header length")? as usize;
    let text = std::str::from_utf8(r.take(hlen, "header")?)
        .map_err(|_| Error::CorruptCheckpoint("header is not UTF-8".into()))?;
    let header: CheckpointHeader =
        toml::from_str(text).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(nlen, "name")?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let width = r.take(1, "dtype")?[0] as usize;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let payload = r.take(rows * cols * width, &format!("payload of `{name}`"))?;
        let data: Vec<T> = match width {
            4 => payload
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            8 => payload
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
            w => return Err(Error::CorruptCheckpoint(format!("unsupported value width {w}"))),
        };
        tensors.insert(name, Tensor::from_vec(rows, cols, data)?);
    }
    if !r.buf.is_empty() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(Checkpoint { header, tensors })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    util::write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

impl<T: Scalar> DeepEla<T> {
    pub fn checkpoint(&self, state: toml::Table) -> Checkpoint<T> {
        Checkpoint {
            header: CheckpointHeader { precision: T::BITS, backbone: self.config, state },
            tensors: self.to_records().into_iter().collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let mut m = DeepEla::new(ck.header.backbone, 0)?;
        m.load_records(&ck.tensors)?;
        Ok(m)
    }
}

/// Writes a human-readable parameter table.
pub fn params_report(presets: &[Preset]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "preset,backbone,total,reference_backbone,reference_total,delta_backbone,delta_backbone_pct"
    );
    for &p in presets {
        let cfg = BackboneConfig::preset(p);
        let (bb, total) = (param_count(&cfg, false), param_count(&cfg, true));
        match reference_counts(p) {
            Some((rb, rt)) => {
                let delta = bb as i64 - rb as i64;
                let _ = writeln!(
                    s,
                    "{},{bb},{total},{rb},{rt},{delta},{:.3}",
                    preset_name(p),
                    100.0 * delta as f64 / rb as f64
                );
            }
            None => {
                let _ = writeln!(s, "{},{bb},{total},,,,", preset_name(p));
            }
        }
    }
    s
}

pub fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Tiny => "tiny",
        Preset::Medium => "medium",
        Preset::Large => "large",
    }
}

/// Layer conventions behind [`param_count`], printed next to the table.
pub const COUNT_CONVENTIONS: &str = "\
conventions:
  every linear layer has a bias; GLU layers double the producing linear's width
  attention: separate q, k, v, o projections of d_model x d_model
  feed-forward: d_model -> 4 d_model (GLU, so 2 d_model after gating) -> d_model
  layer norms: gain and bias; embed and extractor included in the backbone
  total = backbone + student head + teacher extractor + teacher head
  head: F -> 2h -> GLU -> h -> 2h -> GLU -> h -> 8F with h = 2F; batch norm has no parameters
";
