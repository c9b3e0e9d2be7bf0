//! The denoiser: a SiLU MLP over `[p, vec(R), time embedding, condition, γ̂]`
//! predicting a translational and a rotational 3-vector, plus the taxonomy
//! classifier, codebook mixture and contact head on the condition pathway.
//!
//! Gradients are accumulated by hand in reverse order of the forward pass.

pub mod adam;
pub mod checkpoint;

use crate::error::{Error, Result};
use crate::lie::{Pose, Vec3};
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Grasp taxonomy size.
pub const NUM_CLASSES: usize = 33;
/// Hand contact regions.
pub const NUM_REGIONS: usize = 16;
/// Position (3) plus row-major rotation matrix (9).
pub const POSE_INPUT_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
    pub codebook_dim: usize,
    pub num_classes: usize,
    pub num_regions: usize,
    pub aux_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256; 4],
            time_embed_dim: 16,
            cond_dim: crate::datagen::FEATURE_DIM,
            codebook_dim: 16,
            num_classes: NUM_CLASSES,
            num_regions: NUM_REGIONS,
            aux_hidden: 64,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errs.push("net.hidden must list at least one positive layer width".into());
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            errs.push(format!("net.time_embed_dim must be positive and even (got {})", self.time_embed_dim));
        }
        if self.time_embed_dim > 60 {
            errs.push("net.time_embed_dim above 60 overflows the 2^k frequency ladder".into());
        }
        for (name, v) in [
            ("cond_dim", self.cond_dim),
            ("codebook_dim", self.codebook_dim),
            ("num_classes", self.num_classes),
            ("num_regions", self.num_regions),
            ("aux_hidden", self.aux_hidden),
        ] {
            if v == 0 {
                errs.push(format!("net.{name} must be positive"));
            }
        }
        errs
    }

    pub fn trunk_input_dim(&self) -> usize {
        POSE_INPUT_DIM + self.time_embed_dim + self.cond_dim + self.codebook_dim
    }
}

/// Conditioning for one scene: the descriptor, its taxonomy class and
/// per-region contact target. `null_flag` replaces the descriptor and codebook
/// prior with learned null tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBundle {
    pub feature: Vec<f64>,
    pub class_label: usize,
    pub contact_target: Vec<f64>,
    #[serde(default)]
    pub null_flag: bool,
}

impl ConditionBundle {
    pub fn validate(&self, cfg: &NetConfig) -> Result<()> {
        if self.feature.len() != cfg.cond_dim {
            return Err(Error::Shape(format!(
                "condition feature has {} entries, network expects {}",
                self.feature.len(),
                cfg.cond_dim
            )));
        }
        if self.class_label >= cfg.num_classes {
            return Err(Error::InvalidArgument(format!(
                "class label {} outside [0, {})",
                self.class_label, cfg.num_classes
            )));
        }
        if self.contact_target.len() != cfg.num_regions {
            return Err(Error::Shape(format!(
                "contact target has {} entries, network expects {}",
                self.contact_target.len(),
                cfg.num_regions
            )));
        }
        if self.contact_target.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("contact targets must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn as_null(&self) -> ConditionBundle {
        ConditionBundle { null_flag: true, ..self.clone() }
    }
}

/// `[sin(2^k π t), cos(2^k π t)]` pairs for `k = 0..dim/2`.
pub fn time_embed(t: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = (1u64 << k) as f64 * std::f64::consts::PI * t;
        out.push(w.sin());
        out.push(w.cos());
    }
    out
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_row(logits)
}

/// `γ̂ = Σ_k softmax(logits)_k γ_k`.
pub fn codebook_mix(logits: &[f64], codebook: &Array2<f64>) -> Vec<f64> {
    let pi = softmax_row(logits);
    let mut out = vec![0.0; codebook.ncols()];
    for (k, w) in pi.iter().enumerate() {
        for (o, g) in out.iter_mut().zip(codebook.row(k)) {
            *o += w * g;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Fully connected layer, `y = x Wᵀ + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { w: Array2::zeros((out, inp)), b: Array1::zeros(out) }
    }

    fn init<R: Rng + ?Sized>(out: usize, inp: usize, gain: f64, rng: &mut R) -> Self {
        let scale = gain / (inp as f64).sqrt();
        let w = Array2::from_shape_simple_fn((out, inp), || {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        });
        Self { w, b: Array1::zeros(out) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &dy.t().dot(x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

/// All learnable tensors of the denoiser and its auxiliary heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    pub trunk: Vec<Dense>,
    pub head_p: Dense,
    pub head_q: Dense,
    pub cls_hidden: Dense,
    pub head_cls: Dense,
    pub contact_hidden: Dense,
    pub head_contact: Dense,
    /// `K × D_cb` codebook `{γ_k}`.
    pub codebook: Array2<f64>,
    pub null_feature: Array1<f64>,
    pub null_gamma: Array1<f64>,
}

/// Network outputs for a batch.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub out_p: Array2<f64>,
    pub out_q: Array2<f64>,
    pub cls_logits: Array2<f64>,
    pub contact_logits: Array2<f64>,
}

impl Outputs {
    pub fn field(&self, i: usize) -> (Vec3, Vec3) {
        let p = self.out_p.row(i);
        let q = self.out_q.row(i);
        (Vec3::new(p[0], p[1], p[2]), Vec3::new(q[0], q[1], q[2]))
    }
}

/// One network query: pose, time and condition.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub pose: Pose,
    pub t: f64,
    pub cond: &'a ConditionBundle,
    /// Overrides `cond.null_flag` when true.
    pub drop_condition: bool,
}

impl<'a> Query<'a> {
    fn is_null(&self) -> bool {
        self.drop_condition || self.cond.null_flag
    }
}

struct Cache {
    f_used: Array2<f64>,
    cls_pre: Array2<f64>,
    cls_h: Array2<f64>,
    cont_pre: Array2<f64>,
    cont_h: Array2<f64>,
    pi: Array2<f64>,
    null: Vec<bool>,
    /// Inputs of each trunk layer, then pre-activations.
    trunk_in: Vec<Array2<f64>>,
    trunk_pre: Vec<Array2<f64>>,
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs.join("; ")));
        }
        let mut trunk = Vec::with_capacity(config.hidden.len());
        let mut inp = config.trunk_input_dim();
        for &h in &config.hidden {
            trunk.push(Dense::init(h, inp, 1.0, rng));
            inp = h;
        }
        let c = &config;
        Ok(Self {
            head_p: Dense::init(3, inp, 0.5, rng),
            head_q: Dense::init(3, inp, 0.5, rng),
            cls_hidden: Dense::init(c.aux_hidden, c.cond_dim, 1.0, rng),
            head_cls: Dense::init(c.num_classes, c.aux_hidden, 1.0, rng),
            contact_hidden: Dense::init(c.aux_hidden, c.cond_dim, 1.0, rng),
            head_contact: Dense::init(c.num_regions, c.aux_hidden, 1.0, rng),
            codebook: Array2::from_shape_simple_fn((c.num_classes, c.codebook_dim), || {
                let z: f64 = StandardNormal.sample(rng);
                z
            }),
            null_feature: Array1::from_shape_simple_fn(c.cond_dim, || {
                let z: f64 = StandardNormal.sample(rng);
                z
            }),
            null_gamma: Array1::from_shape_simple_fn(c.codebook_dim, || {
                let z: f64 = StandardNormal.sample(rng);
                z
            }),
            trunk,
            config,
        })
    }

    /// All-zero parameters for `config`.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs.join("; ")));
        }
        let c = &config;
        let mut trunk = Vec::with_capacity(c.hidden.len());
        let mut inp = c.trunk_input_dim();
        for &h in &c.hidden {
            trunk.push(Dense::zeros(h, inp));
            inp = h;
        }
        Ok(Self {
            trunk,
            head_p: Dense::zeros(3, inp),
            head_q: Dense::zeros(3, inp),
            cls_hidden: Dense::zeros(c.aux_hidden, c.cond_dim),
            head_cls: Dense::zeros(c.num_classes, c.aux_hidden),
            contact_hidden: Dense::zeros(c.aux_hidden, c.cond_dim),
            head_contact: Dense::zeros(c.num_regions, c.aux_hidden),
            codebook: Array2::zeros((c.num_classes, c.codebook_dim)),
            null_feature: Array1::zeros(c.cond_dim),
            null_gamma: Array1::zeros(c.codebook_dim),
            config,
        })
    }

    /// Same shapes, all zeros. Used for gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        let c = &self.config;
        Self {
            trunk: self.trunk.iter().map(|d| Dense::zeros(d.w.nrows(), d.w.ncols())).collect(),
            head_p: Dense::zeros(3, self.head_p.w.ncols()),
            head_q: Dense::zeros(3, self.head_q.w.ncols()),
            cls_hidden: Dense::zeros(c.aux_hidden, c.cond_dim),
            head_cls: Dense::zeros(c.num_classes, c.aux_hidden),
            contact_hidden: Dense::zeros(c.aux_hidden, c.cond_dim),
            head_contact: Dense::zeros(c.num_regions, c.aux_hidden),
            codebook: Array2::zeros(self.codebook.raw_dim()),
            null_feature: Array1::zeros(c.cond_dim),
            null_gamma: Array1::zeros(c.codebook_dim),
            config: self.config.clone(),
        }
    }

    fn dense_layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.trunk.iter().collect();
        v.extend([
            &self.head_p,
            &self.head_q,
            &self.cls_hidden,
            &self.head_cls,
            &self.contact_hidden,
            &self.head_contact,
        ]);
        v
    }

    /// Named tensors in declared (checkpoint) order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let names = self.tensor_names();
        let mut out: Vec<&[f64]> = Vec::new();
        for d in self.dense_layers() {
            out.push(d.w.as_slice().expect("standard layout"));
            out.push(d.b.as_slice().expect("standard layout"));
        }
        out.push(self.codebook.as_slice().expect("standard layout"));
        out.push(self.null_feature.as_slice().expect("standard layout"));
        out.push(self.null_gamma.as_slice().expect("standard layout"));
        names.into_iter().zip(out).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let heads = [
            &mut self.head_p,
            &mut self.head_q,
            &mut self.cls_hidden,
            &mut self.head_cls,
            &mut self.contact_hidden,
            &mut self.head_contact,
        ];
        for d in self.trunk.iter_mut().chain(heads) {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.codebook.as_slice_mut().expect("standard layout"));
        out.push(self.null_feature.as_slice_mut().expect("standard layout"));
        out.push(self.null_gamma.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.trunk.len() {
            names.push(format!("trunk.{i}.w"));
            names.push(format!("trunk.{i}.b"));
        }
        for h in ["head_p", "head_q", "cls_hidden", "head_cls", "contact_hidden", "head_contact"] {
            names.push(format!("{h}.w"));
            names.push(format!("{h}.b"));
        }
        names.extend(["codebook".into(), "null_feature".into(), "null_gamma".into()]);
        names
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn forward_cached(&self, queries: &[Query<'_>]) -> Result<(Outputs, Cache)> {
        let c = &self.config;
        let n = queries.len();
        if n == 0 {
            return Err(Error::Empty("forward called with an empty batch".into()));
        }
        let mut f_used = Array2::zeros((n, c.cond_dim));
        let mut null = Vec::with_capacity(n);
        for (i, q) in queries.iter().enumerate() {
            if q.cond.feature.len() != c.cond_dim {
                return Err(Error::Shape(format!(
                    "condition feature has {} entries, network expects {}",
                    q.cond.feature.len(),
                    c.cond_dim
                )));
            }
            let is_null = q.is_null();
            null.push(is_null);
            let mut row = f_used.row_mut(i);
            if is_null {
                row.assign(&self.null_feature);
            } else {
                row.iter_mut().zip(&q.cond.feature).for_each(|(r, v)| *r = *v);
            }
        }

        let cls_pre = self.cls_hidden.forward(&f_used);
        let cls_h = cls_pre.mapv(silu);
        let cls_logits = self.head_cls.forward(&cls_h);
        let cont_pre = self.contact_hidden.forward(&f_used);
        let cont_h = cont_pre.mapv(silu);
        let contact_logits = self.head_contact.forward(&cont_h);

        let mut pi = Array2::zeros((n, c.num_classes));
        for (i, row) in cls_logits.rows().into_iter().enumerate() {
            let p = softmax_row(row.as_slice().expect("standard layout"));
            pi.row_mut(i).iter_mut().zip(p).for_each(|(d, v)| *d = v);
        }
        let mut gamma = pi.dot(&self.codebook);
        for (i, &is_null) in null.iter().enumerate() {
            if is_null {
                gamma.row_mut(i).assign(&self.null_gamma);
            }
        }

        let in_dim = c.trunk_input_dim();
        let mut x = Array2::zeros((n, in_dim));
        let t0 = POSE_INPUT_DIM;
        let f0 = t0 + c.time_embed_dim;
        let g0 = f0 + c.cond_dim;
        for (i, q) in queries.iter().enumerate() {
            let mut row = x.row_mut(i);
            let p = q.pose.p;
            row[0] = p.x;
            row[1] = p.y;
            row[2] = p.z;
            for (k, v) in q.pose.q.to_matrix().flatten().into_iter().enumerate() {
                row[3 + k] = v;
            }
            for (k, v) in time_embed(q.t, c.time_embed_dim).into_iter().enumerate() {
                row[t0 + k] = v;
            }
        }
        x.slice_mut(s![.., f0..g0]).assign(&f_used);
        x.slice_mut(s![.., g0..]).assign(&gamma);

        let mut trunk_in = Vec::with_capacity(self.trunk.len() + 1);
        let mut trunk_pre = Vec::with_capacity(self.trunk.len());
        let mut z = x;
        for layer in &self.trunk {
            let a = layer.forward(&z);
            let next = a.mapv(silu);
            trunk_in.push(z);
            trunk_pre.push(a);
            z = next;
        }
        let out_p = self.head_p.forward(&z);
        let out_q = self.head_q.forward(&z);
        trunk_in.push(z);

        let outputs = Outputs { out_p, out_q, cls_logits, contact_logits };
        let cache = Cache { f_used, cls_pre, cls_h, cont_pre, cont_h, pi, null, trunk_in, trunk_pre };
        Ok((outputs, cache))
    }

    pub fn forward_batch(&self, queries: &[Query<'_>]) -> Result<Outputs> {
        Ok(self.forward_cached(queries)?.0)
    }

    /// Single-query convenience wrapper.
    pub fn forward(&self, g_t: &Pose, t: f64, cond: &ConditionBundle) -> Result<(Vec3, Vec3, Vec<f64>, Vec<f64>)> {
        cond.validate(&self.config)?;
        let q = Query { pose: *g_t, t, cond, drop_condition: false };
        let out = self.forward_batch(&[q])?;
        let (p, r) = out.field(0);
        Ok((p, r, out.cls_logits.row(0).to_vec(), out.contact_logits.row(0).to_vec()))
    }

    fn backward(
        &self,
        cache: &Cache,
        d_out_p: &Array2<f64>,
        d_out_q: &Array2<f64>,
        d_cls: &Array2<f64>,
        d_cont: &Array2<f64>,
    ) -> ModelParams {
        let c = &self.config;
        let mut g = self.zeros_like();
        let depth = self.trunk.len();
        let z_last = &cache.trunk_in[depth];
        let mut dz = self.head_p.backward(z_last, d_out_p, &mut g.head_p);
        dz += &self.head_q.backward(z_last, d_out_q, &mut g.head_q);
        for i in (0..depth).rev() {
            let da = &dz * &cache.trunk_pre[i].mapv(silu_grad);
            dz = self.trunk[i].backward(&cache.trunk_in[i], &da, &mut g.trunk[i]);
        }
        let dx = dz;
        let f0 = POSE_INPUT_DIM + c.time_embed_dim;
        let g0 = f0 + c.cond_dim;
        let mut d_f = dx.slice(s![.., f0..g0]).to_owned();
        let d_gamma = dx.slice(s![.., g0..]);

        // codebook mixture: γ̂ = π Γ, π = softmax(logits)
        let mut d_logits = d_cls.clone();
        let d_pi = d_gamma.dot(&self.codebook.t());
        for (i, &is_null) in cache.null.iter().enumerate() {
            if is_null {
                g.null_gamma += &d_gamma.row(i);
                continue;
            }
            let pi = cache.pi.row(i);
            let dpi = d_pi.row(i);
            let inner: f64 = pi.iter().zip(dpi.iter()).map(|(a, b)| a * b).sum();
            for k in 0..c.num_classes {
                d_logits[[i, k]] += pi[k] * (dpi[k] - inner);
            }
            for k in 0..c.num_classes {
                let w = pi[k];
                g.codebook.row_mut(k).scaled_add(w, &d_gamma.row(i));
            }
        }

        let d_cls_h = self.head_cls.backward(&cache.cls_h, &d_logits, &mut g.head_cls);
        let d_cls_pre = &d_cls_h * &cache.cls_pre.mapv(silu_grad);
        d_f += &self.cls_hidden.backward(&cache.f_used, &d_cls_pre, &mut g.cls_hidden);
        let d_cont_h = self.head_contact.backward(&cache.cont_h, d_cont, &mut g.head_contact);
        let d_cont_pre = &d_cont_h * &cache.cont_pre.mapv(silu_grad);
        d_f += &self.contact_hidden.backward(&cache.f_used, &d_cont_pre, &mut g.contact_hidden);

        for (i, &is_null) in cache.null.iter().enumerate() {
            if is_null {
                g.null_feature += &d_f.row(i);
            }
        }
        g
    }

    /// Adds `other` elementwise.
    pub fn accumulate(&mut self, other: &ModelParams) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s).for_each(|(d, v)| *d += v);
        }
    }
}

/// A batched pose-dependent vector field: `(out_p, out_q)` per pose.
///
/// Implemented by the network and by analytic oracles. A condition with
/// `null_flag` set requests the unconditional field.
pub trait FieldModel: Sync {
    fn eval(&self, poses: &[Pose], t: f64, cond: &ConditionBundle) -> Result<Vec<(Vec3, Vec3)>>;
}

impl FieldModel for ModelParams {
    fn eval(&self, poses: &[Pose], t: f64, cond: &ConditionBundle) -> Result<Vec<(Vec3, Vec3)>> {
        if poses.is_empty() {
            return Ok(Vec::new());
        }
        let queries: Vec<Query<'_>> =
            poses.iter().map(|&pose| Query { pose, t, cond, drop_condition: false }).collect();
        let out = self.forward_batch(&queries)?;
        Ok((0..poses.len()).map(|i| out.field(i)).collect())
    }
}

/// Adapts a per-pose closure to [`FieldModel`].
pub struct FnField<F>(pub F);

impl<F> FieldModel for FnField<F>
where
    F: Fn(&Pose, f64, &ConditionBundle) -> (Vec3, Vec3) + Sync,
{
    fn eval(&self, poses: &[Pose], t: f64, cond: &ConditionBundle) -> Result<Vec<(Vec3, Vec3)>> {
        Ok(poses.iter().map(|g| (self.0)(g, t, cond)).collect())
    }
}

/// Weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cls: f64,
    pub cont: f64,
    pub gen: f64,
    /// Positive-class weight of the contact BCE.
    pub contact_pos_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 0.1, cont: 0.1, gen: 1.0, contact_pos_weight: 5.0 }
    }
}

/// A regression example: network input plus its generative target.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub g_t: Pose,
    pub t: f64,
    pub target_p: Vec3,
    pub target_q: Vec3,
    pub cond: &'a ConditionBundle,
    pub drop_condition: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub gen: f64,
    pub cls: f64,
    pub cont: f64,
}

/// Weighted BCE of one logit: `−[w c log σ(z) + (1−c) log(1−σ(z))]`, and its `d/dz`.
pub fn weighted_bce(z: f64, c: f64, pos_weight: f64) -> (f64, f64) {
    let loss = pos_weight * c * softplus(-z) + (1.0 - c) * softplus(z);
    let s = sigmoid(z);
    let grad = (1.0 - c) * s - pos_weight * c * (1.0 - s);
    (loss, grad)
}

/// Joint loss `λ_gen ℒ_gen + λ_cls ℒ_cls + λ_cont ℒ_cont` and its gradient.
///
/// `ℒ_gen` is the batch mean of `‖out_p − target_p‖² + ‖out_q − target_q‖²`.
/// The auxiliary terms average over examples whose condition is kept.
pub fn loss_and_grad(params: &ModelParams, batch: &[TrainItem<'_>], w: &LossWeights) -> Result<(LossBreakdown, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("loss_and_grad needs a non-empty batch".into()));
    }
    let c = &params.config;
    let queries: Vec<Query<'_>> = batch
        .iter()
        .map(|b| Query { pose: b.g_t, t: b.t, cond: b.cond, drop_condition: b.drop_condition })
        .collect();
    for b in batch {
        if b.cond.class_label >= c.num_classes || b.cond.contact_target.len() != c.num_regions {
            b.cond.validate(c)?;
        }
    }
    let (out, cache) = params.forward_cached(&queries)?;
    let n = batch.len() as f64;

    let mut d_p = Array2::zeros((batch.len(), 3));
    let mut d_q = Array2::zeros((batch.len(), 3));
    let mut gen = 0.0;
    for (i, b) in batch.iter().enumerate() {
        let (p, q) = out.field(i);
        let ep = p - b.target_p;
        let eq = q - b.target_q;
        gen += ep.norm_squared() + eq.norm_squared();
        for (k, v) in ep.to_array().into_iter().enumerate() {
            d_p[[i, k]] = 2.0 * v / n * w.gen;
        }
        for (k, v) in eq.to_array().into_iter().enumerate() {
            d_q[[i, k]] = 2.0 * v / n * w.gen;
        }
    }
    gen /= n;

    let kept = cache.null.iter().filter(|&&x| !x).count();
    let mut d_cls = Array2::zeros((batch.len(), c.num_classes));
    let mut d_cont = Array2::zeros((batch.len(), c.num_regions));
    let (mut cls, mut cont) = (0.0, 0.0);
    if kept > 0 {
        let m = kept as f64;
        for (i, b) in batch.iter().enumerate() {
            if cache.null[i] {
                continue;
            }
            let logits = out.cls_logits.row(i);
            let pi = softmax_row(logits.as_slice().expect("standard layout"));
            let label = b.cond.class_label;
            cls -= pi[label].max(1e-300).ln();
            for k in 0..c.num_classes {
                let y = if k == label { 1.0 } else { 0.0 };
                d_cls[[i, k]] = (pi[k] - y) / m * w.cls;
            }
            for r in 0..c.num_regions {
                let (l, g) = weighted_bce(out.contact_logits[[i, r]], b.cond.contact_target[r], w.contact_pos_weight);
                cont += l / c.num_regions as f64;
                d_cont[[i, r]] = g / (m * c.num_regions as f64) * w.cont;
            }
        }
        cls /= m;
        cont /= m;
    }
    let total = w.gen * gen + w.cls * cls + w.cont * cont;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss is {total}")));
    }
    let grads = params.backward(&cache, &d_p, &d_q, &d_cls, &d_cont);
    Ok((LossBreakdown { total, gen, cls, cont }, grads))
}
