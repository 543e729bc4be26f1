//! Atmosphere labels, losses, Adam and the three-stage training protocol.
//!
//! Stage 1 pretrains ANet on atmosphere labels read off the brightest rain
//! pixel. Stage 2 trains SNet through the recovery formula with `Tv = 0`,
//! fine-tuning ANet at a small learning rate. Stage 3 adds VNet and trains
//! everything on the gradient + L1 objective.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AtmosphereLight, Image, Mask};
use crate::nn::nets::{anet, snet, vnet};
use crate::nn::{init_params, Arch, ArchConfig, Bound, Graph, ParamSet, Tensor, Var};
use crate::synth::Sample;

/// Luminance percentile a pixel must reach to count as rain.
pub const RAIN_PERCENTILE: f64 = 99.5;
/// Side of the local-mean window of the rain detector.
pub const RAIN_WINDOW: usize = 11;
/// Margin by which a rain pixel must exceed its local mean.
pub const RAIN_CONTRAST: f64 = 0.1;

/// Rain pixels of `img`. A provided mask is returned as is; otherwise pixels
/// whose luminance is at least the 99.5th percentile and exceeds the 11x11
/// local mean (window clipped at borders) by 0.1.
pub fn detect_rain_pixels(img: &Image, mask: Option<&Mask>) -> Mask {
    if let Some(m) = mask {
        return m.clone();
    }
    let (h, w) = img.dims();
    let lum = img.luminance();
    let lum = lum.data();
    let mut sorted = lum.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((RAIN_PERCENTILE / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[rank - 1];

    // summed-area table with a zero row and column in front
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] = lum[r * w + c] + sat[r * (w + 1) + c + 1] + sat[(r + 1) * (w + 1) + c] - sat[r * (w + 1) + c];
        }
    }
    let half = RAIN_WINDOW / 2;
    let data = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            if lum[i] < threshold {
                return false;
            }
            let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
            let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
            let total = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0] + sat[r0 * (w + 1) + c0];
            let mean = total / ((r1 - r0) * (c1 - c0)) as f64;
            lum[i] - mean >= RAIN_CONTRAST
        })
        .collect();
    Mask::new(h, w, data).expect("mask matches image dimensions")
}

/// RGB of the rain pixel with the highest luminance; ties go to the first
/// pixel in row-major order.
pub fn extract_atmosphere_label(img: &Image, rain: &Mask) -> Result<AtmosphereLight> {
    crate::image::ensure_same_dims("rain mask", img.dims(), rain.dims())?;
    let lum = img.luminance();
    let mut best: Option<(usize, f64)> = None;
    for (i, (&is_rain, &l)) in rain.data().iter().zip(lum.data()).enumerate() {
        if is_rain && best.is_none_or(|(_, b)| l > b) {
            best = Some((i, l));
        }
    }
    let (i, _) = best.ok_or(Error::NoRainPixels)?;
    let w = img.width();
    AtmosphereLight::new(img.pixel(i / w, i % w))
}

fn eval_scalar(build: impl FnOnce(&mut Graph, Var, Var) -> Result<Var>, a: &Tensor, b: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let out = build(&mut g, va, vb)?;
    Ok(g.value(out).data()[0])
}

fn expect_same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `(1/B) sum_b ||pred_b - label_b||^2` over `[B, 3]` tensors.
pub fn loss_anet(pred: &Tensor, label: &Tensor) -> Result<f64> {
    expect_same_shape("loss_anet", pred, label)?;
    eval_scalar(anet_objective, pred, label)
}

/// Mean squared error over every element of `[B, 3, H, W]` tensors.
pub fn loss_snet(j_hat: &Tensor, j: &Tensor) -> Result<f64> {
    expect_same_shape("loss_snet", j_hat, j)?;
    eval_scalar(snet_objective, j_hat, j)
}

/// `lambda1 * mean |grad(j_hat) - grad(j)|^2 + lambda2 * mean |j_hat - j|`.
pub fn loss_total(j_hat: &Tensor, j: &Tensor, lambda1: f64, lambda2: f64) -> Result<f64> {
    expect_same_shape("loss_total", j_hat, j)?;
    eval_scalar(|g, a, b| total_objective(g, a, b, lambda1, lambda2), j_hat, j)
}

pub fn anet_objective(g: &mut Graph, pred: Var, label: Var) -> Result<Var> {
    g.row_sq_norm(pred, label)
}

pub fn snet_objective(g: &mut Graph, j_hat: Var, j: Var) -> Result<Var> {
    g.mse(j_hat, j)
}

pub fn total_objective(g: &mut Graph, j_hat: Var, j: Var, lambda1: f64, lambda2: f64) -> Result<Var> {
    let grad = g.gradient_mse(j_hat, j)?;
    let l1 = g.l1(j_hat, j)?;
    g.weighted_sum(&[(grad, lambda1), (l1, lambda2)])
}

/// Adam moment buffers for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update in place. Returns the L2 norm of the
/// applied parameter change.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState, lr: f64, opt: AdamConfig) -> Result<f64> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!("adam: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let mut sq = 0.0;
    for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = opt.beta1 * *mv + (1.0 - opt.beta1) * gv;
            *vv = opt.beta2 * *vv + (1.0 - opt.beta2) * gv * gv;
            let delta = lr * (*mv / c1) / ((*vv / c2).sqrt() + opt.eps);
            *pv -= delta;
            sq += delta * delta;
        }
    }
    Ok(sq.sqrt())
}

/// Hyperparameters of the training protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Side of the square random crops.
    pub patch: usize,
    pub batch: usize,
    pub epochs_anet: usize,
    pub epochs_snet: usize,
    pub epochs_joint: usize,
    pub lr_anet_pre: f64,
    pub lr_main: f64,
    pub lr_finetune: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Floor on `Ts + Tv` in the recovery formula.
    pub eps: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Random horizontal flips of training crops.
    pub flips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch: 64,
            batch: 8,
            epochs_anet: 10,
            epochs_snet: 10,
            epochs_joint: 20,
            lr_anet_pre: 1e-3,
            lr_main: 1e-3,
            lr_finetune: 1e-6,
            lambda1: 0.01,
            lambda2: 1.0,
            eps: crate::rain_model::DEFAULT_EPS,
            seed: 0,
            adam: AdamConfig::default(),
            flips: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.patch < 16 || self.patch % 4 != 0 {
            return bad(format!("patch {} must be >= 16 and divisible by 4", self.patch));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        for (name, lr) in [("lr_anet_pre", self.lr_anet_pre), ("lr_main", self.lr_main)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} {lr} must be > 0"));
            }
        }
        if !(self.lr_finetune.is_finite() && self.lr_finetune >= 0.0) {
            return bad(format!("lr_finetune {} must be >= 0", self.lr_finetune));
        }
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0 && self.lambda2.is_finite() && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be >= 0".into());
        }
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return bad(format!("eps {} must be in (0, 0.5]", self.eps));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps > 0".into());
        }
        Ok(())
    }
}

/// Losses and update sizes of one training stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// Sample-weighted mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Per network, the mean L2 norm of its Adam updates in each epoch.
    pub update_norms: BTreeMap<String, Vec<f64>>,
    /// Samples left out of this stage (no rain pixels for a label).
    pub skipped: usize,
    pub steps: usize,
}

/// Where stage 2 gets the atmosphere light from.
#[derive(Debug, Clone)]
pub enum AtmosphereSource {
    /// Per-image labels from [`extract_atmosphere_label`]; no ANet.
    Labels,
    /// ANet kept fixed.
    Frozen(ParamSet),
    /// ANet fine-tuned at `lr_finetune`.
    Finetune(ParamSet),
}

/// A training sample prepared for cropping.
struct Prepared<'a> {
    sample: &'a Sample,
    label: Option<[f64; 3]>,
}

fn prepare<'a>(samples: &'a [Sample], patch: usize, need_label: bool) -> Result<(Vec<Prepared<'a>>, usize)> {
    let mut out = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    for s in samples {
        let (h, w) = s.rainy.dims();
        if h < patch || w < patch {
            return Err(Error::TooSmall { height: h, width: w, min: patch });
        }
        let label = if need_label {
            let rain = detect_rain_pixels(&s.rainy, s.mask.as_ref());
            match extract_atmosphere_label(&s.rainy, &rain) {
                Ok(a) => Some(a.rgb()),
                Err(Error::NoRainPixels) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        out.push(Prepared { sample: s, label });
    }
    if out.is_empty() {
        return Err(Error::NoUsableSamples(format!("{} samples, {skipped} without rain pixels", samples.len())));
    }
    if skipped > 0 {
        log::warn!("{skipped} samples without detectable rain pixels skipped");
    }
    Ok((out, skipped))
}

struct Batch {
    rainy: Tensor,
    clean: Tensor,
    labels: Option<Tensor>,
}

fn flip(img: &Image) -> Image {
    let (h, w) = img.dims();
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            out.set_pixel(r, c, img.pixel(r, w - 1 - c));
        }
    }
    out
}

fn assemble(items: &[&Prepared], patch: usize, flips: bool, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let mut rainy = Vec::with_capacity(items.len());
    let mut clean = Vec::with_capacity(items.len());
    for p in items {
        let (h, w) = p.sample.rainy.dims();
        let top = rng.random_range(0..=h - patch);
        let left = rng.random_range(0..=w - patch);
        let mut r = p.sample.rainy.crop(top, left, patch, patch)?;
        let mut c = p.sample.clean.crop(top, left, patch, patch)?;
        if flips && rng.random::<bool>() {
            r = flip(&r);
            c = flip(&c);
        }
        rainy.push(r);
        clean.push(c);
    }
    let labels = if items.iter().all(|p| p.label.is_some()) {
        let data = items.iter().flat_map(|p| p.label.unwrap()).collect();
        Some(Tensor::new(vec![items.len(), 3], data)?)
    } else {
        None
    };
    Ok(Batch {
        rainy: Tensor::from_images(&rainy.iter().collect::<Vec<_>>())?,
        clean: Tensor::from_images(&clean.iter().collect::<Vec<_>>())?,
        labels,
    })
}

/// One network being optimized in a stage.
struct Trainee {
    params: ParamSet,
    state: AdamState,
    lr: f64,
    norms: Vec<f64>,
}

impl Trainee {
    fn new(params: ParamSet, lr: f64) -> Self {
        let state = AdamState::new(&params);
        Self { params, state, lr, norms: Vec::new() }
    }
}

/// Runs `epochs` epochs over `data`. `loss` builds the scalar objective from
/// the bound trainees (in order) and the batch. Networks with a zero learning
/// rate are bound as constants.
fn run_stage<F>(stage: &str, data: &[Prepared], cfg: &TrainConfig, epochs: usize, trainees: &mut [Trainee], loss: F) -> Result<StageReport>
where
    F: Fn(&mut Graph, &[Bound], &Batch) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stage_stream(stage));
    let mut report = StageReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut norm_sums = vec![0.0; trainees.len()];
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch) {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = assemble(&items, cfg.patch, cfg.flips, &mut rng)?;
            let mut g = Graph::new();
            let bound: Vec<Bound> = trainees.iter().map(|t| t.params.bind(&mut g, t.lr > 0.0)).collect();
            let root = loss(&mut g, &bound, &batch)?;
            let value = g.value(root).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { stage: stage.into(), epoch });
            }
            let mut grads = g.backward(root)?;
            let grads: Vec<Vec<Tensor>> = bound.iter().map(|b| b.gradients(&mut grads)).collect();
            drop(bound);
            for ((t, gr), ns) in trainees.iter_mut().zip(grads).zip(&mut norm_sums) {
                if t.lr > 0.0 {
                    *ns += adam_step(&mut t.params, &gr, &mut t.state, t.lr, cfg.adam)?;
                }
            }
            loss_sum += value * items.len() as f64;
            steps += 1;
        }
        let mean = loss_sum / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { stage: stage.into(), epoch });
        }
        report.epoch_losses.push(mean);
        report.steps += steps;
        for (t, s) in trainees.iter_mut().zip(norm_sums) {
            t.norms.push(s / steps.max(1) as f64);
        }
        log::info!("{stage} epoch {}/{epochs} loss {mean:.6}", epoch + 1);
    }
    for t in trainees.iter_mut() {
        report.update_norms.insert(t.params.arch_id().to_string(), std::mem::take(&mut t.norms));
    }
    Ok(report)
}

fn stage_stream(stage: &str) -> u64 {
    match stage {
        "anet" => 11,
        "snet" => 12,
        _ => 13,
    }
}

fn broadcast(g: &mut Graph, a: Var, like: &Tensor) -> Result<Var> {
    let (_, _, h, w) = like.dims4()?;
    g.broadcast_spatial(a, h, w)
}

/// Stage 1: ANet regressed onto per-image atmosphere labels at `lr_anet_pre`.
pub fn pretrain_anet(samples: &[Sample], init: ParamSet, cfg: &TrainConfig) -> Result<(ParamSet, StageReport)> {
    cfg.validate()?;
    init.expect_arch(Arch::Anet)?;
    let (data, skipped) = prepare(samples, cfg.patch, true)?;
    let mut trainees = [Trainee::new(init, cfg.lr_anet_pre)];
    let mut report = run_stage("anet", &data, cfg, cfg.epochs_anet, &mut trainees, |g, b, batch| {
        let x = g.input(batch.rainy.clone());
        let label = g.input(batch.labels.clone().expect("stage 1 samples carry labels"));
        let pred = anet(g, &b[0], x)?;
        anet_objective(g, pred, label)
    })?;
    report.skipped = skipped;
    let [t] = trainees;
    Ok((t.params, report))
}

/// Stage 2: SNet trained through `J = recover(I, S(I), 0, A)` on the MSE to
/// the clean image. Returns SNet and, unless `source` is `Labels`, the
/// (possibly fine-tuned) ANet.
pub fn pretrain_snet(samples: &[Sample], snet_init: ParamSet, source: AtmosphereSource, cfg: &TrainConfig) -> Result<(ParamSet, Option<ParamSet>, StageReport)> {
    cfg.validate()?;
    snet_init.expect_arch(Arch::Snet)?;
    let (anet_params, anet_lr) = match source {
        AtmosphereSource::Labels => (None, 0.0),
        AtmosphereSource::Frozen(p) => (Some(p), 0.0),
        AtmosphereSource::Finetune(p) => (Some(p), cfg.lr_finetune),
    };
    if let Some(p) = &anet_params {
        p.expect_arch(Arch::Anet)?;
    }
    let use_labels = anet_params.is_none();
    let (data, skipped) = prepare(samples, cfg.patch, use_labels)?;
    let mut trainees = vec![Trainee::new(snet_init, cfg.lr_main)];
    if let Some(p) = anet_params {
        trainees.push(Trainee::new(p, anet_lr));
    }
    let eps = cfg.eps;
    let mut report = run_stage("snet", &data, cfg, cfg.epochs_snet, &mut trainees, |g, b, batch| {
        let x = g.input(batch.rainy.clone());
        let target = g.input(batch.clean.clone());
        let ts = snet(g, &b[0], x)?;
        let a = match b.get(1) {
            Some(ab) => anet(g, ab, x)?,
            None => g.input(batch.labels.clone().expect("label-sourced samples carry labels")),
        };
        let a_map = broadcast(g, a, &batch.rainy)?;
        let j_hat = g.recover(x, ts, None, a_map, eps)?;
        snet_objective(g, j_hat, target)
    })?;
    report.skipped = skipped;
    let mut it = trainees.into_iter();
    let s = it.next().expect("snet trainee").params;
    Ok((s, it.next().map(|t| t.params), report))
}

/// Stage 3: VNet trained at `lr_main` on the gradient + L1 objective with SNet
/// and ANet fine-tuned at `lr_finetune`. SNet receives gradient both through
/// the recovery and through VNet's input.
pub fn joint_train(
    samples: &[Sample],
    snet_params: ParamSet,
    vnet_init: ParamSet,
    anet_params: ParamSet,
    cfg: &TrainConfig,
) -> Result<(ParamSet, ParamSet, ParamSet, StageReport)> {
    cfg.validate()?;
    snet_params.expect_arch(Arch::Snet)?;
    vnet_init.expect_arch(Arch::Vnet)?;
    anet_params.expect_arch(Arch::Anet)?;
    let (data, skipped) = prepare(samples, cfg.patch, false)?;
    let mut trainees = [
        Trainee::new(snet_params, cfg.lr_finetune),
        Trainee::new(vnet_init, cfg.lr_main),
        Trainee::new(anet_params, cfg.lr_finetune),
    ];
    let (eps, l1, l2) = (cfg.eps, cfg.lambda1, cfg.lambda2);
    let mut report = run_stage("joint", &data, cfg, cfg.epochs_joint, &mut trainees, |g, b, batch| {
        let x = g.input(batch.rainy.clone());
        let target = g.input(batch.clean.clone());
        let a = anet(g, &b[2], x)?;
        let ts = snet(g, &b[0], x)?;
        let tv = vnet(g, &b[1], x, ts)?;
        let a_map = broadcast(g, a, &batch.rainy)?;
        let j_hat = g.recover(x, ts, Some(tv), a_map, eps)?;
        total_objective(g, j_hat, target, l1, l2)
    })?;
    report.skipped = skipped;
    let [s, v, a] = trainees;
    Ok((s.params, v.params, a.params, report))
}

/// Pipeline variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// SNet with per-image atmosphere labels; no ANet, no VNet.
    C1,
    /// Pretrained ANet kept frozen while SNet trains; no VNet.
    C2,
    /// Pretrained ANet fine-tuned together with SNet; no VNet.
    C3,
    /// All three stages.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::C1, Ablation::C2, Ablation::C3, Ablation::Full];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "c1" => Ok(Self::C1),
            "c2" => Ok(Self::C2),
            "c3" => Ok(Self::C3),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown ablation mode `{other}` (expected c1, c2, c3 or full)"))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::C1 => "c1",
            Self::C2 => "c2",
            Self::C3 => "c3",
            Self::Full => "full",
        }
    }

    pub fn uses_anet(self) -> bool {
        self != Self::C1
    }

    pub fn uses_vnet(self) -> bool {
        self == Self::Full
    }
}

/// Everything recorded about a training run. Contains no timing, so that
/// identical runs produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub ablation: Option<Ablation>,
    pub train_config: TrainConfig,
    pub arch_config: ArchConfig,
    /// Per stage name (`anet`, `snet`, `joint`).
    pub stages: BTreeMap<String, StageReport>,
    /// Stages that were skipped with freshly initialized inputs instead.
    pub skipped_pretraining: Vec<String>,
    /// Checkpoint file names relative to the output directory, per network.
    pub checkpoints: BTreeMap<String, String>,
}

impl TrainReport {
    pub fn new(cfg: &TrainConfig, arch: &ArchConfig, ablation: Option<Ablation>) -> Self {
        Self {
            seed: cfg.seed,
            ablation,
            train_config: cfg.clone(),
            arch_config: arch.clone(),
            stages: BTreeMap::new(),
            skipped_pretraining: Vec::new(),
            checkpoints: BTreeMap::new(),
        }
    }
}

/// Trained networks of one protocol run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub snet: ParamSet,
    pub vnet: Option<ParamSet>,
    pub anet: Option<ParamSet>,
    pub report: TrainReport,
}

/// Runs the stages an ablation variant calls for, from fresh initialization.
pub fn train_protocol(samples: &[Sample], arch: &ArchConfig, cfg: &TrainConfig, ablation: Ablation) -> Result<Trained> {
    arch.validate()?;
    cfg.validate()?;
    let mut report = TrainReport::new(cfg, arch, Some(ablation));
    let snet0 = init_params("snet", arch, cfg.seed)?;
    let anet = if ablation.uses_anet() {
        let (a, r) = pretrain_anet(samples, init_params("anet", arch, cfg.seed)?, cfg)?;
        report.stages.insert("anet".into(), r);
        Some(a)
    } else {
        None
    };
    let source = match (ablation, anet) {
        (Ablation::C1, _) | (_, None) => AtmosphereSource::Labels,
        (Ablation::C2, Some(a)) => AtmosphereSource::Frozen(a),
        (_, Some(a)) => AtmosphereSource::Finetune(a),
    };
    let (snet_p, anet, r) = pretrain_snet(samples, snet0, source, cfg)?;
    report.stages.insert("snet".into(), r);
    if !ablation.uses_vnet() {
        return Ok(Trained { snet: snet_p, vnet: None, anet, report });
    }
    let anet = anet.expect("full protocol trains ANet");
    let (s, v, a, r) = joint_train(samples, snet_p, init_params("vnet", arch, cfg.seed)?, anet, cfg)?;
    report.stages.insert("joint".into(), r);
    Ok(Trained { snet: s, vnet: Some(v), anet: Some(a), report })
}
