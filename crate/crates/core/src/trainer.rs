//! Optimization loop: photometric loss, Adam updates, adaptive density control
//! and the opacity-reset schedule.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HgsError, Result};
use crate::geometry::{logit, param_count, param_mut, quat_to_rotation, sigmoid, CameraModel, Scene};
use crate::image::Image;
use crate::metrics::{psnr, ssim_with_grad};
use crate::raster::{render_backward, render_with, GradientSet, Kernel};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;
/// Children of a split get their parent's scales divided by this.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
/// Primitives wider than this fraction of the scene extent are pruned.
pub const MAX_EXTENT_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// All groups, density control and opacity resets.
    FromScratch,
    /// All groups, no density control.
    FinetuneAll,
    FinetuneAllWithDensify,
    /// Only the split normal and the two opacities are updated.
    FinetuneNormalsOpacities,
}

impl TrainMode {
    pub fn densifies(self) -> bool {
        matches!(self, TrainMode::FromScratch | TrainMode::FinetuneAllWithDensify)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            TrainMode::FromScratch => "scratch",
            TrainMode::FinetuneAll => "finetune",
            TrainMode::FinetuneAllWithDensify => "finetune-densify",
            TrainMode::FinetuneNormalsOpacities => "finetune-selective",
        }
    }
}

impl FromStr for TrainMode {
    type Err = HgsError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "scratch" => TrainMode::FromScratch,
            "finetune" => TrainMode::FinetuneAll,
            "finetune-densify" => TrainMode::FinetuneAllWithDensify,
            "finetune-selective" => TrainMode::FinetuneNormalsOpacities,
            _ => return Err(HgsError::InvalidConfig(format!("unknown training mode `{s}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: u32,
    pub densify_until: u32,
    pub densify_interval: u32,
    pub opacity_reset_start: u32,
    pub opacity_reset_interval: u32,
    pub opacity_reset_until: u32,
    pub lambda_ssim: f64,
    /// Position learning rate, decayed exponentially from `lr_position_init`
    /// to `lr_position_final` over `total_iters` and scaled by the scene
    /// extent.
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    /// May be zero, which freezes the normals.
    pub lr_normal: f64,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// Fraction of the scene extent separating clone (smaller) from split.
    pub percent_dense: f64,
    pub opacity_reset_ceiling: f64,
    pub mode: TrainMode,
    pub kernel: Kernel,
    /// Density control never grows the scene beyond this count.
    pub max_primitives: Option<usize>,
    /// Overrides the extent derived from the camera centers.
    pub scene_extent: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 30_000,
            densify_until: 20_000,
            densify_interval: 100,
            opacity_reset_start: 3000,
            opacity_reset_interval: 3000,
            opacity_reset_until: 20_000,
            lambda_ssim: 0.2,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh_dc: 2.5e-3,
            lr_sh_rest: 2.5e-3 / 20.0,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_normal: 3e-3,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            percent_dense: 0.01,
            opacity_reset_ceiling: 0.01,
            mode: TrainMode::FromScratch,
            kernel: Kernel::HalfGaussian,
            max_primitives: None,
            scene_extent: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HgsError::InvalidConfig(m));
        if self.densify_until == 0 || self.densify_until > self.total_iters {
            return bad(format!(
                "densify_until must lie in 1..={} (got {})",
                self.total_iters, self.densify_until
            ));
        }
        if self.densify_interval == 0 || self.opacity_reset_interval == 0 {
            return bad("schedule intervals must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return bad(format!("lambda_ssim {} is outside [0, 1]", self.lambda_ssim));
        }
        let rates = [
            ("lr_position_init", self.lr_position_init),
            ("lr_position_final", self.lr_position_final),
            ("lr_sh_dc", self.lr_sh_dc),
            ("lr_sh_rest", self.lr_sh_rest),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive (got {v})"));
            }
        }
        if !(self.lr_normal >= 0.0 && self.lr_normal.is_finite()) {
            return bad(format!("lr_normal must be non-negative (got {})", self.lr_normal));
        }
        if !(self.opacity_reset_ceiling > 0.0 && self.opacity_reset_ceiling < 1.0) {
            return bad("opacity_reset_ceiling must lie in (0, 1)".into());
        }
        if let Some(e) = self.scene_extent {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("scene_extent must be positive (got {e})"));
            }
        }
        Ok(())
    }

    pub fn position_lr(&self, iteration: u32) -> f64 {
        let t = (iteration as f64 / self.total_iters.max(1) as f64).clamp(0.0, 1.0);
        ((1.0 - t) * self.lr_position_init.ln() + t * self.lr_position_final.ln()).exp()
    }

    pub fn is_densify_iteration(&self, iteration: u32) -> bool {
        self.mode.densifies()
            && iteration > 0
            && iteration % self.densify_interval == 0
            && iteration < self.densify_until
    }

    pub fn is_reset_iteration(&self, iteration: u32) -> bool {
        self.mode.densifies()
            && iteration >= self.opacity_reset_start
            && iteration % self.opacity_reset_interval == 0
            && iteration < self.opacity_reset_until
    }
}

/// `(1−λ)·L1 + λ·(1 − SSIM)` and its gradient with respect to `rendered`.
/// With `λ = 0` the SSIM term is skipped entirely, so images smaller than the
/// SSIM window are accepted.
pub fn compute_loss(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<(f64, Image)> {
    rendered.same_shape(target)?;
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut l1 = 0.0;
    let w1 = (1.0 - lambda_ssim) / n;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        *g = if d > 0.0 {
            w1
        } else if d < 0.0 {
            -w1
        } else {
            0.0
        };
    }
    let mut loss = (1.0 - lambda_ssim) * l1 / n;
    if lambda_ssim > 0.0 {
        let (s, ds) = ssim_with_grad(rendered, target)?;
        loss += lambda_ssim * (1.0 - s);
        for (g, d) in grad.data.iter_mut().zip(&ds.data) {
            *g -= lambda_ssim * d;
        }
    }
    Ok((loss, grad))
}

/// One training camera with its reference image.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub name: String,
    pub camera: CameraModel,
    pub image: Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Group {
    Position,
    Scale,
    Rotation,
    ShDc,
    ShRest,
    Normal,
    Opacity,
}

fn group_of(k: usize, coeffs: usize) -> Group {
    match k {
        0..=2 => Group::Position,
        3..=5 => Group::Scale,
        6..=9 => Group::Rotation,
        10..=12 => Group::ShDc,
        _ if k < 10 + 3 * coeffs => Group::ShRest,
        _ if k < 13 + 3 * coeffs => Group::Normal,
        _ => Group::Opacity,
    }
}

/// Adam moments for every scalar parameter, stored per primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    stride: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(primitives: usize, sh_coeffs: usize) -> Self {
        let stride = param_count(sh_coeffs);
        OptimizerState {
            stride,
            m: vec![0.0; primitives * stride],
            v: vec![0.0; primitives * stride],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len() / self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Rebuilds the per-primitive state after density control: survivors keep
    /// their moments, new primitives start from zero.
    pub fn remap(&mut self, origins: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![0.0; origins.len() * s];
        let mut v = vec![0.0; origins.len() * s];
        for (i, o) in origins.iter().enumerate() {
            if let Some(j) = *o {
                m[i * s..(i + 1) * s].copy_from_slice(&self.m[j * s..(j + 1) * s]);
                v[i * s..(i + 1) * s].copy_from_slice(&self.v[j * s..(j + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }

    fn clear_opacity_moments(&mut self) {
        let s = self.stride;
        for i in 0..self.len() {
            for k in s - 2..s {
                self.m[i * s + k] = 0.0;
                self.v[i * s + k] = 0.0;
            }
        }
    }
}

fn group_lr(config: &TrainConfig, group: Group, iteration: u32, extent: f64) -> f64 {
    let trains_geometry = config.mode != TrainMode::FinetuneNormalsOpacities;
    match group {
        Group::Normal => config.lr_normal,
        Group::Opacity => config.lr_opacity,
        _ if !trains_geometry => 0.0,
        Group::Position => config.position_lr(iteration) * extent,
        Group::Scale => config.lr_scale,
        Group::Rotation => config.lr_rotation,
        Group::ShDc => config.lr_sh_dc,
        Group::ShRest => config.lr_sh_rest,
    }
}

/// Applies one Adam update. Groups with a zero learning rate are left
/// untouched, moments included.
pub fn apply_gradients(
    scene: &mut Scene,
    grads: &GradientSet,
    config: &TrainConfig,
    opt: &mut OptimizerState,
    iteration: u32,
) -> Result<()> {
    if grads.len() != scene.len() || opt.len() != scene.len() {
        return Err(HgsError::ShapeMismatch(format!(
            "{} primitives, {} gradients, {} optimizer slots",
            scene.len(),
            grads.len(),
            opt.len()
        )));
    }
    let coeffs = crate::geometry::sh_coeff_count(scene.sh_degree);
    let extent = config.scene_extent.unwrap_or(1.0);
    opt.step += 1;
    let bc1 = 1.0 - BETA1.powi(opt.step as i32);
    let bc2 = 1.0 - BETA2.powi(opt.step as i32);
    let lrs: Vec<f64> = (0..opt.stride)
        .map(|k| group_lr(config, group_of(k, coeffs), iteration, extent))
        .collect();
    let s = opt.stride;
    for (i, (p, g)) in scene.primitives.iter_mut().zip(&grads.grads).enumerate() {
        let flat = g.flatten();
        for (k, &lr) in lrs.iter().enumerate() {
            if lr == 0.0 {
                continue;
            }
            let gk = flat[k];
            let m = &mut opt.m[i * s + k];
            let v = &mut opt.v[i * s + k];
            *m = BETA1 * *m + (1.0 - BETA1) * gk;
            *v = BETA2 * *v + (1.0 - BETA2) * gk * gk;
            let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            *param_mut(p, k) -= update;
        }
        if lrs[10 + 3 * coeffs] > 0.0 {
            let len = p.normal.norm();
            if len > 0.0 {
                p.normal /= len;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    /// PSNR of the render used for this step.
    pub psnr: f64,
    pub grads: GradientSet,
}

/// Render, loss, backward and one optimizer update for a single view.
pub fn step(
    scene: &mut Scene,
    view: &TrainView,
    config: &TrainConfig,
    opt: &mut OptimizerState,
    iteration: u32,
) -> Result<StepOutcome> {
    let out = render_with(scene, &view.camera, config.kernel)?;
    let (loss, d_color) = compute_loss(&out.color, &view.image, config.lambda_ssim)?;
    if !loss.is_finite() {
        return Err(HgsError::NonFiniteLoss { iteration });
    }
    let grads = render_backward(scene, &view.camera, &out, &d_color)?;
    apply_gradients(scene, &grads, config, opt, iteration)?;
    Ok(StepOutcome {
        loss,
        psnr: psnr(&out.color, &view.image)?,
        grads,
    })
}

/// Screen-space gradient statistics accumulated between densification
/// events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStats {
    pub grad_sum: Vec<f64>,
    pub views: Vec<u32>,
    pub d_mu_sum: Vec<Vector3<f64>>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        DensityStats {
            grad_sum: vec![0.0; n],
            views: vec![0; n],
            d_mu_sum: vec![Vector3::zeros(); n],
        }
    }

    pub fn accumulate(&mut self, grads: &GradientSet) {
        for i in 0..grads.len().min(self.grad_sum.len()) {
            if grads.touch_count[i] > 0 {
                self.grad_sum[i] += grads.mean2d_grad_norm[i];
                self.views[i] += 1;
                self.d_mu_sum[i] += grads.grads[i].d_mu;
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.views[i] as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// For each primitive of the new scene, the index it was carried over
    /// from, or `None` if it was created.
    pub origins: Vec<Option<usize>>,
}

/// Clone small high-gradient primitives, split large ones, then prune
/// transparent or oversized primitives.
pub fn densify_and_prune(
    scene: &mut Scene,
    stats: &DensityStats,
    config: &TrainConfig,
    iteration: u32,
    extent: f64,
) -> DensifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = scene.len();
    let mut room = config.max_primitives.map_or(usize::MAX, |m| m.saturating_sub(n));
    let mut report = DensifyReport::default();
    let mut out = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    let mut children = Vec::new();
    let shrink = SPLIT_SCALE_DIVISOR.ln();

    for (i, p) in scene.primitives.iter().enumerate() {
        let hot = stats.mean_grad(i) >= config.densify_grad_threshold;
        if !hot || room == 0 {
            out.push(p.clone());
            origins.push(Some(i));
            continue;
        }
        room -= 1;
        if p.max_scale() <= config.percent_dense * extent {
            out.push(p.clone());
            origins.push(Some(i));
            let mut c = p.clone();
            let dir = stats.d_mu_sum[i];
            let len = dir.norm();
            if len > 0.0 {
                c.mu -= dir * (p.max_scale() / len);
            }
            children.push(c);
            report.cloned += 1;
        } else {
            let rot = quat_to_rotation(&p.rotation);
            let scale = p.log_scale.map(f64::exp);
            for _ in 0..2 {
                let z: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let mut c = p.clone();
                c.mu = p.mu + rot * scale.component_mul(&z);
                c.log_scale = p.log_scale.map(|l| l - shrink);
                children.push(c);
            }
            report.split += 1;
        }
    }
    origins.extend(std::iter::repeat_n(None, children.len()));
    out.extend(children);

    // oversized primitives are only culled once opacity resets have begun
    let max_extent = if iteration > config.opacity_reset_start {
        MAX_EXTENT_FRACTION * extent
    } else {
        f64::INFINITY
    };
    let mut kept = Vec::with_capacity(out.len());
    let mut kept_origins = Vec::with_capacity(out.len());
    for (p, o) in out.into_iter().zip(origins) {
        let alpha = p.opacity_a().max(p.opacity_b());
        if alpha < config.prune_opacity_threshold || p.max_scale() > max_extent {
            report.pruned += 1;
        } else {
            kept.push(p);
            kept_origins.push(o);
        }
    }
    scene.primitives = kept;
    report.origins = kept_origins;
    report
}

/// Clamps both opacities of every primitive to at most `ceiling`.
pub fn reset_opacity(scene: &mut Scene, ceiling: f64) {
    let cap = logit(ceiling);
    for p in &mut scene.primitives {
        p.raw_opacity_a = p.raw_opacity_a.min(cap);
        p.raw_opacity_b = p.raw_opacity_b.min(cap);
    }
}

/// Mean `|α₁ − α₂|` over the scene.
pub fn opacity_disparity(scene: &Scene) -> Result<f64> {
    if scene.is_empty() {
        return Err(HgsError::EmptyScene);
    }
    let sum: f64 = scene
        .primitives
        .iter()
        .map(|p| (sigmoid(p.raw_opacity_a) - sigmoid(p.raw_opacity_b)).abs())
        .sum();
    Ok(sum / scene.len() as f64)
}

/// `1.1 ×` the largest distance of a camera center from their centroid.
pub fn camera_extent(cams: &[CameraModel]) -> f64 {
    if cams.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = cams.iter().map(|c| c.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u32,
    pub loss: f64,
    pub psnr: f64,
    pub primitives: usize,
    pub opacity_disparity: f64,
    pub densify: Option<(usize, usize, usize)>,
    pub reset: bool,
}

impl LogRow {
    pub const CSV_HEADER: &'static str =
        "iteration,loss,psnr,primitives,opacity_disparity,densify,reset,cloned,split,pruned";

    pub fn to_csv(&self) -> String {
        let (c, s, p) = self.densify.unwrap_or((0, 0, 0));
        format!(
            "{},{:.8},{},{},{:.6},{},{},{c},{s},{p}",
            self.iteration,
            self.loss,
            crate::metrics::format_psnr(self.psnr),
            self.primitives,
            self.opacity_disparity,
            self.densify.is_some() as u8,
            self.reset as u8,
        )
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LogRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

/// Training driver holding the scene, optimizer state and schedule position.
pub struct Trainer {
    pub scene: Scene,
    pub config: TrainConfig,
    pub views: Vec<TrainView>,
    pub opt: OptimizerState,
    pub stats: DensityStats,
    pub iteration: u32,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl Trainer {
    /// Views are visited in a seeded random order, reshuffled every epoch.
    pub fn new(scene: Scene, views: Vec<TrainView>, mut config: TrainConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        if scene.is_empty() {
            return Err(HgsError::EmptyScene);
        }
        if views.is_empty() {
            return Err(HgsError::InvalidConfig("no training views".into()));
        }
        for v in &views {
            if v.image.width != v.camera.width as usize || v.image.height != v.camera.height as usize {
                return Err(HgsError::ShapeMismatch(format!(
                    "view {}: image {}x{} vs camera {}x{}",
                    v.name, v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
        }
        if config.scene_extent.is_none() {
            let cams: Vec<CameraModel> = views.iter().map(|v| v.camera.clone()).collect();
            config.scene_extent = Some(camera_extent(&cams));
        }
        let coeffs = crate::geometry::sh_coeff_count(scene.sh_degree);
        Ok(Trainer {
            opt: OptimizerState::new(scene.len(), coeffs),
            stats: DensityStats::new(scene.len()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            iteration: 0,
            scene,
            config,
            views,
        })
    }

    pub fn extent(&self) -> f64 {
        self.config.scene_extent.unwrap_or(1.0)
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.total_iters
    }

    fn next_view(&mut self) -> usize {
        if self.order.is_empty() {
            self.order = (0..self.views.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.order.reverse();
        }
        self.order.pop().expect("refilled above")
    }

    /// Runs the next iteration, including any scheduled density control or
    /// opacity reset that follows it.
    pub fn step(&mut self) -> Result<LogRow> {
        self.iteration += 1;
        let it = self.iteration;
        let vi = self.next_view();
        let outcome = step(&mut self.scene, &self.views[vi], &self.config, &mut self.opt, it)?;
        if self.config.mode.densifies() && it < self.config.densify_until {
            self.stats.accumulate(&outcome.grads);
        }

        let mut densify = None;
        if self.config.is_densify_iteration(it) {
            let extent = self.extent();
            let r = densify_and_prune(&mut self.scene, &self.stats, &self.config, it, extent);
            self.opt.remap(&r.origins);
            self.stats = DensityStats::new(self.scene.len());
            densify = Some((r.cloned, r.split, r.pruned));
            if self.scene.is_empty() {
                return Err(HgsError::EmptyScene);
            }
        }
        let reset = self.config.is_reset_iteration(it);
        if reset {
            reset_opacity(&mut self.scene, self.config.opacity_reset_ceiling);
            self.opt.clear_opacity_moments();
        }
        Ok(LogRow {
            iteration: it,
            loss: outcome.loss,
            psnr: outcome.psnr,
            primitives: self.scene.len(),
            opacity_disparity: opacity_disparity(&self.scene)?,
            densify,
            reset,
        })
    }

    /// Steps until `total_iters`, handing every row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&Trainer, &LogRow) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let row = self.step()?;
            on_row(self, &row)?;
        }
        Ok(())
    }
}
