//! Gradient-based scene fitting: Adam, a plateau learning-rate scheduler,
//! fitting from an initial scene, random-restart fitting and the iterative
//! object-adding fitter.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efd::PrototypeBank;
use crate::image::Image;
use crate::losses::{image_loss, image_loss_grad, LossError, LossKind};
use crate::render::{RenderConfig, RenderError, Rasterization};
use crate::scene::{flatten, unflatten, Aspect, FlatParams, Layout, ObjectParams, Scene, SceneError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("parameter vector has {params} values but gradient has {grad}")]
    ShapeMismatch { params: usize, grad: usize },
    #[error("target is {target_w}x{target_h} but the scene is {scene_w}x{scene_h}")]
    TargetSize {
        target_w: u32,
        target_h: u32,
        scene_w: u32,
        scene_h: u32,
    },
    #[error("invalid fit settings: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            config,
        }
    }

    /// One bias-corrected Adam update of `params` in place, at learning rate
    /// `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<(), FitError> {
        if params.len() != grad.len() || params.len() != self.m.len() {
            return Err(FitError::ShapeMismatch {
                params: params.len(),
                grad: grad.len(),
            });
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam update of a scene's flat parameters followed by re-projection onto
/// valid scenes.
pub fn adam_step(state: &mut AdamState, params: &FlatParams, grad: &[f64]) -> Result<FlatParams, FitError> {
    let mut values = params.values.clone();
    state.step(&mut values, grad, state.config.lr)?;
    let scene = unflatten(&FlatParams {
        values,
        layout: params.layout,
    })?;
    Ok(flatten(&scene))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub patience: usize,
    pub cooldown: usize,
    pub factor: f64,
    /// Relative improvement required to reset the patience counter.
    pub threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            patience: 10,
            cooldown: 10,
            factor: 0.5,
            threshold: 1e-4,
        }
    }
}

/// Cuts the learning rate by `factor` after `patience` consecutive
/// non-improving steps, then ignores `cooldown` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    pub lr: f64,
    pub best: f64,
    pub num_bad: usize,
    pub cooldown_left: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: SchedulerConfig) -> Self {
        Self {
            config,
            lr,
            best: f64::INFINITY,
            num_bad: 0,
            cooldown_left: 0,
        }
    }

    /// Records a loss and returns the learning rate to use next.
    pub fn step(&mut self, loss: f64) -> f64 {
        let improved = if self.best.is_finite() {
            loss < self.best - self.config.threshold * self.best.abs()
        } else {
            loss < self.best
        };
        if improved {
            self.best = loss;
            self.num_bad = 0;
        } else {
            self.num_bad += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.num_bad = 0;
        }
        if self.num_bad >= self.config.patience {
            self.lr *= self.config.factor;
            self.cooldown_left = self.config.cooldown;
            self.num_bad = 0;
        }
        self.lr
    }
}

/// Early-stopping rule for open-ended fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Convergence {
    pub min_lr: f64,
    pub tolerance: f64,
    pub window: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            min_lr: 1e-5,
            tolerance: 1e-7,
            window: 20,
        }
    }
}

/// Result of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub best: Vec<f64>,
    pub best_loss: f64,
    pub trace: Vec<f64>,
}

/// Adam with plateau scheduling over an arbitrary objective, keeping the best
/// evaluated point.
///
/// `evaluate` returns the loss and gradient at a point; `project` maps an
/// updated point back onto the feasible set. When an evaluation fails after
/// the first one, the search restarts from the best point at a reduced
/// learning rate.
pub fn minimize<E>(
    x0: Vec<f64>,
    budget: usize,
    adam: AdamConfig,
    scheduler: SchedulerConfig,
    convergence: Option<Convergence>,
    mut evaluate: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    mut project: impl FnMut(&mut Vec<f64>),
) -> Result<Minimized, E> {
    let mut x = x0;
    let mut state = AdamState::new(x.len(), adam);
    let mut sched = PlateauScheduler::new(adam.lr, scheduler);
    let mut best = x.clone();
    let mut best_loss = f64::INFINITY;
    let mut trace = Vec::with_capacity(budget);
    let mut flat_steps = 0;
    for it in 0..budget {
        let (loss, grad) = match evaluate(&x) {
            Ok(v) => v,
            Err(e) if it == 0 => return Err(e),
            Err(_) => {
                x = best.clone();
                state = AdamState::new(x.len(), adam);
                sched.lr *= scheduler.factor;
                trace.push(best_loss);
                continue;
            }
        };
        if let Some(prev) = trace.last() {
            let prev: f64 = *prev;
            flat_steps = if (loss - prev).abs() < convergence.map_or(0.0, |c| c.tolerance) {
                flat_steps + 1
            } else {
                0
            };
        }
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best.clone_from(&x);
        }
        let lr = sched.step(loss);
        if let Some(c) = convergence {
            if lr < c.min_lr || flat_steps >= c.window {
                break;
            }
        }
        if it + 1 == budget {
            break;
        }
        state
            .step(&mut x, &grad, lr)
            .expect("gradient length matches the parameter vector");
        project(&mut x);
    }
    Ok(Minimized {
        best,
        best_loss,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptIterConfig {
    /// Box-blur window applied to the residual map.
    pub blur_window: usize,
    /// Window over which a new object's color is averaged.
    pub color_window: usize,
    pub init_scale: f64,
    /// Smallest blurred residual (summed over channels) worth a new object.
    pub residual_threshold: f64,
    /// Adam iterations after each added object.
    pub iterations_per_object: usize,
    /// Initial angles tried for each new object, evenly spaced from the
    /// random draw; the best after `probe_iterations` is refined further.
    pub angle_starts: usize,
    pub probe_iterations: usize,
}

impl Default for OptIterConfig {
    fn default() -> Self {
        Self {
            blur_window: 9,
            color_window: 9,
            init_scale: 0.15,
            residual_threshold: 0.02,
            iterations_per_object: 100,
            angle_starts: 4,
            probe_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub adam: AdamConfig,
    pub scheduler: SchedulerConfig,
    /// Iterations for fitting from a given initial scene.
    pub budget: usize,
    pub loss: LossKind,
    /// Keep object confidences fixed during image-space fitting.
    pub freeze_confidence: bool,
    /// Iteration cap for random-initialization fits.
    pub max_iterations: usize,
    pub convergence: Convergence,
    pub opt_iter: OptIterConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            scheduler: SchedulerConfig::default(),
            budget: 100,
            loss: LossKind::Mae,
            freeze_confidence: true,
            max_iterations: 500,
            convergence: Convergence::default(),
            opt_iter: OptIterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Best scene seen during the fit.
    pub scene: Scene,
    /// Image loss at every evaluated iterate.
    pub loss_trace: Vec<f64>,
    /// Loss of `scene`, the minimum of the trace.
    pub final_loss: f64,
    pub iterations: usize,
    /// Best loss after each added object (iterative fits only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_losses: Vec<f64>,
    /// Not serialized, so that reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: Duration,
}

fn check_target(target: &Image, scene: &Scene) -> Result<(), FitError> {
    if target.width() != scene.width || target.height() != scene.height {
        return Err(FitError::TargetSize {
            target_w: target.width(),
            target_h: target.height(),
            scene_w: scene.width,
            scene_h: scene.height,
        });
    }
    Ok(())
}

/// Image loss of `scene` against `target` and its flat gradient.
pub fn image_objective(
    target: &Image,
    scene: &Scene,
    bank: &PrototypeBank,
    render: &RenderConfig,
    loss: LossKind,
) -> Result<(f64, Vec<f64>), FitError> {
    let raster = Rasterization::new(scene, bank, render)?;
    let (value, adjoint) = image_loss_grad(&raster.image(), target, loss)?;
    let grad = raster.backward(&adjoint)?.to_flat(scene, bank, render.k_points);
    Ok((value, grad))
}

fn zero_frozen(grad: &mut [f64], layout: &Layout, freeze_confidence: bool) {
    if freeze_confidence {
        for i in layout.aspect_indices(Aspect::Confidence) {
            grad[i] = 0.0;
        }
    }
}

fn fit_with_budget(
    target: &Image,
    init: &Scene,
    bank: &PrototypeBank,
    render: &RenderConfig,
    cfg: &FitConfig,
    budget: usize,
    convergence: Option<Convergence>,
) -> Result<(Scene, Minimized), FitError> {
    check_target(target, init)?;
    init.validate_with(usize::MAX)?;
    let layout = init.layout();
    let x0 = flatten(init).values;
    let result = minimize(
        x0,
        budget,
        cfg.adam,
        cfg.scheduler,
        convergence,
        |x| {
            let scene = unflatten(&FlatParams {
                values: x.to_vec(),
                layout,
            })?;
            let (loss, mut grad) = image_objective(target, &scene, bank, render, cfg.loss)?;
            zero_frozen(&mut grad, &layout, cfg.freeze_confidence);
            Ok::<_, FitError>((loss, grad))
        },
        |x| {
            let scene = unflatten(&FlatParams {
                values: std::mem::take(x),
                layout,
            })
            .expect("finite parameters of the right length");
            *x = flatten(&scene).values;
        },
    )?;
    let scene = unflatten(&FlatParams {
        values: result.best.clone(),
        layout,
    })?;
    Ok((scene, result))
}

/// Minimizes the image loss starting from `init` for `cfg.budget` Adam
/// iterations and returns the best scene seen.
pub fn fit_from_init(
    target: &Image,
    init: &Scene,
    bank: &PrototypeBank,
    render: &RenderConfig,
    cfg: &FitConfig,
) -> Result<FitReport, FitError> {
    let start = Instant::now();
    let (scene, m) = fit_with_budget(target, init, bank, render, cfg, cfg.budget, None)?;
    Ok(FitReport {
        scene,
        iterations: m.trace.len(),
        final_loss: m.best_loss,
        loss_trace: m.trace,
        stage_losses: Vec::new(),
        wall_time: start.elapsed(),
    })
}

/// Random object for slot initialization.
pub fn random_object(rng: &mut impl Rng, n_shapes: usize) -> ObjectParams {
    let translation = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
    let scale = rng.gen_range(0.1..0.3);
    let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let angle: f64 = rng.gen_range(0.0..TAU);
    ObjectParams {
        color,
        translation,
        scale,
        rotation: [angle.cos(), angle.sin()],
        shape_weights: vec![1.0 / n_shapes as f64; n_shapes],
        confidence: 1.0,
    }
}

/// Fits `n_objects` randomly initialized slots directly against the image
/// loss until convergence or `cfg.max_iterations`.
pub fn fit_rand_optp(
    target: &Image,
    n_objects: usize,
    bank: &PrototypeBank,
    render: &RenderConfig,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitReport, FitError> {
    if n_objects == 0 {
        return Err(FitError::Invalid("n_objects must be at least 1".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = (0..n_objects).map(|_| random_object(&mut rng, bank.len())).collect();
    let background = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let init = Scene {
        width: target.width(),
        height: target.height(),
        background,
        objects,
    };
    let (scene, m) = fit_with_budget(target, &init, bank, render, cfg, cfg.max_iterations, Some(cfg.convergence))?;
    Ok(FitReport {
        scene,
        iterations: m.trace.len(),
        final_loss: m.best_loss,
        loss_trace: m.trace,
        stage_losses: Vec::new(),
        wall_time: start.elapsed(),
    })
}

/// Per-pixel `Σ_c |a − b|`.
pub fn residual_map(a: &Image, b: &Image) -> Vec<f64> {
    a.data()
        .chunks_exact(3)
        .zip(b.data().chunks_exact(3))
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum())
        .collect()
}

/// Mean over a `window × window` box clipped to the image, via summed-area
/// table.
pub fn box_blur(values: &[f64], width: usize, height: usize, window: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (width + 1) * (height + 1)];
    for r in 0..height {
        let mut row_sum = 0.0;
        for c in 0..width {
            row_sum += values[r * width + c];
            sat[(r + 1) * (width + 1) + c + 1] = sat[r * (width + 1) + c + 1] + row_sum;
        }
    }
    let half = window / 2;
    let mut out = vec![0.0; width * height];
    for r in 0..height {
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(height));
        for c in 0..width {
            let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(width));
            let s = sat[r1 * (width + 1) + c1] - sat[r0 * (width + 1) + c1] - sat[r1 * (width + 1) + c0]
                + sat[r0 * (width + 1) + c0];
            out[r * width + c] = s / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

/// Mean color of `image` over a window centered on `(col, row)`.
pub fn window_mean(image: &Image, col: usize, row: usize, window: usize) -> [f64; 3] {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let half = window / 2;
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for r in row.saturating_sub(half)..(row + half + 1).min(h) {
        for c in col.saturating_sub(half)..(col + half + 1).min(w) {
            let p = image.pixel(c as u32, r as u32);
            for ch in 0..3 {
                sum[ch] += p[ch];
            }
            n += 1.0;
        }
    }
    sum.map(|s| s / n)
}

/// Location and value of the most divergent region between the target and
/// the current rendering.
pub fn most_divergent_pixel(target: &Image, current: &Image, window: usize) -> (usize, usize, f64) {
    let (w, h) = (target.width() as usize, target.height() as usize);
    let blurred = box_blur(&residual_map(target, current), w, h, window);
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, v) in blurred.iter().enumerate() {
        if *v > best.2 {
            best = (i % w, i / w, *v);
        }
    }
    best
}

/// Candidate object initialized at the most divergent region, or `None` when
/// the residual is below the threshold.
pub fn propose_object(
    target: &Image,
    current: &Image,
    n_shapes: usize,
    cfg: &OptIterConfig,
    rng: &mut impl Rng,
) -> Option<ObjectParams> {
    let (col, row, value) = most_divergent_pixel(target, current, cfg.blur_window);
    if value < cfg.residual_threshold {
        return None;
    }
    let angle: f64 = rng.gen_range(0.0..TAU);
    Some(ObjectParams {
        color: window_mean(target, col, row, cfg.color_window),
        translation: [
            (col as f64 + 0.5) / target.width() as f64,
            (row as f64 + 0.5) / target.height() as f64,
        ],
        scale: cfg.init_scale,
        rotation: [angle.cos(), angle.sin()],
        shape_weights: vec![1.0 / n_shapes as f64; n_shapes],
        confidence: 1.0,
    })
}

/// Fits `scene` plus a new `object`. With several angle starts, each start
/// gets a short probe fit and only the best one runs the remaining budget.
fn fit_candidate(
    target: &Image,
    scene: &Scene,
    object: ObjectParams,
    bank: &PrototypeBank,
    render: &RenderConfig,
    cfg: &FitConfig,
) -> Result<(Scene, Minimized), FitError> {
    let oi = &cfg.opt_iter;
    let with_angle = |angle: f64| {
        let mut init = scene.clone();
        init.objects.push(object.clone().with_angle(angle));
        init
    };
    if oi.angle_starts <= 1 || oi.probe_iterations >= oi.iterations_per_object {
        return fit_with_budget(target, &with_angle(object.angle()), bank, render, cfg, oi.iterations_per_object, None);
    }
    let mut best: Option<(Scene, Minimized)> = None;
    for k in 0..oi.angle_starts {
        let angle = object.angle() + TAU * k as f64 / oi.angle_starts as f64;
        let probe = fit_with_budget(target, &with_angle(angle), bank, render, cfg, oi.probe_iterations, None)?;
        if best.as_ref().map_or(true, |(_, b)| probe.1.best_loss < b.best_loss) {
            best = Some(probe);
        }
    }
    let (probe_scene, probe) = best.expect("at least two starts");
    let remaining = oi.iterations_per_object - oi.probe_iterations;
    let (fitted, mut rest) = fit_with_budget(target, &probe_scene, bank, render, cfg, remaining, None)?;
    let mut trace = probe.trace;
    trace.append(&mut rest.trace);
    if probe.best_loss < rest.best_loss {
        return Ok((probe_scene, Minimized { trace, ..probe }));
    }
    Ok((fitted, Minimized { trace, ..rest }))
}

/// Iterative fitting: repeatedly adds an object at the most divergent region
/// and refits all objects, up to `max_objects` objects.
pub fn fit_opt_iter(
    target: &Image,
    max_objects: usize,
    bank: &PrototypeBank,
    render: &RenderConfig,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitReport, FitError> {
    if max_objects == 0 {
        return Err(FitError::Invalid("max_objects must be at least 1".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::empty(target.width(), target.height(), target.mean_color());
    let mut current = Rasterization::new(&scene, bank, render)?.image();
    let mut best_loss = image_loss(target, &current, cfg.loss)?;
    let mut trace = vec![best_loss];
    let mut stage_losses = Vec::new();
    for _ in 0..max_objects {
        let Some(object) = propose_object(target, &current, bank.len(), &cfg.opt_iter, &mut rng) else {
            break;
        };
        let (fitted, m) = fit_candidate(target, &scene, object, bank, render, cfg)?;
        trace.extend_from_slice(&m.trace);
        if m.best_loss < best_loss {
            best_loss = m.best_loss;
            scene = fitted;
            current = Rasterization::new(&scene, bank, render)?.image();
        }
        stage_losses.push(best_loss);
    }
    Ok(FitReport {
        scene,
        iterations: trace.len(),
        final_loss: best_loss,
        loss_trace: trace,
        stage_losses,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut x = vec![1.0, 2.0, 3.0];
        st.step(&mut x, &[0.0; 3], 0.01).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut x = vec![0.0; 3];
        st.step(&mut x, &[2.5, -0.1, 40.0], 0.01).unwrap();
        for (v, s) in x.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - 0.01 * s).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn adam_quadratic_converges() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(1, cfg);
        let mut x = vec![0.0];
        for _ in 0..500 {
            let g = 2.0 * (x[0] - 3.0);
            st.step(&mut x, &[g], cfg.lr).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(2, AdamConfig::default());
        assert!(st.step(&mut [0.0, 0.0], &[1.0], 0.1).is_err());
    }

    #[test]
    fn scheduler_decreasing_never_cuts() {
        let mut s = PlateauScheduler::new(0.01, SchedulerConfig::default());
        for i in 0..100 {
            assert_eq!(s.step(100.0 - i as f64), 0.01);
        }
    }

    #[test]
    fn scheduler_constant_cuts_once_then_cools_down() {
        let mut s = PlateauScheduler::new(0.01, SchedulerConfig::default());
        let lrs: Vec<f64> = (0..31).map(|_| s.step(1.0)).collect();
        assert!(lrs[..10].iter().all(|&l| l == 0.01));
        assert_eq!(lrs[10], 0.005);
        // Cooldown for 10 steps, then another full patience window.
        assert!(lrs[11..30].iter().all(|&l| l == 0.005));
        assert_eq!(lrs[30], 0.0025);
    }

    #[test]
    fn scheduler_improvement_resets() {
        let mut s = PlateauScheduler::new(0.01, SchedulerConfig::default());
        s.step(1.0);
        for _ in 0..8 {
            s.step(1.0);
        }
        assert_eq!(s.step(0.5), 0.01);
        for _ in 0..9 {
            assert_eq!(s.step(0.5), 0.01);
        }
        assert_eq!(s.step(0.5), 0.005);
    }

    #[test]
    fn box_blur_of_constant_is_constant() {
        let v = vec![2.0; 7 * 5];
        for x in box_blur(&v, 7, 5, 9) {
            assert!((x - 2.0).abs() < 1e-12);
        }
        let mut spike = vec![0.0; 9];
        spike[4] = 9.0;
        let b = box_blur(&spike, 3, 3, 3);
        assert!((b[4] - 1.0).abs() < 1e-12);
        assert!((b[0] - 9.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn minimize_tracks_best() {
        let m = minimize(
            vec![0.0],
            50,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            SchedulerConfig::default(),
            None,
            |x| Ok::<_, ()>(((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)])),
            |_| {},
        )
        .unwrap();
        assert_eq!(m.trace.len(), 50);
        let min = m.trace.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(m.best_loss, min);
    }
}
