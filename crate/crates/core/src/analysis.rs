//! Gradient-alignment and optimization-recovery studies.
//!
//! Pairs of ground-truth scenes `(p1, p2)` with equal object counts are
//! blended into `p' = α·p1 + (1 − α)·p2`, so `α` measures how far the
//! starting point is from the target `p2`. The alignment study compares the
//! image-loss gradient with the parameter-loss gradient at `p'`, per visual
//! aspect; the recovery study fits `p'` to the image of `p2` and reports the
//! parameter loss before and after.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efd::PrototypeBank;
use crate::generator::example_rng;
use crate::losses::{grad_param_loss, match_objects, param_loss_terms, LossError, LossKind, ParamLossConfig};
use crate::optimize::{fit_from_init, image_objective, FitConfig, FitError};
use crate::render::{render, RenderConfig, RenderError};
use crate::scene::{flatten, unflatten, Aspect, FlatParams, Scene, SceneError};

/// Attempts at drawing a partner with a matching object count.
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 2 scenes, got {0}")]
    EmptyManifest(usize),
    #[error("scenes have {0} and {1} objects")]
    CountMismatch(usize, usize),
    #[error("scenes use {0} and {1} shape weights")]
    ShapeCountMismatch(usize, usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub pairs: usize,
    pub alphas: Vec<f64>,
    pub loss_kinds: Vec<LossKind>,
    pub recovery_pairs: usize,
    pub recovery_budget: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            pairs: 2048,
            alphas: default_alphas(),
            loss_kinds: vec![LossKind::Mae, LossKind::Mse],
            recovery_pairs: 64,
            recovery_budget: 100,
        }
    }
}

/// `0.1, 0.2, …, 1.0`.
pub fn default_alphas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Reorders `p1`'s objects to match `p2`'s by minimum matching cost.
pub fn align_objects(p1: &Scene, p2: &Scene) -> Result<Scene, AnalysisError> {
    if p1.objects.len() != p2.objects.len() {
        return Err(AnalysisError::CountMismatch(p1.objects.len(), p2.objects.len()));
    }
    if let (Some(a), Some(b)) = (p1.n_shapes(), p2.n_shapes()) {
        if a != b {
            return Err(AnalysisError::ShapeCountMismatch(a, b));
        }
    }
    let matches = match_objects(p2, p1);
    let mut aligned = p1.clone();
    for &(t, c) in &matches.assignment {
        aligned.objects[t] = p1.objects[c].clone();
    }
    Ok(aligned)
}

/// `α·p1 + (1 − α)·p2` on flat parameters after aligning `p1` to `p2`,
/// re-projected onto valid scenes.
pub fn interpolate_params(p1: &Scene, p2: &Scene, alpha: f64) -> Result<Scene, AnalysisError> {
    let a = flatten(&align_objects(p1, p2)?);
    let b = flatten(p2);
    let values = a.values.iter().zip(&b.values).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
    Ok(unflatten(&FlatParams {
        values,
        layout: b.layout,
    })?)
}

/// Draws `(p1, p2)` indices for pair `index`: `p1` uniform, `p2` resampled
/// uniformly until its object count matches.
pub fn draw_pair(scenes: &[Scene], seed: u64, index: u64) -> Option<(usize, usize)> {
    let mut rng = example_rng(seed, index);
    let i = rng.gen_range(0..scenes.len());
    (0..MAX_RESAMPLES)
        .map(|_| rng.gen_range(0..scenes.len()))
        .find(|&j| scenes[j].objects.len() == scenes[i].objects.len())
        .map(|j| (i, j))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub alpha: f64,
    pub aspect: Aspect,
    pub loss_kind: LossKind,
    pub mean_cosine: f64,
    /// Pairs that contributed to the mean.
    pub pairs: usize,
    /// Pairs skipped because a gradient slice was (numerically) zero.
    pub skipped: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Per-aspect cosine similarity between the image-loss and parameter-loss
/// gradients at `p'`, for every `(α, loss kind)`; `None` marks a skip.
fn pair_cosines(
    p1: &Scene,
    p2: &Scene,
    bank: &PrototypeBank,
    render_cfg: &RenderConfig,
    loss_cfg: &ParamLossConfig,
    cfg: &AnalysisConfig,
) -> Result<Vec<Option<f64>>, AnalysisError> {
    let target = render(p2, bank, render_cfg)?;
    let mut out = Vec::with_capacity(cfg.alphas.len() * cfg.loss_kinds.len() * Aspect::ALL.len());
    for &alpha in &cfg.alphas {
        let p = interpolate_params(p1, p2, alpha)?;
        let layout = p.layout();
        let (_, g_p) = grad_param_loss(p2, &p, bank, loss_cfg)?;
        for &kind in &cfg.loss_kinds {
            let (_, g_x) = image_objective(&target, &p, bank, render_cfg, kind)?;
            for aspect in Aspect::ALL {
                let idx = layout.aspect_indices(aspect);
                let a: Vec<f64> = idx.iter().map(|&i| g_x[i]).collect();
                let b: Vec<f64> = idx.iter().map(|&i| g_p[i]).collect();
                out.push(cosine(&a, &b));
            }
        }
    }
    Ok(out)
}

/// Mean per-aspect gradient cosine similarity over `cfg.pairs` random pairs.
pub fn gradient_alignment(
    scenes: &[Scene],
    bank: &PrototypeBank,
    render_cfg: &RenderConfig,
    loss_cfg: &ParamLossConfig,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Vec<AlignmentRow>, AnalysisError> {
    if scenes.len() < 2 {
        return Err(AnalysisError::EmptyManifest(scenes.len()));
    }
    let per_pair = (0..cfg.pairs as u64)
        .into_par_iter()
        .map(|index| match draw_pair(scenes, seed, index) {
            Some((i, j)) => pair_cosines(&scenes[i], &scenes[j], bank, render_cfg, loss_cfg, cfg),
            None => Ok(vec![None; cfg.alphas.len() * cfg.loss_kinds.len() * Aspect::ALL.len()]),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut slot = 0;
    for &alpha in &cfg.alphas {
        for &loss_kind in &cfg.loss_kinds {
            for aspect in Aspect::ALL {
                let mut sum = 0.0;
                let mut pairs = 0;
                for values in &per_pair {
                    if let Some(c) = values[slot] {
                        sum += c;
                        pairs += 1;
                    }
                }
                rows.push(AlignmentRow {
                    alpha,
                    aspect,
                    loss_kind,
                    mean_cosine: if pairs > 0 { sum / pairs as f64 } else { f64::NAN },
                    pairs,
                    skipped: per_pair.len() - pairs,
                });
                slot += 1;
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub alpha: f64,
    pub mean_before: f64,
    pub mean_after: f64,
    pub pairs: usize,
}

/// Parameter loss of `p'` before and after fitting it to the image of `p2`.
pub fn recovery_pair(
    p1: &Scene,
    p2: &Scene,
    alpha: f64,
    bank: &PrototypeBank,
    render_cfg: &RenderConfig,
    fit_cfg: &FitConfig,
    loss_cfg: &ParamLossConfig,
) -> Result<(f64, f64), AnalysisError> {
    let target = render(p2, bank, render_cfg)?;
    let start = interpolate_params(p1, p2, alpha)?;
    let before = param_loss_terms(p2, &start, bank, loss_cfg)?.total();
    let fit = fit_from_init(&target, &start, bank, render_cfg, fit_cfg)?;
    let after = param_loss_terms(p2, &fit.scene, bank, loss_cfg)?.total();
    Ok((before, after))
}

/// Mean parameter loss before and after `fit_cfg.budget` Adam iterations of
/// image-space fitting, per `α`.
pub fn recovery_study(
    scenes: &[Scene],
    bank: &PrototypeBank,
    render_cfg: &RenderConfig,
    fit_cfg: &FitConfig,
    loss_cfg: &ParamLossConfig,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Vec<RecoveryRow>, AnalysisError> {
    if scenes.len() < 2 {
        return Err(AnalysisError::EmptyManifest(scenes.len()));
    }
    let fit_cfg = FitConfig {
        budget: cfg.recovery_budget,
        ..*fit_cfg
    };
    let pairs: Vec<(usize, usize)> = (0..cfg.recovery_pairs as u64)
        .filter_map(|index| draw_pair(scenes, seed, index))
        .collect();
    let jobs: Vec<(usize, f64)> = (0..pairs.len())
        .flat_map(|p| cfg.alphas.iter().map(move |&a| (p, a)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(p, alpha)| {
            let (i, j) = pairs[p];
            recovery_pair(&scenes[i], &scenes[j], alpha, bank, render_cfg, &fit_cfg, loss_cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| {
            let n = pairs.len();
            let (mut before, mut after) = (0.0, 0.0);
            for p in 0..n {
                let (b, a) = results[p * cfg.alphas.len() + ai];
                before += b;
                after += a;
            }
            let d = n.max(1) as f64;
            RecoveryRow {
                alpha,
                mean_before: before / d,
                mean_after: after / d,
                pairs: n,
            }
        })
        .collect())
}
