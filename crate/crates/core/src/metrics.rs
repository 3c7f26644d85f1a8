//! Reconstruction and segmentation metrics: MAE, MSE, SSIM, IoU and ARI.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efd::PrototypeBank;
use crate::image::{Image, ImageError, LabelMap};
use crate::losses::{image_loss, LossError, LossKind};
use crate::render::{RenderConfig, RenderError, Rasterization};
use crate::scene::Scene;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    DimensionMismatch(#[from] ImageError),
    #[error("images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")]
    TooSmall,
    #[error("{pred} predictions for {truth} ground-truth examples")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("example {index}: {source}")]
    Render {
        index: usize,
        #[source]
        source: RenderError,
    },
}

impl From<LossError> for MetricError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::DimensionMismatch(e) => MetricError::DimensionMismatch(e),
            other => unreachable!("image losses only fail on dimensions: {other}"),
        }
    }
}

/// Normalized 1-D Gaussian taps of the SSIM window.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = std::array::from_fn(|i| {
        let x = i as f64 - half;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Valid-mode separable filtering of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            horiz[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * horiz[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5), dynamic
/// range 1, averaged over valid window positions and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    a.check_same_size(b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall);
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &taps);
        let my = filter_valid(&y, w, h, &taps);
        let mxx = filter_valid(&xx, w, h, &taps);
        let myy = filter_valid(&yy, w, h, &taps);
        let mxy = filter_valid(&xy, w, h, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / 3.0)
}

/// Foreground intersection over union of two label maps (1 when both are
/// empty).
pub fn iou(a: &LabelMap, b: &LabelMap) -> Result<f64, MetricError> {
    a.check_same_size(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, q) in a.labels().iter().zip(b.labels()) {
        let (p, q) = (*p != 0, *q != 0);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings of the same items.
///
/// Returns 1 when the index is undefined (both partitions trivial in the
/// same way), following the usual convention.
pub fn adjusted_rand_index(pred: &[u32], truth: &[u32]) -> f64 {
    let mut table: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u32, u64> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((t, p)).or_default() += 1;
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    let n = pred.len() as u64;
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| pairs(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| pairs(v)).sum();
    let total = pairs(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Adjusted Rand index over the pixels whose ground-truth label is not
/// background.
pub fn ari(pred: &LabelMap, truth: &LabelMap) -> Result<f64, MetricError> {
    pred.check_same_size(truth)?;
    let (p, t): (Vec<u32>, Vec<u32>) = pred
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(_, t)| **t != 0)
        .map(|(p, t)| (*p, *t))
        .unzip();
    Ok(adjusted_rand_index(&p, &t))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
    pub iou: f64,
    pub ari: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = MetricRow::default();
        for r in &rows {
            mean.mae += r.mae;
            mean.mse += r.mse;
            mean.ssim += r.ssim;
            mean.iou += r.iou;
            mean.ari += r.ari;
        }
        mean.mae /= n;
        mean.mse /= n;
        mean.ssim /= n;
        mean.iou /= n;
        mean.ari /= n;
        Self { rows, mean }
    }
}

/// All five metrics for one prediction.
pub fn compare(pred: &Image, pred_labels: &LabelMap, truth: &Image, truth_labels: &LabelMap) -> Result<MetricRow, MetricError> {
    Ok(MetricRow {
        mae: image_loss(pred, truth, LossKind::Mae)?,
        mse: image_loss(pred, truth, LossKind::Mse)?,
        ssim: ssim(pred, truth)?,
        iou: iou(pred_labels, truth_labels)?,
        ari: ari(pred_labels, truth_labels)?,
    })
}

/// Renders predicted and ground-truth scenes and compares them.
pub fn evaluate(
    pred: &[Scene],
    truth: &[Scene],
    bank: &PrototypeBank,
    render: &RenderConfig,
) -> Result<MetricReport, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let rows = pred
        .par_iter()
        .zip(truth)
        .enumerate()
        .map(|(index, (p, t))| {
            let rp = Rasterization::new(p, bank, render).map_err(|source| MetricError::Render { index, source })?;
            let rt = Rasterization::new(t, bank, render).map_err(|source| MetricError::Render { index, source })?;
            compare(&rp.image(), &rp.labels(), &rt.image(), &rt.labels())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricReport::from_rows(rows))
}
