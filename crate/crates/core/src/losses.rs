//! Image-space and parameter-space losses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{hungarian, MatchResult};
use crate::efd::{symmetry_order, PrototypeBank, DEFAULT_CONTOUR_POINTS, DEFAULT_SYMMETRY_THRESHOLD};
use crate::image::{Image, ImageError};
use crate::scene::{angle_of, project_gradient, Aspect, ObjectParams, Scene};

const CONF_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    DimensionMismatch(#[from] ImageError),
    #[error("prediction has {candidates} candidates for {targets} target objects")]
    NotEnoughCandidates { targets: usize, candidates: usize },
    #[error("shape weights do not match the bank: {0}")]
    Shape(#[from] crate::efd::EfdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(format!("unknown loss kind '{other}' (expected mae or mse)")),
        }
    }
}

/// Mean absolute or squared error over all pixels and channels.
pub fn image_loss(a: &Image, b: &Image, kind: LossKind) -> Result<f64, LossError> {
    a.check_same_size(b)?;
    let n = a.data().len() as f64;
    let sum: f64 = match kind {
        LossKind::Mae => a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum(),
        LossKind::Mse => a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum(),
    };
    Ok(sum / n)
}

/// Loss and its gradient with respect to `pred`'s pixel values.
pub fn image_loss_grad(pred: &Image, target: &Image, kind: LossKind) -> Result<(f64, Vec<f64>), LossError> {
    let loss = image_loss(pred, target, kind)?;
    let n = pred.data().len() as f64;
    let adjoint = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| match kind {
            LossKind::Mae => {
                let d = p - t;
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            }
            LossKind::Mse => 2.0 * (p - t) / n,
        })
        .collect();
    Ok((loss, adjoint))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| a[i] - b[i])
}

/// Pairing cost between a target object `p` and a candidate `q`.
pub fn matching_cost(p: &ObjectParams, q: &ObjectParams) -> f64 {
    norm(&diff(&p.translation, &q.translation))
        + 0.1 * norm(&diff(&p.color, &q.color))
        + 0.01 * (p.confidence - q.confidence).abs()
}

pub fn match_objects(target: &Scene, pred: &Scene) -> MatchResult {
    let costs: Vec<Vec<f64>> = target
        .objects
        .iter()
        .map(|t| pred.objects.iter().map(|p| matching_cost(t, p)).collect())
        .collect();
    if costs.is_empty() {
        return MatchResult {
            assignment: Vec::new(),
            unmatched_candidates: (0..pred.objects.len()).collect(),
            total_cost: 0.0,
        };
    }
    hungarian(&costs)
}

/// How the shape term compares two objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShapeSpace {
    /// Euclidean distance between shape-weight vectors.
    #[default]
    Weights,
    /// RMS distance between the blended canonical contours.
    Contour,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamLossConfig {
    pub shape_space: ShapeSpace,
    pub symmetry_threshold: f64,
}

impl Default for ParamLossConfig {
    fn default() -> Self {
        Self {
            shape_space: ShapeSpace::Weights,
            symmetry_threshold: DEFAULT_SYMMETRY_THRESHOLD,
        }
    }
}

/// Per-term breakdown of the parameter-space loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ParamLossTerms {
    pub background: f64,
    pub confidence: f64,
    pub translation: f64,
    pub color: f64,
    pub scale: f64,
    pub shape: f64,
    pub rotation: f64,
}

impl ParamLossTerms {
    pub fn total(&self) -> f64 {
        self.background + self.confidence + self.translation + self.color + self.scale + self.shape + self.rotation
    }
}

fn clamp_conf(c: f64) -> f64 {
    c.clamp(CONF_EPS, 1.0 - CONF_EPS)
}

/// Rotation term `0.05·(1 − cos(sym·Δa))²`.
pub fn rotation_term(sym: usize, delta: f64) -> f64 {
    let r = 1.0 - (sym as f64 * delta).cos();
    0.05 * r * r
}

/// Symmetry order of each target object's blended shape.
pub fn target_symmetries(target: &Scene, bank: &PrototypeBank, threshold: f64) -> Result<Vec<usize>, LossError> {
    target
        .objects
        .iter()
        .map(|o| Ok(symmetry_order(&bank.blended_efd(&o.shape_weights)?, threshold)))
        .collect()
}

struct Evaluation {
    terms: ParamLossTerms,
    grad: Vec<f64>,
}

fn evaluate(
    target: &Scene,
    pred: &Scene,
    bank: &PrototypeBank,
    cfg: &ParamLossConfig,
    with_grad: bool,
) -> Result<Evaluation, LossError> {
    if pred.objects.len() < target.objects.len() {
        return Err(LossError::NotEnoughCandidates {
            targets: target.objects.len(),
            candidates: pred.objects.len(),
        });
    }
    let syms = target_symmetries(target, bank, cfg.symmetry_threshold)?;
    let sampled = match cfg.shape_space {
        ShapeSpace::Contour if !target.objects.is_empty() => bank.sampled(DEFAULT_CONTOUR_POINTS),
        _ => Vec::new(),
    };
    let layout = pred.layout();
    let mut grad = if with_grad { vec![0.0; layout.len()] } else { Vec::new() };
    let mut terms = ParamLossTerms::default();

    let db = diff(&pred.background, &target.background);
    let nb = norm(&db);
    terms.background = nb;
    if with_grad && nb > 0.0 {
        for (g, d) in grad[layout.range(0, Aspect::Background)].iter_mut().zip(db) {
            *g = d / nb;
        }
    }

    let matches = match_objects(target, pred);
    for &(ti, pi) in &matches.assignment {
        let t = &target.objects[ti];
        let p = &pred.objects[pi];
        let conf = clamp_conf(p.confidence);
        terms.confidence += -conf.ln();

        let dt = diff(&p.translation, &t.translation);
        let nt = norm(&dt);
        terms.translation += 5.0 * nt;

        let dc = diff(&p.color, &t.color);
        let nc = norm(&dc);
        terms.color += nc;

        let ds = p.scale - t.scale;
        terms.scale += ds.abs();

        let dw: Vec<f64> = p.shape_weights.iter().zip(&t.shape_weights).map(|(a, b)| a - b).collect();
        let mut shape_grad = vec![0.0; dw.len()];
        match cfg.shape_space {
            ShapeSpace::Weights => {
                let nw = norm(&dw);
                terms.shape += nw;
                if nw > 0.0 {
                    for (g, d) in shape_grad.iter_mut().zip(&dw) {
                        *g = d / nw;
                    }
                }
            }
            ShapeSpace::Contour => {
                let k = sampled[0].len();
                let delta: Vec<[f64; 2]> = (0..k)
                    .map(|i| {
                        let mut acc = [0.0; 2];
                        for (proto, w) in sampled.iter().zip(&dw) {
                            acc[0] += w * proto[i][0];
                            acc[1] += w * proto[i][1];
                        }
                        acc
                    })
                    .collect();
                let rms = (delta.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>() / k as f64).sqrt();
                terms.shape += rms;
                if rms > 0.0 {
                    for (g, proto) in shape_grad.iter_mut().zip(&sampled) {
                        *g = proto.iter().zip(&delta).map(|(q, d)| q[0] * d[0] + q[1] * d[1]).sum::<f64>()
                            / (rms * k as f64);
                    }
                }
            }
        }

        let sym = syms[ti];
        let delta_a = angle_of(t) - angle_of(p);
        terms.rotation += rotation_term(sym, delta_a);

        if with_grad {
            grad[layout.range(pi, Aspect::Confidence).start] = -1.0 / conf;
            if nt > 0.0 {
                let r = layout.range(pi, Aspect::Translation);
                grad[r.start] = 5.0 * dt[0] / nt;
                grad[r.start + 1] = 5.0 * dt[1] / nt;
            }
            if nc > 0.0 {
                for (g, d) in grad[layout.range(pi, Aspect::Color)].iter_mut().zip(dc) {
                    *g = d / nc;
                }
            }
            grad[layout.range(pi, Aspect::Scale).start] = if ds > 0.0 {
                1.0
            } else if ds < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[layout.range(pi, Aspect::Shape)].copy_from_slice(&shape_grad);
            let sf = sym as f64;
            let phase = sf * delta_a;
            // d/dâ of 0.05(1 − cos(sym(a − â)))².
            let d_angle = -0.1 * sf * (1.0 - phase.cos()) * phase.sin();
            let [c, s] = p.rotation;
            let n2 = c * c + s * s;
            let r = layout.range(pi, Aspect::Rotation);
            grad[r.start] = d_angle * -s / n2;
            grad[r.start + 1] = d_angle * c / n2;
        }
    }
    for &pi in &matches.unmatched_candidates {
        let conf = clamp_conf(pred.objects[pi].confidence);
        terms.confidence += -(1.0 - conf).ln();
        if with_grad {
            grad[layout.range(pi, Aspect::Confidence).start] = 1.0 / (1.0 - conf);
        }
    }
    if with_grad {
        project_gradient(pred, &mut grad);
    }
    Ok(Evaluation { terms, grad })
}

/// Parameter-space loss between a ground-truth scene and a prediction, after
/// Hungarian matching on [`matching_cost`].
pub fn param_loss(target: &Scene, pred: &Scene, bank: &PrototypeBank) -> Result<f64, LossError> {
    Ok(param_loss_terms(target, pred, bank, &ParamLossConfig::default())?.total())
}

pub fn param_loss_terms(
    target: &Scene,
    pred: &Scene,
    bank: &PrototypeBank,
    cfg: &ParamLossConfig,
) -> Result<ParamLossTerms, LossError> {
    Ok(evaluate(target, pred, bank, cfg, false)?.terms)
}

/// Loss and its gradient with respect to `pred`'s flat parameters, holding
/// the assignment and the target symmetry orders fixed.
pub fn grad_param_loss(
    target: &Scene,
    pred: &Scene,
    bank: &PrototypeBank,
    cfg: &ParamLossConfig,
) -> Result<(f64, Vec<f64>), LossError> {
    let e = evaluate(target, pred, bank, cfg, true)?;
    Ok((e.terms.total(), e.grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(t: [f64; 2]) -> ObjectParams {
        ObjectParams {
            color: [0.5, 0.5, 0.5],
            translation: t,
            scale: 0.2,
            rotation: [1.0, 0.0],
            shape_weights: vec![1.0],
            confidence: 1.0,
        }
    }

    #[test]
    fn image_losses() {
        let a = Image::filled(3, 2, [0.0; 3]);
        let b = Image::filled(3, 2, [1.0; 3]);
        assert_eq!(image_loss(&a, &a, LossKind::Mae).unwrap(), 0.0);
        assert_eq!(image_loss(&a, &b, LossKind::Mae).unwrap(), 1.0);
        assert_eq!(image_loss(&a, &b, LossKind::Mse).unwrap(), 1.0);
        let c = Image::filled(2, 2, [1.0; 3]);
        assert!(image_loss(&a, &c, LossKind::Mae).is_err());
    }

    #[test]
    fn matching_cost_examples() {
        let p = obj([0.1, 0.1]);
        assert_eq!(matching_cost(&p, &p), 0.0);
        let q = obj([0.4, 0.5]);
        assert!((matching_cost(&p, &q) - 0.5).abs() < 1e-12);
        let mut r = p.clone();
        r.color[1] = 1.5;
        assert!((matching_cost(&p, &r) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rotation_term_periodic() {
        for sym in 1..6 {
            let period = std::f64::consts::TAU / sym as f64;
            for i in 0..20 {
                let d = -3.0 + 0.3 * i as f64;
                assert!((rotation_term(sym, d) - rotation_term(sym, d + period)).abs() < 1e-12);
            }
        }
        assert_eq!(rotation_term(4, 0.0), 0.0);
    }

    #[test]
    fn loss_kind_parse() {
        assert_eq!("MAE".parse::<LossKind>().unwrap(), LossKind::Mae);
        assert!("l1".parse::<LossKind>().is_err());
    }
}
