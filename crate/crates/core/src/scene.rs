//! Interpretable scene parameters and their flat optimizer layout.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on objects per scene (one per object query).
pub const DEFAULT_MAX_OBJECTS: usize = 8;
/// Smallest scale an unconstrained proposal is clamped to.
pub const MIN_SCALE: f64 = 1e-3;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("flat vector of length {got} does not match layout length {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("object {object}: {message}")]
    InvalidObject { object: usize, message: String },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// One object's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectParams {
    pub color: [f64; 3],
    #[serde(rename = "t")]
    pub translation: [f64; 2],
    pub scale: f64,
    /// `(cos a, sin a)`.
    #[serde(rename = "rot")]
    pub rotation: [f64; 2],
    #[serde(rename = "shape")]
    pub shape_weights: Vec<f64>,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl ObjectParams {
    pub fn angle(&self) -> f64 {
        angle_of(self)
    }

    pub fn with_angle(mut self, angle: f64) -> Self {
        self.rotation = [angle.cos(), angle.sin()];
        self
    }

    fn validate(&self, index: usize, n_shapes: Option<usize>) -> Result<(), SceneError> {
        let err = |message: String| SceneError::InvalidObject { object: index, message };
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !self.color.iter().all(|&c| unit(c)) {
            return Err(err(format!("color {:?} outside [0,1]", self.color)));
        }
        if !self.translation.iter().all(|&t| unit(t)) {
            return Err(err(format!("translation {:?} outside [0,1]", self.translation)));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(err(format!("scale {} is not positive", self.scale)));
        }
        let norm = self.rotation[0].hypot(self.rotation[1]);
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(err(format!("rotation pair {:?} is not unit length", self.rotation)));
        }
        if let Some(m) = n_shapes {
            if self.shape_weights.len() != m {
                return Err(err(format!("expected {m} shape weights, got {}", self.shape_weights.len())));
            }
        }
        let sum: f64 = self.shape_weights.iter().sum();
        if self.shape_weights.is_empty()
            || self.shape_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || (sum - 1.0).abs() > NORM_TOLERANCE
        {
            return Err(err(format!("shape weights {:?} not on the simplex", self.shape_weights)));
        }
        if !unit(self.confidence) {
            return Err(err(format!("confidence {} outside [0,1]", self.confidence)));
        }
        Ok(())
    }
}

/// Rotation angle in `(-π, π]`.
pub fn angle_of(object: &ObjectParams) -> f64 {
    let a = object.rotation[1].atan2(object.rotation[0]);
    if a <= -PI {
        PI
    } else {
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub background: [f64; 3],
    pub objects: Vec<ObjectParams>,
}

impl Scene {
    pub fn empty(width: u32, height: u32, background: [f64; 3]) -> Self {
        Self {
            width,
            height,
            background,
            objects: Vec::new(),
        }
    }

    /// Number of shape weights per object, if the scene has objects.
    pub fn n_shapes(&self) -> Option<usize> {
        self.objects.first().map(|o| o.shape_weights.len())
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.validate_with(DEFAULT_MAX_OBJECTS)
    }

    pub fn validate_with(&self, max_objects: usize) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidScene("raster dimensions must be positive".into()));
        }
        if self.objects.len() > max_objects {
            return Err(SceneError::InvalidScene(format!(
                "{} objects exceeds the maximum of {max_objects}",
                self.objects.len()
            )));
        }
        if !self.background.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)) {
            return Err(SceneError::InvalidScene(format!("background {:?} outside [0,1]", self.background)));
        }
        let m = self.n_shapes();
        for (i, o) in self.objects.iter().enumerate() {
            o.validate(i, m)?;
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n_objects: self.objects.len(),
            n_shapes: self.n_shapes().unwrap_or(0),
            width: self.width,
            height: self.height,
        }
    }

    pub fn flatten(&self) -> FlatParams {
        flatten(self)
    }
}

/// Named visual aspect of a parameter slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Color,
    Translation,
    Scale,
    Rotation,
    Shape,
    Confidence,
    Background,
}

impl Aspect {
    pub const ALL: [Aspect; 7] = [
        Aspect::Translation,
        Aspect::Color,
        Aspect::Scale,
        Aspect::Rotation,
        Aspect::Shape,
        Aspect::Confidence,
        Aspect::Background,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Color => "color",
            Aspect::Translation => "translation",
            Aspect::Scale => "scale",
            Aspect::Rotation => "rotation",
            Aspect::Shape => "shape",
            Aspect::Confidence => "confidence",
            Aspect::Background => "background",
        }
    }
}

/// Flat layout: per object `[color(3), translation(2), scale, rotation(2),
/// shape_weights(m), confidence]`, then `background(3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_objects: usize,
    pub n_shapes: usize,
    pub width: u32,
    pub height: u32,
}

impl Layout {
    pub fn object_stride(&self) -> usize {
        self.n_shapes + 9
    }

    pub fn len(&self) -> usize {
        self.n_objects * self.object_stride() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn object_offset(&self, object: usize) -> usize {
        object * self.object_stride()
    }

    pub fn background_offset(&self) -> usize {
        self.n_objects * self.object_stride()
    }

    pub fn range(&self, object: usize, aspect: Aspect) -> Range<usize> {
        let base = self.object_offset(object);
        let m = self.n_shapes;
        match aspect {
            Aspect::Color => base..base + 3,
            Aspect::Translation => base + 3..base + 5,
            Aspect::Scale => base + 5..base + 6,
            Aspect::Rotation => base + 6..base + 8,
            Aspect::Shape => base + 8..base + 8 + m,
            Aspect::Confidence => base + 8 + m..base + 9 + m,
            Aspect::Background => {
                let b = self.background_offset();
                b..b + 3
            }
        }
    }

    /// Every slice as `(object index, aspect, range)`; background has no object.
    pub fn slices(&self) -> Vec<(Option<usize>, Aspect, Range<usize>)> {
        let mut out = Vec::new();
        for o in 0..self.n_objects {
            for aspect in [
                Aspect::Color,
                Aspect::Translation,
                Aspect::Scale,
                Aspect::Rotation,
                Aspect::Shape,
                Aspect::Confidence,
            ] {
                out.push((Some(o), aspect, self.range(o, aspect)));
            }
        }
        out.push((None, Aspect::Background, self.range(0, Aspect::Background)));
        out
    }

    /// Indices of every component belonging to `aspect`, in layout order.
    pub fn aspect_indices(&self, aspect: Aspect) -> Vec<usize> {
        self.slices()
            .into_iter()
            .filter(|(_, a, _)| *a == aspect)
            .flat_map(|(_, _, r)| r)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub values: Vec<f64>,
    pub layout: Layout,
}

pub fn flatten(scene: &Scene) -> FlatParams {
    let layout = scene.layout();
    let mut values = Vec::with_capacity(layout.len());
    for o in &scene.objects {
        values.extend_from_slice(&o.color);
        values.extend_from_slice(&o.translation);
        values.push(o.scale);
        values.extend_from_slice(&o.rotation);
        values.extend_from_slice(&o.shape_weights);
        values.push(o.confidence);
    }
    values.extend_from_slice(&scene.background);
    FlatParams { values, layout }
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub(crate) fn normalize_rotation(pair: [f64; 2]) -> [f64; 2] {
    let norm = pair[0].hypot(pair[1]);
    if !(norm > 1e-12) || !norm.is_finite() {
        [1.0, 0.0]
    } else if (norm - 1.0).abs() <= 1e-12 {
        pair
    } else {
        [pair[0] / norm, pair[1] / norm]
    }
}

pub(crate) fn normalize_weights(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|w| if *w > 0.0 { *w } else { 0.0 }).collect();
    let sum: f64 = clipped.iter().sum();
    if !(sum > 1e-12) || !sum.is_finite() {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    if (sum - 1.0).abs() <= 1e-12 {
        return clipped;
    }
    clipped.iter().map(|w| w / sum).collect()
}

/// Inverse of [`flatten`]; clamps ranges and re-projects rotation and shape
/// weights so the result always satisfies the scene invariants.
pub fn unflatten(flat: &FlatParams) -> Result<Scene, SceneError> {
    let layout = flat.layout;
    if flat.values.len() != layout.len() {
        return Err(SceneError::LayoutMismatch {
            expected: layout.len(),
            got: flat.values.len(),
        });
    }
    if let Some(i) = flat.values.iter().position(|v| !v.is_finite()) {
        return Err(SceneError::InvalidScene(format!("non-finite value at flat index {i}")));
    }
    let v = &flat.values;
    let objects = (0..layout.n_objects)
        .map(|o| {
            let r = |a| &v[layout.range(o, a)];
            let color = r(Aspect::Color);
            let t = r(Aspect::Translation);
            let rot = r(Aspect::Rotation);
            ObjectParams {
                color: [clamp_unit(color[0]), clamp_unit(color[1]), clamp_unit(color[2])],
                translation: [clamp_unit(t[0]), clamp_unit(t[1])],
                scale: r(Aspect::Scale)[0].max(MIN_SCALE),
                rotation: normalize_rotation([rot[0], rot[1]]),
                shape_weights: normalize_weights(r(Aspect::Shape)),
                confidence: clamp_unit(r(Aspect::Confidence)[0]),
            }
        })
        .collect();
    let b = &v[layout.range(0, Aspect::Background)];
    Ok(Scene {
        width: layout.width,
        height: layout.height,
        background: [clamp_unit(b[0]), clamp_unit(b[1]), clamp_unit(b[2])],
        objects,
    })
}

/// Maps a gradient with respect to the (normalized) scene values onto the
/// raw flat vector through the re-projection of rotation and shape weights.
///
/// Clamps are treated as pass-through so that projected descent can move
/// parameters away from their bounds.
pub fn project_gradient(scene: &Scene, grad: &mut [f64]) {
    let layout = scene.layout();
    for (o, obj) in scene.objects.iter().enumerate() {
        let r = layout.range(o, Aspect::Rotation);
        let [c, s] = obj.rotation;
        let radial = grad[r.start] * c + grad[r.start + 1] * s;
        grad[r.start] -= radial * c;
        grad[r.start + 1] -= radial * s;
        let sh = layout.range(o, Aspect::Shape);
        let mean: f64 = obj.shape_weights.iter().zip(&grad[sh.clone()]).map(|(w, g)| w * g).sum();
        for g in &mut grad[sh] {
            *g -= mean;
        }
    }
}
