//! Differentiable soft rasterizer.
//!
//! Each object's blended contour is posed (scale, rotation, translation),
//! triangulated by ear clipping, and turned into a soft mask
//! `D = sigmoid(d / σ)` where `d` is the signed squared distance from the
//! pixel center to the object's outline (positive inside the mesh). Objects
//! are composited with confidence-weighted softmax weights
//! `w_j = D_j·exp(f_j/γ) / Σ_k D_k·exp(f_k/γ)`, coverage
//! `α = 1 − Π_j (1 − w_j·D_j)` and color `α·Σ_j w_j·C_j + (1 − α)·C_b`.
//!
//! [`Rasterization`] holds the per-object masks of one scene and provides the
//! forward image, the label map and the exact backward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efd::{blend_sampled, check_simplex, EfdError, Point, PrototypeBank, DEFAULT_CONTOUR_POINTS};
use crate::image::{Image, LabelMap};
use crate::scene::{project_gradient, Aspect, Scene, SceneError};
use crate::triangulate::triangulate;

/// Masks saturate to exactly 0 or 1 once `|d| ≥ SATURATION·σ`.
const SATURATION: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("object {object}: contour could not be triangulated")]
    TriangulationFailure { object: usize },
    #[error("object {object}: {source}")]
    Shape {
        object: usize,
        #[source]
        source: EfdError,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("adjoint has {got} values, expected {expected}")]
    AdjointMismatch { expected: usize, got: usize },
    #[error("{got} object contours supplied for {expected} objects")]
    ContourCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Soft-mask sharpness, in squared scene units.
    pub sigma: f64,
    /// Confidence softmax temperature.
    pub gamma: f64,
    /// Contour sample count per object.
    pub k_points: usize,
    /// Optional background logit `ε` adding `exp(ε/γ)` to the softmax
    /// denominator.
    pub background_logit: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            gamma: 1e-4,
            k_points: DEFAULT_CONTOUR_POINTS,
            background_logit: None,
        }
    }
}

impl RenderConfig {
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

/// Triangulated, posed geometry of a scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub triangle_object: Vec<usize>,
    pub object_colors: Vec<[f64; 3]>,
    pub object_confidences: Vec<f64>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// Canonical (unposed) contours of every object, blended from the bank.
pub fn blended_contours(scene: &Scene, bank: &PrototypeBank, k_points: usize) -> Result<Vec<Vec<Point>>, RenderError> {
    if scene.objects.is_empty() {
        return Ok(Vec::new());
    }
    let sampled = bank.sampled(k_points);
    scene
        .objects
        .iter()
        .enumerate()
        .map(|(object, o)| {
            check_simplex(&o.shape_weights, bank.len()).map_err(|source| RenderError::Shape { object, source })?;
            Ok(blend_sampled(&sampled, &o.shape_weights))
        })
        .collect()
}

/// Applies `T + s·R(a)·c` to every point.
pub fn pose_points(canonical: &[Point], translation: [f64; 2], scale: f64, rotation: [f64; 2]) -> Vec<Point> {
    let [c, s] = rotation;
    canonical
        .iter()
        .map(|p| {
            [
                translation[0] + scale * (c * p[0] - s * p[1]),
                translation[1] + scale * (s * p[0] + c * p[1]),
            ]
        })
        .collect()
}

pub fn build_mesh(scene: &Scene, bank: &PrototypeBank, cfg: &RenderConfig) -> Result<Mesh, RenderError> {
    let contours = blended_contours(scene, bank, cfg.k_points)?;
    let mut mesh = Mesh::default();
    for (object, (o, canonical)) in scene.objects.iter().zip(&contours).enumerate() {
        let vertices = pose_points(canonical, o.translation, o.scale, o.rotation);
        let tris = triangulate(&vertices).map_err(|_| RenderError::TriangulationFailure { object })?;
        let base = mesh.vertices.len();
        mesh.vertices.extend(vertices);
        for t in tris {
            mesh.triangles.push([base + t[0], base + t[1], base + t[2]]);
            mesh.triangle_object.push(object);
        }
        mesh.object_colors.push(o.color);
        mesh.object_confidences.push(o.confidence);
    }
    Ok(mesh)
}

pub fn render(scene: &Scene, bank: &PrototypeBank, cfg: &RenderConfig) -> Result<Image, RenderError> {
    Ok(Rasterization::new(scene, bank, cfg)?.image())
}

pub fn render_labels(scene: &Scene, bank: &PrototypeBank, cfg: &RenderConfig) -> Result<LabelMap, RenderError> {
    Ok(Rasterization::new(scene, bank, cfg)?.labels())
}

/// Gradient of `Σ adjoint·render(scene)` with respect to the scene's flat
/// parameters (see [`crate::scene::flatten`]).
pub fn render_grad(
    scene: &Scene,
    bank: &PrototypeBank,
    cfg: &RenderConfig,
    adjoint: &[f64],
) -> Result<Vec<f64>, RenderError> {
    let contours = blended_contours(scene, bank, cfg.k_points)?;
    let raster = Rasterization::from_contours(scene, contours, cfg)?;
    let grad = raster.backward(adjoint)?;
    Ok(grad.to_flat(scene, bank, cfg.k_points))
}

/// Gradient of a rendered scene with respect to its interpretable parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrad {
    pub objects: Vec<ObjectGrad>,
    pub background: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGrad {
    pub color: [f64; 3],
    pub translation: [f64; 2],
    pub scale: f64,
    /// With respect to the raw `(cos, sin)` pair, before unit-norm projection.
    pub rotation: [f64; 2],
    /// With respect to each canonical contour point.
    pub canonical: Vec<Point>,
    pub confidence: f64,
}

impl SceneGrad {
    /// Flat gradient with shape weights chained through bank blending and the
    /// rotation/simplex re-projection applied.
    pub fn to_flat(&self, scene: &Scene, bank: &PrototypeBank, k_points: usize) -> Vec<f64> {
        let sampled = if scene.objects.is_empty() {
            Vec::new()
        } else {
            bank.sampled(k_points)
        };
        self.to_flat_with(scene, &sampled)
    }

    /// Like [`SceneGrad::to_flat`] with the bank already sampled; shape-weight
    /// components are left at zero when `sampled` is empty.
    pub fn to_flat_with(&self, scene: &Scene, sampled: &[Vec<Point>]) -> Vec<f64> {
        let layout = scene.layout();
        let mut out = vec![0.0; layout.len()];
        for (o, g) in self.objects.iter().enumerate() {
            out[layout.range(o, Aspect::Color)].copy_from_slice(&g.color);
            out[layout.range(o, Aspect::Translation)].copy_from_slice(&g.translation);
            out[layout.range(o, Aspect::Scale).start] = g.scale;
            out[layout.range(o, Aspect::Rotation)].copy_from_slice(&g.rotation);
            for (dst, proto) in out[layout.range(o, Aspect::Shape)].iter_mut().zip(sampled) {
                *dst = proto
                    .iter()
                    .zip(&g.canonical)
                    .map(|(p, d)| p[0] * d[0] + p[1] * d[1])
                    .sum();
            }
            out[layout.range(o, Aspect::Confidence).start] = g.confidence;
        }
        out[layout.range(0, Aspect::Background)].copy_from_slice(&self.background);
        project_gradient(scene, &mut out);
        out
    }
}

/// Soft mask of one object over its pixel footprint.
#[derive(Debug, Clone)]
struct Footprint {
    col0: usize,
    row0: usize,
    cols: usize,
    rows: usize,
    mask: Vec<f64>,
    /// Nearest edge index and segment parameter, for unsaturated pixels.
    edge: Vec<u32>,
    t: Vec<f64>,
    inside: Vec<bool>,
    saturated: Vec<bool>,
}

impl Footprint {
    fn empty() -> Self {
        Self {
            col0: 0,
            row0: 0,
            cols: 0,
            rows: 0,
            mask: Vec::new(),
            edge: Vec::new(),
            t: Vec::new(),
            inside: Vec::new(),
            saturated: Vec::new(),
        }
    }

    fn covers_row(&self, row: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.rows
    }

    /// Local index of `(col, row)` if inside the footprint.
    fn index(&self, col: usize, row: usize) -> Option<usize> {
        if col >= self.col0 && col < self.col0 + self.cols && self.covers_row(row) {
            Some((row - self.row0) * self.cols + (col - self.col0))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
struct ObjectRaster {
    vertices: Vec<Point>,
    canonical: Vec<Point>,
    footprint: Footprint,
}

/// Per-object soft masks of a posed scene, ready for compositing.
#[derive(Debug, Clone)]
pub struct Rasterization {
    width: usize,
    height: usize,
    sigma: f64,
    gamma: f64,
    background_logit: Option<f64>,
    background: [f64; 3],
    colors: Vec<[f64; 3]>,
    logits: Vec<f64>,
    poses: Vec<([f64; 2], f64, [f64; 2])>,
    objects: Vec<ObjectRaster>,
}

fn pixel_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo * n as f64 - 0.5).ceil().max(0.0);
    let last = (hi * n as f64 - 0.5).floor().min(n as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as usize, last as usize))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn segment_projection(p: Point, a: Point, b: Point) -> (f64, f64) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
    (dx * dx + dy * dy, t)
}

fn rasterize_object(vertices: &[Point], width: usize, height: usize, sigma: f64) -> Result<Footprint, ()> {
    let tris = triangulate(vertices).map_err(|_| ())?;
    let reach2 = SATURATION * sigma;
    let reach = reach2.sqrt();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in vertices {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let (Some((c0, c1)), Some((r0, r1))) = (
        pixel_range(xmin - reach, xmax + reach, width),
        pixel_range(ymin - reach, ymax + reach, height),
    ) else {
        return Ok(Footprint::empty());
    };
    let cols = c1 - c0 + 1;
    let rows = r1 - r0 + 1;
    let n = cols * rows;
    let mut fp = Footprint {
        col0: c0,
        row0: r0,
        cols,
        rows,
        mask: vec![0.0; n],
        edge: vec![u32::MAX; n],
        t: vec![0.0; n],
        inside: vec![false; n],
        saturated: vec![true; n],
    };
    let (wf, hf) = (width as f64, height as f64);

    for tri in &tris {
        let [a, b, c] = tri.map(|i| vertices[i]);
        let ty0 = a[1].min(b[1]).min(c[1]);
        let ty1 = a[1].max(b[1]).max(c[1]);
        let Some((tr0, tr1)) = pixel_range(ty0, ty1, height) else { continue };
        for row in tr0.max(r0)..=tr1.min(r1) {
            let y = (row as f64 + 0.5) / hf;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (p, q) in [(a, b), (b, c), (c, a)] {
                if (y - p[1]) * (y - q[1]) > 0.0 {
                    continue;
                }
                if p[1] == q[1] {
                    lo = lo.min(p[0].min(q[0]));
                    hi = hi.max(p[0].max(q[0]));
                } else {
                    let x = p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1]);
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            let Some((cc0, cc1)) = pixel_range(lo - 1e-12, hi + 1e-12, width) else { continue };
            let base = (row - r0) * cols;
            for col in cc0.max(c0)..=cc1.min(c1) {
                fp.inside[base + col - c0] = true;
            }
        }
    }

    let mut dist2 = vec![f64::INFINITY; n];
    let k = vertices.len();
    for j in 0..k {
        let a = vertices[j];
        let b = vertices[(j + 1) % k];
        let Some((ec0, ec1)) = pixel_range(a[0].min(b[0]) - reach, a[0].max(b[0]) + reach, width) else { continue };
        let Some((er0, er1)) = pixel_range(a[1].min(b[1]) - reach, a[1].max(b[1]) + reach, height) else { continue };
        for row in er0.max(r0)..=er1.min(r1) {
            let y = (row as f64 + 0.5) / hf;
            let base = (row - r0) * cols;
            for col in ec0.max(c0)..=ec1.min(c1) {
                let x = (col as f64 + 0.5) / wf;
                let (d2, t) = segment_projection([x, y], a, b);
                let i = base + col - c0;
                if d2 < dist2[i] {
                    dist2[i] = d2;
                    fp.edge[i] = j as u32;
                    fp.t[i] = t;
                }
            }
        }
    }

    for i in 0..n {
        if dist2[i] < reach2 {
            let d = if fp.inside[i] { dist2[i] } else { -dist2[i] };
            fp.mask[i] = sigmoid(d / sigma);
            fp.saturated[i] = false;
        } else {
            fp.mask[i] = if fp.inside[i] { 1.0 } else { 0.0 };
        }
    }
    Ok(fp)
}

/// Per-pixel compositing quantities for the active objects at one pixel.
struct PixelState {
    active: Vec<usize>,
    mask: Vec<f64>,
    expo: Vec<f64>,
    weight: Vec<f64>,
    z: f64,
    alpha: f64,
    color: [f64; 3],
}

impl PixelState {
    fn with_capacity(n: usize) -> Self {
        Self {
            active: Vec::with_capacity(n),
            mask: Vec::with_capacity(n),
            expo: Vec::with_capacity(n),
            weight: Vec::with_capacity(n),
            z: 0.0,
            alpha: 0.0,
            color: [0.0; 3],
        }
    }
}

impl Rasterization {
    pub fn new(scene: &Scene, bank: &PrototypeBank, cfg: &RenderConfig) -> Result<Self, RenderError> {
        let contours = blended_contours(scene, bank, cfg.k_points)?;
        Self::from_contours(scene, contours, cfg)
    }

    /// Rasterizes with explicitly supplied canonical contours, one per object;
    /// the scene's shape weights are ignored.
    pub fn from_contours(scene: &Scene, contours: Vec<Vec<Point>>, cfg: &RenderConfig) -> Result<Self, RenderError> {
        if contours.len() != scene.objects.len() {
            return Err(RenderError::ContourCount {
                expected: scene.objects.len(),
                got: contours.len(),
            });
        }
        if scene.width == 0 || scene.height == 0 {
            return Err(SceneError::InvalidScene("raster dimensions must be positive".into()).into());
        }
        let (width, height) = (scene.width as usize, scene.height as usize);
        let objects = scene
            .objects
            .par_iter()
            .zip(contours)
            .enumerate()
            .map(|(object, (o, canonical))| {
                let vertices = pose_points(&canonical, o.translation, o.scale, o.rotation);
                let footprint = rasterize_object(&vertices, width, height, cfg.sigma)
                    .map_err(|_| RenderError::TriangulationFailure { object })?;
                Ok(ObjectRaster {
                    vertices,
                    canonical,
                    footprint,
                })
            })
            .collect::<Result<Vec<_>, RenderError>>()?;
        Ok(Self {
            width,
            height,
            sigma: cfg.sigma,
            gamma: cfg.gamma,
            background_logit: cfg.background_logit,
            background: scene.background,
            colors: scene.objects.iter().map(|o| o.color).collect(),
            logits: scene.objects.iter().map(|o| o.confidence / cfg.gamma).collect(),
            poses: scene.objects.iter().map(|o| (o.translation, o.scale, o.rotation)).collect(),
            objects,
        })
    }

    /// Soft mask of object `object` at a pixel.
    pub fn mask(&self, object: usize, col: usize, row: usize) -> f64 {
        let fp = &self.objects[object].footprint;
        fp.index(col, row).map_or(0.0, |i| fp.mask[i])
    }

    /// Posed contour vertices of an object.
    pub fn vertices(&self, object: usize) -> &[Point] {
        &self.objects[object].vertices
    }

    fn pixel_state(&self, col: usize, row: usize, objs: &[usize], st: &mut PixelState) {
        st.active.clear();
        st.mask.clear();
        st.expo.clear();
        st.weight.clear();
        let mut max_logit = self.background_logit.map_or(f64::NEG_INFINITY, |e| e / self.gamma);
        for &o in objs {
            let d = self.mask(o, col, row);
            if d > 0.0 {
                st.active.push(o);
                st.mask.push(d);
                max_logit = max_logit.max(self.logits[o]);
            }
        }
        st.z = self.background_logit.map_or(0.0, |e| (e / self.gamma - max_logit).exp());
        for (k, &o) in st.active.iter().enumerate() {
            let e = (self.logits[o] - max_logit).exp();
            st.expo.push(e);
            st.z += st.mask[k] * e;
        }
        let mut keep = 1.0;
        st.color = [0.0; 3];
        for k in 0..st.active.len() {
            let w = st.mask[k] * st.expo[k] / st.z;
            st.weight.push(w);
            keep *= 1.0 - w * st.mask[k];
            let c = self.colors[st.active[k]];
            for ch in 0..3 {
                st.color[ch] += w * c[ch];
            }
        }
        st.alpha = 1.0 - keep;
    }

    fn row_objects(&self, row: usize) -> Vec<usize> {
        (0..self.objects.len())
            .filter(|&o| self.objects[o].footprint.covers_row(row))
            .collect()
    }

    /// Composited image and the number of channel values that had to be
    /// clamped into `[0,1]`.
    pub fn image_with_clamp_count(&self) -> (Image, usize) {
        let mut data = vec![0.0; self.width * self.height * 3];
        let clamped: usize = data
            .par_chunks_mut(self.width * 3)
            .enumerate()
            .map(|(row, out)| {
                let objs = self.row_objects(row);
                let mut st = PixelState::with_capacity(objs.len());
                let mut clamped = 0;
                for col in 0..self.width {
                    self.pixel_state(col, row, &objs, &mut st);
                    for ch in 0..3 {
                        let v = st.alpha * st.color[ch] + (1.0 - st.alpha) * self.background[ch];
                        let c = v.clamp(0.0, 1.0);
                        if c != v {
                            clamped += 1;
                        }
                        out[col * 3 + ch] = c;
                    }
                }
                clamped
            })
            .sum();
        let img = Image::from_vec(self.width as u32, self.height as u32, data).expect("positive dimensions");
        (img, clamped)
    }

    pub fn image(&self) -> Image {
        self.image_with_clamp_count().0
    }

    /// Label of the object with the largest mask above 0.5 at each pixel
    /// (1-based), or 0.
    pub fn labels(&self) -> LabelMap {
        let mut labels = vec![0u32; self.width * self.height];
        labels.par_chunks_mut(self.width).enumerate().for_each(|(row, out)| {
            let objs = self.row_objects(row);
            for (col, dst) in out.iter_mut().enumerate() {
                let mut best = 0.5;
                for &o in &objs {
                    let d = self.mask(o, col, row);
                    if d > best {
                        best = d;
                        *dst = o as u32 + 1;
                    }
                }
            }
        });
        LabelMap::from_vec(self.width as u32, self.height as u32, labels)
    }

    /// Gradient of `Σ adjoint·image` with respect to colors, poses, canonical
    /// contour points, confidences and background.
    pub fn backward(&self, adjoint: &[f64]) -> Result<SceneGrad, RenderError> {
        let expected = self.width * self.height * 3;
        if adjoint.len() != expected {
            return Err(RenderError::AdjointMismatch {
                expected,
                got: adjoint.len(),
            });
        }
        let n_obj = self.objects.len();
        struct RowGrad {
            mask_grad: Vec<Vec<f64>>,
            color: Vec<[f64; 3]>,
            logit: Vec<f64>,
            background: [f64; 3],
        }
        let rows: Vec<RowGrad> = (0..self.height)
            .into_par_iter()
            .map(|row| {
                let objs = self.row_objects(row);
                let mut rg = RowGrad {
                    mask_grad: self
                        .objects
                        .iter()
                        .map(|o| {
                            if o.footprint.covers_row(row) {
                                vec![0.0; o.footprint.cols]
                            } else {
                                Vec::new()
                            }
                        })
                        .collect(),
                    color: vec![[0.0; 3]; n_obj],
                    logit: vec![0.0; n_obj],
                    background: [0.0; 3],
                };
                let mut st = PixelState::with_capacity(objs.len());
                let mut excl = Vec::with_capacity(objs.len());
                let mut gw = Vec::with_capacity(objs.len());
                for col in 0..self.width {
                    let g = &adjoint[(row * self.width + col) * 3..][..3];
                    self.pixel_state(col, row, &objs, &mut st);
                    let a = st.alpha;
                    for ch in 0..3 {
                        rg.background[ch] += (1.0 - a) * g[ch];
                    }
                    let n = st.active.len();
                    if n == 0 {
                        continue;
                    }
                    let g_alpha: f64 = (0..3).map(|ch| g[ch] * (st.color[ch] - self.background[ch])).sum();
                    // Products of (1 − w_k D_k) over all k except each one.
                    excl.clear();
                    let mut prefix = 1.0;
                    for k in 0..n {
                        excl.push(prefix);
                        prefix *= 1.0 - st.weight[k] * st.mask[k];
                    }
                    let mut suffix = 1.0;
                    for k in (0..n).rev() {
                        excl[k] *= suffix;
                        suffix *= 1.0 - st.weight[k] * st.mask[k];
                    }
                    gw.clear();
                    let mut sum_gw = 0.0;
                    for k in 0..n {
                        let o = st.active[k];
                        let c = self.colors[o];
                        let dot: f64 = (0..3).map(|ch| g[ch] * c[ch]).sum();
                        let v = a * dot + g_alpha * st.mask[k] * excl[k];
                        gw.push(v);
                        sum_gw += v * st.weight[k];
                        for ch in 0..3 {
                            rg.color[o][ch] += a * st.weight[k] * g[ch];
                        }
                    }
                    for k in 0..n {
                        let o = st.active[k];
                        let w = st.weight[k];
                        let centered = gw[k] - sum_gw;
                        rg.logit[o] += w * centered;
                        let fp = &self.objects[o].footprint;
                        let i = fp.index(col, row).expect("active objects cover the pixel");
                        if fp.saturated[i] {
                            continue;
                        }
                        let g_mask = g_alpha * w * excl[k] + st.expo[k] / st.z * centered;
                        let d = st.mask[k];
                        rg.mask_grad[o][col - fp.col0] += g_mask * d * (1.0 - d) / self.sigma;
                    }
                }
                rg
            })
            .collect();

        let mut background = [0.0; 3];
        let mut colors = vec![[0.0; 3]; n_obj];
        let mut logits = vec![0.0; n_obj];
        for rg in &rows {
            for ch in 0..3 {
                background[ch] += rg.background[ch];
            }
            for o in 0..n_obj {
                for ch in 0..3 {
                    colors[o][ch] += rg.color[o][ch];
                }
                logits[o] += rg.logit[o];
            }
        }

        let objects = (0..n_obj)
            .into_par_iter()
            .map(|o| {
                let obj = &self.objects[o];
                let fp = &obj.footprint;
                let k = obj.vertices.len();
                let mut vgrad = vec![[0.0; 2]; k];
                for r in 0..fp.rows {
                    let row = fp.row0 + r;
                    let y = (row as f64 + 0.5) / self.height as f64;
                    let gd_row = &rows[row].mask_grad[o];
                    for (c, &gd) in gd_row.iter().enumerate() {
                        let i = r * fp.cols + c;
                        if gd == 0.0 || fp.saturated[i] {
                            continue;
                        }
                        let x = (fp.col0 as f64 + c as f64 + 0.5) / self.width as f64;
                        let j = fp.edge[i] as usize;
                        let (a, b) = (obj.vertices[j], obj.vertices[(j + 1) % k]);
                        let t = fp.t[i];
                        let q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                        let sign = if fp.inside[i] { 1.0 } else { -1.0 };
                        let s = gd * sign * -2.0;
                        let diff = [x - q[0], y - q[1]];
                        for ax in 0..2 {
                            vgrad[j][ax] += s * (1.0 - t) * diff[ax];
                            vgrad[(j + 1) % k][ax] += s * t * diff[ax];
                        }
                    }
                }
                let (_, scale, [cs, sn]) = self.poses[o];
                let mut g = ObjectGrad {
                    color: colors[o],
                    translation: [0.0; 2],
                    scale: 0.0,
                    rotation: [0.0; 2],
                    canonical: Vec::with_capacity(k),
                    confidence: logits[o] / self.gamma,
                };
                for (p, gv) in obj.canonical.iter().zip(&vgrad) {
                    g.translation[0] += gv[0];
                    g.translation[1] += gv[1];
                    let rc = [cs * p[0] - sn * p[1], sn * p[0] + cs * p[1]];
                    g.scale += gv[0] * rc[0] + gv[1] * rc[1];
                    g.rotation[0] += scale * (gv[0] * p[0] + gv[1] * p[1]);
                    g.rotation[1] += scale * (-gv[0] * p[1] + gv[1] * p[0]);
                    g.canonical.push([
                        scale * (cs * gv[0] + sn * gv[1]),
                        scale * (-sn * gv[0] + cs * gv[1]),
                    ]);
                }
                g
            })
            .collect();
        Ok(SceneGrad { objects, background })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efd::PrototypeBank;
    use crate::scene::ObjectParams;

    fn square_bank() -> PrototypeBank {
        PrototypeBank::new(vec![crate::generator::exact_square_shape()]).unwrap()
    }

    fn square_object(color: [f64; 3]) -> ObjectParams {
        ObjectParams {
            color,
            translation: [0.5, 0.5],
            scale: 0.5,
            rotation: [1.0, 0.0],
            shape_weights: vec![1.0],
            confidence: 1.0,
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let scene = Scene::empty(7, 5, [0.2, 0.4, 0.6]);
        let img = render(&scene, &square_bank(), &RenderConfig::default()).unwrap();
        for px in img.data().chunks(3) {
            assert_eq!(px, [0.2, 0.4, 0.6]);
        }
        assert!(build_mesh(&scene, &square_bank(), &RenderConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn square_mesh_corners() {
        let mut scene = Scene::empty(8, 8, [0.0; 3]);
        scene.objects.push(square_object([1.0, 0.0, 0.0]));
        let mesh = build_mesh(&scene, &square_bank(), &RenderConfig::default()).unwrap();
        let corners = [7, 23, 39, 55].map(|i| mesh.vertices[i]);
        for (p, q) in corners.iter().zip([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0], [1.0, 0.0]]) {
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6, "{p:?}");
        }
        let area: f64 = mesh
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| mesh.vertices[i]);
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            })
            .sum();
        assert!((area - 1.0).abs() < 1e-9);
    }

    #[test]
    fn covering_square_is_red() {
        let mut scene = Scene::empty(32, 32, [0.0; 3]);
        scene.objects.push(square_object([1.0, 0.0, 0.0]));
        let img = render(&scene, &square_bank(), &RenderConfig::default().with_sigma(1e-6)).unwrap();
        let mean = img.mean_color();
        assert!(mean[0] >= 0.99, "{mean:?}");
    }

    #[test]
    fn background_gradient_is_uncovered_mass() {
        let mut scene = Scene::empty(16, 16, [0.3, 0.3, 0.3]);
        let mut o = square_object([0.9, 0.1, 0.2]);
        o.scale = 0.2;
        scene.objects.push(o);
        let bank = square_bank();
        let cfg = RenderConfig::default();
        let raster = Rasterization::new(&scene, &bank, &cfg).unwrap();
        let adjoint: Vec<f64> = (0..16 * 16 * 3).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.4).collect();
        let grad = raster.backward(&adjoint).unwrap();
        let mut expected = [0.0; 3];
        for row in 0..16 {
            for col in 0..16 {
                let alpha = raster.mask(0, col, row);
                for ch in 0..3 {
                    expected[ch] += adjoint[(row * 16 + col) * 3 + ch] * (1.0 - alpha);
                }
            }
        }
        for ch in 0..3 {
            assert!((grad.background[ch] - expected[ch]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_adjoint_zero_gradient() {
        let mut scene = Scene::empty(16, 16, [0.3, 0.3, 0.3]);
        scene.objects.push(square_object([0.9, 0.1, 0.2]));
        let g = render_grad(&scene, &square_bank(), &RenderConfig::default(), &vec![0.0; 16 * 16 * 3]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }
}
