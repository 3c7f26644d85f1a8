//! Shape-prototype discovery: per-image fitting with free-form shapes,
//! k-medoids clustering of shape renderings, and medoid substitution.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efd::{
    contour_from_efd, evaluate_with_table, harmonic_table, is_simple_polygon, normalize_shape, orientation, polygon_signed_area, EfdError, EfdShape,
    Point, PrototypeBank, DEFAULT_HARMONICS, DEFAULT_SYMMETRY_THRESHOLD,
};
use crate::image::Image;
use crate::losses::image_loss_grad;
use crate::optimize::{fit_opt_iter, minimize, FitConfig, FitError};
use crate::render::{pose_points, RenderConfig, RenderError, Rasterization};
use crate::scene::{flatten, unflatten, Aspect, FlatParams, ObjectParams, Scene};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k = {k} is outside [1, {n}]")]
    InvalidK { k: usize, n: usize },
    #[error("k range [{lo}, {hi}] is outside [2, {max}]")]
    InvalidRange { lo: usize, hi: usize, max: usize },
    #[error("distance matrix must be square, symmetric and nonnegative with zero diagonal")]
    InvalidMatrix,
}

#[derive(Debug, Error)]
pub enum PrototypeError {
    #[error(transparent)]
    Shape(#[from] EfdError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("{images} images but {scenes} initial scenes")]
    LengthMismatch { images: usize, scenes: usize },
    #[error("no objects to cluster")]
    NoShapes,
    #[error("shape of object {object} self-intersects")]
    SelfIntersecting { object: usize },
}

/// Rendering of a normalized shape, centered, white on black.
pub fn shape_raster(shape: &EfdShape, raster: u32) -> Result<Vec<f64>, PrototypeError> {
    let normalized = normalize_shape(shape)?;
    let contour = contour_from_efd(&normalized, crate::efd::DEFAULT_CONTOUR_POINTS).into_points();
    let scene = Scene {
        width: raster,
        height: raster,
        background: [0.0; 3],
        objects: vec![ObjectParams {
            color: [1.0; 3],
            translation: [0.5, 0.5],
            scale: 0.45,
            rotation: [1.0, 0.0],
            shape_weights: vec![1.0],
            confidence: 1.0,
        }],
    };
    let img = Rasterization::from_contours(&scene, vec![contour], &RenderConfig::default())?.image();
    Ok(img.data().iter().step_by(3).copied().collect())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Mean squared difference of the two shapes rendered alone after
/// normalization.
pub fn shape_distance(a: &EfdShape, b: &EfdShape, raster: u32) -> Result<f64, PrototypeError> {
    Ok(mse(&shape_raster(a, raster)?, &shape_raster(b, raster)?))
}

/// Pairwise [`shape_distance`] matrix.
pub fn distance_matrix(shapes: &[EfdShape], raster: u32) -> Result<Vec<Vec<f64>>, PrototypeError> {
    let rasters = shapes
        .par_iter()
        .map(|s| shape_raster(s, raster))
        .collect::<Result<Vec<_>, _>>()?;
    let n = shapes.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i < j { mse(&rasters[i], &rasters[j]) } else { 0.0 }).collect())
        .collect();
    let mut d = rows;
    for i in 0..n {
        for j in 0..i {
            d[i][j] = d[j][i];
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    /// Item index of each cluster's medoid.
    pub medoids: Vec<usize>,
    /// Cluster index of each item.
    pub assignments: Vec<usize>,
    /// Sum of distances from items to their medoids.
    pub cost: f64,
    pub silhouette: f64,
    /// Cost after the initialization and after each accepted swap, for the
    /// restart that produced this result.
    pub cost_trace: Vec<f64>,
}

fn validate_matrix(d: &[Vec<f64>]) -> Result<(), ClusterError> {
    let n = d.len();
    for (i, row) in d.iter().enumerate() {
        if row.len() != n || row[i] != 0.0 {
            return Err(ClusterError::InvalidMatrix);
        }
        for (j, &v) in row.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() || (v - d[j][i]).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(ClusterError::InvalidMatrix);
            }
        }
    }
    Ok(())
}

fn assign(d: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignments = (0..d.len())
        .map(|i| {
            let (best, dist) = medoids
                .iter()
                .enumerate()
                .map(|(c, &m)| (c, d[i][m]))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            cost += dist;
            best
        })
        .collect();
    (assignments, cost)
}

fn total_cost(d: &[Vec<f64>], medoids: &[usize]) -> f64 {
    (0..d.len())
        .map(|i| medoids.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Greedy spread initialization: the most central item, then repeatedly the
/// item farthest from its nearest chosen medoid. `order` breaks ties.
fn build(d: &[Vec<f64>], k: usize, order: &[usize]) -> Vec<usize> {
    let n = d.len();
    let mut first = order[0];
    let mut best = f64::INFINITY;
    for &i in order {
        let s: f64 = d[i].iter().sum();
        if s < best {
            best = s;
            first = i;
        }
    }
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| d[i][first]).collect();
    while medoids.len() < k {
        let mut pick = None;
        let mut far = f64::NEG_INFINITY;
        for &i in order {
            if !medoids.contains(&i) && nearest[i] > far {
                far = nearest[i];
                pick = Some(i);
            }
        }
        let m = pick.expect("k ≤ n leaves a candidate");
        medoids.push(m);
        for i in 0..n {
            nearest[i] = nearest[i].min(d[i][m]);
        }
    }
    medoids
}

/// Steepest-descent swap phase; returns the cost after every accepted swap.
fn swap_phase(d: &[Vec<f64>], medoids: &mut [usize]) -> Vec<f64> {
    let n = d.len();
    let mut cost = total_cost(d, medoids);
    let mut trace = vec![cost];
    let mut nearest = vec![(0usize, 0.0f64); n];
    let mut second = vec![0.0f64; n];
    loop {
        // Nearest medoid slot and distance, and second-nearest distance.
        for i in 0..n {
            let (mut s1, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
            for (slot, &m) in medoids.iter().enumerate() {
                let v = d[i][m];
                if v < d1 {
                    d2 = d1;
                    d1 = v;
                    s1 = slot;
                } else if v < d2 {
                    d2 = v;
                }
            }
            nearest[i] = (s1, d1);
            second[i] = d2;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for h in 0..n {
            if medoids.contains(&h) {
                continue;
            }
            for slot in 0..medoids.len() {
                let mut delta = 0.0;
                for i in 0..n {
                    let (s1, d1) = nearest[i];
                    let keep = if s1 == slot { second[i] } else { d1 };
                    delta += keep.min(d[i][h]) - d1;
                }
                if delta < -1e-12 * (1.0 + cost.abs()) && best.map_or(true, |b| delta < b.2) {
                    best = Some((slot, h, delta));
                }
            }
        }
        match best {
            Some((slot, h, _)) => {
                medoids[slot] = h;
                cost = total_cost(d, medoids);
                trace.push(cost);
            }
            None => return trace,
        }
    }
}

/// Mean silhouette of a clustering; singleton clusters contribute 0.
pub fn silhouette(d: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let n = d.len();
    if n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += d[i][j];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Number of additional seeded random initializations tried by
/// [`k_medoids`] besides the greedy one.
pub const KMEDOIDS_RESTARTS: usize = 8;

/// Partitioning around medoids: greedy spread initialization plus seeded
/// random restarts, each refined by the swap phase; the cheapest result is
/// kept.
pub fn k_medoids(d: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterResult, ClusterError> {
    validate_matrix(d)?;
    let n = d.len();
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut starts = vec![build(d, k, &order)];
    for _ in 0..KMEDOIDS_RESTARTS {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        starts.push(perm[..k].to_vec());
    }
    let mut best: Option<(Vec<usize>, Vec<f64>)> = None;
    for mut medoids in starts {
        let trace = swap_phase(d, &mut medoids);
        let cost = *trace.last().expect("trace starts with the initial cost");
        if best.as_ref().map_or(true, |(_, t)| cost < *t.last().expect("non-empty") - 1e-12) {
            best = Some((medoids, trace));
        }
    }
    let (mut medoids, cost_trace) = best.expect("at least one start");
    // Canonical order: clusters sorted by medoid index.
    medoids.sort_unstable();
    let (assignments, cost) = assign(d, &medoids);
    let silhouette = silhouette(d, &assignments, k);
    Ok(ClusterResult {
        k,
        medoids,
        assignments,
        cost,
        silhouette,
        cost_trace,
    })
}

/// Clusters for every `k` in the inclusive range and returns the one with
/// the highest mean silhouette (smallest `k` on ties).
pub fn choose_k(d: &[Vec<f64>], k_range: [usize; 2], seed: u64) -> Result<ClusterResult, ClusterError> {
    let n = d.len();
    let [lo, hi] = k_range;
    if lo < 2 || hi < lo || n < 3 || hi > n - 1 {
        return Err(ClusterError::InvalidRange {
            lo,
            hi,
            max: n.saturating_sub(1),
        });
    }
    let mut best: Option<ClusterResult> = None;
    for k in lo..=hi {
        let r = k_medoids(d, k, seed)?;
        if best.as_ref().map_or(true, |b| r.silhouette > b.silhouette) {
            best = Some(r);
        }
    }
    Ok(best.expect("non-empty range"))
}

/// A clustering whose small clusters are set aside as outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalClusters {
    pub clusters: ClusterResult,
    /// Indices of the clusters large enough to count, ascending.
    pub typical: Vec<usize>,
    /// Mean silhouette over members of typical clusters, computed among
    /// those clusters only.
    pub silhouette: f64,
}

impl TypicalClusters {
    pub fn is_outlier(&self, item: usize) -> bool {
        !self.typical.contains(&self.clusters.assignments[item])
    }

    /// The item's own medoid, or for outliers the closest typical medoid.
    pub fn nearest_typical_medoid(&self, d: &[Vec<f64>], item: usize) -> usize {
        let own = self.clusters.assignments[item];
        if self.typical.contains(&own) {
            return self.clusters.medoids[own];
        }
        self.typical
            .iter()
            .map(|&c| self.clusters.medoids[c])
            .min_by(|&a, &b| d[item][a].total_cmp(&d[item][b]))
            .expect("at least one typical cluster")
    }
}

/// Separates the clusters holding at least `min_fraction` of all items, and
/// at least two, from the rest, and scores the typical ones by their
/// silhouette. `None` when
/// fewer than two clusters are typical.
pub fn typical_clusters(d: &[Vec<f64>], clusters: ClusterResult, min_fraction: f64) -> Option<TypicalClusters> {
    let n = d.len();
    let mut sizes = vec![0usize; clusters.k];
    for &a in &clusters.assignments {
        sizes[a] += 1;
    }
    let typical: Vec<usize> = (0..clusters.k)
        .filter(|&c| sizes[c] >= 2 && sizes[c] as f64 >= min_fraction * n as f64)
        .collect();
    if typical.len() < 2 {
        return None;
    }
    let members: Vec<usize> = (0..n).filter(|&i| typical.contains(&clusters.assignments[i])).collect();
    let sub: Vec<Vec<f64>> = members.iter().map(|&i| members.iter().map(|&j| d[i][j]).collect()).collect();
    let relabeled: Vec<usize> = members
        .iter()
        .map(|&i| typical.iter().position(|&c| c == clusters.assignments[i]).expect("typical member"))
        .collect();
    let silhouette = silhouette(&sub, &relabeled, typical.len());
    Some(TypicalClusters {
        clusters,
        typical,
        silhouette,
    })
}

/// [`choose_k`] with outlier clusters: every `k` in the range is clustered,
/// singletons and clusters below `min_fraction` of the items are set aside, and the
/// clustering whose typical clusters have the highest silhouette wins
/// (fewer typical clusters, then smaller `k`, on ties).
pub fn choose_typical_k(
    d: &[Vec<f64>],
    k_range: [usize; 2],
    min_fraction: f64,
    seed: u64,
) -> Result<TypicalClusters, ClusterError> {
    let n = d.len();
    let [lo, hi] = k_range;
    if lo < 2 || hi < lo || n < 3 || hi > n - 1 {
        return Err(ClusterError::InvalidRange {
            lo,
            hi,
            max: n.saturating_sub(1),
        });
    }
    let mut best: Option<TypicalClusters> = None;
    let mut fallback: Option<ClusterResult> = None;
    for k in lo..=hi {
        let r = k_medoids(d, k, seed)?;
        if fallback.as_ref().map_or(true, |b| r.silhouette > b.silhouette) {
            fallback = Some(r.clone());
        }
        let Some(t) = typical_clusters(d, r, min_fraction) else {
            continue;
        };
        let better = best.as_ref().map_or(true, |b| {
            t.silhouette > b.silhouette || (t.silhouette == b.silhouette && t.typical.len() < b.typical.len())
        });
        if better {
            best = Some(t);
        }
    }
    // When no k leaves two typical clusters, keep every cluster.
    Ok(best.unwrap_or_else(|| {
        let clusters = fallback.expect("non-empty range");
        TypicalClusters {
            typical: (0..clusters.k).collect(),
            silhouette: clusters.silhouette,
            clusters,
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub rounds: usize,
    pub k_range: [usize; 2],
    /// Side length of the shape renderings compared during clustering.
    pub raster: u32,
    /// Adam iterations per image and round.
    pub iterations: usize,
    pub n_harmonics: usize,
    /// Objects whose visible pixels cover less than this fraction of their
    /// own area (occluded, cut by the border, or vanishingly small) are left
    /// out of clustering, since the image does not pin down their outline.
    /// Self-intersecting shapes are left out as well.
    pub min_visible_fraction: f64,
    /// Clusters with fewer than this fraction of the clustered shapes are
    /// outliers: they yield no prototype and their members take the shape of
    /// the closest typical medoid.
    pub min_cluster_fraction: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            k_range: [2, 6],
            raster: 64,
            iterations: 100,
            n_harmonics: DEFAULT_HARMONICS,
            min_visible_fraction: 0.8,
            min_cluster_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRound {
    /// Mean image loss after fitting, over images.
    pub mean_loss: f64,
    /// Number of typical clusters, i.e. prototypes.
    pub k: usize,
    /// Clusters formed before outliers were set aside.
    pub clustered_k: usize,
    pub silhouette: f64,
    /// Objects that took part in clustering, out of all fitted objects.
    pub clustered: usize,
    pub objects: usize,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub bank: PrototypeBank,
    pub rounds: Vec<DiscoveryRound>,
}

/// Scene whose objects carry their own shapes instead of bank weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeShapeScene {
    pub scene: Scene,
    pub shapes: Vec<EfdShape>,
}

impl FreeShapeScene {
    /// Moves the orientation of every free shape into its object's rotation,
    /// leaving the rendered scene unchanged. Shapes of one class then share a
    /// canonical pose and can be compared without rotation alignment.
    pub fn canonicalize_orientations(&mut self) {
        for (o, shape) in self.scene.objects.iter_mut().zip(&mut self.shapes) {
            let theta = orientation(shape, DEFAULT_SYMMETRY_THRESHOLD);
            *shape = shape.rotated(-theta);
            let (s, c) = theta.sin_cos();
            let [rc, rs] = o.rotation;
            o.rotation = [rc * c - rs * s, rs * c + rc * s];
        }
    }

    /// Replaces bank weights with the blended EFD of each object.
    pub fn from_bank(scene: &Scene, bank: &PrototypeBank, n_harmonics: usize) -> Result<Self, EfdError> {
        let shapes = scene
            .objects
            .iter()
            .map(|o| Ok(resize(&bank.blended_efd(&o.shape_weights)?, n_harmonics)))
            .collect::<Result<Vec<_>, EfdError>>()?;
        let mut scene = scene.clone();
        for o in &mut scene.objects {
            o.shape_weights = vec![1.0];
        }
        Ok(Self { scene, shapes })
    }

    /// Per object, the visible pixel count over the pixel area of its full
    /// posed outline.
    pub fn visible_fractions(&self, render: &RenderConfig) -> Result<Vec<f64>, PrototypeError> {
        let contours: Vec<Vec<Point>> = self
            .shapes
            .iter()
            .map(|s| contour_from_efd(s, render.k_points).into_points())
            .collect();
        let labels = Rasterization::from_contours(&self.scene, contours.clone(), render)?.labels();
        let mut visible = vec![0usize; self.shapes.len()];
        for &l in labels.labels() {
            if l > 0 {
                visible[l as usize - 1] += 1;
            }
        }
        let pixels = f64::from(self.scene.width) * f64::from(self.scene.height);
        Ok(self
            .scene
            .objects
            .iter()
            .zip(&contours)
            .zip(visible)
            .map(|((o, c), v)| {
                let area = polygon_signed_area(&pose_points(c, o.translation, o.scale, o.rotation)).abs() * pixels;
                if area > 0.0 {
                    v as f64 / area
                } else {
                    0.0
                }
            })
            .collect())
    }
}

fn resize(shape: &EfdShape, n: usize) -> EfdShape {
    let mut coeffs = shape.coeffs().to_vec();
    coeffs.resize(n, [0.0; 4]);
    EfdShape::new(coeffs).expect("finite coefficients")
}

/// Fits pose, color, background and per-object EFD coefficients to `target`.
pub fn fit_free_shapes(
    target: &Image,
    init: &FreeShapeScene,
    render: &RenderConfig,
    fit: &FitConfig,
    iterations: usize,
) -> Result<(FreeShapeScene, f64), PrototypeError> {
    let n = init.shapes.first().map_or(1, EfdShape::harmonics);
    let table = harmonic_table(n, render.k_points);
    let layout = init.scene.layout();
    let base = layout.len();
    let mut x0 = flatten(&init.scene).values;
    for s in &init.shapes {
        x0.extend(s.to_flat());
    }
    let block = 4 * n;
    // Shapes that start simple must stay simple; a step that breaks this is
    // treated as a failed evaluation and retried from the best point.
    let keep_simple: Vec<bool> = init
        .shapes
        .iter()
        .map(|s| is_simple_polygon(&evaluate_with_table(s, &table)))
        .collect();
    let split = |x: &[f64]| -> Result<FreeShapeScene, PrototypeError> {
        let scene = unflatten(&FlatParams {
            values: x[..base].to_vec(),
            layout,
        })
        .map_err(FitError::from)?;
        let shapes = x[base..]
            .chunks(block)
            .map(EfdShape::from_flat)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FreeShapeScene { scene, shapes })
    };
    let result = minimize(
        x0,
        iterations,
        fit.adam,
        fit.scheduler,
        None,
        |x| {
            let state = split(x)?;
            let contours: Vec<Vec<Point>> = state.shapes.iter().map(|s| evaluate_with_table(s, &table)).collect();
            if let Some(object) = (0..contours.len()).find(|&o| keep_simple[o] && !is_simple_polygon(&contours[o])) {
                return Err(PrototypeError::SelfIntersecting { object });
            }
            let raster = Rasterization::from_contours(&state.scene, contours, render)?;
            let (loss, adjoint) = image_loss_grad(&raster.image(), target, fit.loss).map_err(FitError::from)?;
            let grad = raster.backward(&adjoint)?;
            let mut flat = grad.to_flat_with(&state.scene, &[]);
            for i in layout.aspect_indices(Aspect::Shape) {
                flat[i] = 0.0;
            }
            if fit.freeze_confidence {
                for i in layout.aspect_indices(Aspect::Confidence) {
                    flat[i] = 0.0;
                }
            }
            for g in &grad.objects {
                let mut coeff_grad = vec![[0.0; 4]; n];
                for (row, gp) in table.iter().zip(&g.canonical) {
                    for (acc, &(cn, sn)) in coeff_grad.iter_mut().zip(row) {
                        acc[0] += gp[0] * cn;
                        acc[1] += gp[0] * sn;
                        acc[2] += gp[1] * cn;
                        acc[3] += gp[1] * sn;
                    }
                }
                flat.extend(coeff_grad.iter().flatten());
            }
            Ok::<_, PrototypeError>((loss, flat))
        },
        |x| {
            let scene = unflatten(&FlatParams {
                values: x[..base].to_vec(),
                layout,
            })
            .expect("finite parameters of the right length");
            x[..base].copy_from_slice(&flatten(&scene).values);
        },
    )?;
    Ok((split(&result.best)?, result.best_loss))
}

/// Alternates free-shape fitting, clustering of all fitted shapes, and
/// replacement of every shape by its cluster medoid; returns the final
/// normalized medoids as a bank.
pub fn discover_prototypes(
    images: &[Image],
    init_scenes: &[Scene],
    init_bank: &PrototypeBank,
    render: &RenderConfig,
    fit: &FitConfig,
    cfg: &DiscoveryConfig,
    seed: u64,
) -> Result<DiscoveryReport, PrototypeError> {
    if images.len() != init_scenes.len() {
        return Err(PrototypeError::LengthMismatch {
            images: images.len(),
            scenes: init_scenes.len(),
        });
    }
    let mut states = init_scenes
        .iter()
        .map(|s| FreeShapeScene::from_bank(s, init_bank, cfg.n_harmonics))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rounds = Vec::new();
    let mut medoid_shapes = Vec::new();
    for _ in 0..cfg.rounds.max(1) {
        let fitted = images
            .par_iter()
            .zip(&states)
            .map(|(img, st)| fit_free_shapes(img, st, render, fit, cfg.iterations))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_loss = fitted.iter().map(|(_, l)| l).sum::<f64>() / fitted.len().max(1) as f64;
        states = fitted.into_iter().map(|(s, _)| s).collect();
        for st in &mut states {
            st.canonicalize_orientations();
        }

        let fractions = states
            .par_iter()
            .map(|s| s.visible_fractions(render))
            .collect::<Result<Vec<_>, _>>()?;
        let objects = fractions.iter().map(Vec::len).sum();
        let pooled: Vec<(usize, usize)> = fractions
            .iter()
            .enumerate()
            .flat_map(|(i, f)| {
                f.iter()
                    .enumerate()
                    .filter(|&(_, &v)| v >= cfg.min_visible_fraction)
                    .map(move |(j, _)| (i, j))
                    .filter(|&(i, j)| is_simple_polygon(contour_from_efd(&states[i].shapes[j], render.k_points).points()))
            })
            .collect();
        if pooled.is_empty() {
            return Err(PrototypeError::NoShapes);
        }
        let shapes: Vec<EfdShape> = pooled.iter().map(|&(i, j)| states[i].shapes[j].clone()).collect();
        let d = distance_matrix(&shapes, cfg.raster)?;
        let max_k = shapes.len().saturating_sub(1);
        let chosen = if max_k >= 2 {
            choose_typical_k(
                &d,
                [cfg.k_range[0].min(max_k), cfg.k_range[1].min(max_k)],
                cfg.min_cluster_fraction,
                seed,
            )?
        } else {
            let clusters = k_medoids(&d, 1, seed)?;
            TypicalClusters {
                typical: vec![0],
                silhouette: clusters.silhouette,
                clusters,
            }
        };
        let mut sizes = vec![0; chosen.clusters.k];
        for &a in &chosen.clusters.assignments {
            sizes[a] += 1;
        }
        rounds.push(DiscoveryRound {
            mean_loss,
            k: chosen.typical.len(),
            clustered_k: chosen.clusters.k,
            silhouette: chosen.silhouette,
            clustered: pooled.len(),
            objects,
            cluster_sizes: chosen.typical.iter().map(|&c| sizes[c]).collect(),
        });
        medoid_shapes = chosen
            .typical
            .iter()
            .map(|&c| shapes[chosen.clusters.medoids[c]].clone())
            .collect::<Vec<_>>();
        for (item, &(i, j)) in pooled.iter().enumerate() {
            let medoid = &shapes[chosen.nearest_typical_medoid(&d, item)];
            let own = contour_from_efd(&states[i].shapes[j], render.k_points).half_extent();
            let med = contour_from_efd(medoid, render.k_points).half_extent();
            states[i].shapes[j] = if med > 0.0 { medoid.scaled(own / med) } else { medoid.clone() };
        }
    }
    let bank = PrototypeBank::new(medoid_shapes)?;
    Ok(DiscoveryReport { bank, rounds })
}

/// Fits every image with the iterative baseline over `init_bank`, then runs
/// [`discover_prototypes`] from those fits.
pub fn discover_from_images(
    images: &[Image],
    init_bank: &PrototypeBank,
    render: &RenderConfig,
    fit: &FitConfig,
    cfg: &DiscoveryConfig,
    max_objects: usize,
    seed: u64,
) -> Result<DiscoveryReport, PrototypeError> {
    let init_scenes = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| fit_opt_iter(img, max_objects, init_bank, render, fit, seed.wrapping_add(i as u64)).map(|r| r.scene))
        .collect::<Result<Vec<_>, _>>()?;
    discover_prototypes(images, &init_scenes, init_bank, render, fit, cfg, seed)
}
