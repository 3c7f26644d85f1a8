//! Synthetic multi-object scenes: the built-in shape bank and the scene
//! sampler.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efd::{efd_from_contour, efd_from_samples, Contour, EfdShape, Point, PrototypeBank, DEFAULT_HARMONICS};
use crate::scene::{ObjectParams, Scene};

const DENSE_POINTS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinShape {
    Ellipse,
    Heart,
    Square,
}

impl BuiltinShape {
    pub const ALL: [BuiltinShape; 3] = [BuiltinShape::Ellipse, BuiltinShape::Heart, BuiltinShape::Square];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinShape::Ellipse => "ellipse",
            BuiltinShape::Heart => "heart",
            BuiltinShape::Square => "square",
        }
    }

    /// Dense counter-clockwise outline whose last point lies at polar angle 0.
    pub fn dense_contour(self) -> Vec<Point> {
        match self {
            BuiltinShape::Ellipse => (1..=DENSE_POINTS)
                .map(|i| {
                    let a = TAU * i as f64 / DENSE_POINTS as f64;
                    [a.cos(), 0.5 * a.sin()]
                })
                .collect(),
            BuiltinShape::Square => (1..=DENSE_POINTS)
                .map(|i| square_point(8.0 * i as f64 / DENSE_POINTS as f64))
                .collect(),
            BuiltinShape::Heart => heart_contour(DENSE_POINTS),
        }
    }

    pub fn shape(self) -> EfdShape {
        let contour = Contour::new(self.dense_contour()).expect("analytic outline is valid");
        efd_from_contour(&contour, DEFAULT_HARMONICS).expect("analytic outline is non-degenerate")
    }
}

/// Point on the boundary of `[-1,1]²` at arc-length position `u ∈ [0, 8)`,
/// starting from `(1, 0)` and running counter-clockwise.
fn square_point(u: f64) -> Point {
    let u = u.rem_euclid(8.0);
    if u < 1.0 {
        [1.0, u]
    } else if u < 3.0 {
        [2.0 - u, 1.0]
    } else if u < 5.0 {
        [-1.0, 4.0 - u]
    } else if u < 7.0 {
        [u - 6.0, -1.0]
    } else {
        [1.0, u - 8.0]
    }
}

/// The classic `16 sin³θ, 13 cos θ − 5 cos 2θ − 2 cos 3θ − cos 4θ` heart,
/// reordered counter-clockwise around its centroid and started at polar
/// angle 0.
fn heart_contour(k: usize) -> Vec<Point> {
    let mut pts: Vec<Point> = (0..k)
        .map(|i| {
            let t = TAU * i as f64 / k as f64;
            let x = 16.0 * t.sin().powi(3);
            let y = 13.0 * t.cos() - 5.0 * (2.0 * t).cos() - 2.0 * (3.0 * t).cos() - (4.0 * t).cos();
            [x, y]
        })
        .collect();
    pts.reverse();
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    // Rightmost crossing of the horizontal through the centroid.
    let last = (0..pts.len())
        .filter(|&i| pts[i][0] > cx)
        .min_by(|&a, &b| {
            let da = (pts[a][1] - cy).atan2(pts[a][0] - cx).abs();
            let db = (pts[b][1] - cy).atan2(pts[b][0] - cx).abs();
            da.partial_cmp(&db).expect("finite angles")
        })
        .expect("heart has points right of its centroid");
    pts.rotate_left(last + 1);
    pts
}

/// A square represented exactly at 64 contour points (31 harmonics), with
/// corners on the sample grid.
pub fn exact_square_shape() -> EfdShape {
    let pts: Vec<Point> = (1..=64).map(|i| square_point(8.0 * i as f64 / 64.0)).collect();
    efd_from_samples(&pts, 31).expect("64 samples resolve 31 harmonics")
}

/// Normalized prototypes for the given shapes, in order.
pub fn bank_of(shapes: &[BuiltinShape]) -> PrototypeBank {
    PrototypeBank::new(shapes.iter().map(|s| s.shape()).collect()).expect("built-in prototypes are simple")
}

/// Ellipse, heart and square prototypes.
pub fn builtin_bank() -> PrototypeBank {
    bank_of(&BuiltinShape::ALL)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenConfigError {
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_objects_range: [usize; 2],
    pub scale_range: [f64; 2],
    pub translation_range: [f64; 2],
    pub n_placement_sets: usize,
    pub width: u32,
    pub height: u32,
    pub shapes: Vec<BuiltinShape>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_objects_range: [1, 4],
            scale_range: [0.1, 0.3],
            translation_range: [0.05, 0.95],
            n_placement_sets: 8,
            width: 128,
            height: 128,
            shapes: BuiltinShape::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenConfigError> {
        let err = |field, message: &str| {
            Err(GenConfigError::Invalid {
                field,
                message: message.to_string(),
            })
        };
        let [lo, hi] = self.n_objects_range;
        if lo > hi || hi == 0 || hi > u8::MAX as usize {
            return err("n_objects_range", "must be a non-empty interval within [0, 255] with a positive upper bound");
        }
        let [s0, s1] = self.scale_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return err("scale_range", "must be a non-empty positive interval");
        }
        let [t0, t1] = self.translation_range;
        if !(0.0..=1.0).contains(&t0) || !(0.0..=1.0).contains(&t1) || t0 > t1 {
            return err("translation_range", "must be a non-empty interval within [0, 1]");
        }
        if self.n_placement_sets == 0 {
            return err("n_placement_sets", "must be at least 1");
        }
        if self.width == 0 || self.height == 0 {
            return err("width", "image dimensions must be positive");
        }
        if self.shapes.is_empty() {
            return err("shapes", "at least one shape is required");
        }
        Ok(())
    }

    pub fn bank(&self) -> PrototypeBank {
        bank_of(&self.shapes)
    }
}

/// Independent random stream for example `index` under `seed`.
pub fn example_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

/// Minimum pairwise distance of a set of points (infinite for fewer than 2).
pub fn min_pairwise_distance(points: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min((points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]));
        }
    }
    best
}

/// Samples a scene and also returns every candidate translation set drawn
/// for its placement.
pub fn sample_scene_traced(cfg: &GenConfig, rng: &mut impl Rng) -> (Scene, Vec<Vec<[f64; 2]>>) {
    let m = cfg.shapes.len();
    let n = rng.gen_range(cfg.n_objects_range[0]..=cfg.n_objects_range[1]);
    let mut objects: Vec<ObjectParams> = (0..n)
        .map(|_| {
            let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let angle: f64 = rng.gen_range(0.0..TAU);
            let scale = uniform(rng, cfg.scale_range);
            let shape = rng.gen_range(0..m);
            let mut shape_weights = vec![0.0; m];
            shape_weights[shape] = 1.0;
            ObjectParams {
                color,
                translation: [0.0; 2],
                scale,
                rotation: [angle.cos(), angle.sin()],
                shape_weights,
                confidence: 1.0,
            }
        })
        .collect();
    let sets: Vec<Vec<[f64; 2]>> = (0..cfg.n_placement_sets)
        .map(|_| {
            (0..n)
                .map(|_| [uniform(rng, cfg.translation_range), uniform(rng, cfg.translation_range)])
                .collect()
        })
        .collect();
    let mut chosen = 0;
    if n >= 2 {
        let mut best = f64::NEG_INFINITY;
        for (i, set) in sets.iter().enumerate() {
            let d = min_pairwise_distance(set);
            if d > best {
                best = d;
                chosen = i;
            }
        }
    }
    for (o, t) in objects.iter_mut().zip(&sets[chosen]) {
        o.translation = *t;
    }
    let background = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let scene = Scene {
        width: cfg.width,
        height: cfg.height,
        background,
        objects,
    };
    (scene, sets)
}

pub fn sample_scene(cfg: &GenConfig, rng: &mut impl Rng) -> Scene {
    sample_scene_traced(cfg, rng).0
}

/// Angle wrapped into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}
