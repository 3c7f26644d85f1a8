//! Elliptic Fourier descriptors (Kuhl–Giardina) for closed 2D contours.
//!
//! A contour of `K` points is treated as a closed polygon whose time
//! parameter starts (`t = 0`) at the last point and runs through the points
//! in order, so that point `p` (1-based) sits at `t_p`. [`contour_from_efd`]
//! uses the same convention on a uniform grid `t_p = p T / K`, which makes
//! [`efd_from_samples`] its exact inverse for band-limited inputs.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in scene (or object-frame) coordinates.
pub type Point = [f64; 2];

pub const DEFAULT_HARMONICS: usize = 16;
pub const DEFAULT_CONTOUR_POINTS: usize = 64;
pub const DEFAULT_SYMMETRY_THRESHOLD: f64 = 0.05;

/// Tolerance on the simplex constraint of blending weights.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EfdError {
    #[error("degenerate contour: {0}")]
    DegenerateContour(&'static str),
    #[error("shape weights are not on the simplex (sum {sum}, min {min})")]
    WeightSimplexViolation { sum: f64, min: f64 },
    #[error("expected {expected} shape weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("prototype {index} is not a simple polygon at {k_points} points")]
    NonSimplePrototype { index: usize, k_points: usize },
}

/// A closed contour; point 0 implicitly follows the last point.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<Point>,
}

impl Contour {
    pub fn new(points: Vec<Point>) -> Result<Self, EfdError> {
        if points.len() < 3 {
            return Err(EfdError::DegenerateContour("fewer than 3 points"));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(EfdError::DegenerateContour("non-finite coordinate"));
        }
        let contour = Self { points };
        if contour.perimeter() <= 0.0 {
            return Err(EfdError::DegenerateContour("zero perimeter"));
        }
        Ok(contour)
    }

    /// Wraps points without validation; used for reconstructed contours,
    /// which may legitimately collapse (e.g. all-zero coefficients).
    pub fn from_points_unchecked(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let a = self.points[i];
                let b = self.points[(i + 1) % n];
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .sum()
    }

    /// Shoelace area; positive for counter-clockwise order in a y-up frame.
    pub fn signed_area(&self) -> f64 {
        polygon_signed_area(&self.points)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }

    /// Largest `max(|x|, |y|)` over the points.
    pub fn half_extent(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(0.0, f64::max)
    }

    pub fn is_simple(&self) -> bool {
        is_simple_polygon(&self.points)
    }
}

pub fn polygon_signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

/// True when no two non-adjacent edges of the closed polygon intersect.
pub fn is_simple_polygon(points: &[Point]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        for j in (i + 1)..n {
            // skip edges sharing a vertex with edge i
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let c = points[j];
            let d = points[(j + 1) % n];
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Spectral shape: one `(A_n, B_n, C_n, D_n)` row per harmonic `n = 1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EfdShapeRepr", into = "EfdShapeRepr")]
pub struct EfdShape {
    coeffs: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct EfdShapeRepr {
    n: usize,
    coeffs: Vec<[f64; 4]>,
}

impl TryFrom<EfdShapeRepr> for EfdShape {
    type Error = EfdError;

    fn try_from(repr: EfdShapeRepr) -> Result<Self, Self::Error> {
        if repr.n != repr.coeffs.len() {
            return Err(EfdError::InvalidShape(format!(
                "declared {} harmonics but found {} rows",
                repr.n,
                repr.coeffs.len()
            )));
        }
        EfdShape::new(repr.coeffs)
    }
}

impl From<EfdShape> for EfdShapeRepr {
    fn from(shape: EfdShape) -> Self {
        Self {
            n: shape.coeffs.len(),
            coeffs: shape.coeffs,
        }
    }
}

impl EfdShape {
    pub fn new(coeffs: Vec<[f64; 4]>) -> Result<Self, EfdError> {
        if coeffs.is_empty() {
            return Err(EfdError::InvalidShape("no harmonics".into()));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(EfdError::InvalidShape("non-finite coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n_harmonics: usize) -> Self {
        Self {
            coeffs: vec![[0.0; 4]; n_harmonics.max(1)],
        }
    }

    pub fn harmonics(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    /// Coefficients as a flat `[A1, B1, C1, D1, A2, ...]` vector.
    pub fn to_flat(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self, EfdError> {
        if values.len() % 4 != 0 {
            return Err(EfdError::InvalidShape("flat length is not a multiple of 4".into()));
        }
        Self::new(values.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c.map(|v| v * factor)).collect(),
        }
    }

    /// Rotates the reconstructed contour by `angle` about the origin.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            coeffs: self
                .coeffs
                .iter()
                .map(|&[a, b, cc, d]| [c * a - s * cc, c * b - s * d, s * a + c * cc, s * b + c * d])
                .collect(),
        }
    }

    /// Complex-exponential form: `(k, z_k)` for `k = ±1..=±N`, where the
    /// contour is `x + iy = Σ z_k e^{ikθ}`.
    pub fn complex_harmonics(&self) -> Vec<(i64, [f64; 2])> {
        let mut out = Vec::with_capacity(2 * self.coeffs.len());
        for (i, &[a, b, c, d]) in self.coeffs.iter().enumerate() {
            let n = (i + 1) as i64;
            out.push((n, [0.5 * (a + d), 0.5 * (c - b)]));
            out.push((-n, [0.5 * (a - d), 0.5 * (c + b)]));
        }
        out
    }
}

fn dedup_points(points: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn distinct_count(points: &[Point]) -> usize {
    let mut sorted: Vec<Point> = points.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    sorted.dedup();
    sorted.len()
}

/// The four coefficient sums over the closed polygon, for an arbitrary
/// monotone time assignment `times` (`times[p]` is the time at point `p`,
/// the last point sits at `t = 0 ≡ period`).
fn efd_sums(points: &[Point], seg_dt: &[f64], n_harmonics: usize) -> Vec<[f64; 4]> {
    let k = points.len();
    let period: f64 = seg_dt.iter().sum();
    let mut t = Vec::with_capacity(k + 1);
    t.push(0.0);
    for dt in seg_dt {
        let last = *t.last().unwrap();
        t.push(last + dt);
    }
    // segment p (1-based) runs from point p-1 (with point 0 = last point) to point p
    let mut slopes = Vec::with_capacity(k);
    for p in 1..=k {
        let prev = points[(p + k - 2) % k];
        let cur = points[p - 1];
        let dt = seg_dt[p - 1];
        slopes.push([(cur[0] - prev[0]) / dt, (cur[1] - prev[1]) / dt]);
    }
    (1..=n_harmonics)
        .map(|n| {
            let nf = n as f64;
            let omega = TAU * nf / period;
            let factor = period / (2.0 * nf * nf * PI * PI);
            let mut acc = [0.0; 4];
            let (mut s_prev, mut c_prev) = (omega * t[0]).sin_cos();
            for p in 1..=k {
                let (s_cur, c_cur) = (omega * t[p]).sin_cos();
                let dc = c_cur - c_prev;
                let ds = s_cur - s_prev;
                let [sx, sy] = slopes[p - 1];
                acc[0] += sx * dc;
                acc[1] += sx * ds;
                acc[2] += sy * dc;
                acc[3] += sy * ds;
                s_prev = s_cur;
                c_prev = c_cur;
            }
            acc.map(|v| v * factor)
        })
        .collect()
}

/// Elliptic Fourier descriptors of a closed polygon, with the time parameter
/// equal to arc length. Exact consecutive duplicates are dropped first.
pub fn efd_from_contour(contour: &Contour, n_harmonics: usize) -> Result<EfdShape, EfdError> {
    if n_harmonics == 0 {
        return Err(EfdError::InvalidShape("n_harmonics must be positive".into()));
    }
    let pts = dedup_points(contour.points());
    if pts.len() < 3 || distinct_count(&pts) < 3 {
        return Err(EfdError::DegenerateContour("fewer than 3 distinct points"));
    }
    let k = pts.len();
    let seg_dt: Vec<f64> = (1..=k)
        .map(|p| {
            let prev = pts[(p + k - 2) % k];
            let cur = pts[p - 1];
            (cur[0] - prev[0]).hypot(cur[1] - prev[1])
        })
        .collect();
    let period: f64 = seg_dt.iter().sum();
    if period <= 0.0 || !period.is_finite() {
        return Err(EfdError::DegenerateContour("zero perimeter"));
    }
    EfdShape::new(efd_sums(&pts, &seg_dt, n_harmonics))
}

/// Exact inverse of [`contour_from_efd`] for contours sampled on the uniform
/// grid from at most `n_harmonics` harmonics.
///
/// Evaluates the same coefficient sums with uniform time steps and removes
/// the `sinc²(πn/K)` attenuation that piecewise-linear interpolation of the
/// samples introduces. Requires `K > 2 N`.
pub fn efd_from_samples(points: &[Point], n_harmonics: usize) -> Result<EfdShape, EfdError> {
    let k = points.len();
    if n_harmonics == 0 {
        return Err(EfdError::InvalidShape("n_harmonics must be positive".into()));
    }
    if k < 3 {
        return Err(EfdError::DegenerateContour("fewer than 3 points"));
    }
    if k <= 2 * n_harmonics {
        return Err(EfdError::InvalidShape(format!(
            "{k} samples cannot resolve {n_harmonics} harmonics"
        )));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(EfdError::DegenerateContour("non-finite coordinate"));
    }
    let seg_dt = vec![1.0; k];
    let mut coeffs = efd_sums(points, &seg_dt, n_harmonics);
    for (i, row) in coeffs.iter_mut().enumerate() {
        let x = PI * (i + 1) as f64 / k as f64;
        let attenuation = (x.sin() / x).powi(2);
        for v in row.iter_mut() {
            *v /= attenuation;
        }
    }
    EfdShape::new(coeffs)
}

/// Cos/sin table for `K` uniform samples: `table[p][n-1] = (cos nθ_p, sin nθ_p)`
/// with `θ_p = 2π (p+1) / K`.
pub(crate) fn harmonic_table(n_harmonics: usize, k_points: usize) -> Vec<Vec<(f64, f64)>> {
    (0..k_points)
        .map(|p| {
            let theta = TAU * (p + 1) as f64 / k_points as f64;
            (1..=n_harmonics)
                .map(|n| {
                    let (s, c) = (n as f64 * theta).sin_cos();
                    (c, s)
                })
                .collect()
        })
        .collect()
}

pub(crate) fn evaluate_with_table(shape: &EfdShape, table: &[Vec<(f64, f64)>]) -> Vec<Point> {
    table
        .iter()
        .map(|row| {
            let mut x = 0.0;
            let mut y = 0.0;
            for (&[a, b, c, d], &(cn, sn)) in shape.coeffs.iter().zip(row) {
                x += a * cn + b * sn;
                y += c * cn + d * sn;
            }
            [x, y]
        })
        .collect()
}

/// Inverse transform sampled at `t_p = p T / K`, `p = 1..=K`.
pub fn contour_from_efd(shape: &EfdShape, k_points: usize) -> Contour {
    let table = harmonic_table(shape.harmonics(), k_points);
    Contour::from_points_unchecked(evaluate_with_table(shape, &table))
}

/// A fixed set of normalized prototype shapes that objects blend between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EfdShape>", into = "Vec<EfdShape>")]
pub struct PrototypeBank {
    shapes: Vec<EfdShape>,
}

impl TryFrom<Vec<EfdShape>> for PrototypeBank {
    type Error = EfdError;

    fn try_from(shapes: Vec<EfdShape>) -> Result<Self, Self::Error> {
        PrototypeBank::new(shapes)
    }
}

impl From<PrototypeBank> for Vec<EfdShape> {
    fn from(bank: PrototypeBank) -> Self {
        bank.shapes
    }
}

impl PrototypeBank {
    /// Normalizes every shape and checks that each reconstructs to a simple
    /// polygon at the default contour resolution.
    pub fn new(shapes: Vec<EfdShape>) -> Result<Self, EfdError> {
        if shapes.is_empty() {
            return Err(EfdError::InvalidShape("empty prototype bank".into()));
        }
        let shapes = shapes.iter().map(normalize_shape).collect::<Result<Vec<_>, _>>()?;
        for (index, shape) in shapes.iter().enumerate() {
            if !contour_from_efd(shape, DEFAULT_CONTOUR_POINTS).is_simple() {
                return Err(EfdError::NonSimplePrototype {
                    index,
                    k_points: DEFAULT_CONTOUR_POINTS,
                });
            }
        }
        Ok(Self { shapes })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shapes(&self) -> &[EfdShape] {
        &self.shapes
    }

    pub fn max_harmonics(&self) -> usize {
        self.shapes.iter().map(EfdShape::harmonics).max().unwrap_or(0)
    }

    /// Every prototype reconstructed at `k_points`.
    pub fn sampled(&self, k_points: usize) -> Vec<Vec<Point>> {
        let table = harmonic_table(self.max_harmonics(), k_points);
        self.shapes.iter().map(|s| evaluate_with_table(s, &table)).collect()
    }

    /// Coefficient-space blend; reconstructs to the same contour as
    /// [`blend_shapes`] because the inverse transform is linear.
    pub fn blended_efd(&self, weights: &[f64]) -> Result<EfdShape, EfdError> {
        check_simplex(weights, self.len())?;
        let n = self.max_harmonics();
        let mut coeffs = vec![[0.0; 4]; n];
        for (shape, &w) in self.shapes.iter().zip(weights) {
            for (acc, row) in coeffs.iter_mut().zip(shape.coeffs()) {
                for j in 0..4 {
                    acc[j] += w * row[j];
                }
            }
        }
        EfdShape::new(coeffs)
    }
}

pub(crate) fn check_simplex(weights: &[f64], expected: usize) -> Result<(), EfdError> {
    if weights.len() != expected {
        return Err(EfdError::WeightCount {
            expected,
            got: weights.len(),
        });
    }
    let sum: f64 = weights.iter().sum();
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sum - 1.0).abs().le(&SIMPLEX_TOLERANCE) || min < 0.0 || !min.is_finite() {
        return Err(EfdError::WeightSimplexViolation { sum, min });
    }
    Ok(())
}

/// Soft indexing of the bank: per-point weighted sum of the prototype
/// contours evaluated on the same uniform grid.
pub fn blend_shapes(bank: &PrototypeBank, weights: &[f64], k_points: usize) -> Result<Contour, EfdError> {
    check_simplex(weights, bank.len())?;
    Ok(Contour::from_points_unchecked(blend_sampled(&bank.sampled(k_points), weights)))
}

pub(crate) fn blend_sampled(sampled: &[Vec<Point>], weights: &[f64]) -> Vec<Point> {
    let k = sampled.first().map_or(0, Vec::len);
    let mut out = vec![[0.0; 2]; k];
    for (contour, &w) in sampled.iter().zip(weights) {
        for (acc, p) in out.iter_mut().zip(contour) {
            acc[0] += w * p[0];
            acc[1] += w * p[1];
        }
    }
    out
}

/// Rescales a shape so its reconstructed contour has half-extent 1.
///
/// There is no DC term, so the uniform-grid reconstruction is already
/// centered on its point centroid; only the scale changes.
pub fn normalize_shape(shape: &EfdShape) -> Result<EfdShape, EfdError> {
    let extent = contour_from_efd(shape, DEFAULT_CONTOUR_POINTS).half_extent();
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(EfdError::DegenerateContour("zero extent"));
    }
    Ok(shape.scaled(1.0 / extent))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Orientation of a shape, as the angle `θ` with `shape = canonical.rotated(θ)`.
///
/// Harmonic `k` carries the phase `arg z_k − k·k_ref·arg z_ref`, which does
/// not depend on the contour's starting point and advances by
/// `m_k = 1 − k·k_ref` times the rotation angle. For a mirror-symmetric
/// shape whose axis lies along x, every such phase is 0 or π. The canonical
/// pose looks for that axis among the significant harmonics (above
/// `threshold` of the reference) by maximizing `Σ |z_k| cos 2(phase_k − m_k θ)`,
/// then picks between the two ends of the axis by the sign of
/// `Σ |z_k| cos(phase_k − m_k θ)`. Both scores turn with the shape, so `θ` is
/// defined modulo the shape's own rotational symmetry; it is returned in
/// `(−π/g, π/g]` for `g` the GCD of the `m_k`, and is 0 when no harmonic
/// besides the reference is significant.
pub fn orientation(shape: &EfdShape, threshold: f64) -> f64 {
    let harmonics = shape.complex_harmonics();
    let magnitude = |z: [f64; 2]| z[0].hypot(z[1]);
    let (k_ref, z_ref) = if magnitude(harmonics[0].1) >= magnitude(harmonics[1].1) {
        harmonics[0]
    } else {
        harmonics[1]
    };
    let reference = magnitude(z_ref);
    let ref_phase = z_ref[1].atan2(z_ref[0]);
    // (weight, phase, m) per significant harmonic.
    let terms: Vec<(f64, f64, f64)> = harmonics
        .iter()
        .filter(|&&(k, z)| k != k_ref && magnitude(z) > threshold * reference)
        .map(|&(k, z)| {
            let kk = k * k_ref;
            (magnitude(z), z[1].atan2(z[0]) - kk as f64 * ref_phase, (1 - kk) as f64)
        })
        .collect();
    if terms.is_empty() {
        return 0.0;
    }
    let score = |theta: f64, n: f64| {
        terms
            .iter()
            .map(|&(w, phase, m)| w * (n * (phase - m * theta)).cos())
            .sum::<f64>()
    };
    let g = terms.iter().fold(0u64, |g, &(_, _, m)| gcd(g, m.abs() as u64));
    let period = TAU / g as f64;
    let axis = argmax_periodic(|t| score(t, 2.0), 0.5 * period);
    let flipped = axis + 0.5 * period;
    let best = if score(flipped, 1.0) > score(axis, 1.0) { flipped } else { axis };
    (best + 0.5 * period).rem_euclid(period) - 0.5 * period
}

/// Maximizer of a smooth `period`-periodic function: grid search followed by
/// golden-section refinement around the best grid point.
fn argmax_periodic(f: impl Fn(f64) -> f64, period: f64) -> f64 {
    const GRID: usize = 720;
    let step = period / GRID as f64;
    let best = (0..GRID)
        .map(|i| i as f64 * step)
        .max_by(|&a, &b| f(a).total_cmp(&f(b)))
        .expect("non-empty grid");
    let (mut lo, mut hi) = (best - step, best + step);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let a = hi - ratio * (hi - lo);
        let b = lo + ratio * (hi - lo);
        if f(a) >= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// Order of rotational symmetry inferred from the significant harmonics of
/// the complex-exponential spectrum.
///
/// The reference is the dominant first harmonic (`k = +1` for
/// counter-clockwise contours, `k = -1` for clockwise ones). A harmonic is
/// significant when its magnitude exceeds `threshold` times the reference
/// magnitude; the result is the GCD of `|k - k_ref|` over significant `k`,
/// or 1 when there are none.
pub fn symmetry_order(shape: &EfdShape, threshold: f64) -> usize {
    let harmonics = shape.complex_harmonics();
    let magnitude = |z: [f64; 2]| z[0].hypot(z[1]);
    let plus = magnitude(harmonics[0].1);
    let minus = magnitude(harmonics[1].1);
    let (k_ref, reference) = if plus >= minus { (1i64, plus) } else { (-1i64, minus) };
    if !(reference > 0.0) {
        return 1;
    }
    let mut order = 0u64;
    for &(k, z) in &harmonics {
        if k == k_ref {
            continue;
        }
        if magnitude(z) > threshold * reference {
            order = gcd(order, (k - k_ref).unsigned_abs());
        }
    }
    if order == 0 {
        1
    } else {
        order as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(radius: f64, k: usize) -> Contour {
        let pts = (0..k)
            .map(|i| {
                let a = TAU * (i + 1) as f64 / k as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Contour::new(pts).unwrap()
    }

    fn dense_square(half: f64, per_side: usize) -> Contour {
        let corners = [[half, -half], [half, half], [-half, half], [-half, -half]];
        let mut pts = Vec::new();
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            for j in 0..per_side {
                let s = j as f64 / per_side as f64;
                pts.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
            }
        }
        Contour::new(pts).unwrap()
    }

    #[test]
    fn circle_spectrum_is_first_harmonic() {
        let efd = efd_from_contour(&circle(0.5, 64), 16).unwrap();
        let [a1, b1, c1, d1] = efd.coeffs()[0];
        assert!((a1 - 0.5).abs() < 0.005, "{a1}");
        assert!((d1 - 0.5).abs() < 0.005, "{d1}");
        assert!(b1.abs() < 1e-3 && c1.abs() < 1e-3);
        let h1 = a1.hypot(d1);
        for row in &efd.coeffs()[1..] {
            let mag = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(mag < 1e-3 * h1, "{row:?}");
        }
    }

    #[test]
    fn duplicate_points_are_dropped() {
        let a = [0.0, 0.0];
        let b = [1.0, 0.0];
        let c = [0.0, 1.0];
        let three = efd_from_contour(&Contour::new(vec![a, b, c]).unwrap(), 8).unwrap();
        let dup = efd_from_contour(&Contour::new(vec![a, b, b, c]).unwrap(), 8).unwrap();
        let closed = efd_from_contour(&Contour::new(vec![a, b, c, a]).unwrap(), 8).unwrap();
        assert_eq!(three, dup);
        assert_eq!(three, closed);
    }

    #[test]
    fn degenerate_contours_are_rejected() {
        let line = Contour::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(efd_from_contour(&line, 4), Err(EfdError::DegenerateContour(_))));
        assert!(Contour::new(vec![[1.0, 1.0]; 5]).is_err());
        assert!(Contour::new(vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn square_has_only_odd_harmonics() {
        let efd = efd_from_contour(&dense_square(1.0, 64), 16).unwrap();
        let mags: Vec<f64> = efd.coeffs().iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let h1 = mags[0];
        for (i, m) in mags.iter().enumerate() {
            let n = i + 1;
            if n % 2 == 0 {
                assert!(*m < 1e-6 * h1, "even harmonic {n} = {m}");
            }
        }
        for n in [1, 3, 5, 7] {
            assert!(mags[n - 1] > 1e-3 * h1, "odd harmonic {n} = {}", mags[n - 1]);
        }
    }

    #[test]
    fn single_harmonic_inverse() {
        let shape = EfdShape::new(vec![[1.0, 0.0, 0.0, 1.0]]).unwrap();
        let c = contour_from_efd(&shape, 4);
        let expected = [[0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, 0.0]];
        for (p, e) in c.points().iter().zip(expected) {
            assert!((p[0] - e[0]).abs() < 1e-12 && (p[1] - e[1]).abs() < 1e-12, "{p:?} vs {e:?}");
        }
        let zero = contour_from_efd(&EfdShape::zeros(5), 7);
        assert!(zero.points().iter().all(|p| *p == [0.0, 0.0]));
        assert_eq!(zero.len(), 7);
    }

    #[test]
    fn samples_roundtrip() {
        let coeffs: Vec<[f64; 4]> = (1..=16)
            .map(|n| {
                let f = 1.0 / (n * n) as f64;
                [f * (n as f64).sin(), f * 0.3, f * (2.0 * n as f64).cos(), f]
            })
            .collect();
        let shape = EfdShape::new(coeffs).unwrap();
        let contour = contour_from_efd(&shape, 64);
        let back = efd_from_samples(contour.points(), 16).unwrap();
        for (a, b) in shape.coeffs().iter().zip(back.coeffs()) {
            for j in 0..4 {
                assert!((a[j] - b[j]).abs() < 1e-12);
            }
        }
        assert!(efd_from_samples(contour.points(), 32).is_err());
    }

    #[test]
    fn blend_identity_and_midpoint() {
        let circle_shape = efd_from_contour(&circle(1.0, 128), 16).unwrap();
        let square_shape = efd_from_contour(&dense_square(1.0, 32), 16).unwrap();
        let bank = PrototypeBank::new(vec![circle_shape, square_shape]).unwrap();
        let sampled = bank.sampled(64);
        let one_hot = blend_shapes(&bank, &[0.0, 1.0], 64).unwrap();
        assert_eq!(one_hot.points(), &sampled[1][..]);
        let mid = blend_shapes(&bank, &[0.5, 0.5], 64).unwrap();
        for (i, p) in mid.points().iter().enumerate() {
            let ex = 0.5 * (sampled[0][i][0] + sampled[1][i][0]);
            let ey = 0.5 * (sampled[0][i][1] + sampled[1][i][1]);
            assert!((p[0] - ex).abs() < 1e-15 && (p[1] - ey).abs() < 1e-15);
        }
        assert!(matches!(
            blend_shapes(&bank, &[0.7, 0.7], 64),
            Err(EfdError::WeightSimplexViolation { .. })
        ));
        assert!(matches!(
            blend_shapes(&bank, &[1.5, -0.5], 64),
            Err(EfdError::WeightSimplexViolation { .. })
        ));
        assert!(matches!(blend_shapes(&bank, &[1.0], 64), Err(EfdError::WeightCount { .. })));
    }

    #[test]
    fn identical_prototypes_blend_to_themselves() {
        let s = efd_from_contour(&circle(1.0, 64), 16).unwrap();
        let bank = PrototypeBank::new(vec![s.clone(), s]).unwrap();
        let blended = blend_shapes(&bank, &[0.5, 0.5], 64).unwrap();
        for (p, q) in blended.points().iter().zip(&bank.sampled(64)[0]) {
            assert!((p[0] - q[0]).abs() < 1e-15 && (p[1] - q[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_square() {
        let big = efd_from_contour(&dense_square(2.0, 64), 16).unwrap();
        let norm = normalize_shape(&big).unwrap();
        let c = contour_from_efd(&norm, 64);
        assert!((c.half_extent() - 1.0).abs() < 1e-12);
        // corners of the truncated series land close to ±1
        let max_x = c.points().iter().map(|p| p[0]).fold(f64::MIN, f64::max);
        assert!((max_x - 1.0).abs() < 0.02);
        let again = normalize_shape(&norm).unwrap();
        for (a, b) in norm.coeffs().iter().zip(again.coeffs()) {
            for j in 0..4 {
                assert!((a[j] - b[j]).abs() < 1e-9);
            }
        }
        assert!(matches!(normalize_shape(&EfdShape::zeros(3)), Err(EfdError::DegenerateContour(_))));
    }

    #[test]
    fn symmetry_examples() {
        let square = efd_from_contour(&dense_square(1.0, 64), 16).unwrap();
        assert_eq!(symmetry_order(&square, DEFAULT_SYMMETRY_THRESHOLD), 4);
        // analytic ellipse: A1 = a, D1 = b → complex exponents {1, -1}
        let ellipse = EfdShape::new(vec![[1.0, 0.0, 0.0, 0.5]]).unwrap();
        assert_eq!(symmetry_order(&ellipse, DEFAULT_SYMMETRY_THRESHOLD), 2);
        let circle_shape = EfdShape::new(vec![[1.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(symmetry_order(&circle_shape, DEFAULT_SYMMETRY_THRESHOLD), 1);
        // clockwise square
        let cw = efd_from_contour(
            &Contour::new(dense_square(1.0, 64).points().iter().rev().copied().collect()).unwrap(),
            16,
        )
        .unwrap();
        assert_eq!(symmetry_order(&cw, DEFAULT_SYMMETRY_THRESHOLD), 4);
    }

    #[test]
    fn serde_schema() {
        let s = EfdShape::new(vec![[1.0, 0.0, 0.0, 1.0], [0.1, 0.2, 0.3, 0.4]]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"n":2,"coeffs":[[1.0,0.0,0.0,1.0],[0.1,0.2,0.3,0.4]]}"#);
        let back: EfdShape = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<EfdShape>(r#"{"n":3,"coeffs":[[1,0,0,1]]}"#).is_err());
    }

    #[test]
    fn simple_polygon_check() {
        assert!(is_simple_polygon(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]));
        assert!(!is_simple_polygon(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]));
    }

    #[test]
    fn orientation_follows_rotation_modulo_symmetry() {
        let bank = crate::generator::builtin_bank();
        // Ellipse, heart, square.
        for (shape, period) in bank.shapes().iter().zip([PI, TAU, PI / 2.0]) {
            let base = orientation(shape, DEFAULT_SYMMETRY_THRESHOLD);
            for a in [0.3, 1.0, 2.5, -2.0] {
                let diff = orientation(&shape.rotated(a), DEFAULT_SYMMETRY_THRESHOLD) - base - a;
                let off = diff.rem_euclid(period);
                assert!(off.min(period - off) < 1e-9, "period {period}: diff {diff}");
            }
            let canonical = shape.rotated(-base);
            assert!(orientation(&canonical, DEFAULT_SYMMETRY_THRESHOLD).abs() < 1e-9);
        }
    }

    #[test]
    fn orientation_ignores_starting_point() {
        let shape = crate::generator::builtin_bank().shapes()[1].clone();
        let mut pts = contour_from_efd(&shape, 64).points().to_vec();
        pts.rotate_left(11);
        let shifted = efd_from_samples(&pts, shape.harmonics()).unwrap();
        assert!((orientation(&shifted, 0.05) - orientation(&shape, 0.05)).abs() < 1e-9);
    }
}
