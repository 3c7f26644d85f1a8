//! Ear-clipping triangulation of closed polygons.

use crate::efd::{polygon_signed_area, Point};

/// Triangles with area below this are dropped as degenerate.
pub(crate) const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TriangulationFailed;

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Inclusive point-in-triangle test for a counter-clockwise triangle.
fn in_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
}

/// Triangulates a closed polygon, returning counter-clockwise index triples
/// into `points`.
///
/// Ears are clipped strictly first (no other vertex inside or on the ear).
/// When no strict ear exists, as happens for slightly self-intersecting
/// blends, the most convex vertex is clipped instead so that fitting can
/// continue through mildly invalid shapes. Fails only when the polygon has
/// no area at all.
pub(crate) fn triangulate(points: &[Point]) -> Result<Vec<[usize; 3]>, TriangulationFailed> {
    let area = polygon_signed_area(points);
    if points.len() < 3 || !(area.abs() > MIN_TRIANGLE_AREA) {
        return Err(TriangulationFailed);
    }
    let mut ring: Vec<usize> = (0..points.len()).collect();
    if area < 0.0 {
        ring.reverse();
    }
    let mut out = Vec::with_capacity(points.len() - 2);
    let mut start = 0;
    while ring.len() > 3 {
        let n = ring.len();
        let ear = (0..n)
            .map(|k| (start + k) % n)
            .find(|&i| is_ear(points, &ring, i))
            .or_else(|| most_convex(points, &ring))
            .ok_or(TriangulationFailed)?;
        let (a, b, c) = (ring[(ear + n - 1) % n], ring[ear], ring[(ear + 1) % n]);
        if cross(points[a], points[b], points[c]) * 0.5 > MIN_TRIANGLE_AREA {
            out.push([a, b, c]);
        }
        ring.remove(ear);
        start = if ear == 0 { 0 } else { ear - 1 };
    }
    let (a, b, c) = (ring[0], ring[1], ring[2]);
    if cross(points[a], points[b], points[c]) * 0.5 > MIN_TRIANGLE_AREA {
        out.push([a, b, c]);
    }
    if out.is_empty() {
        return Err(TriangulationFailed);
    }
    Ok(out)
}

fn is_ear(points: &[Point], ring: &[usize], i: usize) -> bool {
    let n = ring.len();
    let (ia, ib, ic) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
    let (a, b, c) = (points[ia], points[ib], points[ic]);
    let turn = cross(a, b, c);
    if turn <= 0.0 {
        // Collinear or reflex. A collinear vertex can be dropped safely.
        return turn.abs() * 0.5 <= MIN_TRIANGLE_AREA && collinear_removable(a, b, c);
    }
    ring.iter().all(|&j| {
        if j == ia || j == ib || j == ic {
            return true;
        }
        let p = points[j];
        if p == a || p == b || p == c {
            return true;
        }
        !in_triangle(p, a, b, c)
    })
}

/// True when `b` lies between `a` and `c`, so removing it keeps the outline.
fn collinear_removable(a: Point, b: Point, c: Point) -> bool {
    let d = [c[0] - a[0], c[1] - a[1]];
    let t = (b[0] - a[0]) * d[0] + (b[1] - a[1]) * d[1];
    t >= 0.0 && t <= d[0] * d[0] + d[1] * d[1]
}

fn most_convex(points: &[Point], ring: &[usize]) -> Option<usize> {
    let n = ring.len();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        let turn = cross(points[ring[(i + n - 1) % n]], points[ring[i]], points[ring[(i + 1) % n]]);
        if turn > 0.0 && best.map_or(true, |(_, t)| turn > t) {
            best = Some((i, turn));
        }
    }
    best.map(|(i, _)| i)
}
