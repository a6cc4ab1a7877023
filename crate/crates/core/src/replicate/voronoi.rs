//! Voronoi cells clipped to a rectangle, by successive half-plane clipping.
//! Quadratic in the number of sites, which is fine for persistence diagrams.

use rand::Rng as _;

use crate::cubical::PpdPoint;
use crate::rng::Rng;

pub(crate) type Polygon = Vec<[f64; 2]>;

/// Keep the part of a convex polygon where `a . u <= c`.
fn clip(poly: &[[f64; 2]], a: [f64; 2], c: f64) -> Polygon {
    let side = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let (sp, sq) = (side(&p), side(&q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

pub(crate) fn area(poly: &[[f64; 2]]) -> f64 {
    let mut twice = 0.0;
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        twice += p[0] * q[1] - q[0] * p[1];
    }
    twice.abs() / 2.0
}

/// Voronoi cell of every site within the box `[x0, x1] x [y0, y1]`.
/// Sites must be distinct.
pub(crate) fn clipped_cells(sites: &[PpdPoint], bounds: [f64; 4]) -> Vec<Polygon> {
    let [x0, x1, y0, y1] = bounds;
    let rect: Polygon = vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    sites
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut cell = rect.clone();
            for (j, t) in sites.iter().enumerate() {
                if i == j || cell.is_empty() {
                    continue;
                }
                // |u - s|^2 <= |u - t|^2  <=>  (t - s) . u <= (|t|^2 - |s|^2) / 2
                let a = [t.birth - s.birth, t.lifetime - s.lifetime];
                let c = (t.birth * t.birth + t.lifetime * t.lifetime - s.birth * s.birth - s.lifetime * s.lifetime) / 2.0;
                cell = clip(&cell, a, c);
            }
            cell
        })
        .collect()
}

/// Uniform point in a convex polygon, via a fan triangulation.
pub(crate) fn sample_in_polygon(poly: &[[f64; 2]], rng: &mut Rng) -> [f64; 2] {
    let o = poly[0];
    let tri_area = |k: usize| {
        let (p, q) = (poly[k], poly[k + 1]);
        ((p[0] - o[0]) * (q[1] - o[1]) - (q[0] - o[0]) * (p[1] - o[1])).abs() / 2.0
    };
    let total: f64 = (1..poly.len() - 1).map(tri_area).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut k = 1;
    while k < poly.len() - 2 && pick > tri_area(k) {
        pick -= tri_area(k);
        k += 1;
    }
    let (p, q) = (poly[k], poly[k + 1]);
    let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
    if r1 + r2 > 1.0 {
        r1 = 1.0 - r1;
        r2 = 1.0 - r2;
    }
    [o[0] + r1 * (p[0] - o[0]) + r2 * (q[0] - o[0]), o[1] + r1 * (p[1] - o[1]) + r2 * (q[1] - o[1])]
}
