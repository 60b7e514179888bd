//! Planar alpha shapes on top of a Bowyer-Watson Delaunay triangulation.
//!
//! The alpha shape keeps every Delaunay triangle whose circumradius is at most
//! `alpha`; the region is the union of kept triangles. For large `alpha` this
//! equals the convex hull, for small `alpha` it shrinks and can expose
//! concavities of the point set.

use crate::error::{Error, Result};
use rand::Rng;

const EPS_INSIDE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Triangulation {
    pub points: Vec<[f64; 2]>,
    /// CCW-oriented vertex index triples.
    pub triangles: Vec<[usize; 3]>,
    pub circumradii: Vec<f64>,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Circumcenter and squared circumradius; `None` for degenerate triangles.
fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<([f64; 2], f64)> {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d.abs() < 1e-300 {
        return None;
    }
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let c2 = c[0] * c[0] + c[1] * c[1];
    let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
    let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
    let center = [ux, uy];
    Some((center, dist2(center, a)))
}

/// Bowyer-Watson incremental Delaunay triangulation.
///
/// Exact duplicates (within 1e-12) are dropped. Returns an error when fewer
/// than three distinct, non-collinear points remain.
pub fn delaunay(input: &[[f64; 2]]) -> Result<Triangulation> {
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(input.len());
    for &p in input {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::Contract("triangulation input contains non-finite point".into()));
        }
        if points.iter().all(|&q| dist2(p, q) > 1e-24) {
            points.push(p);
        }
    }
    if points.len() < 3 {
        return Err(Error::DegenerateRegion(format!(
            "need at least 3 distinct points, got {}",
            points.len()
        )));
    }

    // Super-triangle comfortably containing everything.
    let (mut min_x, mut min_y, mut max_x, mut max_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &points {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1.0);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    let m = 50.0 * span;
    let n = points.len();
    let mut all = points.clone();
    all.push([cx - 2.0 * m, cy - m]);
    all.push([cx + 2.0 * m, cy - m]);
    all.push([cx, cy + 2.0 * m]);

    // Triangle soup with cached circumcircles.
    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    let mut circles: Vec<([f64; 2], f64)> = vec![circumcircle(all[n], all[n + 1], all[n + 2])
        .expect("super-triangle is non-degenerate")];

    for pi in 0..n {
        let p = all[pi];
        let mut bad: Vec<usize> = Vec::new();
        for (ti, circle) in circles.iter().enumerate() {
            if dist2(p, circle.0) <= circle.1 * (1.0 + 1e-12) {
                bad.push(ti);
            }
        }
        // Boundary of the cavity: edges that belong to exactly one bad triangle.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &ti in &bad {
            let t = tris[ti];
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                if let Some(pos) = edges.iter().position(|&(a, b)| (a, b) == key) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(key);
                }
            }
        }
        // Remove bad triangles (descending index keeps swap_remove valid).
        bad.sort_unstable_by(|a, b| b.cmp(a));
        for ti in bad {
            tris.swap_remove(ti);
            circles.swap_remove(ti);
        }
        for (a, b) in edges {
            if let Some(c) = circumcircle(all[a], all[b], p) {
                tris.push([a, b, pi]);
                circles.push(c);
            }
        }
    }

    // Drop triangles that touch the super-triangle and orient CCW.
    let mut triangles = Vec::new();
    let mut circumradii = Vec::new();
    for t in tris {
        if t.iter().any(|&v| v >= n) {
            continue;
        }
        let (a, b, c) = (all[t[0]], all[t[1]], all[t[2]]);
        let area2 = cross(a, b, c);
        let oriented = if area2 >= 0.0 { t } else { [t[0], t[2], t[1]] };
        let radius = circumcircle(a, b, c)
            .map(|(_, r2)| r2.sqrt())
            .unwrap_or(f64::MAX);
        triangles.push(oriented);
        circumradii.push(radius);
    }
    if triangles.is_empty() {
        return Err(Error::DegenerateRegion(
            "points are collinear; no triangulation exists".into(),
        ));
    }
    Ok(Triangulation {
        points,
        triangles,
        circumradii,
    })
}

/// Uniform cell index over triangle bounding boxes.
#[derive(Debug, Clone)]
struct CellGrid {
    x0: f64,
    y0: f64,
    inv_dx: f64,
    inv_dy: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl CellGrid {
    fn build(points: &[[f64; 2]], tris: &[[usize; 3]], kept: &[usize]) -> Self {
        let (mut min_x, mut min_y, mut max_x, mut max_y) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p[0]);
            max_x = max_x.max(p[0]);
            min_y = min_y.min(p[1]);
            max_y = max_y.max(p[1]);
        }
        let n = ((kept.len() as f64).sqrt().ceil() as usize).clamp(1, 128);
        let dx = ((max_x - min_x) / n as f64).max(1e-12);
        let dy = ((max_y - min_y) / n as f64).max(1e-12);
        let mut grid = CellGrid {
            x0: min_x,
            y0: min_y,
            inv_dx: 1.0 / dx,
            inv_dy: 1.0 / dy,
            nx: n,
            ny: n,
            cells: vec![Vec::new(); n * n],
        };
        for (slot, &ti) in kept.iter().enumerate() {
            let t = tris[ti];
            let xs = [points[t[0]][0], points[t[1]][0], points[t[2]][0]];
            let ys = [points[t[0]][1], points[t[1]][1], points[t[2]][1]];
            let (lo_x, hi_x) = (xs.iter().cloned().fold(f64::INFINITY, f64::min),
                                xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            let (lo_y, hi_y) = (ys.iter().cloned().fold(f64::INFINITY, f64::min),
                                ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            let ci0 = grid.cell_x(lo_x);
            let ci1 = grid.cell_x(hi_x);
            let cj0 = grid.cell_y(lo_y);
            let cj1 = grid.cell_y(hi_y);
            for ci in ci0..=ci1 {
                for cj in cj0..=cj1 {
                    grid.cells[cj * grid.nx + ci].push(slot as u32);
                }
            }
        }
        grid
    }

    fn cell_x(&self, x: f64) -> usize {
        (((x - self.x0) * self.inv_dx) as isize).clamp(0, self.nx as isize - 1) as usize
    }

    fn cell_y(&self, y: f64) -> usize {
        (((y - self.y0) * self.inv_dy) as isize).clamp(0, self.ny as isize - 1) as usize
    }

    fn candidates(&self, p: [f64; 2]) -> &[u32] {
        &self.cells[self.cell_y(p[1]) * self.nx + self.cell_x(p[0])]
    }
}

/// Alpha shape of a planar point set: kept Delaunay triangles plus a spatial
/// index for membership queries and interior sampling.
#[derive(Debug, Clone)]
pub struct AlphaShape {
    tri: Triangulation,
    alpha: f64,
    kept: Vec<usize>,
    cumulative_area: Vec<f64>,
    grid: CellGrid,
}

impl AlphaShape {
    /// Region at a fixed alpha. Errors when no triangle survives the filter.
    pub fn new(points: &[[f64; 2]], alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Contract(format!("alpha must be positive, got {alpha}")));
        }
        let tri = delaunay(points)?;
        Self::from_triangulation(tri, alpha)
    }

    fn from_triangulation(tri: Triangulation, alpha: f64) -> Result<Self> {
        let kept: Vec<usize> = (0..tri.triangles.len())
            .filter(|&i| tri.circumradii[i] <= alpha)
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyInterior(format!(
                "no triangle has circumradius <= alpha = {alpha}"
            )));
        }
        let areas: Vec<f64> = kept
            .iter()
            .map(|&ti| {
                let t = tri.triangles[ti];
                0.5 * cross(tri.points[t[0]], tri.points[t[1]], tri.points[t[2]]).abs()
            })
            .collect();
        let mut cumulative_area = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cumulative_area.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::EmptyInterior(
                "alpha shape has zero area; increase alpha".into(),
            ));
        }
        let grid = CellGrid::build(&tri.points, &tri.triangles, &kept);
        Ok(AlphaShape {
            tri,
            alpha,
            kept,
            cumulative_area,
            grid,
        })
    }

    /// Smallest alpha (over the finite set of circumradii) whose kept set is
    /// edge-connected and covers every input point.
    pub fn auto(points: &[[f64; 2]]) -> Result<Self> {
        let tri = delaunay(points)?;
        let n_tri = tri.triangles.len();
        let n_pts = tri.points.len();

        let mut order: Vec<usize> = (0..n_tri).collect();
        order.sort_by(|&a, &b| {
            tri.circumradii[a]
                .partial_cmp(&tri.circumradii[b])
                .expect("finite radii")
        });

        // Union-find over triangles, merged across shared edges.
        let mut parent: Vec<usize> = (0..n_tri).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }

        let mut edge_owner: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut covered = vec![false; n_pts];
        let mut n_covered = 0usize;
        let mut components = 0usize;
        let mut added = vec![false; n_tri];
        let mut chosen_alpha = None;

        for &ti in &order {
            added[ti] = true;
            components += 1;
            let t = tri.triangles[ti];
            for &v in &t {
                if !covered[v] {
                    covered[v] = true;
                    n_covered += 1;
                }
            }
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                if let Some(&other) = edge_owner.get(&key) {
                    let (ra, rb) = (find(&mut parent, ti), find(&mut parent, other));
                    if ra != rb {
                        parent[ra] = rb;
                        components -= 1;
                    }
                } else {
                    edge_owner.insert(key, ti);
                }
            }
            if n_covered == n_pts && components == 1 {
                chosen_alpha = Some(tri.circumradii[ti]);
                break;
            }
        }

        let alpha = chosen_alpha.ok_or_else(|| {
            Error::DegenerateRegion("no alpha yields a connected covering region".into())
        })?;
        Self::from_triangulation(tri, alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn area(&self) -> f64 {
        *self.cumulative_area.last().expect("nonempty")
    }

    pub fn triangulation(&self) -> &Triangulation {
        &self.tri
    }

    pub fn kept_triangle_count(&self) -> usize {
        self.kept.len()
    }

    fn triangle_contains(&self, slot: usize, p: [f64; 2]) -> bool {
        let t = self.tri.triangles[self.kept[slot]];
        let (a, b, c) = (self.tri.points[t[0]], self.tri.points[t[1]], self.tri.points[t[2]]);
        cross(a, b, p) >= -EPS_INSIDE
            && cross(b, c, p) >= -EPS_INSIDE
            && cross(c, a, p) >= -EPS_INSIDE
    }

    /// Closed-region membership test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.grid
            .candidates(p)
            .iter()
            .any(|&slot| self.triangle_contains(slot as usize, p))
    }

    /// Uniform sample from the region interior (area-weighted triangle pick).
    pub fn sample_interior<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let total = self.area();
        let target = rng.gen_range(0.0..total);
        let slot = self
            .cumulative_area
            .partition_point(|&acc| acc < target)
            .min(self.kept.len() - 1);
        let t = self.tri.triangles[self.kept[slot]];
        let (a, b, c) = (self.tri.points[t[0]], self.tri.points[t[1]], self.tri.points[t[2]]);
        let mut u = rng.gen_range(0.0..1.0);
        let mut v = rng.gen_range(0.0..1.0);
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        [
            a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
            a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
        ]
    }

    /// Boundary edges (edges used by exactly one kept triangle), chained into
    /// ordered loops for export.
    pub fn boundary_loops(&self) -> Vec<Vec<[f64; 2]>> {
        use std::collections::HashMap;
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut directed: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for &ti in &self.kept {
            let t = self.tri.triangles[ti];
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                *count.entry(key).or_insert(0) += 1;
                directed.insert(key, e);
            }
        }
        let mut next: HashMap<usize, Vec<usize>> = HashMap::new();
        for (key, cnt) in &count {
            if *cnt == 1 {
                let (a, b) = directed[key];
                next.entry(a).or_default().push(b);
            }
        }
        let mut loops = Vec::new();
        let mut starts: Vec<usize> = next.keys().cloned().collect();
        starts.sort_unstable();
        for start in starts {
            if next.get(&start).map_or(true, |v| v.is_empty()) {
                continue;
            }
            let mut chain = vec![start];
            let mut cur = start;
            while let Some(list) = next.get_mut(&cur) {
                if list.is_empty() {
                    break;
                }
                let nxt = list.pop().expect("nonempty");
                chain.push(nxt);
                cur = nxt;
                if cur == start {
                    break;
                }
            }
            if chain.len() > 2 {
                loops.push(chain.iter().map(|&i| self.tri.points[i]).collect());
            }
        }
        loops
    }
}

/// Convex hull via Andrew's monotone chain, CCW, without collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap().then(a[1].partial_cmp(&b[1]).unwrap()));
    pts.dedup_by(|a, b| dist2(*a, *b) <= 1e-24);
    if pts.len() < 3 {
        return pts;
    }
    let half_chain = |iter: &mut dyn Iterator<Item = [f64; 2]>| {
        let mut chain: Vec<[f64; 2]> = Vec::new();
        for p in iter {
            while chain.len() >= 2 && cross(chain[chain.len() - 2], chain[chain.len() - 1], p) <= 0.0
            {
                chain.pop();
            }
            chain.push(p);
        }
        chain.pop();
        chain
    };
    let mut hull = half_chain(&mut pts.iter().cloned());
    hull.extend(half_chain(&mut pts.iter().rev().cloned()));
    hull
}

/// Closed membership test against a CCW convex polygon.
pub fn hull_contains(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -EPS_INSIDE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^4) Delaunay oracle: a triple is a Delaunay triangle iff its
    /// circumcircle strictly contains no other point.
    fn brute_force_alpha_membership(points: &[[f64; 2]], alpha: f64, q: [f64; 2]) -> bool {
        let n = points.len();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let Some((center, r2)) = circumcircle(points[i], points[j], points[k]) else {
                        continue;
                    };
                    let empty = (0..n)
                        .filter(|&m| m != i && m != j && m != k)
                        .all(|m| dist2(points[m], center) >= r2 * (1.0 - 1e-12));
                    if !empty || r2.sqrt() > alpha {
                        continue;
                    }
                    let (a, b, c) = (points[i], points[j], points[k]);
                    let (a, b, c) = if cross(a, b, c) >= 0.0 { (a, b, c) } else { (a, c, b) };
                    if cross(a, b, q) >= -EPS_INSIDE
                        && cross(b, c, q) >= -EPS_INSIDE
                        && cross(c, a, q) >= -EPS_INSIDE
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn square_at_large_alpha_is_convex_hull() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let shape = AlphaShape::new(&pts, 1e6).unwrap();
        assert!(shape.contains([0.5, 0.5]));
        assert!(!shape.contains([2.0, 2.0]));
        assert!((shape.area() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(
            delaunay(&[[0.0, 0.0], [1.0, 1.0]]),
            Err(Error::DegenerateRegion(_))
        ));
        let collinear: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(delaunay(&collinear), Err(Error::DegenerateRegion(_))));
        let dup = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        assert!(delaunay(&dup).is_err());
    }

    fn c_shaped_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
        // Annulus section: radius in [1, 2], angle in [45, 315] degrees.
        (0..n)
            .map(|_| {
                let r = rng.gen_range(1.0..2.0);
                let a = rng.gen_range(0.25 * std::f64::consts::PI..1.75 * std::f64::consts::PI);
                [r * a.cos(), r * a.sin()]
            })
            .collect()
    }

    #[test]
    fn c_shape_small_alpha_excludes_cavity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts = c_shaped_cloud(&mut rng, 45);
        let shape = AlphaShape::new(&pts, 0.6).unwrap();
        // The annulus hole center is excluded at small alpha...
        assert!(!shape.contains([0.0, 0.0]));
        // ...but included once alpha is large enough to bridge it.
        let hull_like = AlphaShape::new(&pts, 1e6).unwrap();
        assert!(hull_like.contains([0.0, 0.0]));
    }

    #[test]
    fn membership_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..10 {
            let pts: Vec<[f64; 2]> = if case % 2 == 0 {
                (0..30)
                    .map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
                    .collect()
            } else {
                c_shaped_cloud(&mut rng, 40)
            };
            let alpha = rng.gen_range(0.5..3.0);
            let Ok(shape) = AlphaShape::new(&pts, alpha) else {
                continue;
            };
            for _ in 0..200 {
                let q = [rng.gen_range(-3.5..3.5), rng.gen_range(-3.5..3.5)];
                let got = shape.contains(q);
                let want = brute_force_alpha_membership(&pts, alpha, q);
                assert_eq!(got, want, "disagreement at {q:?} (alpha = {alpha})");
            }
        }
    }

    #[test]
    fn monotone_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let pts: Vec<[f64; 2]> = (0..40)
                .map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
                .collect();
            let a1 = rng.gen_range(0.4..1.0);
            let a2 = a1 + rng.gen_range(0.2..2.0);
            let (Ok(small), Ok(big)) = (AlphaShape::new(&pts, a1), AlphaShape::new(&pts, a2))
            else {
                continue;
            };
            for gx in 0..40 {
                for gy in 0..40 {
                    let q = [-3.5 + 7.0 * gx as f64 / 39.0, -3.5 + 7.0 * gy as f64 / 39.0];
                    if small.contains(q) {
                        assert!(big.contains(q));
                    }
                }
            }
        }
    }

    #[test]
    fn auto_alpha_covers_and_connects() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Two clusters joined by a sparse bridge force a nontrivial alpha.
        let mut pts: Vec<[f64; 2]> = (0..25)
            .map(|_| [rng.gen_range(-1.0..0.0), rng.gen_range(-0.5..0.5)])
            .collect();
        pts.extend((0..25).map(|_| [rng.gen_range(3.0..4.0), rng.gen_range(-0.5..0.5)]));
        pts.push([1.5, 0.0]);
        let shape = AlphaShape::auto(&pts).unwrap();
        for &p in &pts {
            assert!(shape.contains(p), "auto alpha must cover every input point");
        }
    }

    #[test]
    fn interior_samples_are_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = c_shaped_cloud(&mut rng, 60);
        let shape = AlphaShape::auto(&pts).unwrap();
        for _ in 0..500 {
            let p = shape.sample_interior(&mut rng);
            assert!(shape.contains(p));
        }
    }

    #[test]
    fn hull_agreement_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let pts: Vec<[f64; 2]> = (0..30)
                .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
                .collect();
            let shape = AlphaShape::new(&pts, 1e9).unwrap();
            let hull = convex_hull(&pts);
            for gx in 0..50 {
                for gy in 0..50 {
                    let q = [-2.2 + 4.4 * gx as f64 / 49.0, -2.2 + 4.4 * gy as f64 / 49.0];
                    assert_eq!(shape.contains(q), hull_contains(&hull, q));
                }
            }
        }
    }
}
