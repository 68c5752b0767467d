//! Geometric kernels: rotations, normalization, neighbor search, farthest
//! point sampling, mesh surface sampling.
//!
//! Everything here is a pure function; randomness comes in as an explicit
//! [`crate::rng::Rng`]. Neighbor queries run through a small kd-tree with a
//! lexicographic `(distance, index)` ordering so ties resolve to the lowest
//! index and results match the O(n²) brute-force definition bit for bit.

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::rng::Rng;
use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;

pub type Point = Vector3<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    /// Validating constructor: rejects empty clouds and non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(Error::invalid(format!("non-finite coordinate at point {i}")));
        }
        Ok(Self { points })
    }

    pub(crate) fn from_points_unchecked(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Point::new(r[0], r[1], r[2])).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn centroid(&self) -> Point {
        let mut c = Point::zeros();
        for p in &self.points {
            c += p;
        }
        c / self.points.len() as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Single-axis rotation matrix, counterclockwise looking down the axis.
pub fn rotation_matrix_axis(axis: Axis, angle: f64) -> Result<Matrix3<f64>> {
    if !angle.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    let (s, c) = angle.sin_cos();
    Ok(match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    })
}

/// R_x(α)·R_y(α)·R_z(α): one angle, all three axes, in that product order.
pub fn composed_rotation(angle: f64) -> Result<Matrix3<f64>> {
    let rx = rotation_matrix_axis(Axis::X, angle)?;
    let ry = rotation_matrix_axis(Axis::Y, angle)?;
    let rz = rotation_matrix_axis(Axis::Z, angle)?;
    Ok(rx * ry * rz)
}

/// Center on the centroid and scale so the farthest point sits on the unit
/// sphere. Errors when every point coincides (zero radius).
pub fn normalize_unit_ball(cloud: &PointCloud) -> Result<PointCloud> {
    let c = cloud.centroid();
    let radius = cloud
        .points()
        .iter()
        .map(|p| (p - c).norm())
        .fold(0.0, f64::max);
    if radius == 0.0 {
        return Err(Error::DegenerateCloud(
            "all points coincide; unit-ball normalization undefined".into(),
        ));
    }
    Ok(PointCloud::from_points_unchecked(
        cloud.points().iter().map(|p| (p - c) / radius).collect(),
    ))
}

/// Mean distance from each point to its k nearest other points.
pub fn k_nearest_distances(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    k_nearest_distances_with_mode(cloud, k, ExecMode::default_mode())
}

pub fn k_nearest_distances_with_mode(
    cloud: &PointCloud,
    k: usize,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    let n = cloud.len();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k >= n {
        return Err(Error::invalid(format!("k = {k} must be smaller than the cloud size {n}")));
    }
    let tree = kdtree::KdTree::build(cloud.points());
    Ok(map_indexed(mode, n, |i| {
        let mut nn = tree.k_nearest(&cloud.points()[i], k, Some(i));
        nn.sort_unstable_by(kdtree::cmp_dist_idx);
        nn.iter().map(|&(d, _)| d).sum::<f64>() / k as f64
    }))
}

/// Greedy farthest point sampling: start index first, then repeatedly the
/// point maximizing the minimum distance to everything already chosen.
/// Ties go to the lowest index.
pub fn farthest_point_sampling(cloud: &PointCloud, w: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if w == 0 || w > n {
        return Err(Error::invalid(format!("anchor count {w} out of range 1..={n}")));
    }
    if start >= n {
        return Err(Error::invalid(format!("start index {start} out of range for {n} points")));
    }
    let pts = cloud.points();
    let mut chosen = Vec::with_capacity(w);
    chosen.push(start);
    let mut min_d2: Vec<f64> = pts.iter().map(|p| (p - pts[start]).norm_squared()).collect();
    while chosen.len() < w {
        let mut best = 0usize;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, &d2) in min_d2.iter().enumerate() {
            if d2 > best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        chosen.push(best);
        for (i, d2) in min_d2.iter_mut().enumerate() {
            let nd = (pts[i] - pts[best]).norm_squared();
            if nd < *d2 {
                *d2 = nd;
            }
        }
    }
    Ok(chosen)
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn face_area(&self, f: &[usize; 3]) -> f64 {
        let a = self.vertices[f[0]];
        let b = self.vertices[f[1]];
        let c = self.vertices[f[2]];
        (b - a).cross(&(c - a)).norm() * 0.5
    }
}

/// Uniform surface sampling: triangles weighted by area, barycentric
/// coordinates uniform in the triangle. Zero-area faces never get picked.
pub fn sample_mesh_surface(mesh: &TriangleMesh, k: usize, rng: &mut Rng) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        if f.iter().any(|&v| v >= mesh.vertices.len()) {
            return Err(Error::invalid(format!("face {fi} references a missing vertex")));
        }
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total <= 0.0 {
        return Err(Error::DegenerateMesh("total surface area is zero".into()));
    }
    let mut points = Vec::with_capacity(k);
    for _ in 0..k {
        let t = rng.random_range(0.0..total);
        let fi = cdf.partition_point(|&acc| acc <= t).min(mesh.faces.len() - 1);
        let f = &mesh.faces[fi];
        let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        let mut u: f64 = rng.random();
        let mut v: f64 = rng.random();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + u * (b - a) + v * (c - a));
    }
    PointCloud::new(points)
}

pub mod kdtree {
    //! Minimal exact kd-tree over `Vector3<f64>` points.
    //!
    //! Queries return `(euclidean distance, point index)` pairs ordered so
    //! that equal distances favor the lowest index — the same tie policy the
    //! brute-force oracles use, which keeps tree and brute results identical.

    use super::Point;
    use std::cmp::Ordering;

    pub fn cmp_dist_idx(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
    }

    struct Node {
        point_idx: usize,
        axis: usize,
        left: Option<Box<Node>>,
        right: Option<Box<Node>>,
    }

    pub struct KdTree<'a> {
        points: &'a [Point],
        root: Option<Box<Node>>,
    }

    impl<'a> KdTree<'a> {
        pub fn build(points: &'a [Point]) -> Self {
            let mut idx: Vec<usize> = (0..points.len()).collect();
            let root = build_node(points, &mut idx);
            KdTree { points, root }
        }

        /// Indices of the k nearest points to `query`, excluding `exclude`.
        pub fn k_nearest(&self, query: &Point, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
            // best: worst-first sorted vec acting as a bounded heap (k ≤ ~64 here)
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            if let Some(root) = &self.root {
                self.search(root, query, k, exclude, &mut best);
            }
            best
        }

        pub fn nearest_distance(&self, query: &Point) -> f64 {
            self.k_nearest(query, 1, None).first().map(|&(d, _)| d).unwrap_or(f64::INFINITY)
        }

        fn search(
            &self,
            node: &Node,
            query: &Point,
            k: usize,
            exclude: Option<usize>,
            best: &mut Vec<(f64, usize)>,
        ) {
            let p = &self.points[node.point_idx];
            if exclude != Some(node.point_idx) {
                let d = (query - p).norm();
                let cand = (d, node.point_idx);
                if best.len() < k {
                    let pos = best.partition_point(|e| cmp_dist_idx(e, &cand) == Ordering::Less);
                    best.insert(pos, cand);
                } else if cmp_dist_idx(&cand, best.last().unwrap()) == Ordering::Less {
                    best.pop();
                    let pos = best.partition_point(|e| cmp_dist_idx(e, &cand) == Ordering::Less);
                    best.insert(pos, cand);
                }
            }
            let diff = query[node.axis] - p[node.axis];
            let (near, far) = if diff < 0.0 {
                (&node.left, &node.right)
            } else {
                (&node.right, &node.left)
            };
            if let Some(n) = near {
                self.search(n, query, k, exclude, best);
            }
            // The far side may hold an equal-distance lower-index point, so
            // recurse on ties too (<=, not <).
            let worst = if best.len() < k { f64::INFINITY } else { best.last().unwrap().0 };
            if let Some(f) = far {
                if diff.abs() <= worst {
                    self.search(f, query, k, exclude, best);
                }
            }
        }
    }

    fn build_node(points: &[Point], idx: &mut [usize]) -> Option<Box<Node>> {
        if idx.is_empty() {
            return None;
        }
        // widest-spread axis keeps the tree balanced on skewed data
        let axis = {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for &i in idx.iter() {
                for a in 0..3 {
                    lo[a] = lo[a].min(points[i][a]);
                    hi[a] = hi[a].max(points[i][a]);
                }
            }
            let mut best = 0;
            for a in 1..3 {
                if hi[a] - lo[a] > hi[best] - lo[best] {
                    best = a;
                }
            }
            best
        };
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let point_idx = idx[mid];
        let (left, rest) = idx.split_at_mut(mid);
        let right = &mut rest[1..];
        Some(Box::new(Node {
            point_idx,
            axis,
            left: build_node(points, left),
            right: build_node(points, right),
        }))
    }
}
