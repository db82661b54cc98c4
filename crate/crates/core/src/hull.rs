//! Distance from a point to the convex hull of a finite point set.
//!
//! The projection solves min ‖Σ αᵢ pᵢ − x‖ over the weight simplex with a
//! min-norm-point active-set method: alternate a linear minimization step that
//! adds the most improving vertex with affine least-squares solves over the
//! current support, dropping vertices whose weight hits zero. The support
//! stays small (at most dim+1 after each cycle), every affine solve is exact,
//! and the loop terminates once no vertex improves the current point, so the
//! result is accurate to linear-algebra roundoff rather than to a first-order
//! gap. Neighbor queries use an exact kd-tree with (distance, index)
//! lexicographic ordering so ties resolve to the lowest entry index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Result of projecting a query point onto a hull.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// Euclidean distance from the query to the hull.
    pub distance: f64,
    /// Convex weights over the input points (sum to 1).
    pub weights: Vec<f64>,
}

/// Iteration cap for the projection. The method terminates far earlier on
/// well-posed inputs; the cap guards degenerate point sets.
pub const DEFAULT_MAX_ITER: usize = 200;
/// Relative tolerance on the optimality gap ‖y‖² − min⟨y, qᵢ⟩.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Projects `query` onto the convex hull of `points` (flat, `m × dim`
/// row-major). Requires at least one point.
pub fn min_norm_point(
    dim: usize,
    points: &[f64],
    query: &[f64],
    max_iter: usize,
    tol: f64,
) -> ProjectionResult {
    let m = points.len() / dim;
    assert!(m >= 1 && points.len() == m * dim && query.len() == dim);

    // Shift so the problem becomes min ‖Σ αᵢ qᵢ‖ over the simplex.
    let mut q = vec![0.0; m * dim];
    for i in 0..m {
        for j in 0..dim {
            q[i * dim + j] = points[i * dim + j] - query[j];
        }
    }
    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let row = |i: usize| &q[i * dim..(i + 1) * dim];

    let scale2 = (0..m).map(|i| norm2(row(i))).fold(0.0f64, f64::max);
    if scale2 == 0.0 {
        let mut weights = vec![0.0; m];
        weights[0] = 1.0;
        return ProjectionResult { distance: 0.0, weights };
    }

    // Start from the single closest vertex (lowest index on ties).
    let mut best = 0;
    let mut best_n2 = norm2(row(0));
    for i in 1..m {
        let n2 = norm2(row(i));
        if n2 < best_n2 {
            best = i;
            best_n2 = n2;
        }
    }
    let mut corral: Vec<usize> = vec![best];
    let mut w: Vec<f64> = vec![1.0];
    let mut y: Vec<f64> = row(best).to_vec();

    let gap_tol = tol.max(1e-14) * scale2.max(1.0);
    let mut stalled = false;

    for _ in 0..max_iter {
        let y2 = norm2(&y);
        // Linear minimization: vertex with the smallest inner product with y.
        let mut j = 0;
        let mut min_dot = f64::INFINITY;
        for i in 0..m {
            let dot: f64 = y.iter().zip(row(i)).map(|(a, b)| a * b).sum();
            if dot < min_dot {
                min_dot = dot;
                j = i;
            }
        }
        if min_dot >= y2 - gap_tol || stalled {
            break;
        }
        if corral.contains(&j) {
            // Numerical stall: the best vertex is already in the support.
            break;
        }
        corral.push(j);
        w.push(0.0);

        // Minor cycles: move to the affine-optimal weights over the support,
        // dropping vertices whose weight would turn negative.
        loop {
            let alpha = match affine_min_norm(dim, &q, &corral) {
                Some(a) => a,
                None => {
                    stalled = true;
                    break;
                }
            };
            if alpha.iter().all(|&a| a >= -1e-14) {
                w = alpha.iter().map(|&a| a.max(0.0)).collect();
                break;
            }
            // Largest feasible step from w toward alpha.
            let mut theta = 1.0f64;
            for (wi, ai) in w.iter().zip(&alpha) {
                if *ai < 0.0 && wi - ai > 0.0 {
                    theta = theta.min(wi / (wi - ai));
                }
            }
            let mut next: Vec<f64> = w
                .iter()
                .zip(&alpha)
                .map(|(wi, ai)| wi + theta * (ai - wi))
                .collect();
            // Drop zeroed vertices (keep at least one).
            let mut keep: Vec<bool> = next.iter().map(|&v| v > 1e-12).collect();
            if keep.iter().all(|k| !k) {
                let argmax = next
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                keep[argmax] = true;
            }
            let mut new_corral = Vec::with_capacity(corral.len());
            let mut new_w = Vec::with_capacity(corral.len());
            for i in 0..corral.len() {
                if keep[i] {
                    new_corral.push(corral[i]);
                    new_w.push(next[i].max(0.0));
                }
            }
            corral = new_corral;
            next = new_w;
            let sum: f64 = next.iter().sum();
            if sum > 0.0 {
                for v in &mut next {
                    *v /= sum;
                }
            }
            w = next;
            if corral.len() == 1 {
                break;
            }
        }

        // Recompute the current point from the support.
        for v in &mut y {
            *v = 0.0;
        }
        for (ci, wi) in corral.iter().zip(&w) {
            for (yv, qv) in y.iter_mut().zip(row(*ci)) {
                *yv += wi * qv;
            }
        }
    }

    let mut weights = vec![0.0; m];
    for (ci, wi) in corral.iter().zip(&w) {
        weights[*ci] += wi;
    }
    let dist2 = norm2(&y);
    let distance = if dist2 <= 1e-24 * scale2 { 0.0 } else { dist2.sqrt() };
    ProjectionResult { distance, weights }
}

/// Minimizes ‖Σ αᵢ q_{cᵢ}‖² subject to Σ αᵢ = 1 (no sign constraint) via the
/// KKT system. Returns None when the system is numerically singular even
/// after a small ridge.
fn affine_min_norm(dim: usize, q: &[f64], corral: &[usize]) -> Option<Vec<f64>> {
    let s = corral.len();
    let n = s + 1;
    let mut gram = vec![0.0; s * s];
    let mut trace = 0.0;
    for a in 0..s {
        for b in a..s {
            let pa = &q[corral[a] * dim..corral[a] * dim + dim];
            let pb = &q[corral[b] * dim..corral[b] * dim + dim];
            let dot: f64 = pa.iter().zip(pb).map(|(x, y)| x * y).sum();
            gram[a * s + b] = dot;
            gram[b * s + a] = dot;
            if a == b {
                trace += dot;
            }
        }
    }
    for ridge in [0.0, 1e-12 * (trace / s as f64).max(1e-30)] {
        let mut mat = vec![0.0; n * n];
        let mut rhs = vec![0.0; n];
        for a in 0..s {
            for b in 0..s {
                mat[a * n + b] = gram[a * s + b];
            }
            mat[a * n + a] += ridge;
            mat[a * n + s] = 1.0;
            mat[s * n + a] = 1.0;
        }
        rhs[s] = 1.0;
        if let Some(sol) = solve_dense(&mut mat, &mut rhs, n) {
            return Some(sol[..s].to_vec());
        }
    }
    None
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_dense(mat: &mut [f64], rhs: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let scale = mat.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if mat[r * n + col].abs() > mat[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if mat[pivot * n + col].abs() < 1e-13 * scale {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                mat.swap(col * n + c, pivot * n + c);
            }
            rhs.swap(col, pivot);
        }
        let inv = 1.0 / mat[col * n + col];
        for r in col + 1..n {
            let f = mat[r * n + col] * inv;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                mat[r * n + c] -= f * mat[col * n + c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut sol = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= mat[r * n + c] * sol[c];
        }
        sol[r] = acc / mat[r * n + r];
    }
    Some(sol)
}

/// Exact k-nearest-neighbor index over normalized coordinates.
///
/// Coordinates are pre-multiplied by `scales`, so queries and distances live
/// in the normalized metric. Results are ordered by (distance², index), which
/// makes tie-breaking by lowest entry index explicit and deterministic.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    scales: Vec<f64>,
    points: Vec<f64>,
    nodes: Vec<KdNode>,
    order: Vec<u32>,
}

#[derive(Debug, Clone)]
struct KdNode {
    axis: u32,
    split: f64,
    /// Child node indices; -1 marks a leaf scanning order[start..end].
    left: i32,
    right: i32,
    start: u32,
    end: u32,
}

const LEAF_SIZE: usize = 16;

#[derive(Debug, PartialEq)]
struct Neighbor {
    d2: f64,
    idx: u32,
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .expect("finite distances")
            .then(self.idx.cmp(&other.idx))
    }
}

impl NeighborIndex {
    /// Builds the index over `m × dim` raw coordinates.
    pub fn build(dim: usize, raw: &[f64], scales: &[f64]) -> Self {
        assert_eq!(scales.len(), dim);
        let m = if dim == 0 { 0 } else { raw.len() / dim };
        let mut points = vec![0.0; m * dim];
        for i in 0..m {
            for j in 0..dim {
                points[i * dim + j] = raw[i * dim + j] * scales[j];
            }
        }
        let mut index = Self {
            dim,
            scales: scales.to_vec(),
            points,
            nodes: Vec::new(),
            order: (0..m as u32).collect(),
        };
        if m > LEAF_SIZE {
            let mut order = std::mem::take(&mut index.order);
            let root = index.build_node(&mut order, 0, m);
            debug_assert_eq!(root, 0);
            index.order = order;
        }
        index
    }

    fn build_node(&mut self, order: &mut [u32], start: usize, end: usize) -> i32 {
        let node_id = self.nodes.len() as i32;
        self.nodes.push(KdNode {
            axis: 0,
            split: 0.0,
            left: -1,
            right: -1,
            start: start as u32,
            end: end as u32,
        });
        let len = end - start;
        if len <= LEAF_SIZE {
            return node_id;
        }
        // Split on the axis with the largest spread over this cell.
        let mut axis = 0;
        let mut best_spread = -1.0;
        for j in 0..self.dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &p in &order[start..end] {
                let v = self.points[p as usize * self.dim + j];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = j;
            }
        }
        if best_spread <= 0.0 {
            // All points in this cell coincide; keep it as a leaf.
            return node_id;
        }
        let mid = start + len / 2;
        let dim = self.dim;
        let points = &self.points;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            let va = points[a as usize * dim + axis];
            let vb = points[b as usize * dim + axis];
            va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
        });
        let split = self.points[order[mid] as usize * dim + axis];
        let left = self.build_node(order, start, mid);
        let right = self.build_node(order, mid, end);
        let node = &mut self.nodes[node_id as usize];
        node.axis = axis as u32;
        node.split = split;
        node.left = left;
        node.right = right;
        node_id
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 { 0 } else { self.points.len() / self.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn normalized_point(&self, idx: usize) -> &[f64] {
        &self.points[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn normalize_query(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.scales).map(|(v, s)| v * s).collect()
    }

    /// Indices of the k nearest stored points to the raw-coordinate query,
    /// ordered by (distance, index) ascending.
    pub fn k_nearest(&self, raw_query: &[f64], k: usize) -> Vec<u32> {
        let q = self.normalize_query(raw_query);
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        if self.nodes.is_empty() {
            for idx in 0..self.len() as u32 {
                self.offer(&q, idx, k, &mut heap);
            }
        } else {
            self.search(0, &q, k, &mut heap);
        }
        let mut out: Vec<Neighbor> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|n| n.idx).collect()
    }

    fn offer(&self, q: &[f64], idx: u32, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        let p = self.normalized_point(idx as usize);
        let mut d2 = 0.0;
        for (a, b) in q.iter().zip(p) {
            let d = a - b;
            d2 += d * d;
        }
        let cand = Neighbor { d2, idx };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("non-empty heap") {
            heap.pop();
            heap.push(cand);
        }
    }

    fn search(&self, node_id: i32, q: &[f64], k: usize, heap: &mut BinaryHeap<Neighbor>) {
        let node = &self.nodes[node_id as usize];
        if node.left < 0 {
            for &idx in &self.order[node.start as usize..node.end as usize] {
                self.offer(q, idx, k, heap);
            }
            return;
        }
        let delta = q[node.axis as usize] - node.split;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, k, heap);
        // The far side can still hold an equal-distance, lower-index point,
        // so prune only on a strictly larger axis gap.
        let prune = heap.len() == k && delta * delta > heap.peek().expect("full heap").d2;
        if !prune {
            self.search(far, q, k, heap);
        }
    }

    /// Reference linear scan; used to validate the kd-tree path.
    pub fn k_nearest_brute(&self, raw_query: &[f64], k: usize) -> Vec<u32> {
        let q = self.normalize_query(raw_query);
        let k = k.min(self.len());
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        for idx in 0..self.len() as u32 {
            self.offer(&q, idx, k, &mut heap);
        }
        let mut out: Vec<Neighbor> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|n| n.idx).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn project(dim: usize, pts: &[f64], q: &[f64]) -> ProjectionResult {
        min_norm_point(dim, pts, q, DEFAULT_MAX_ITER, DEFAULT_TOL)
    }

    #[test]
    fn single_point_distance() {
        let r = project(2, &[1.0, 2.0], &[4.0, 6.0]);
        assert!((r.distance - 5.0).abs() < 1e-12);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn query_equal_to_vertex_is_exactly_zero() {
        let pts = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let r = project(2, &pts, &[1.0, 0.0]);
        assert_eq!(r.distance, 0.0);
    }

    #[test]
    fn segment_projection_interior() {
        // Segment from (0,0) to (2,0); query above the midpoint.
        let pts = [0.0, 0.0, 2.0, 0.0];
        let r = project(2, &pts, &[1.0, 3.0]);
        assert!((r.distance - 3.0).abs() < 1e-12);
        assert!((r.weights[0] - 0.5).abs() < 1e-9);
        assert!((r.weights[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn segment_projection_clamps_to_endpoint() {
        let pts = [0.0, 0.0, 2.0, 0.0];
        let r = project(2, &pts, &[5.0, 4.0]);
        assert!((r.distance - 5.0).abs() < 1e-12);
        assert!((r.weights[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn triangle_interior_query_has_zero_distance() {
        let pts = [0.0, 0.0, 4.0, 0.0, 0.0, 4.0];
        let r = project(2, &pts, &[1.0, 1.0]);
        assert!(r.distance <= 1e-10, "distance {}", r.distance);
    }

    #[test]
    fn duplicate_points_are_harmless() {
        let pts = [1.0, 1.0, 1.0, 1.0, 3.0, 1.0];
        let r = project(2, &pts, &[2.0, 0.0]);
        assert!((r.distance - 1.0).abs() < 1e-10);
    }

    #[test]
    fn weights_reconstruct_projection() {
        let mut rng = crate::rng::stream(11, &[99]);
        for _ in 0..50 {
            let dim = 3;
            let m = 8;
            let pts: Vec<f64> = (0..m * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let r = project(dim, &pts, &q);
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let mut proj = vec![0.0; dim];
            for i in 0..m {
                for j in 0..dim {
                    proj[j] += r.weights[i] * pts[i * dim + j];
                }
            }
            let d: f64 = proj
                .iter()
                .zip(&q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(
                (d - r.distance).abs() < 1e-8,
                "reconstructed {} reported {}",
                d,
                r.distance
            );
        }
    }

    #[test]
    fn kd_tree_matches_linear_scan() {
        let mut rng = crate::rng::stream(5, &[7]);
        for trial in 0..20 {
            let dim = 2 + trial % 4;
            let m = 5 + (trial * 37) % 400;
            let raw: Vec<f64> = (0..m * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scales: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..2.0)).collect();
            let index = NeighborIndex::build(dim, &raw, &scales);
            for _ in 0..20 {
                let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let k = 1 + (rng.gen::<u32>() as usize) % 40;
                assert_eq!(index.k_nearest(&q, k), index.k_nearest_brute(&q, k));
            }
        }
    }

    #[test]
    fn kd_tree_ties_resolve_to_lowest_index() {
        // Four copies of the same point plus one farther away.
        let raw = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 5.0];
        let index = NeighborIndex::build(2, &raw, &[1.0, 1.0]);
        assert_eq!(index.k_nearest(&[1.0, 1.0], 2), vec![0, 1]);
        assert_eq!(index.k_nearest(&[0.0, 0.0], 3), vec![0, 1, 2]);
    }
}
