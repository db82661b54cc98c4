//! Independent reference implementations used by integration and acceptance
//! tests. Kept behind the `testutil` feature so production builds never link
//! them; deliberately written without sharing code with the solvers they
//! check.

use rand::Rng;

/// Exact distance from `query` to the convex hull of `points` (flat, row
/// major) by exhaustive face enumeration: every affinely independent support
/// has at most dim + 1 points, so solving the equality-constrained problem on
/// every subset up to that size and keeping the feasible candidates finds the
/// true minimizer. Exponential in the face count; for test-sized inputs only.
pub fn exact_hull_distance(dim: usize, points: &[f64], query: &[f64]) -> f64 {
    let n = points.len() / dim;
    assert!(n > 0 && points.len() == n * dim && query.len() == dim);
    // Shifted Gram matrix over all pairs.
    let q = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut dot = 0.0;
            for d in 0..dim {
                dot += (q(i)[d] - query[d]) * (q(j)[d] - query[d]);
            }
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }

    let mut best = f64::INFINITY;
    let k_max = (dim + 1).min(n);
    let mut subset = Vec::with_capacity(k_max);
    enumerate_subsets(n, k_max, &mut subset, &mut |s: &[usize]| {
        if let Some(d2) = subset_min_dist2(&gram, n, s) {
            if d2 < best {
                best = d2;
            }
        }
    });
    best.max(0.0).sqrt()
}

fn enumerate_subsets(
    n: usize,
    k_max: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    let start = current.last().map_or(0, |&l| l + 1);
    for i in start..n {
        current.push(i);
        visit(current);
        if current.len() < k_max {
            enumerate_subsets(n, k_max, current, visit);
        }
        current.pop();
    }
}

/// Squared distance achieved by the affine minimizer over the subset, or
/// None when the system is singular or the weights leave the simplex.
fn subset_min_dist2(gram: &[f64], n: usize, subset: &[usize]) -> Option<f64> {
    let k = subset.len();
    // Bordered system [G 1; 1^T 0] [alpha; mu] = [0; 1].
    let m = k + 1;
    let mut a = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (r, &i) in subset.iter().enumerate() {
        for (c, &j) in subset.iter().enumerate() {
            a[r * m + c] = gram[i * n + j];
        }
        a[r * m + k] = 1.0;
        a[k * m + r] = 1.0;
    }
    rhs[k] = 1.0;
    let sol = gaussian_solve(&mut a, &mut rhs, m)?;
    let alpha = &sol[..k];
    if alpha.iter().any(|&v| v < -1e-12) {
        return None;
    }
    // dist^2 = alpha^T G alpha.
    let mut d2 = 0.0;
    for (r, &i) in subset.iter().enumerate() {
        for (c, &j) in subset.iter().enumerate() {
            d2 += alpha[r] * alpha[c] * gram[i * n + j];
        }
    }
    Some(d2)
}

/// Partial-pivot Gaussian elimination; None when a pivot collapses.
fn gaussian_solve(a: &mut [f64], rhs: &mut [f64], m: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for col in 0..m {
        let mut pivot = col;
        for row in col + 1..m {
            if a[row * m + col].abs() > a[pivot * m + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * m + col].abs() < 1e-12 * scale {
            return None;
        }
        if pivot != col {
            for c in 0..m {
                a.swap(col * m + c, pivot * m + c);
            }
            rhs.swap(col, pivot);
        }
        let inv = 1.0 / a[col * m + col];
        for row in col + 1..m {
            let f = a[row * m + col] * inv;
            if f == 0.0 {
                continue;
            }
            for c in col..m {
                a[row * m + c] -= f * a[col * m + c];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let mut acc = rhs[row];
        for c in row + 1..m {
            acc -= a[row * m + c] * x[c];
        }
        x[row] = acc / a[row * m + row];
    }
    Some(x)
}

/// Flat random point cloud for hull stress tests.
pub fn random_points(rng: &mut impl Rng, n: usize, dim: usize, scale: f64) -> Vec<f64> {
    (0..n * dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Random query biased to land near or inside the cloud about half the time.
pub fn random_query(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    let spread = if rng.gen_bool(0.5) { 0.5 * scale } else { 2.5 * scale };
    (0..dim).map(|_| rng.gen_range(-spread..spread)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_known_geometry() {
        // Segment from (0,0) to (2,0), query above the midpoint.
        let pts = [0.0, 0.0, 2.0, 0.0];
        let d = exact_hull_distance(2, &pts, &[1.0, 3.0]);
        assert!((d - 3.0).abs() < 1e-12);
        // Query beyond an endpoint projects to the vertex.
        let d2 = exact_hull_distance(2, &pts, &[-1.0, 0.0]);
        assert!((d2 - 1.0).abs() < 1e-12);
        // Interior of a triangle.
        let tri = [0.0, 0.0, 4.0, 0.0, 0.0, 4.0];
        let d3 = exact_hull_distance(2, &tri, &[1.0, 1.0]);
        assert_eq!(d3, 0.0);
    }

    #[test]
    fn oracle_handles_duplicates() {
        let pts = [1.0, 1.0, 1.0, 1.0, 3.0, 1.0];
        let d = exact_hull_distance(2, &pts, &[2.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-12);
    }
}
