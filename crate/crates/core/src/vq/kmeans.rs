//! Per-subspace k-means codebook training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Codebook;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{squared_l2, squared_l2_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    /// Maximum Lloyd iterations per subspace.
    pub iters: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { iters: 25, seed: 0 }
    }
}

/// Quantization error recorded after seeding (index 0) and after every
/// Lloyd iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    /// `per_subspace[m][t]`: mean squared error of subspace `m` at step `t`.
    pub per_subspace: Vec<Vec<f64>>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.per_subspace.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Error of subspace `m` at step `t`; converged subspaces hold their last value.
    pub fn subspace_at(&self, m: usize, t: usize) -> f64 {
        let h = &self.per_subspace[m];
        h[t.min(h.len() - 1)]
    }

    /// Total error (sum over subspaces) at every step.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.len())
            .map(|t| {
                (0..self.per_subspace.len())
                    .map(|m| self.subspace_at(m, t))
                    .sum()
            })
            .collect()
    }
}

/// Deterministic RNG for subspace `m` of a run seeded with `seed`.
pub fn subspace_rng(seed: u64, subspace: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (subspace as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// k-means++ seeding over `points` (row-major, `dim` columns).
///
/// When fewer than `k` distinct points exist the remaining centers are drawn
/// uniformly, so duplicates are possible.
pub fn kmeans_plus_plus(points: &[f32], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut closest: Vec<f64> = (0..n).map(|i| squared_l2_f64(row(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(row(pick));
        let new_center = &centers[start..start + dim];
        for (i, c) in closest.iter_mut().enumerate() {
            let d = squared_l2_f64(row(i), new_center);
            if d < *c {
                *c = d;
            }
        }
    }
    centers
}

/// Assigns every point to its nearest center (smallest index on ties) and
/// returns whether any assignment changed and the mean squared error.
pub fn assign_points(points: &[f32], dim: usize, centers: &[f32], assignment: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut error = 0.0;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let mut best = (0, f32::INFINITY);
        for (k, c) in centers.chunks_exact(dim).enumerate() {
            let d = squared_l2(p, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        if assignment[i] != best.0 {
            changed = true;
            assignment[i] = best.0;
        }
        error += squared_l2_f64(p, &centers[best.0 * dim..(best.0 + 1) * dim]);
    }
    (changed, error / (points.len() / dim) as f64)
}

/// Recomputes centers as cluster means. Empty clusters take the point that
/// is farthest from its own (updated) center.
fn update_centers(points: &[f32], dim: usize, k: usize, assignment: &[usize]) -> Vec<f32> {
    let n = points.len() / dim;
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let c = assignment[i];
        counts[c] += 1;
        for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
            *s += v as f64;
        }
    }
    let mut centers = vec![0.0f32; k * dim];
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..dim {
                centers[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
            }
        }
    }
    let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empties.is_empty() {
        let mut by_distance: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let c = assignment[i];
                (
                    squared_l2_f64(&points[i * dim..(i + 1) * dim], &centers[c * dim..(c + 1) * dim]),
                    i,
                )
            })
            .collect();
        by_distance.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (&c, &(_, i)) in empties.iter().zip(&by_distance) {
            centers[c * dim..(c + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
        }
    }
    centers
}

/// One Lloyd iteration from a consistent `(centers, assignment)` pair.
///
/// Returns whether any assignment changed and the new mean error. The update
/// is discarded if float rounding would make the error grow.
pub fn lloyd_step(
    points: &[f32],
    dim: usize,
    centers: &mut Vec<f32>,
    assignment: &mut Vec<usize>,
    current_error: f64,
) -> (bool, f64) {
    let k = centers.len() / dim;
    let new_centers = update_centers(points, dim, k, assignment);
    let mut new_assignment = assignment.clone();
    let (changed, error) = assign_points(points, dim, &new_centers, &mut new_assignment);
    if error > current_error {
        return (false, current_error);
    }
    *centers = new_centers;
    *assignment = new_assignment;
    (changed || error < current_error, error)
}

fn kmeans_subspace(points: &[f32], dim: usize, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<f64>) {
    let n = points.len() / dim;
    let mut centers = kmeans_plus_plus(points, dim, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let (_, mut error) = assign_points(points, dim, &centers, &mut assignment);
    let mut history = vec![error];
    for _ in 0..iters {
        let (changed, e) = lloyd_step(points, dim, &mut centers, &mut assignment, error);
        error = e;
        history.push(error);
        if !changed {
            break;
        }
    }
    (centers, history)
}

fn validate<V: AsRef<[f32]>>(data: &[V], m: usize, k: usize, iters: usize) -> Result<usize> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter("M and K must be positive".into()));
    }
    if iters == 0 {
        return Err(Error::InvalidParameter("k-means needs at least one iteration".into()));
    }
    let d = data.first().map(|v| v.as_ref().len()).ok_or(Error::InsufficientData {
        required: k,
        actual: 0,
    })?;
    if d == 0 || d % m != 0 {
        return Err(Error::InvalidParameter(format!(
            "dimension {d} is not divisible by M={m}"
        )));
    }
    if data.len() < k {
        return Err(Error::InsufficientData {
            required: k,
            actual: data.len(),
        });
    }
    for v in data {
        check_dim(d, v.as_ref().len())?;
    }
    Ok(d)
}

/// Trains a product-quantization codebook with k-means on each subspace.
pub fn train_codebook<V: AsRef<[f32]> + Sync>(
    data: &[V],
    num_subspaces: usize,
    num_codewords: usize,
    params: KMeansParams,
) -> Result<Codebook> {
    train_codebook_with_history(data, num_subspaces, num_codewords, params).map(|(cb, _)| cb)
}

/// Like [`train_codebook`], also returning the per-iteration error curve.
pub fn train_codebook_with_history<V: AsRef<[f32]> + Sync>(
    data: &[V],
    num_subspaces: usize,
    num_codewords: usize,
    params: KMeansParams,
) -> Result<(Codebook, TrainingHistory)> {
    let d = validate(data, num_subspaces, num_codewords, params.iters)?;
    let sub_dim = d / num_subspaces;
    let results: Vec<(Vec<f32>, Vec<f64>)> = (0..num_subspaces)
        .into_par_iter()
        .map(|m| {
            let mut points = Vec::with_capacity(data.len() * sub_dim);
            for v in data {
                points.extend_from_slice(&v.as_ref()[m * sub_dim..(m + 1) * sub_dim]);
            }
            let mut rng = subspace_rng(params.seed, m);
            kmeans_subspace(&points, sub_dim, num_codewords, params.iters, &mut rng)
        })
        .collect();
    let mut codewords = Vec::with_capacity(num_subspaces * num_codewords * sub_dim);
    let mut history = TrainingHistory::default();
    for (centers, h) in results {
        codewords.extend(centers);
        history.per_subspace.push(h);
    }
    let cb = Codebook::new(num_subspaces, num_codewords, sub_dim, codewords)?;
    Ok((cb, history))
}
