//! Gradient snapping.
//!
//! The layer is the identity on the forward pass. On the backward pass each
//! raw representation gradient `g` is rewritten as
//!
//! ```text
//! dy = lambda1 * g + lambda2 * dc
//! dc = f(|c - y|) * (c - y) / |c - y|
//! lambda2 = g . dc / |dc|
//! lambda1 = (1 - (g . dc)^2 / (|dc|^2 D)) * lambda
//! ```
//!
//! where `c` is the enumerated neighbouring codeword maximising the
//! selection score `s * g . dc`. If no candidate scores above zero, snapping
//! is rejected and `dy = lambda * g`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{FVariant, GslConfig, Lambda1Denominator};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cosine, dot_f64, norm_f64, squared_l2_f64};
use crate::vq::{enumerate_neighbor_codewords, Codebook, Neighbor, PqCode};

const DEGENERATE_DISTANCE: f64 = 1e-12;

/// Weighted unit direction from `y` toward `c`; its norm equals the weight `f`.
pub fn snap_direction(c: &[f32], y: &[f32], sigma: f64, variant: FVariant) -> Result<Vec<f32>> {
    check_dim(c.len(), y.len())?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let sq = squared_l2_f64(c, y);
    let dist = sq.sqrt();
    if dist < DEGENERATE_DISTANCE {
        return Err(Error::DegenerateDirection);
    }
    let weight = match variant {
        FVariant::GaussianSqdist => (-sq / sigma).exp(),
        FVariant::Literal => (-(sq * sq) / sigma).exp(),
    };
    let scale = weight / dist;
    Ok(c.iter()
        .zip(y)
        .map(|(&cv, &yv)| ((cv as f64 - yv as f64) * scale) as f32)
        .collect())
}

/// Mean (non-squared) Euclidean distance from `y` to its enumerated neighbours.
pub fn compute_sigma(neighbors: &[Neighbor]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Empty("sigma needs at least one neighbouring codeword"));
    }
    let sum: f64 = neighbors.iter().map(|n| n.sq_distance.max(0.0).sqrt()).sum();
    Ok(sum / neighbors.len() as f64)
}

/// A neighbouring codeword with its reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedNeighbor {
    pub code: PqCode,
    pub vector: Vec<f32>,
    pub sq_distance: f64,
}

pub fn decode_neighbors(cb: &Codebook, neighbors: Vec<Neighbor>) -> Result<Vec<DecodedNeighbor>> {
    neighbors
        .into_iter()
        .map(|n| {
            Ok(DecodedNeighbor {
                vector: cb.decode(&n.code)?,
                code: n.code,
                sq_distance: n.sq_distance,
            })
        })
        .collect()
}

/// Result of scoring the candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Index of the best-scoring candidate, `None` when every candidate was
    /// degenerate (coincides with `y`).
    pub index: Option<usize>,
    /// Direction toward the best-scoring candidate, also when rejected.
    pub delta_c: Option<Vec<f32>>,
    /// Selection score `s * g . dc` of the best candidate.
    pub score: f64,
    pub rejected: bool,
}

/// Picks the neighbour maximising `s * g . dc`. Candidates are scanned in
/// enumeration order and only a strictly larger score replaces the current
/// best, so ties go to the nearer codeword and then the smaller code.
pub fn select_codeword(
    g: &[f32],
    y: &[f32],
    neighbors: &[DecodedNeighbor],
    sigma: f64,
    cfg: &GslConfig,
) -> Result<Selection> {
    check_dim(y.len(), g.len())?;
    let sign = cfg.selection_sign.factor();
    let mut best: Option<(usize, Vec<f32>, f64)> = None;
    if sigma > 0.0 {
        for (i, n) in neighbors.iter().enumerate() {
            let dc = match snap_direction(&n.vector, y, sigma, cfg.f_variant) {
                Ok(dc) => dc,
                Err(Error::DegenerateDirection) => continue,
                Err(e) => return Err(e),
            };
            let score = sign * dot_f64(g, &dc);
            if best.as_ref().is_none_or(|b| score > b.2) {
                best = Some((i, dc, score));
            }
        }
    }
    Ok(match best {
        Some((i, dc, score)) => Selection {
            index: Some(i),
            delta_c: Some(dc),
            score,
            rejected: score <= 0.0,
        },
        None => Selection {
            index: None,
            delta_c: None,
            score: 0.0,
            rejected: true,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapped {
    pub delta_y: Vec<f32>,
    pub lambda1: f32,
    pub lambda2: f32,
}

/// `dy = lambda1 g + lambda2 dc` for a non-rejected selection.
pub fn snap_gradient(g: &[f32], delta_c: &[f32], cfg: &GslConfig) -> Result<Snapped> {
    check_dim(g.len(), delta_c.len())?;
    let g_norm = norm_f64(g);
    let dc_norm = norm_f64(delta_c);
    if g_norm == 0.0 || dc_norm == 0.0 {
        return Err(Error::InvalidParameter("snapping needs nonzero gradient and direction".into()));
    }
    let proj = dot_f64(g, delta_c);
    let denominator = match cfg.lambda1_denominator {
        Lambda1Denominator::Literal => g_norm,
        Lambda1Denominator::CosineSquared => g_norm * g_norm,
    };
    let lambda1 = (1.0 - proj * proj / (dc_norm * dc_norm * denominator)) * cfg.lambda as f64;
    let lambda2 = proj / dc_norm;
    let delta_y: Vec<f32> = g
        .iter()
        .zip(delta_c)
        .map(|(&gv, &cv)| (lambda1 * gv as f64 + lambda2 * cv as f64) as f32)
        .collect();
    if !lambda1.is_finite() || !lambda2.is_finite() || !delta_y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("snapped gradient"));
    }
    Ok(Snapped {
        delta_y,
        lambda1: lambda1 as f32,
        lambda2: lambda2 as f32,
    })
}

/// Rejected snapping: `dy = lambda g`, `lambda1 = lambda`, `lambda2 = 0`.
pub fn reject(g: &[f32], lambda: f32) -> Snapped {
    Snapped {
        delta_y: g.iter().map(|&v| lambda * v).collect(),
        lambda1: lambda,
        lambda2: 0.0,
    }
}

/// Per-sample record of one snapping decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapReport {
    /// Best-scoring candidate, `None` for zero gradients or when every
    /// candidate coincided with the representation.
    pub chosen_code: Option<PqCode>,
    pub lambda1: f32,
    pub lambda2: f32,
    /// Normalised selection score `s * cos(g, dc)` of the best candidate: the
    /// agreement between the raw gradient and the snapping direction.
    pub alignment: Option<f32>,
    /// `cos(dy, g)` between the emitted and the raw gradient.
    pub gradient_cosine: Option<f32>,
    pub rejected: bool,
}

/// Snaps one sample's gradient.
pub fn snap_sample(y: &[f32], g: &[f32], cb: &Codebook, cfg: &GslConfig) -> Result<(Vec<f32>, SnapReport)> {
    cb.check_vector(y)?;
    check_dim(y.len(), g.len())?;
    if norm_f64(g) == 0.0 {
        let snapped = reject(g, cfg.lambda);
        return Ok((
            snapped.delta_y,
            SnapReport {
                chosen_code: None,
                lambda1: snapped.lambda1,
                lambda2: snapped.lambda2,
                alignment: None,
                gradient_cosine: None,
                rejected: true,
            },
        ));
    }
    let total = (cb.num_codewords() as f64).powi(cb.num_subspaces() as i32);
    let count = if (cfg.neighbors as f64) > total {
        total as usize
    } else {
        cfg.neighbors
    };
    let neighbors = enumerate_neighbor_codewords(cb, y, count)?;
    let sigma = compute_sigma(&neighbors)?;
    let neighbors = decode_neighbors(cb, neighbors)?;
    let selection = select_codeword(g, y, &neighbors, sigma, cfg)?;
    let snapped = match (&selection.delta_c, selection.rejected) {
        (Some(dc), false) => snap_gradient(g, dc, cfg)?,
        _ => reject(g, cfg.lambda),
    };
    let sign = cfg.selection_sign.factor();
    let alignment = selection
        .delta_c
        .as_deref()
        .and_then(|dc| cosine(g, dc))
        .map(|c| (sign * c) as f32);
    let report = SnapReport {
        chosen_code: selection.index.map(|i| neighbors[i].code.clone()),
        lambda1: snapped.lambda1,
        lambda2: snapped.lambda2,
        alignment,
        gradient_cosine: cosine(&snapped.delta_y, g).map(|c| c as f32),
        rejected: selection.rejected,
    };
    Ok((snapped.delta_y, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GslOutput {
    pub grads: Vec<Vec<f32>>,
    pub reports: Vec<SnapReport>,
}

/// Backward pass of the snapping layer over a batch, against one codebook
/// snapshot. Samples are independent and processed in parallel.
pub fn gsl_backward<V: AsRef<[f32]> + Sync>(
    representations: &[V],
    raw_grads: &[Vec<f32>],
    cb: &Codebook,
    cfg: &GslConfig,
) -> Result<GslOutput> {
    cfg.validate()?;
    check_dim(representations.len(), raw_grads.len())?;
    let results: Vec<(Vec<f32>, SnapReport)> = representations
        .par_iter()
        .zip(raw_grads.par_iter())
        .map(|(y, g)| snap_sample(y.as_ref(), g, cb, cfg))
        .collect::<Result<_>>()?;
    let (grads, reports) = results.into_iter().unzip();
    Ok(GslOutput { grads, reports })
}

/// Output-regularization gradient `g + 2 lambda_q (y - q(y))`.
pub fn baseline_biased_gradient(y: &[f32], g: &[f32], cb: &Codebook, lambda_q: f32) -> Result<Vec<f32>> {
    check_dim(y.len(), g.len())?;
    let rec = cb.reconstruct(y)?;
    Ok(g.iter()
        .zip(y.iter().zip(&rec))
        .map(|(&gv, (&yv, &rv))| gv + 2.0 * lambda_q * (yv - rv))
        .collect())
}

/// Alignment statistic of the output-regularization baseline: the snapping
/// alignment obtained when the only candidate is `q(y)`, without rejection.
pub fn baseline_alignment(y: &[f32], g: &[f32], cb: &Codebook, cfg: &GslConfig) -> Result<Option<f32>> {
    check_dim(y.len(), g.len())?;
    let rec = cb.reconstruct(y)?;
    let to_codeword: Vec<f32> = rec.iter().zip(y).map(|(r, v)| r - v).collect();
    Ok(cosine(g, &to_codeword).map(|c| (cfg.selection_sign.factor() * c) as f32))
}
