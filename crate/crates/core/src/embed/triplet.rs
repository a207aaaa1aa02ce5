//! Triplet hinge loss and triplet mining.
//!
//! The loss uses plain (non-squared) Euclidean distances:
//! `max(0, margin + |a - p| - |a - n|)`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::squared_l2_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f32,
    pub grad_anchor: Vec<f32>,
    pub grad_positive: Vec<f32>,
    pub grad_negative: Vec<f32>,
}

/// Loss and exact subgradients of one triplet.
///
/// Inactive triplets (loss exactly zero, including the hinge corner) get zero
/// gradients, and a zero-length difference contributes a zero subgradient.
pub fn triplet_loss(anchor: &[f32], positive: &[f32], negative: &[f32], margin: f32) -> Result<TripletLoss> {
    check_dim(anchor.len(), positive.len())?;
    check_dim(anchor.len(), negative.len())?;
    if margin.is_nan() || margin < 0.0 {
        return Err(Error::InvalidParameter(format!("margin must be nonnegative, got {margin}")));
    }
    let d = anchor.len();
    let d_ap = squared_l2_f64(anchor, positive).sqrt();
    let d_an = squared_l2_f64(anchor, negative).sqrt();
    let loss = margin as f64 + d_ap - d_an;
    let mut out = TripletLoss {
        loss: 0.0,
        grad_anchor: vec![0.0; d],
        grad_positive: vec![0.0; d],
        grad_negative: vec![0.0; d],
    };
    if loss <= 0.0 {
        return Ok(out);
    }
    out.loss = loss as f32;
    for j in 0..d {
        let ap = if d_ap > 0.0 {
            (anchor[j] as f64 - positive[j] as f64) / d_ap
        } else {
            0.0
        };
        let an = if d_an > 0.0 {
            (anchor[j] as f64 - negative[j] as f64) / d_an
        } else {
            0.0
        };
        out.grad_anchor[j] = (ap - an) as f32;
        out.grad_positive[j] = -ap as f32;
        out.grad_negative[j] = an as f32;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub triples: Vec<Triplet>,
    pub margin: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningStrategy {
    /// Negative farther than the positive but inside the margin window,
    /// falling back to the hardest negative.
    #[default]
    SemiHard,
    /// Uniformly random negative.
    Random,
}

/// Builds triplets over a labelled batch of representations.
///
/// For every anchor up to `per_anchor` positives are drawn without
/// replacement from its class, and one negative is picked per
/// `(anchor, positive)` pair according to `strategy`. Semi-hard mining picks
/// uniformly among negatives with `d(a,p) < d(a,n) <= d(a,p) + margin`, or the
/// closest negative (lowest index on ties) when the window is empty.
pub fn select_triplets<V: AsRef<[f32]>>(
    representations: &[V],
    labels: &[i32],
    per_anchor: usize,
    strategy: MiningStrategy,
    margin: f32,
    seed: u64,
) -> Result<TripletBatch> {
    if labels.len() != representations.len() {
        return Err(Error::LabelMismatch {
            labels: labels.len(),
            rows: representations.len(),
        });
    }
    if per_anchor == 0 {
        return Err(Error::InvalidParameter("per_anchor must be positive".into()));
    }
    if margin.is_nan() || margin < 0.0 {
        return Err(Error::InvalidParameter(format!("margin must be nonnegative, got {margin}")));
    }
    let mut classes: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::InvalidParameter("triplet mining needs at least two labels".into()));
    }
    if let Some((&label, _)) = classes.iter().find(|(_, members)| members.len() < 2) {
        return Err(Error::DegenerateLabel { label });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = |a: usize, b: usize| squared_l2_f64(representations[a].as_ref(), representations[b].as_ref()).sqrt();
    let mut triples = Vec::new();
    for anchor in 0..labels.len() {
        let mut positives: Vec<usize> = classes[&labels[anchor]]
            .iter()
            .copied()
            .filter(|&p| p != anchor)
            .collect();
        positives.shuffle(&mut rng);
        positives.truncate(per_anchor);
        let negatives: Vec<usize> = (0..labels.len()).filter(|&n| labels[n] != labels[anchor]).collect();
        for positive in positives {
            let negative = match strategy {
                MiningStrategy::Random => negatives[rng.random_range(0..negatives.len())],
                MiningStrategy::SemiHard => {
                    let d_ap = dist(anchor, positive);
                    let upper = d_ap + margin as f64;
                    let window: Vec<usize> = negatives
                        .iter()
                        .copied()
                        .filter(|&n| {
                            let d = dist(anchor, n);
                            d > d_ap && d <= upper
                        })
                        .collect();
                    if window.is_empty() {
                        let mut hardest = (f64::INFINITY, negatives[0]);
                        for &n in &negatives {
                            let d = dist(anchor, n);
                            if d < hardest.0 {
                                hardest = (d, n);
                            }
                        }
                        hardest.1
                    } else {
                        window[rng.random_range(0..window.len())]
                    }
                }
            };
            triples.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    Ok(TripletBatch { triples, margin })
}

/// Mean triplet loss of a batch and its gradient with respect to every
/// representation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grads: Vec<Vec<f32>>,
    pub loss: f32,
    /// Triplets with nonzero loss.
    pub active: usize,
}

pub fn batch_triplet_gradients<V: AsRef<[f32]>>(representations: &[V], batch: &TripletBatch) -> Result<GradientBundle> {
    let dim = representations.first().map_or(0, |r| r.as_ref().len());
    let mut grads = vec![vec![0.0f32; dim]; representations.len()];
    if batch.triples.is_empty() {
        return Ok(GradientBundle { grads, loss: 0.0, active: 0 });
    }
    let scale = 1.0 / batch.triples.len() as f32;
    let mut total = 0.0f64;
    let mut active = 0;
    for t in &batch.triples {
        let out = triplet_loss(
            representations[t.anchor].as_ref(),
            representations[t.positive].as_ref(),
            representations[t.negative].as_ref(),
            batch.margin,
        )?;
        if out.loss > 0.0 {
            active += 1;
            total += out.loss as f64;
            for (idx, g) in [
                (t.anchor, &out.grad_anchor),
                (t.positive, &out.grad_positive),
                (t.negative, &out.grad_negative),
            ] {
                for (acc, v) in grads[idx].iter_mut().zip(g) {
                    *acc += scale * v;
                }
            }
        }
    }
    Ok(GradientBundle {
        grads,
        loss: (total / batch.triples.len() as f64) as f32,
        active,
    })
}
