//! Ranking quality metrics.
//!
//! Average precision of one ranked list truncated at `cutoff`:
//!
//! ```text
//! AP = (1 / R) * sum over relevant positions i of precision@i
//! ```
//!
//! where `R` is the number of relevant items retrieved within the cutoff. With
//! the cutoff at the database size this is the textbook definition. A query
//! whose ranking holds no relevant item scores 0; queries with no relevant
//! item anywhere in the database are left out of the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth labels of queries or database rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Relevant when the labels are equal.
    Single(Vec<i32>),
    /// Relevant when the label sets share at least one label.
    Multi(Vec<Vec<i32>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(l) => l.len(),
            Labels::Multi(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn relevant(&self, i: usize, other: &Labels, j: usize) -> Result<bool> {
        match (self, other) {
            (Labels::Single(a), Labels::Single(b)) => Ok(a[i] == b[j]),
            (Labels::Multi(a), Labels::Multi(b)) => Ok(a[i].iter().any(|x| b[j].contains(x))),
            _ => Err(Error::InvalidParameter(
                "query and database labels must both be single- or multi-label".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub precision_at_k: Vec<(usize, f64)>,
    /// Queries that entered the mean.
    pub num_queries: usize,
    pub retrieval_cutoff: usize,
}

/// Average precision from per-position relevance flags.
pub fn average_precision(relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Fraction of relevant items among the first `k` positions.
pub fn precision_at(relevance: &[bool], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    relevance.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

/// MAP and precision@k over ranked database ids, one ranking per query.
pub fn mean_average_precision(
    rankings: &[Vec<usize>],
    query_labels: &Labels,
    db_labels: &Labels,
    cutoff: usize,
    ks: &[usize],
) -> Result<EvalReport> {
    if rankings.len() != query_labels.len() {
        return Err(Error::LabelMismatch {
            labels: query_labels.len(),
            rows: rankings.len(),
        });
    }
    if cutoff == 0 {
        return Err(Error::InvalidParameter("cutoff must be at least 1".into()));
    }
    let mut ap_sum = 0.0;
    let mut precision_sums = vec![0.0; ks.len()];
    let mut counted = 0usize;
    for (q, ranking) in rankings.iter().enumerate() {
        let mut any_relevant = false;
        for j in 0..db_labels.len() {
            if query_labels.relevant(q, db_labels, j)? {
                any_relevant = true;
                break;
            }
        }
        if !any_relevant {
            continue;
        }
        let mut flags = Vec::with_capacity(ranking.len().min(cutoff));
        for &id in ranking.iter().take(cutoff) {
            if id >= db_labels.len() {
                return Err(Error::LabelMismatch {
                    labels: db_labels.len(),
                    rows: id + 1,
                });
            }
            flags.push(query_labels.relevant(q, db_labels, id)?);
        }
        ap_sum += average_precision(&flags);
        for (s, &k) in precision_sums.iter_mut().zip(ks) {
            *s += precision_at(&flags, k);
        }
        counted += 1;
    }
    let mean = |s: f64| if counted == 0 { 0.0 } else { s / counted as f64 };
    Ok(EvalReport {
        map: mean(ap_sum),
        precision_at_k: ks.iter().zip(&precision_sums).map(|(&k, &s)| (k, mean(s))).collect(),
        num_queries: counted,
        retrieval_cutoff: cutoff,
    })
}
