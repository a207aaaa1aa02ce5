use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::squared_l2;
use crate::vq::{Codebook, PqCode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: usize,
    pub distance: f32,
}

/// Encoded database pinned to one codebook snapshot.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    codebook: Arc<Codebook>,
    /// Codes of all vectors, `M` indices per vector.
    codes: Vec<u16>,
    len: usize,
    labels: Option<Vec<i32>>,
}

impl SearchIndex {
    pub fn build<V: AsRef<[f32]> + Sync>(codebook: Arc<Codebook>, vectors: &[V], labels: Option<Vec<i32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != vectors.len() {
                return Err(Error::LabelMismatch {
                    labels: l.len(),
                    rows: vectors.len(),
                });
            }
        }
        let encoded: Vec<PqCode> = vectors
            .par_iter()
            .map(|v| codebook.encode(v.as_ref()))
            .collect::<Result<_>>()?;
        let codes = encoded.into_iter().flat_map(|c| c.0).collect();
        Ok(Self {
            codebook,
            codes,
            len: vectors.len(),
            labels,
        })
    }

    /// Index over precomputed codes.
    pub fn from_codes(codebook: Arc<Codebook>, codes: Vec<PqCode>, labels: Option<Vec<i32>>) -> Result<Self> {
        for c in &codes {
            codebook.check_code(c)?;
        }
        if let Some(l) = &labels {
            if l.len() != codes.len() {
                return Err(Error::LabelMismatch {
                    labels: l.len(),
                    rows: codes.len(),
                });
            }
        }
        let len = codes.len();
        Ok(Self {
            codebook,
            codes: codes.into_iter().flat_map(|c| c.0).collect(),
            len,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn codebook(&self) -> &Arc<Codebook> {
        &self.codebook
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn code(&self, id: usize) -> PqCode {
        let m = self.codebook.num_subspaces();
        PqCode(self.codes[id * m..(id + 1) * m].to_vec())
    }

    /// The `limit` nearest entries by ADC distance; ties go to the smaller id.
    pub fn search(&self, query: &[f32], limit: usize) -> Result<Vec<SearchHit>> {
        if self.is_empty() {
            return Err(Error::Empty("search index holds no vectors"));
        }
        if limit == 0 {
            return Err(Error::InvalidParameter("search limit must be at least 1".into()));
        }
        let table = self.codebook.distance_table(query)?;
        let m = self.codebook.num_subspaces();
        let distances: Vec<f32> = self.codes.chunks_exact(m).map(|c| table.adc_distance_raw(c)).collect();
        Ok(top_k(&distances, limit))
    }
}

fn hit_order(a: &SearchHit, b: &SearchHit) -> std::cmp::Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

fn top_k(distances: &[f32], limit: usize) -> Vec<SearchHit> {
    let mut hits: Vec<SearchHit> = distances
        .iter()
        .enumerate()
        .map(|(id, &distance)| SearchHit { id, distance })
        .collect();
    let limit = limit.min(hits.len());
    if limit < hits.len() {
        hits.select_nth_unstable_by(limit - 1, hit_order);
        hits.truncate(limit);
    }
    hits.sort_unstable_by(hit_order);
    hits
}

/// Exact squared-Euclidean ranking of `vectors` against `query`.
pub fn exhaustive_l2_search<V: AsRef<[f32]>>(vectors: &[V], query: &[f32], limit: usize) -> Result<Vec<SearchHit>> {
    if vectors.is_empty() {
        return Err(Error::Empty("exhaustive search needs a non-empty database"));
    }
    if limit == 0 {
        return Err(Error::InvalidParameter("search limit must be at least 1".into()));
    }
    let mut distances = Vec::with_capacity(vectors.len());
    for v in vectors {
        check_dim(query.len(), v.as_ref().len())?;
        distances.push(squared_l2(v.as_ref(), query));
    }
    Ok(top_k(&distances, limit))
}
