//! Labeled vector datasets: file formats, synthetic clusters and the
//! query/train/database split.

mod io;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use io::{
    load_fvecs, load_ivecs, load_labels, load_vectors, parse_fvecs, parse_ivecs, read_csv_labels, read_csv_vectors,
    save_fvecs, save_ivecs, write_csv_labels, write_csv_vectors, write_fvecs, write_ivecs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Query,
    Database,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    vectors: Vec<Vec<f32>>,
    labels: Vec<i32>,
    splits: Vec<Split>,
}

impl LabeledDataset {
    /// Every row starts out tagged [`Split::Database`].
    pub fn new(vectors: Vec<Vec<f32>>, labels: Vec<i32>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::LabelMismatch {
                labels: labels.len(),
                rows: vectors.len(),
            });
        }
        if let Some(first) = vectors.first() {
            let d = first.len();
            for v in &vectors {
                check_dim(d, v.len())?;
            }
        }
        let splits = vec![Split::Database; vectors.len()];
        Ok(Self { vectors, labels, splits })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Zero for an empty dataset.
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Retrieval database rows. Training rows are part of it unless
    /// `include_train` is false.
    pub fn database_indices(&self, include_train: bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| match self.splits[i] {
                Split::Database => true,
                Split::Train => include_train,
                Split::Query => false,
            })
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> (Vec<Vec<f32>>, Vec<i32>) {
        (
            indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Row indices per label, labels ascending.
    pub fn classes(&self) -> BTreeMap<i32, Vec<usize>> {
        let mut out: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub cluster_std: f32,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::InvalidParameter("num_classes, per_class and dim must be positive".into()));
        }
        if !(self.cluster_std >= 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("cluster_std must be non-negative, got {}", self.cluster_std)));
        }
        Ok(())
    }
}

/// Isotropic Gaussian clusters around standard-normal centers, one class per
/// cluster, rows ordered by class.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centers: Vec<Vec<f32>> = Vec::with_capacity(spec.num_classes);
    while centers.len() < spec.num_classes {
        let c: Vec<f32> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    let noise = Normal::new(0.0f32, spec.cluster_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut vectors = Vec::with_capacity(spec.num_classes * spec.per_class);
    let mut labels = Vec::with_capacity(vectors.capacity());
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            vectors.push(center.iter().map(|&c| c + noise.sample(&mut rng)).collect());
            labels.push(class as i32);
        }
    }
    LabeledDataset::new(vectors, labels)
}

/// Per class, draws `queries_per_class` query rows and then up to
/// `train_per_class` training rows without replacement; everything else is
/// tagged database.
pub fn split_protocol(
    ds: &LabeledDataset,
    queries_per_class: usize,
    train_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut out = ds.clone();
    out.splits.fill(Split::Database);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mut rows in ds.classes().into_values() {
        if rows.len() < queries_per_class + 1 {
            return Err(Error::InsufficientData {
                required: queries_per_class + 1,
                actual: rows.len(),
            });
        }
        rows.shuffle(&mut rng);
        let train = train_per_class.min(rows.len() - queries_per_class);
        for &i in &rows[..queries_per_class] {
            out.splits[i] = Split::Query;
        }
        for &i in &rows[queries_per_class..queries_per_class + train] {
            out.splits[i] = Split::Train;
        }
    }
    Ok(out)
}
