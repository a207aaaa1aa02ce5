use anyhow::{Context, Result};
use snapq_core::datasets::{load_labels, load_vectors, make_synthetic, split_protocol, LabeledDataset, Split};

use crate::config::{derive_seed, DataSource, ExperimentConfig};

const SPLIT_STREAM: u64 = 1;

/// The configured dataset with query/train/database tags applied.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let d = &cfg.data;
    let raw = match d.source {
        DataSource::Synthetic => make_synthetic(&d.synthetic.spec())?,
        DataSource::Files => {
            let vectors_path = d.vectors.as_ref().context("data.vectors is not set")?;
            let labels_path = d.labels.as_ref().context("data.labels is not set")?;
            let vectors = load_vectors(vectors_path).with_context(|| format!("loading {}", vectors_path.display()))?;
            let labels = load_labels(labels_path).with_context(|| format!("loading {}", labels_path.display()))?;
            LabeledDataset::new(vectors, labels)?
        }
    };
    Ok(split_protocol(
        &raw,
        d.queries_per_class,
        d.train_per_class,
        derive_seed(cfg.seed, SPLIT_STREAM),
    )?)
}

/// Row indices of the three evaluation roles.
pub struct Roles {
    pub train: Vec<usize>,
    pub query: Vec<usize>,
    pub database: Vec<usize>,
}

pub fn roles(ds: &LabeledDataset, cfg: &ExperimentConfig) -> Roles {
    Roles {
        train: ds.indices(Split::Train),
        query: ds.indices(Split::Query),
        database: ds.database_indices(cfg.data.database_includes_train),
    }
}
