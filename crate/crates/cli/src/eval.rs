//! Retrieval evaluation of a trained embedding.

use std::sync::Arc;

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use snapq_core::datasets::LabeledDataset;
use snapq_core::embed::EmbeddingNet;
use snapq_core::retrieval::{exhaustive_l2_search, mean_average_precision, EvalReport, Labels, SearchIndex};
use snapq_core::vq::Codebook;

use crate::config::{derive_seed, EvalCodebook, ExperimentConfig};
use crate::data::roles;
use crate::train::fit_codebook;

const EVAL_KMEANS_STREAM: u64 = 6;
const DATABASE_ORDER_STREAM: u64 = 8;

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub adc: EvalReport,
    pub l2: EvalReport,
    pub codebook: Codebook,
    /// Quantization error of the database embeddings.
    pub quant_error: f64,
    pub database_size: usize,
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    ds: &LabeledDataset,
    net: &EmbeddingNet,
    training_codebook: Option<&Codebook>,
) -> Result<EvalOutcome> {
    let mut r = roles(ds, cfg);
    // Source rows are grouped by class; a seeded shuffle keeps the id
    // tie-break of equal ADC distances from carrying label information.
    r.database.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DATABASE_ORDER_STREAM)));
    if r.database.is_empty() || r.query.is_empty() {
        bail!("evaluation needs non-empty query and database sets");
    }
    let embed = |rows: &[usize]| -> Result<Vec<Vec<f32>>> {
        let inputs: Vec<&[f32]> = rows.iter().map(|&i| ds.vectors()[i].as_slice()).collect();
        Ok(net.forward(&inputs)?)
    };
    let db = embed(&r.database)?;
    let queries = embed(&r.query)?;
    let codebook = match (cfg.eval.codebook, training_codebook) {
        (EvalCodebook::Training, Some(cb)) => cb.clone(),
        (EvalCodebook::Training, None) => bail!("eval.codebook = \"training\" needs a codebook file"),
        (EvalCodebook::Retrain, _) => fit_codebook(cfg, &db, EVAL_KMEANS_STREAM)?,
    };
    let quant_error = codebook.quantization_error(&db)?.mean_error;
    let db_labels: Vec<i32> = r.database.iter().map(|&i| ds.labels()[i]).collect();
    let index = SearchIndex::build(Arc::new(codebook.clone()), &db, Some(db_labels.clone()))?;
    let cutoff = cfg.eval.cutoff.unwrap_or(db.len()).min(db.len());

    let adc_rankings: Vec<Vec<usize>> = queries
        .par_iter()
        .map(|q| Ok(index.search(q, cutoff)?.into_iter().map(|h| h.id).collect()))
        .collect::<Result<_>>()?;
    let l2_rankings: Vec<Vec<usize>> = queries
        .par_iter()
        .map(|q| Ok(exhaustive_l2_search(&db, q, cutoff)?.into_iter().map(|h| h.id).collect()))
        .collect::<Result<_>>()?;
    let query_labels = Labels::Single(r.query.iter().map(|&i| ds.labels()[i]).collect());
    let db_labels = Labels::Single(db_labels);
    let ks = &cfg.eval.precision_ks;
    Ok(EvalOutcome {
        adc: mean_average_precision(&adc_rankings, &query_labels, &db_labels, cutoff, ks)?,
        l2: mean_average_precision(&l2_rankings, &query_labels, &db_labels, cutoff, ks)?,
        codebook,
        quant_error,
        database_size: db.len(),
    })
}
