//! Joint training of the embedding network and the codebook.

use std::collections::VecDeque;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snapq_core::datasets::LabeledDataset;
use snapq_core::embed::{batch_triplet_gradients, select_triplets, EmbeddingNet, Sgd};
use snapq_core::gsl::{baseline_alignment, baseline_biased_gradient, gsl_backward, CodebookRefresher};
use snapq_core::vq::{train_codebook, Codebook, KMeansParams};

use crate::config::{derive_seed, ExperimentConfig, TrainMode};
use crate::data::roles;

const INIT_STREAM: u64 = 2;
const KMEANS_STREAM: u64 = 3;
const BATCH_STREAM: u64 = 4;
const TRIPLET_STREAM: u64 = 5;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub epoch: usize,
    pub loss: f32,
    pub active_triplets: usize,
    /// Mean squared quantization error of the batch under the current codebook.
    pub quant_error: f64,
    pub alignment: Option<f64>,
    pub gradient_cosine: Option<f64>,
    pub rejected_fraction: Option<f64>,
    pub codebook_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapRow {
    pub iteration: usize,
    pub sample: usize,
    pub code: Option<String>,
    pub lambda1: f32,
    pub lambda2: f32,
    pub alignment: Option<f32>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CodebookEvent {
    pub iteration: usize,
    pub version: u64,
    /// Quantization error of the absorbed stream under the new snapshot.
    pub quant_error: f64,
}

/// Running mean and histogram over `[-1, 1]` of per-sample alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStats {
    pub sum: f64,
    pub count: usize,
    pub histogram: Vec<u64>,
}

impl Default for AlignmentStats {
    fn default() -> Self {
        Self {
            sum: 0.0,
            count: 0,
            histogram: vec![0; HISTOGRAM_BINS],
        }
    }
}

impl AlignmentStats {
    pub fn push(&mut self, a: f64) {
        self.sum += a;
        self.count += 1;
        let bin = (((a + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor() as isize;
        self.histogram[bin.clamp(0, HISTOGRAM_BINS as isize - 1) as usize] += 1;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn merge(&mut self, other: &AlignmentStats) {
        self.sum += other.sum;
        self.count += other.count;
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: EmbeddingNet,
    pub codebook: Codebook,
    pub log: Vec<IterationLog>,
    pub snaps: Vec<SnapRow>,
    pub codebook_history: Vec<CodebookEvent>,
    /// Alignment statistics per epoch.
    pub epoch_alignment: Vec<AlignmentStats>,
}

impl TrainOutcome {
    pub fn alignment(&self) -> AlignmentStats {
        let mut all = AlignmentStats::default();
        for e in &self.epoch_alignment {
            all.merge(e);
        }
        all
    }
}

/// Draws class-balanced batches: every batch holds `samples_per_class` rows of
/// `classes_per_batch` classes, and each class cycles through a reshuffled
/// queue of its rows.
struct BatchSampler {
    classes: Vec<Vec<usize>>,
    queues: Vec<VecDeque<usize>>,
    class_order: VecDeque<usize>,
    rng: ChaCha8Rng,
    classes_per_batch: usize,
    samples_per_class: usize,
}

impl BatchSampler {
    fn new(classes: Vec<Vec<usize>>, classes_per_batch: usize, samples_per_class: usize, seed: u64) -> Self {
        let n = classes.len();
        Self {
            queues: vec![VecDeque::new(); n],
            classes,
            class_order: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            classes_per_batch: classes_per_batch.min(n),
            samples_per_class,
        }
    }

    fn next_class(&mut self) -> usize {
        if self.class_order.is_empty() {
            let mut order: Vec<usize> = (0..self.classes.len()).collect();
            order.shuffle(&mut self.rng);
            self.class_order.extend(order);
        }
        self.class_order.pop_front().unwrap_or(0)
    }

    fn next_row(&mut self, class: usize) -> usize {
        if self.queues[class].is_empty() {
            let mut rows = self.classes[class].clone();
            rows.shuffle(&mut self.rng);
            self.queues[class].extend(rows);
        }
        self.queues[class].pop_front().unwrap_or(self.classes[class][0])
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut chosen = Vec::with_capacity(self.classes_per_batch);
        while chosen.len() < self.classes_per_batch {
            let c = self.next_class();
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        let mut rows = Vec::with_capacity(self.classes_per_batch * self.samples_per_class);
        for c in chosen {
            let take = self.samples_per_class.min(self.classes[c].len());
            for _ in 0..take {
                rows.push(self.next_row(c));
            }
        }
        rows
    }
}

/// Emitted gradients and per-sample alignment for one batch.
struct Transformed {
    grads: Vec<Vec<f32>>,
    alignment: AlignmentStats,
    gradient_cosine: Option<f64>,
    rejected_fraction: Option<f64>,
}

fn is_zero(g: &[f32]) -> bool {
    g.iter().all(|&v| v == 0.0)
}

fn transform(
    cfg: &ExperimentConfig,
    reps: &[Vec<f32>],
    raw: Vec<Vec<f32>>,
    cb: &Codebook,
    rows: &[usize],
    iteration: usize,
    snaps: Option<&mut Vec<SnapRow>>,
) -> Result<Transformed> {
    let mut alignment = AlignmentStats::default();
    match cfg.train.mode {
        TrainMode::Plain => Ok(Transformed {
            grads: raw,
            alignment,
            gradient_cosine: None,
            rejected_fraction: None,
        }),
        TrainMode::BiasedBaseline => {
            // The triplet loss is a batch mean, so the penalty is too: lambda_q
            // times the mean quantization error of the batch.
            let lambda_q = cfg.lambda_q() / reps.len() as f32;
            let mut grads = Vec::with_capacity(raw.len());
            let mut cos_sum = 0.0;
            let mut cos_count = 0usize;
            for (y, g) in reps.iter().zip(&raw) {
                let out = baseline_biased_gradient(y, g, cb, lambda_q)?;
                if !is_zero(g) {
                    if let Some(a) = baseline_alignment(y, g, cb, &cfg.gsl)? {
                        alignment.push(a as f64);
                    }
                    if let Some(c) = snapq_core::linalg::cosine(&out, g) {
                        cos_sum += c;
                        cos_count += 1;
                    }
                }
                grads.push(out);
            }
            Ok(Transformed {
                grads,
                alignment,
                gradient_cosine: (cos_count > 0).then(|| cos_sum / cos_count as f64),
                rejected_fraction: None,
            })
        }
        TrainMode::Gsl => {
            if cfg.train.disable_snapping {
                let lambda = cfg.gsl.lambda;
                let grads = raw.iter().map(|g| g.iter().map(|v| v * lambda).collect()).collect();
                return Ok(Transformed {
                    grads,
                    alignment,
                    gradient_cosine: None,
                    rejected_fraction: None,
                });
            }
            let out = gsl_backward(reps, &raw, cb, &cfg.gsl)?;
            let mut cos_sum = 0.0;
            let mut active = 0usize;
            let mut rejected = 0usize;
            for (report, g) in out.reports.iter().zip(&raw) {
                if is_zero(g) {
                    continue;
                }
                active += 1;
                if report.rejected {
                    rejected += 1;
                }
                if let Some(a) = report.alignment {
                    alignment.push(a as f64);
                }
                if let Some(c) = report.gradient_cosine {
                    cos_sum += c as f64;
                }
            }
            if let Some(log) = snaps {
                for ((report, g), &row) in out.reports.iter().zip(&raw).zip(rows) {
                    if is_zero(g) {
                        continue;
                    }
                    log.push(SnapRow {
                        iteration,
                        sample: row,
                        code: report.chosen_code.as_ref().map(|c| c.to_string()),
                        lambda1: report.lambda1,
                        lambda2: report.lambda2,
                        alignment: report.alignment,
                        rejected: report.rejected,
                    });
                }
            }
            Ok(Transformed {
                grads: out.grads,
                alignment,
                gradient_cosine: (active > 0).then(|| cos_sum / active as f64),
                rejected_fraction: (active > 0).then(|| rejected as f64 / active as f64),
            })
        }
    }
}

/// k-means codebook over the embeddings of `rows`.
pub fn fit_codebook(cfg: &ExperimentConfig, embeddings: &[Vec<f32>], stream: u64) -> Result<Codebook> {
    let params = KMeansParams {
        iters: cfg.codebook.iters,
        seed: derive_seed(cfg.seed, stream),
    };
    train_codebook(embeddings, cfg.codebook.subspaces, cfg.codebook.codewords, params)
        .context("training the codebook")
}

pub fn train(cfg: &ExperimentConfig, ds: &LabeledDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let r = roles(ds, cfg);
    if r.train.is_empty() {
        bail!("the split left no training rows");
    }
    let mut by_class: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
    for &i in &r.train {
        by_class.entry(ds.labels()[i]).or_default().push(i);
    }
    if by_class.len() < 2 || by_class.values().any(|rows| rows.len() < 2) {
        bail!("training needs at least two classes with two training rows each");
    }

    let mut net = EmbeddingNet::init(ds.dim(), &cfg.net.hidden, cfg.net.out_dim, derive_seed(cfg.seed, INIT_STREAM))?;
    let train_vectors: Vec<&[f32]> = r.train.iter().map(|&i| ds.vectors()[i].as_slice()).collect();
    let initial = net.forward(&train_vectors)?;
    let mut cb = fit_codebook(cfg, &initial, KMEANS_STREAM)?;
    let mut refresher = CodebookRefresher::new(
        &cb,
        cfg.gsl.refresh_mode,
        KMeansParams {
            iters: cfg.codebook.iters,
            seed: derive_seed(cfg.seed, KMEANS_STREAM),
        },
    );
    let mut sgd = Sgd::new(cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay)?;

    let batch_size = cfg.train.classes_per_batch.min(by_class.len()) * cfg.train.samples_per_class;
    let iterations_per_epoch = r.train.len().div_ceil(batch_size).max(1);
    let mut sampler = BatchSampler::new(
        by_class.into_values().collect(),
        cfg.train.classes_per_batch,
        cfg.train.samples_per_class,
        derive_seed(cfg.seed, BATCH_STREAM),
    );

    let mut log = Vec::new();
    let mut snaps = Vec::new();
    let mut history = Vec::new();
    let mut epoch_alignment = Vec::with_capacity(cfg.train.epochs);
    let mut buffer: Vec<Vec<f32>> = Vec::new();
    let log_snaps = cfg.train.log_snaps && cfg.train.mode == TrainMode::Gsl;
    let mut iteration = 0;
    for epoch in 0..cfg.train.epochs {
        let mut epoch_stats = AlignmentStats::default();
        for _ in 0..iterations_per_epoch {
            let rows = sampler.next_batch();
            let inputs: Vec<&[f32]> = rows.iter().map(|&i| ds.vectors()[i].as_slice()).collect();
            let labels: Vec<i32> = rows.iter().map(|&i| ds.labels()[i]).collect();
            let trace = net.forward_trace(&inputs)?;
            let reps = trace.outputs.clone();
            let triplets = select_triplets(
                &reps,
                &labels,
                cfg.loss.positives_per_anchor,
                cfg.loss.mining,
                cfg.loss.margin,
                derive_seed(cfg.seed, TRIPLET_STREAM.wrapping_add(iteration as u64 * 16)),
            )?;
            let bundle = batch_triplet_gradients(&reps, &triplets)?;
            if !bundle.loss.is_finite() {
                bail!("training diverged at iteration {iteration}: loss is {}", bundle.loss);
            }
            let quant_error = cb.quantization_error(&reps)?.mean_error;
            let out = transform(
                cfg,
                &reps,
                bundle.grads,
                &cb,
                &rows,
                iteration,
                log_snaps.then_some(&mut snaps),
            )?;
            let grads = net.backward(&trace, &out.grads)?;
            sgd.step(&mut net, &grads)
                .with_context(|| format!("training diverged at iteration {iteration}"))?;

            log.push(IterationLog {
                iteration,
                epoch,
                loss: bundle.loss,
                active_triplets: bundle.active,
                quant_error,
                alignment: out.alignment.mean(),
                gradient_cosine: out.gradient_cosine,
                rejected_fraction: out.rejected_fraction,
                codebook_version: cb.version(),
            });
            epoch_stats.merge(&out.alignment);

            buffer.extend(reps);
            iteration += 1;
            if iteration % cfg.gsl.update_interval == 0 {
                cb = refresher.refresh(&cb, &buffer)?;
                history.push(CodebookEvent {
                    iteration,
                    version: cb.version(),
                    quant_error: cb.quantization_error(&buffer)?.mean_error,
                });
                buffer.clear();
            }
        }
        epoch_alignment.push(epoch_stats);
    }
    Ok(TrainOutcome {
        net,
        codebook: cb,
        log,
        snaps,
        codebook_history: history,
        epoch_alignment,
    })
}
