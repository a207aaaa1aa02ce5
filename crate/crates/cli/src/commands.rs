//! Subcommand implementations. Every command writes its artifacts and a
//! [`RunManifest`] into the output directory, the manifest also on failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use snapq_core::datasets::{load_vectors, save_fvecs, save_ivecs, write_csv_labels, LabeledDataset, Split};
use snapq_core::embed::{read_checkpoint, write_checkpoint, EmbeddingNet};
use snapq_core::retrieval::{write_precision_curve, write_rankings, write_report, SearchIndex};
use snapq_core::vq::{read_codebook, train_codebook_with_history, write_codebook, Codebook, CodebookDump, KMeansParams};

use crate::config::{derive_seed, ExperimentConfig};
use crate::data::{load_dataset, roles};
use crate::eval::{evaluate, EvalOutcome};
use crate::manifest::RunManifest;
use crate::train::{train, AlignmentStats, TrainOutcome, HISTOGRAM_BINS};

pub const CHECKPOINT_FILE: &str = "net.sqnn";
pub const CODEBOOK_FILE: &str = "codebook.sqcb";
const CODEBOOK_STREAM: u64 = 7;

/// Where a command writes and whether it runs single-threaded.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub deterministic: bool,
}

impl RunContext {
    pub fn new(out_dir: impl Into<PathBuf>, deterministic: bool) -> Self {
        Self {
            out_dir: out_dir.into(),
            deterministic,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn with_manifest<T>(
    command: &str,
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    f: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    let mut manifest = RunManifest::new(command, cfg, ctx.deterministic);
    let result = std::fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating {}", ctx.out_dir.display()))
        .and_then(|_| f(&mut manifest));
    match &result {
        Ok(_) => manifest.status = "ok".into(),
        Err(e) => {
            manifest.status = "error".into();
            manifest.error = Some(format!("{e:#}"));
        }
    }
    let written = manifest.write(&ctx.out_dir);
    let value = result?;
    written?;
    Ok(value)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn save_net(net: &EmbeddingNet, path: &Path) -> Result<()> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn load_net(path: &Path) -> Result<EmbeddingNet> {
    read_checkpoint(std::io::BufReader::new(
        File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?,
    ))
    .with_context(|| format!("reading checkpoint {}", path.display()))
}

fn save_codebook(cb: &Codebook, path: &Path) -> Result<()> {
    write_codebook(cb, BufWriter::new(File::create(path)?))?;
    let dump = serde_json::to_string_pretty(&CodebookDump::from(cb))?;
    std::fs::write(path.with_extension("json"), dump)?;
    Ok(())
}

fn load_codebook(path: &Path) -> Result<Codebook> {
    read_codebook(std::io::BufReader::new(
        File::open(path).with_context(|| format!("opening codebook {}", path.display()))?,
    ))
    .with_context(|| format!("reading codebook {}", path.display()))
}

fn write_histogram(path: &Path, rows: &[(String, &AlignmentStats)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["value", "bin_lo", "bin_hi", "count"])?;
    for (value, stats) in rows {
        for (b, count) in stats.histogram.iter().enumerate() {
            let lo = -1.0 + 2.0 * b as f64 / HISTOGRAM_BINS as f64;
            let hi = -1.0 + 2.0 * (b + 1) as f64 / HISTOGRAM_BINS as f64;
            w.write_record([value.clone(), lo.to_string(), hi.to_string(), count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_training_artifacts(outcome: &TrainOutcome, ctx: &RunContext, manifest: &mut RunManifest) -> Result<()> {
    save_net(&outcome.net, &ctx.path(CHECKPOINT_FILE))?;
    save_codebook(&outcome.codebook, &ctx.path(CODEBOOK_FILE))?;

    let mut w = csv_writer(&ctx.path("train_log.csv"))?;
    w.write_record([
        "iteration",
        "epoch",
        "loss",
        "active_triplets",
        "quant_error",
        "alignment",
        "gradient_cosine",
        "rejected_fraction",
        "codebook_version",
    ])?;
    for r in &outcome.log {
        w.write_record([
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.loss.to_string(),
            r.active_triplets.to_string(),
            r.quant_error.to_string(),
            opt(r.alignment),
            opt(r.gradient_cosine),
            opt(r.rejected_fraction),
            r.codebook_version.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&ctx.path("codebook_history.csv"))?;
    w.write_record(["iteration", "version", "quant_error"])?;
    for e in &outcome.codebook_history {
        w.write_record([e.iteration.to_string(), e.version.to_string(), e.quant_error.to_string()])?;
    }
    w.flush()?;

    let mut w = csv_writer(&ctx.path("epoch_alignment.csv"))?;
    w.write_record(["epoch", "mean_alignment", "samples"])?;
    for (epoch, stats) in outcome.epoch_alignment.iter().enumerate() {
        w.write_record([epoch.to_string(), opt(stats.mean()), stats.count.to_string()])?;
    }
    w.flush()?;

    let all = outcome.alignment();
    write_histogram(&ctx.path("alignment_hist.csv"), &[("all".to_string(), &all)])?;

    if !outcome.snaps.is_empty() {
        let mut w = csv_writer(&ctx.path("snaps.csv"))?;
        w.write_record(["iteration", "sample", "code", "lambda1", "lambda2", "alignment", "rejected"])?;
        for s in &outcome.snaps {
            w.write_record([
                s.iteration.to_string(),
                s.sample.to_string(),
                s.code.clone().unwrap_or_default(),
                s.lambda1.to_string(),
                s.lambda2.to_string(),
                opt(s.alignment),
                s.rejected.to_string(),
            ])?;
        }
        w.flush()?;
    }

    manifest.codebook_history = outcome.codebook_history.clone();
    manifest.metric("final_loss", outcome.log.last().map(|r| r.loss));
    manifest.metric("mean_alignment", all.mean());
    manifest.metric(
        "epoch_alignment",
        outcome.epoch_alignment.iter().map(AlignmentStats::mean).collect::<Vec<_>>(),
    );
    manifest.metric("final_codebook_version", outcome.codebook.version());
    Ok(())
}

fn write_eval_artifacts(outcome: &EvalOutcome, ctx: &RunContext, manifest: &mut RunManifest) -> Result<()> {
    for (name, report) in [("adc", &outcome.adc), ("l2", &outcome.l2)] {
        write_report(report, File::create(ctx.path(&format!("eval_{name}.csv")))?)?;
        write_precision_curve(report, File::create(ctx.path(&format!("precision_{name}.csv")))?)?;
    }
    let mut w = csv_writer(&ctx.path("map_table.csv"))?;
    w.write_record(["method", "map", "num_queries", "retrieval_cutoff"])?;
    for (name, report) in [("adc", &outcome.adc), ("l2", &outcome.l2)] {
        w.write_record([
            name.to_string(),
            report.map.to_string(),
            report.num_queries.to_string(),
            report.retrieval_cutoff.to_string(),
        ])?;
    }
    w.flush()?;
    save_codebook(&outcome.codebook, &ctx.path("eval_codebook.sqcb"))?;
    if outcome.l2.map < outcome.adc.map {
        eprintln!(
            "note: exhaustive l2 MAP {:.4} is below ADC MAP {:.4}",
            outcome.l2.map, outcome.adc.map
        );
    }
    manifest.metric("map_adc", outcome.adc.map);
    manifest.metric("map_l2", outcome.l2.map);
    manifest.metric("l2_below_adc", outcome.l2.map < outcome.adc.map);
    manifest.metric("database_quant_error", outcome.quant_error);
    manifest.metric("database_size", outcome.database_size);
    Ok(())
}

/// Dataset loading, training and evaluation in one call, without writing files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(TrainOutcome, EvalOutcome)> {
    let ds = load_dataset(cfg)?;
    let trained = train(cfg, &ds)?;
    let evaluated = evaluate(cfg, &ds, &trained.net, Some(&trained.codebook))?;
    Ok((trained, evaluated))
}

pub fn cmd_train(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<TrainOutcome> {
    with_manifest("train", cfg, ctx, |manifest| {
        cfg.validate()?;
        std::fs::write(ctx.path("config.toml"), cfg.to_toml()?)?;
        let ds = manifest.timed("load", || load_dataset(cfg))?;
        let outcome = manifest.timed("train", || train(cfg, &ds))?;
        write_training_artifacts(&outcome, ctx, manifest)?;
        let meta = serde_json::json!({
            "seed": cfg.seed,
            "input_dim": ds.dim(),
            "net": cfg.net,
            "loss": cfg.loss,
            "train": cfg.train,
            "gsl": cfg.gsl,
        });
        std::fs::write(ctx.path(CHECKPOINT_FILE).with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(outcome)
    })
}

/// Evaluates the checkpoint (and codebook) found in `ctx.out_dir`, unless
/// explicit paths are given.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    checkpoint: Option<&Path>,
    codebook: Option<&Path>,
) -> Result<EvalOutcome> {
    with_manifest("eval", cfg, ctx, |manifest| {
        cfg.validate()?;
        let checkpoint = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(CHECKPOINT_FILE));
        let net = load_net(&checkpoint)?;
        let cb_path = codebook.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(CODEBOOK_FILE));
        let cb = if cb_path.exists() { Some(load_codebook(&cb_path)?) } else { None };
        let ds = manifest.timed("load", || load_dataset(cfg))?;
        let outcome = manifest.timed("eval", || evaluate(cfg, &ds, &net, cb.as_ref()))?;
        write_eval_artifacts(&outcome, ctx, manifest)?;
        Ok(outcome)
    })
}

/// Trains a codebook on `input` vectors, or on the configured dataset's
/// training rows, optionally embedded by a checkpoint first. Writes the
/// codebook and the per-iteration error curve.
pub fn cmd_train_codebook(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    input: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<Codebook> {
    with_manifest("train-codebook", cfg, ctx, |manifest| {
        let mut vectors = match input {
            Some(p) => load_vectors(p).with_context(|| format!("loading {}", p.display()))?,
            None => {
                let ds = load_dataset(cfg)?;
                let r = roles(&ds, cfg);
                ds.select(&r.train).0
            }
        };
        if let Some(p) = checkpoint {
            vectors = load_net(p)?.forward(&vectors)?;
        }
        let params = KMeansParams {
            iters: cfg.codebook.iters,
            seed: derive_seed(cfg.seed, CODEBOOK_STREAM),
        };
        let (cb, history) = manifest.timed("kmeans", || {
            Ok(train_codebook_with_history(&vectors, cfg.codebook.subspaces, cfg.codebook.codewords, params)?)
        })?;
        save_codebook(&cb, &ctx.path(CODEBOOK_FILE))?;
        let mut w = csv_writer(&ctx.path("quant_error.csv"))?;
        let mut header = vec!["iteration".to_string(), "total".to_string()];
        header.extend((0..cb.num_subspaces()).map(|m| format!("subspace_{m}")));
        w.write_record(&header)?;
        for (t, total) in history.totals().iter().enumerate() {
            let mut row = vec![t.to_string(), total.to_string()];
            row.extend((0..cb.num_subspaces()).map(|m| history.subspace_at(m, t).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        let stats = cb.quantization_error(&vectors)?;
        manifest.metric("quant_error", stats.mean_error);
        manifest.metric("code_bits", cb.code_bits());
        Ok(cb)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    UpdateInterval,
    Neighbors,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::UpdateInterval => "update_interval",
            SweepParam::Neighbors => "neighbors",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: usize) {
        match self {
            SweepParam::UpdateInterval => cfg.gsl.update_interval = value,
            SweepParam::Neighbors => cfg.gsl.neighbors = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub map_adc: f64,
    pub map_l2: f64,
    pub alignment: AlignmentStats,
    pub quant_error: f64,
}

/// One full train and eval run per sweep value, all with the same seeds.
pub fn cmd_ablate(cfg: &ExperimentConfig, ctx: &RunContext, param: SweepParam, values: &[usize]) -> Result<Vec<SweepRow>> {
    with_manifest("ablate", cfg, ctx, |manifest| {
        if values.is_empty() {
            bail!("the sweep needs at least one value");
        }
        let ds = load_dataset(cfg)?;
        let mut rows = Vec::with_capacity(values.len());
        for &value in values {
            let mut run = cfg.clone();
            param.apply(&mut run, value);
            run.train.log_snaps = false;
            run.validate()?;
            let key = format!("{}={value}", param.name());
            let trained = manifest.timed(&format!("train {key}"), || train(&run, &ds))?;
            let evaluated = manifest.timed(&format!("eval {key}"), || {
                evaluate(&run, &ds, &trained.net, Some(&trained.codebook))
            })?;
            rows.push(SweepRow {
                value,
                map_adc: evaluated.adc.map,
                map_l2: evaluated.l2.map,
                alignment: trained.alignment(),
                quant_error: evaluated.quant_error,
            });
        }
        let mut w = csv_writer(&ctx.path("sweep.csv"))?;
        w.write_record(["parameter", "value", "map_adc", "map_l2", "mean_alignment", "quant_error"])?;
        for r in &rows {
            w.write_record([
                param.name().to_string(),
                r.value.to_string(),
                r.map_adc.to_string(),
                r.map_l2.to_string(),
                opt(r.alignment.mean()),
                r.quant_error.to_string(),
            ])?;
        }
        w.flush()?;
        let hist: Vec<(String, &AlignmentStats)> = rows.iter().map(|r| (r.value.to_string(), &r.alignment)).collect();
        write_histogram(&ctx.path("alignment_hist.csv"), &hist)?;
        manifest.metric(
            "sweep",
            rows.iter()
                .map(|r| serde_json::json!({"value": r.value, "map_adc": r.map_adc, "map_l2": r.map_l2, "mean_alignment": r.alignment.mean()}))
                .collect::<Vec<_>>(),
        );
        Ok(rows)
    })
}

fn embed_if(vectors: Vec<Vec<f32>>, checkpoint: Option<&Path>) -> Result<Vec<Vec<f32>>> {
    match checkpoint {
        Some(p) => Ok(load_net(p)?.forward(&vectors)?),
        None => Ok(vectors),
    }
}

/// Writes `codes.csv` with one PQ code per input vector.
pub fn cmd_encode(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    codebook: &Path,
    input: &Path,
    checkpoint: Option<&Path>,
) -> Result<()> {
    with_manifest("encode", cfg, ctx, |manifest| {
        let cb = load_codebook(codebook)?;
        let vectors = embed_if(load_vectors(input)?, checkpoint)?;
        let index = SearchIndex::build(Arc::new(cb.clone()), &vectors, None)?;
        let mut w = csv_writer(&ctx.path("codes.csv"))?;
        let mut header = vec!["id".to_string()];
        header.extend((0..cb.num_subspaces()).map(|m| format!("c{m}")));
        w.write_record(&header)?;
        for id in 0..index.len() {
            let mut row = vec![id.to_string()];
            row.extend(index.code(id).0.iter().map(u16::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        manifest.metric("encoded", index.len());
        manifest.metric("quant_error", cb.quantization_error(&vectors)?.mean_error);
        Ok(())
    })
}

/// ADC search of every query against the encoded database; writes `rankings.csv`.
pub fn cmd_search(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    codebook: &Path,
    database: &Path,
    queries: &Path,
    checkpoint: Option<&Path>,
    limit: usize,
) -> Result<()> {
    with_manifest("search", cfg, ctx, |manifest| {
        let cb = load_codebook(codebook)?;
        let db = embed_if(load_vectors(database)?, checkpoint)?;
        let qs = embed_if(load_vectors(queries)?, checkpoint)?;
        let index = SearchIndex::build(Arc::new(cb), &db, None)?;
        let rankings = qs.iter().map(|q| index.search(q, limit)).collect::<Result<Vec<_>, _>>()?;
        write_rankings(&rankings, File::create(ctx.path("rankings.csv"))?)?;
        manifest.metric("queries", qs.len());
        manifest.metric("database_size", db.len());
        Ok(())
    })
}

/// Writes the configured (split) dataset as `vectors.fvecs`, `labels.ivecs`,
/// `labels.csv` and `splits.csv`.
pub fn cmd_synth(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<LabeledDataset> {
    with_manifest("synth", cfg, ctx, |manifest| {
        let ds = load_dataset(cfg)?;
        save_fvecs(ctx.path("vectors.fvecs"), ds.vectors())?;
        let labels: Vec<[i32; 1]> = ds.labels().iter().map(|&l| [l]).collect();
        save_ivecs(ctx.path("labels.ivecs"), &labels)?;
        write_csv_labels(File::create(ctx.path("labels.csv"))?, ds.labels())?;
        let mut w = csv_writer(&ctx.path("splits.csv"))?;
        w.write_record(["row", "split"])?;
        for (i, s) in ds.splits().iter().enumerate() {
            let name = match s {
                Split::Train => "train",
                Split::Query => "query",
                Split::Database => "database",
            };
            w.write_record([i.to_string(), name.to_string()])?;
        }
        w.flush()?;
        manifest.metric("rows", ds.len());
        manifest.metric("dim", ds.dim());
        Ok(ds)
    })
}
