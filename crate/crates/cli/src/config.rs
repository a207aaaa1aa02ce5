//! Experiment configuration, read from and written to TOML.
//!
//! Every section and key is optional; missing keys take the defaults of the
//! synthetic benchmark (10 classes x 600 points, 32-d input, 16-d embedding,
//! 4 x 16 product quantizer).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use snapq_core::datasets::SyntheticSpec;
use snapq_core::embed::MiningStrategy;
use snapq_core::gsl::GslConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Raw triplet gradients pass through the snapping layer.
    #[default]
    Gsl,
    /// Raw triplet gradients, no regularization.
    Plain,
    /// Raw gradients plus the quantization residual term.
    BiasedBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub cluster_std: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 600,
            dim: 32,
            cluster_std: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            per_class: self.per_class,
            dim: self.dim,
            cluster_std: self.cluster_std,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticConfig,
    /// `.fvecs` or CSV feature file when `source = "files"`.
    pub vectors: Option<PathBuf>,
    /// `.ivecs` or single-column CSV label file.
    pub labels: Option<PathBuf>,
    pub queries_per_class: usize,
    pub train_per_class: usize,
    /// Keep training rows in the retrieval database.
    pub database_includes_train: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticConfig::default(),
            vectors: None,
            labels: None,
            queries_per_class: 100,
            train_per_class: 500,
            database_includes_train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub out_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            out_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f32,
    pub mining: MiningStrategy,
    /// Positives drawn per anchor inside a batch.
    pub positives_per_anchor: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            mining: MiningStrategy::SemiHard,
            positives_per_anchor: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub subspaces: usize,
    pub codewords: usize,
    pub iters: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            subspaces: 4,
            codewords: 16,
            iters: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    /// Residual weight of the biased baseline; defaults to `gsl.lambda`.
    pub lambda_q: Option<f32>,
    /// Write one row per sample and iteration to `snaps.csv` in gsl mode.
    pub log_snaps: bool,
    /// Skip codeword selection in gsl mode and emit `lambda * g` for every
    /// sample, as if snapping were always rejected.
    pub disable_snapping: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Gsl,
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            classes_per_batch: 10,
            samples_per_class: 10,
            lambda_q: None,
            log_snaps: true,
            disable_snapping: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCodebook {
    /// k-means on the final database embeddings.
    #[default]
    Retrain,
    /// The codebook snapshot at the end of training.
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Ranked list length; the whole database when absent.
    pub cutoff: Option<usize>,
    pub precision_ks: Vec<usize>,
    pub codebook: EvalCodebook,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoff: None,
            precision_ks: vec![1, 10, 50, 100, 500, 1000],
            codebook: EvalCodebook::Retrain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for splits, initialization, k-means and mining.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub net: NetConfig,
    pub loss: LossConfig,
    /// Keys missing from the `[gsl]` table fall back to [`desk_gsl_defaults`].
    #[serde(deserialize_with = "gsl_over_desk_defaults")]
    pub gsl: GslConfig,
    pub codebook: CodebookConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            data: DataConfig::default(),
            net: NetConfig::default(),
            loss: LossConfig::default(),
            gsl: desk_gsl_defaults(),
            codebook: CodebookConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Snapping settings for the desk-scale benchmark: `lambda = 1` (the
/// paper-scale 0.036 throttles the residual gradient far below the
/// per-sample triplet gradients of a 100-row batch) and one codebook refresh
/// per epoch of 50 batches.
pub fn desk_gsl_defaults() -> GslConfig {
    GslConfig {
        lambda: 1.0,
        update_interval: 50,
        ..GslConfig::default()
    }
}

fn gsl_over_desk_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<GslConfig, D::Error> {
    use serde::de::Error as _;
    let overrides = toml::Table::deserialize(d)?;
    let mut table = toml::Table::try_from(desk_gsl_defaults()).map_err(D::Error::custom)?;
    table.extend(overrides);
    table.try_into().map_err(D::Error::custom)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn lambda_q(&self) -> f32 {
        self.train.lambda_q.unwrap_or(self.gsl.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        self.gsl.validate()?;
        let d = &self.data;
        if d.queries_per_class == 0 {
            bail!("data.queries_per_class must be at least 1");
        }
        if d.source == DataSource::Files {
            for (key, path) in [("data.vectors", &d.vectors), ("data.labels", &d.labels)] {
                match path {
                    Some(p) if p.exists() => {}
                    Some(p) => bail!("{key} points to a missing file: {}", p.display()),
                    None => bail!("{key} is required when data.source = \"files\""),
                }
            }
        } else {
            d.synthetic.spec().validate()?;
        }
        if self.net.out_dim == 0 || self.net.hidden.contains(&0) {
            bail!("network dimensions must be positive");
        }
        let cb = &self.codebook;
        if cb.subspaces == 0 || cb.codewords == 0 || cb.iters == 0 {
            bail!("codebook.subspaces, codebook.codewords and codebook.iters must be positive");
        }
        if cb.codewords > usize::from(u16::MAX) + 1 {
            bail!("codebook.codewords must not exceed 65536");
        }
        if !self.net.out_dim.is_multiple_of(cb.subspaces) {
            bail!(
                "net.out_dim ({}) must be divisible by codebook.subspaces ({})",
                self.net.out_dim,
                cb.subspaces
            );
        }
        if self.loss.margin.is_nan() || self.loss.margin < 0.0 {
            bail!("loss.margin must be nonnegative");
        }
        if self.loss.positives_per_anchor == 0 {
            bail!("loss.positives_per_anchor must be at least 1");
        }
        let t = &self.train;
        if t.epochs == 0 {
            bail!("train.epochs must be at least 1");
        }
        if t.classes_per_batch < 2 || t.samples_per_class < 2 {
            bail!("batches need at least two classes with two samples each");
        }
        if self.lambda_q().is_nan() || self.lambda_q() < 0.0 {
            bail!("train.lambda_q must be nonnegative");
        }
        snapq_core::embed::Sgd::new(t.lr, t.momentum, t.weight_decay)?;
        if self.eval.cutoff == Some(0) {
            bail!("eval.cutoff must be at least 1");
        }
        Ok(())
    }
}

/// Independent stream seed derived from the master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
