use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighting `f` applied to the unit direction toward a codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FVariant {
    /// `exp(-|c - y|^2 / sigma)`.
    #[default]
    GaussianSqdist,
    /// `exp(-|c - y|^4 / sigma)`: the Gaussian `exp(-d^2 / sigma)` evaluated at
    /// `d = |c - y|^2`.
    Literal,
}

/// Which side of the raw gradient the chosen codeword must lie on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSign {
    /// Maximise `g . dc`.
    #[default]
    PaperLiteral,
    /// Maximise `-g . dc`, i.e. pick the codeword along the descent direction.
    DescentAligned,
}

impl SelectionSign {
    pub fn factor(self) -> f64 {
        match self {
            SelectionSign::PaperLiteral => 1.0,
            SelectionSign::DescentAligned => -1.0,
        }
    }
}

/// Denominator `D` in `lambda1 = (1 - (g . dc)^2 / (|dc|^2 D)) * lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda1Denominator {
    /// `D = |g|`.
    Literal,
    /// `D = |g|^2`, making the fraction the squared cosine between `g` and `dc`.
    #[default]
    CosineSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshMode {
    /// Stream representations through per-subspace sequential k-means.
    #[default]
    SequentialKmeans,
    /// Retrain the codebook from scratch on the buffered representations.
    FullRetrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GslConfig {
    /// Scale of the residual gradient.
    pub lambda: f32,
    /// Number of nearest full codewords enumerated per sample.
    pub neighbors: usize,
    pub f_variant: FVariant,
    pub selection_sign: SelectionSign,
    pub lambda1_denominator: Lambda1Denominator,
    /// Training iterations between codebook refreshes.
    pub update_interval: usize,
    pub refresh_mode: RefreshMode,
}

impl Default for GslConfig {
    fn default() -> Self {
        Self {
            lambda: 0.036,
            neighbors: 150,
            f_variant: FVariant::default(),
            selection_sign: SelectionSign::default(),
            lambda1_denominator: Lambda1Denominator::default(),
            update_interval: 1,
            refresh_mode: RefreshMode::default(),
        }
    }
}

impl GslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.neighbors == 0 {
            return Err(Error::InvalidParameter("neighbors must be at least 1".into()));
        }
        if self.update_interval == 0 {
            return Err(Error::InvalidParameter("update_interval must be at least 1".into()));
        }
        Ok(())
    }
}
