//! Product quantization.
//!
//! A [`Codebook`] splits a `d`-dimensional space into `M` contiguous
//! subspaces of `d / M` dimensions and holds `K` codewords per subspace. A
//! vector is encoded as the per-subspace index of its nearest codeword
//! ([`PqCode`]); the reconstruction is the concatenation of those codewords.
//!
//! All distances are squared Euclidean. Vectors and tables are `f32`; error
//! sums are accumulated in `f64`.

mod enumerate;
mod io;
mod kmeans;

pub use enumerate::{enumerate_neighbor_codewords, Neighbor};
pub use io::{read_codebook, write_codebook, CodebookDump, CODEBOOK_FORMAT_VERSION, CODEBOOK_MAGIC};
pub use kmeans::{
    assign_points, kmeans_plus_plus, lloyd_step, subspace_rng, train_codebook, train_codebook_with_history,
    KMeansParams, TrainingHistory,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite, squared_l2, squared_l2_f64};

/// Largest supported number of codewords per subspace (codes are `u16`).
pub const MAX_CODEWORDS: usize = 1 << 16;

/// One codeword index per subspace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PqCode(pub Vec<u16>);

impl PqCode {
    pub fn new(indices: Vec<u16>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[u16] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for PqCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{idx}")?;
        }
        Ok(())
    }
}

/// `M` sub-codebooks of `K` codewords, each of `sub_dim` components.
///
/// A codebook is an immutable snapshot. Updates build a new value with a
/// larger [`version`](Codebook::version).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    num_subspaces: usize,
    num_codewords: usize,
    sub_dim: usize,
    /// Row-major `[m][k][j]`.
    codewords: Vec<f32>,
    version: u64,
}

impl Codebook {
    pub fn new(
        num_subspaces: usize,
        num_codewords: usize,
        sub_dim: usize,
        codewords: Vec<f32>,
    ) -> Result<Self> {
        if num_subspaces == 0 || num_codewords == 0 || sub_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "codebook shape must be positive, got M={num_subspaces} K={num_codewords} sub_dim={sub_dim}"
            )));
        }
        if num_codewords > MAX_CODEWORDS {
            return Err(Error::InvalidParameter(format!(
                "K={num_codewords} exceeds the supported maximum {MAX_CODEWORDS}"
            )));
        }
        check_dim(num_subspaces * num_codewords * sub_dim, codewords.len())?;
        if !all_finite(&codewords) {
            return Err(Error::NonFinite("codeword"));
        }
        Ok(Self {
            num_subspaces,
            num_codewords,
            sub_dim,
            codewords,
            version: 0,
        })
    }

    /// Builds a codebook from nested `[m][k] -> sub-vector` lists.
    pub fn from_nested(codewords: &[Vec<Vec<f32>>]) -> Result<Self> {
        let m = codewords.len();
        let k = codewords.first().map_or(0, Vec::len);
        let sub_dim = codewords
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(m * k * sub_dim);
        for sub in codewords {
            check_dim(k, sub.len())?;
            for word in sub {
                check_dim(sub_dim, word.len())?;
                flat.extend_from_slice(word);
            }
        }
        Self::new(m, k, sub_dim, flat)
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_codewords(&self) -> usize {
        self.num_codewords
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    /// Full vector dimension `M * sub_dim`.
    pub fn dim(&self) -> usize {
        self.num_subspaces * self.sub_dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Bits per encoded vector, `M * log2(K)`.
    pub fn code_bits(&self) -> f64 {
        self.num_subspaces as f64 * (self.num_codewords as f64).log2()
    }

    pub fn codeword(&self, subspace: usize, index: usize) -> &[f32] {
        let start = (subspace * self.num_codewords + index) * self.sub_dim;
        &self.codewords[start..start + self.sub_dim]
    }

    /// All `K` codewords of one subspace, concatenated.
    pub fn subspace(&self, subspace: usize) -> &[f32] {
        let stride = self.num_codewords * self.sub_dim;
        &self.codewords[subspace * stride..(subspace + 1) * stride]
    }

    pub fn raw(&self) -> &[f32] {
        &self.codewords
    }

    /// Returns a successor snapshot with the given codewords and `version + 1`.
    pub fn successor(&self, codewords: Vec<f32>) -> Result<Self> {
        let next = Self::new(
            self.num_subspaces,
            self.num_codewords,
            self.sub_dim,
            codewords,
        )?;
        Ok(next.with_version(self.version + 1))
    }

    pub fn check_vector(&self, y: &[f32]) -> Result<()> {
        check_dim(self.dim(), y.len())
    }

    pub fn check_code(&self, code: &PqCode) -> Result<()> {
        check_dim(self.num_subspaces, code.len())?;
        for (m, &idx) in code.0.iter().enumerate() {
            if idx as usize >= self.num_codewords {
                return Err(Error::CodeOutOfRange {
                    subspace: m,
                    index: idx as usize,
                    codewords: self.num_codewords,
                });
            }
        }
        Ok(())
    }

    /// Nearest codeword in one subspace; ties go to the smallest index.
    pub fn nearest_in_subspace(&self, subspace: usize, part: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::INFINITY);
        for (k, word) in self.subspace(subspace).chunks_exact(self.sub_dim).enumerate() {
            let d = squared_l2(part, word);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub fn encode(&self, y: &[f32]) -> Result<PqCode> {
        self.check_vector(y)?;
        let indices = y
            .chunks_exact(self.sub_dim)
            .enumerate()
            .map(|(m, part)| self.nearest_in_subspace(m, part).0 as u16)
            .collect();
        Ok(PqCode(indices))
    }

    pub fn decode(&self, code: &PqCode) -> Result<Vec<f32>> {
        self.check_code(code)?;
        let mut out = Vec::with_capacity(self.dim());
        for (m, &idx) in code.0.iter().enumerate() {
            out.extend_from_slice(self.codeword(m, idx as usize));
        }
        Ok(out)
    }

    /// `decode(encode(y))`.
    pub fn reconstruct(&self, y: &[f32]) -> Result<Vec<f32>> {
        let code = self.encode(y)?;
        self.decode(&code)
    }

    pub fn quantization_error<V: AsRef<[f32]>>(&self, data: &[V]) -> Result<QuantStats> {
        if data.is_empty() {
            return Err(Error::Empty("quantization error needs at least one vector"));
        }
        let mut per_subspace = vec![0.0f64; self.num_subspaces];
        for v in data {
            let v = v.as_ref();
            self.check_vector(v)?;
            for (m, part) in v.chunks_exact(self.sub_dim).enumerate() {
                let (k, _) = self.nearest_in_subspace(m, part);
                per_subspace[m] += squared_l2_f64(part, self.codeword(m, k));
            }
        }
        let n = data.len() as f64;
        per_subspace.iter_mut().for_each(|e| *e /= n);
        Ok(QuantStats {
            mean_error: per_subspace.iter().sum(),
            per_subspace_error: per_subspace,
        })
    }

    pub fn distance_table(&self, q: &[f32]) -> Result<DistanceTable> {
        self.check_vector(q)?;
        let mut entries = Vec::with_capacity(self.num_subspaces * self.num_codewords);
        for (m, part) in q.chunks_exact(self.sub_dim).enumerate() {
            entries.extend(
                self.subspace(m)
                    .chunks_exact(self.sub_dim)
                    .map(|word| squared_l2(part, word)),
            );
        }
        Ok(DistanceTable {
            num_subspaces: self.num_subspaces,
            num_codewords: self.num_codewords,
            entries,
        })
    }
}

/// Per-subspace squared distances from a query to every codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    num_subspaces: usize,
    num_codewords: usize,
    entries: Vec<f32>,
}

impl DistanceTable {
    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_codewords(&self) -> usize {
        self.num_codewords
    }

    #[inline]
    pub fn get(&self, subspace: usize, index: usize) -> f32 {
        self.entries[subspace * self.num_codewords + index]
    }

    pub fn row(&self, subspace: usize) -> &[f32] {
        let k = self.num_codewords;
        &self.entries[subspace * k..(subspace + 1) * k]
    }

    /// Approximate squared distance: `M` lookups and `M - 1` additions.
    ///
    /// The code must be valid for the codebook the table was built from;
    /// out-of-range indices panic.
    #[inline]
    pub fn adc_distance(&self, code: &PqCode) -> f32 {
        self.adc_distance_raw(&code.0)
    }

    #[inline]
    pub fn adc_distance_raw(&self, indices: &[u16]) -> f32 {
        debug_assert_eq!(indices.len(), self.num_subspaces);
        let k = self.num_codewords;
        indices
            .iter()
            .enumerate()
            .map(|(m, &i)| self.entries[m * k + i as usize])
            .sum()
    }
}

/// Mean squared quantization error over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantStats {
    pub mean_error: f64,
    pub per_subspace_error: Vec<f64>,
}
