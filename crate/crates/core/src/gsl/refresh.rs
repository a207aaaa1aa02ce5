//! Codebook refresh during joint training.

use super::config::RefreshMode;
use crate::error::{Error, Result};
use crate::linalg::squared_l2;
use crate::vq::{train_codebook, Codebook, KMeansParams};

/// Owns the state needed to turn a stream of fresh representations into the
/// next codebook snapshot.
///
/// In sequential mode every streamed sub-vector moves its nearest codeword by
/// `(x - c) / n`, where `n` counts all points that codeword has absorbed over
/// the refresher's lifetime.
#[derive(Debug, Clone)]
pub struct CodebookRefresher {
    mode: RefreshMode,
    counts: Vec<u64>,
    retrain: KMeansParams,
}

impl CodebookRefresher {
    pub fn new(cb: &Codebook, mode: RefreshMode, retrain: KMeansParams) -> Self {
        Self {
            mode,
            counts: vec![0; cb.num_subspaces() * cb.num_codewords()],
            retrain,
        }
    }

    /// Starts the lifetime counts from prior assignment counts (`M * K`,
    /// subspace-major).
    pub fn with_counts(mut self, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != self.counts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.counts.len(),
                actual: counts.len(),
            });
        }
        self.counts = counts;
        Ok(self)
    }

    pub fn mode(&self) -> RefreshMode {
        self.mode
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Next snapshot (`version + 1`) after absorbing `stream` in order.
    pub fn refresh<V: AsRef<[f32]> + Sync>(&mut self, cb: &Codebook, stream: &[V]) -> Result<Codebook> {
        if stream.is_empty() {
            return Err(Error::Empty("codebook refresh needs a non-empty stream"));
        }
        for v in stream {
            cb.check_vector(v.as_ref())?;
        }
        match self.mode {
            RefreshMode::SequentialKmeans => self.sequential(cb, stream),
            RefreshMode::FullRetrain => {
                let params = KMeansParams {
                    seed: self.retrain.seed.wrapping_add(cb.version() + 1),
                    ..self.retrain
                };
                let fresh = train_codebook(stream, cb.num_subspaces(), cb.num_codewords(), params)?;
                cb.successor(fresh.raw().to_vec())
            }
        }
    }

    fn sequential<V: AsRef<[f32]>>(&mut self, cb: &Codebook, stream: &[V]) -> Result<Codebook> {
        let k = cb.num_codewords();
        let sub_dim = cb.sub_dim();
        let mut words = cb.raw().to_vec();
        for v in stream {
            for (m, part) in v.as_ref().chunks_exact(sub_dim).enumerate() {
                // nearest against the codewords as updated so far
                let sub = &words[m * k * sub_dim..(m + 1) * k * sub_dim];
                let mut idx = 0;
                let mut best = f32::INFINITY;
                for (i, word) in sub.chunks_exact(sub_dim).enumerate() {
                    let d = squared_l2(part, word);
                    if d < best {
                        best = d;
                        idx = i;
                    }
                }
                let slot = m * k + idx;
                self.counts[slot] += 1;
                let rate = 1.0 / self.counts[slot] as f32;
                let word = &mut words[slot * sub_dim..(slot + 1) * sub_dim];
                for (c, &x) in word.iter_mut().zip(part) {
                    *c = (1.0 - rate) * *c + rate * x;
                }
            }
        }
        cb.successor(words)
    }
}
