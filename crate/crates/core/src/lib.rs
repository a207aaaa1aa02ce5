//! Building blocks for quantization-aware similarity search.
//!
//! * [`vq`]: product-quantization codebooks, encoding, asymmetric distance
//!   tables and exact enumeration of the nearest full codewords.
//! * [`embed`]: a small dense embedding network with explicit backward pass,
//!   triplet loss and triplet mining.
//! * [`gsl`]: the gradient snapping layer, which rewrites the similarity-loss
//!   gradient toward a neighbouring codeword, plus the output-regularization
//!   baseline and streaming codebook refresh.
//! * [`retrieval`]: exhaustive ADC and exact L2 search, MAP and precision@k.
//! * [`datasets`]: fvecs/ivecs/CSV IO, synthetic clusters and query/train splits.

pub mod datasets;
pub mod embed;
pub mod error;
pub mod gsl;
pub mod linalg;
pub mod retrieval;
pub mod vq;

pub use error::{Error, Result};
