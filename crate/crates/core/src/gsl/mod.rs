//! Gradient snapping layer.

mod config;
mod refresh;
mod snap;

pub use config::{FVariant, GslConfig, Lambda1Denominator, RefreshMode, SelectionSign};
pub use refresh::CodebookRefresher;
pub use snap::{
    baseline_alignment, baseline_biased_gradient, compute_sigma, decode_neighbors, gsl_backward, reject,
    select_codeword, snap_direction, snap_gradient, snap_sample, DecodedNeighbor, GslOutput, Selection,
    SnapReport, Snapped,
};
