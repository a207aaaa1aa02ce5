//! Exhaustive ADC retrieval and evaluation.

mod index;
mod metrics;
mod report;

pub use index::{exhaustive_l2_search, SearchHit, SearchIndex};
pub use metrics::{average_precision, mean_average_precision, precision_at, EvalReport, Labels};
pub use report::{read_report, write_precision_curve, write_rankings, write_report};
