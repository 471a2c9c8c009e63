//! Analysis harnesses over trained models: fusion-attention summaries,
//! accuracy by document length and entity count, data-efficiency sweeps and
//! context/fusion ablations.

mod ablation;
mod attention;
mod error_grid;
mod sweep;

pub use ablation::{ablation_csv, ablation_suite, standard_variants, AblationRow, Variant};
pub use attention::{attention_report, attention_report_docs_first, attention_report_from, position_labels, AttentionReport};
pub use error_grid::{error_grid, Bins, Cell, ErrorGrid};
pub use sweep::{efficiency_sweep, majority_baseline, subsample_train, sweep_csv, SweepRow};

use crate::model::Metrics;

/// `acc,bacc,maf,mif,map,mar` as one CSV fragment.
pub fn metric_fields(m: &Metrics) -> String {
    format!(
        "{},{},{},{},{},{}",
        m.acc, m.balanced_acc, m.macro_f1, m.micro_f1, m.macro_precision, m.macro_recall
    )
}
