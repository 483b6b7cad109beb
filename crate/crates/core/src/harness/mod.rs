//! Sweep configuration, per-cell orchestration and report output.

mod config;
mod report;
mod sweep;

pub use config::SweepConfig;
pub use report::{
    csv_string, emit_csv, load_csv, parse_csv, render_heatmaps, summarize, summary_csv, summary_text, AucPoint,
    CorrEntry, Correlation, EvalReport, EvalRow, Summary, CSV_HEADER,
};
pub use sweep::{cell_seed, cells, evaluate_artifacts, run_cell, run_sweep, CellOutput, Panel};
