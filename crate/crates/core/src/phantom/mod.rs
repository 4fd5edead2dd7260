//! Synthetic chest-like phantoms, graded mask corruption, and the grid
//! experiment that checks whether estimated subgroup gaps track true ones.

mod degrade;
mod generate;
mod grid;
mod seeds;

pub use degrade::{degrade, DegradationLevel, NUM_LEVELS};
pub use generate::{
    generate_phantom, Ellipse, PhantomSpec, Sex, ShapeParams, DEFAULT_NOISE, HEART, LUNG,
};
pub use grid::{
    cell_predictions, gap_diagnostics, run_grid, CorpusConfig, GapDiagnostics, GridCell,
    GridResult, PhantomCase, PhantomCorpus, ThresholdAgreement, REPORT_THRESHOLDS, SEX_ATTRIBUTE,
};
pub use seeds::derive_seed;
