//! Dataset loaders, the answer-grouped train/test split, and synthetic
//! planted-defect scenarios for desk-scale end-to-end runs.

mod loaders;
mod split;
mod synthetic;

pub use loaders::{load_bfcl, load_bfcl_tools, load_xlam, BfclCategory, XlamLoad};
pub use split::{split_by_answer, split_by_answer_with, DatasetSplit, SplitOptions};
pub use synthetic::{
    generate_synthetic_scenario, EditorBehavior, PlantedDefect, ScenarioSpec, SyntheticScenario,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset file {0} is empty")]
    Empty(String),
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("inconsistent scenario spec: {0}")]
    InconsistentScenario(String),
}
