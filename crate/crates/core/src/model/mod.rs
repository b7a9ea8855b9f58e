//! Random-forest regression and classification over slot features, with
//! session-level stratified cross-validation and grid search.

mod cv;
mod dataset;
mod forest;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ground_truth::{Rating, SlotLabels};

pub use self::cv::{
    cross_validate, grid_search, stratified_folds, CvResult, FoldAssignment, Grid, GridPoint, GridResult,
};
pub use self::dataset::{build_dataset, Dataset};
pub use self::forest::{fit_forest, fit_forest_with, RandomForest, MODEL_FORMAT_VERSION};
pub use self::tree::{Node, Tree};

/// Number of rating classes a classifier can emit.
pub const N_CLASSES: usize = Rating::ALL.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Fps,
    Brisque,
    Piqe,
    BrisqueRating,
    PiqeRating,
}

impl Target {
    pub const ALL: [Target; 5] = [
        Target::Fps,
        Target::Brisque,
        Target::Piqe,
        Target::BrisqueRating,
        Target::PiqeRating,
    ];

    pub fn task(self) -> Task {
        match self {
            Target::Fps | Target::Brisque | Target::Piqe => Task::Regression,
            Target::BrisqueRating | Target::PiqeRating => Task::Classification,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Fps => "fps",
            Target::Brisque => "brisque",
            Target::Piqe => "piqe",
            Target::BrisqueRating => "brisque-rating",
            Target::PiqeRating => "piqe-rating",
        }
    }

    /// Label value for this target, or `None` when the slot lacks scores.
    /// Ratings are encoded by class index.
    pub fn label(self, l: &SlotLabels) -> Option<f64> {
        match self {
            Target::Fps => Some(l.fps),
            Target::Brisque => l.brisque,
            Target::Piqe => l.piqe,
            Target::BrisqueRating => l.brisque_rating.map(|r| r.index() as f64),
            Target::PiqeRating => l.piqe_rating.map(|r| r.index() as f64),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Target::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| format!("unknown target `{s}` (expected fps, brisque, piqe, brisque-rating, piqe-rating)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` selects the task default at fit time.
    pub features_per_split: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 50,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
        }
    }
}

pub const MIN_TREES: usize = 10;
pub const MAX_TREES: usize = 100;

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(MIN_TREES..=MAX_TREES).contains(&self.n_trees) {
            return Err(ModelError::InvalidHyperparams(format!(
                "n_trees {} outside [{MIN_TREES}, {MAX_TREES}]",
                self.n_trees
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidHyperparams("min_samples_leaf must be >= 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ModelError::InvalidHyperparams("max_depth must be >= 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(ModelError::InvalidHyperparams("features_per_split must be >= 1".into()));
        }
        Ok(())
    }

    /// `ceil(sqrt(d))` for classification, `ceil(d/3)` for regression.
    pub fn resolved_features_per_split(&self, task: Task, d: usize) -> usize {
        let default = match task {
            Task::Classification => (d as f64).sqrt().ceil() as usize,
            Task::Regression => d.div_ceil(3),
        };
        self.features_per_split.unwrap_or(default).clamp(1, d.max(1))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training set is empty or has fewer than 2 rows")]
    EmptyTrainSet,
    #[error("feature schema mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    SchemaMismatch { missing: Vec<String>, unexpected: Vec<String> },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("row {row} has {got} features, expected {expected}")]
    RowWidth { row: usize, got: usize, expected: usize },
    #[error("fold {fold} has no {what} rows")]
    EmptyFold { fold: usize, what: &'static str },
    #[error("model file: {0}")]
    Format(String),
}

/// Returns `SchemaMismatch` naming the columns that differ, or `Ok` if the
/// two schemas are identical in content and order.
pub fn check_schema(expected: &[String], got: &[String]) -> Result<(), ModelError> {
    if expected == got {
        return Ok(());
    }
    let missing: Vec<String> = expected.iter().filter(|c| !got.contains(c)).cloned().collect();
    let unexpected: Vec<String> = got.iter().filter(|c| !expected.contains(c)).cloned().collect();
    Err(ModelError::SchemaMismatch { missing, unexpected })
}
