use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_forest, Dataset, Hyperparams, ModelError, Target, Task};
use crate::num::Real;
use crate::session::{ConditionKind, Level, SessionMeta};

/// Session-to-fold mapping; all slots of a session share its fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, session_id: &str) -> Option<usize> {
        self.folds.get(session_id).copied()
    }

    /// Session count per fold for each condition stratum.
    pub fn stratum_counts(&self, sessions: &[SessionMeta]) -> BTreeMap<(ConditionKind, Level), Vec<usize>> {
        let mut out: BTreeMap<(ConditionKind, Level), Vec<usize>> = BTreeMap::new();
        for s in sessions {
            if let Some(f) = self.fold_of(&s.session_id) {
                out.entry(s.stratum()).or_insert_with(|| vec![0; self.k])[f] += 1;
            }
        }
        out
    }
}

/// Within each `(kind, level)` stratum, sessions are sorted by id, shuffled
/// with `seed` and dealt round-robin. The dealing position carries over
/// between strata so fold totals stay balanced as well.
pub fn stratified_folds(sessions: &[SessionMeta], k: usize, seed: u64) -> FoldAssignment {
    let k = k.max(1);
    let mut strata: BTreeMap<(ConditionKind, Level), Vec<&str>> = BTreeMap::new();
    for s in sessions {
        strata.entry(s.stratum()).or_default().push(&s.session_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for ids in strata.values_mut() {
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            folds.insert((*id).to_string(), next % k);
            next += 1;
        }
    }
    FoldAssignment { k, folds }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult<F> {
    /// Out-of-fold prediction for every dataset row.
    pub predictions: Vec<F>,
    /// MAE (regression) or accuracy (classification) per fold; `None` for
    /// folds without test rows.
    pub fold_scores: Vec<Option<f64>>,
    /// Mean over folds with test rows.
    pub score: f64,
}

fn score<F: Real>(task: Task, pred: &[F], truth: &[F]) -> f64 {
    match task {
        Task::Regression => crate::eval::mae(pred, truth).map_or(f64::NAN, |v| v.to_f64_lossy()),
        Task::Classification => crate::eval::accuracy(pred, truth).unwrap_or(f64::NAN),
    }
}

pub fn cross_validate<F: Real>(
    ds: &Dataset<F>,
    folds: &FoldAssignment,
    target: Target,
    hp: &Hyperparams,
    seed: u64,
) -> Result<CvResult<F>, ModelError> {
    let mut fold_of_row = Vec::with_capacity(ds.len());
    for key in &ds.keys {
        let f = folds
            .fold_of(&key.session_id)
            .ok_or_else(|| ModelError::InvalidLabels(format!("session {} has no fold", key.session_id)))?;
        fold_of_row.push(f);
    }
    let mut predictions = vec![F::nan(); ds.len()];
    let mut fold_scores = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| fold_of_row[i] == fold);
        if test.is_empty() {
            fold_scores.push(None);
            continue;
        }
        if train.len() < 2 {
            return Err(ModelError::EmptyFold { fold, what: "training" });
        }
        let tr = ds.subset(&train);
        let te = ds.subset(&test);
        let model = fit_forest(&tr.rows, &tr.y, &ds.schema, target, hp, seed.wrapping_add(fold as u64))?;
        let pred = model.predict(&ds.schema, &te.rows)?;
        fold_scores.push(Some(score(target.task(), &pred, &te.y)));
        for (&i, p) in test.iter().zip(pred) {
            predictions[i] = p;
        }
    }
    let scored: Vec<f64> = fold_scores.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    Ok(CvResult {
        predictions,
        score: crate::stats::mean(&scored),
        fold_scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_leaf: Vec<usize>,
    #[serde(default)]
    pub features_per_split: Option<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n_trees: vec![10, 25, 50, 100],
            max_depth: vec![Some(8), Some(16), None],
            min_samples_leaf: vec![1, 5],
            features_per_split: None,
        }
    }
}

impl Grid {
    pub fn single(hp: Hyperparams) -> Self {
        Grid {
            n_trees: vec![hp.n_trees],
            max_depth: vec![hp.max_depth],
            min_samples_leaf: vec![hp.min_samples_leaf],
            features_per_split: hp.features_per_split,
        }
    }

    /// Grid points from cheapest to most expensive: fewer trees, then
    /// shallower (unbounded last), then larger leaves.
    pub fn points(&self) -> Vec<Hyperparams> {
        let mut trees = self.n_trees.clone();
        trees.sort_unstable();
        trees.dedup();
        let mut depths = self.max_depth.clone();
        depths.sort_by_key(|d| d.unwrap_or(usize::MAX));
        depths.dedup();
        let mut leaves = self.min_samples_leaf.clone();
        leaves.sort_unstable_by(|a, b| b.cmp(a));
        leaves.dedup();
        let mut out = Vec::new();
        for &n_trees in &trees {
            for &max_depth in &depths {
                for &min_samples_leaf in &leaves {
                    out.push(Hyperparams {
                        n_trees,
                        max_depth,
                        min_samples_leaf,
                        features_per_split: self.features_per_split,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparams: Hyperparams,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult<F> {
    pub best: Hyperparams,
    pub best_score: f64,
    pub table: Vec<GridPoint>,
    /// Out-of-fold predictions of the selected point.
    pub predictions: Vec<F>,
}

/// Exhaustive search scored by cross-validation: lowest MAE for regression,
/// highest accuracy for classification. Equal scores keep the cheaper point.
/// Failing points are recorded in the table; only an all-failing grid is an
/// error.
pub fn grid_search<F: Real>(
    ds: &Dataset<F>,
    folds: &FoldAssignment,
    grid: &Grid,
    target: Target,
    seed: u64,
) -> Result<GridResult<F>, ModelError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(ModelError::InvalidHyperparams("empty grid".into()));
    }
    let better = |a: f64, b: f64| match target.task() {
        Task::Regression => a < b,
        Task::Classification => a > b,
    };
    let mut table = Vec::with_capacity(points.len());
    let mut best: Option<(Hyperparams, f64, Vec<F>)> = None;
    let mut last_err = None;
    for hp in points {
        match cross_validate(ds, folds, target, &hp, seed) {
            Ok(cv) => {
                log::debug!("{target} {hp:?}: {}", cv.score);
                table.push(GridPoint {
                    hyperparams: hp,
                    score: Some(cv.score),
                    error: None,
                });
                if best.as_ref().is_none_or(|b| better(cv.score, b.1)) {
                    best = Some((hp, cv.score, cv.predictions));
                }
            }
            Err(e) => {
                log::warn!("grid point {hp:?} failed: {e}");
                table.push(GridPoint {
                    hyperparams: hp,
                    score: None,
                    error: Some(e.to_string()),
                });
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((best, best_score, predictions)) => Ok(GridResult {
            best,
            best_score,
            table,
            predictions,
        }),
        None => Err(last_err.unwrap_or(ModelError::EmptyTrainSet)),
    }
}
