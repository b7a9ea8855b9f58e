use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, Presorted, Tree, TreeParams};
use super::{check_schema, Hyperparams, ModelError, Target, Task, N_CLASSES};
use crate::ground_truth::Rating;
use crate::num::Real;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Bagged CART ensemble. Regression averages tree outputs; classification
/// takes a majority vote over class indices, ties to the lower index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: serde::de::DeserializeOwned"))]
pub struct RandomForest<F> {
    pub version: u32,
    pub task: Task,
    pub target: Target,
    pub feature_schema: Vec<String>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub trees: Vec<Tree<F>>,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn fit_forest<F: Real>(
    rows: &[Vec<F>],
    y: &[F],
    schema: &[String],
    target: Target,
    hp: &Hyperparams,
    seed: u64,
) -> Result<RandomForest<F>, ModelError> {
    fit_forest_with(rows, y, schema, target, hp, seed, true)
}

/// `parallel` only changes scheduling: each tree draws from its own
/// `(seed, tree index)` stream, so both modes give identical forests.
pub fn fit_forest_with<F: Real>(
    rows: &[Vec<F>],
    y: &[F],
    schema: &[String],
    target: Target,
    hp: &Hyperparams,
    seed: u64,
    parallel: bool,
) -> Result<RandomForest<F>, ModelError> {
    hp.validate()?;
    let task = target.task();
    if rows.len() < 2 || y.len() != rows.len() {
        return Err(ModelError::EmptyTrainSet);
    }
    let d = schema.len();
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(ModelError::RowWidth {
            row,
            got: r.len(),
            expected: d,
        });
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(ModelError::InvalidLabels(format!("non-finite label {bad}")));
    }
    if task == Task::Classification {
        if let Some(bad) = y
            .iter()
            .find(|v| v.fract() != F::zero() || **v < F::zero() || v.to_usize().is_none_or(|c| c >= N_CLASSES))
        {
            return Err(ModelError::InvalidLabels(format!("{bad} is not a rating class index")));
        }
    }

    let cols: Vec<Vec<F>> = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let data = Presorted::new(&cols, y);
    let params = TreeParams {
        task,
        max_depth: hp.max_depth,
        min_samples_leaf: hp.min_samples_leaf,
        features_per_split: hp.resolved_features_per_split(task, d),
    };
    let n = rows.len();
    let grow = |t: usize| {
        let mut rng = tree_rng(seed, t);
        let mut weights = vec![0u32; n];
        for _ in 0..n {
            weights[rng.random_range(0..n)] += 1;
        }
        grow_tree(&data, &weights, &params, &mut rng)
    };
    let trees: Vec<Tree<F>> = if parallel {
        (0..hp.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..hp.n_trees).map(grow).collect()
    };
    Ok(RandomForest {
        version: MODEL_FORMAT_VERSION,
        task,
        target,
        feature_schema: schema.to_vec(),
        hyperparams: *hp,
        seed,
        trees,
    })
}

impl<F: Real> RandomForest<F> {
    /// Predicts rows whose columns follow `schema`, which must equal the
    /// training schema.
    pub fn predict(&self, schema: &[String], rows: &[Vec<F>]) -> Result<Vec<F>, ModelError> {
        check_schema(&self.feature_schema, schema)?;
        let d = self.feature_schema.len();
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(ModelError::RowWidth {
                row,
                got: r.len(),
                expected: d,
            });
        }
        Ok(rows.iter().map(|r| self.predict_row(r)).collect())
    }

    pub fn predict_row(&self, row: &[F]) -> F {
        match self.task {
            Task::Regression => {
                // summing in sorted order makes the mean independent of tree order
                let mut outs: Vec<F> = self.trees.iter().map(|t| t.predict_row(row)).collect();
                outs.sort_by(crate::stats::total_cmp);
                let (lo, hi) = (outs[0], outs[outs.len() - 1]);
                if lo == hi {
                    return lo;
                }
                crate::stats::mean(&outs).max(lo).min(hi)
            }
            Task::Classification => {
                let mut votes = [0usize; N_CLASSES];
                for t in &self.trees {
                    let c = t.predict_row(row).to_usize().unwrap_or(0).min(N_CLASSES - 1);
                    votes[c] += 1;
                }
                let mut best = 0;
                for c in 1..N_CLASSES {
                    if votes[c] > votes[best] {
                        best = c;
                    }
                }
                F::from_usize_lossy(best)
            }
        }
    }

    pub fn predict_ratings(&self, schema: &[String], rows: &[Vec<F>]) -> Result<Vec<Rating>, ModelError> {
        if self.task != Task::Classification {
            return Err(ModelError::Format(format!("{} is not a rating model", self.target)));
        }
        Ok(self
            .predict(schema, rows)?
            .into_iter()
            .map(|v| Rating::from_index(v.to_usize().unwrap_or(0)).unwrap_or(Rating::Bad))
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(s).map_err(|e| ModelError::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Structural checks on a loaded model.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported model version {}", self.version)));
        }
        if self.task != self.target.task() {
            return Err(ModelError::Format(format!("task {:?} does not fit target {}", self.task, self.target)));
        }
        let d = self.feature_schema.len();
        for (i, t) in self.trees.iter().enumerate() {
            if t.nodes.is_empty() {
                return Err(ModelError::Format(format!("tree {i} is empty")));
            }
            if t.max_feature().is_some_and(|f| f as usize >= d) {
                return Err(ModelError::Format(format!("tree {i} splits on a feature outside the schema")));
            }
            let n = t.nodes.len() as u32;
            if t.nodes.iter().any(|nd| nd.feature.is_some() && (nd.left >= n || nd.right >= n)) {
                return Err(ModelError::Format(format!("tree {i} has a dangling child index")));
            }
        }
        Ok(())
    }
}
