//! Scalar evaluation metrics and distribution exports.

use serde::{Deserialize, Serialize};

use crate::ground_truth::Rating;
use crate::num::Real;
use crate::stats;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions vs {truth} labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("{} prediction/label keys unmatched, first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    AlignmentError(Vec<String>),
}

fn check_lengths(pred: usize, truth: usize) -> Result<(), EvalError> {
    if pred != truth {
        return Err(EvalError::LengthMismatch { pred, truth });
    }
    if pred == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

pub fn mae<F: Real>(pred: &[F], truth: &[F]) -> Result<F, EvalError> {
    check_lengths(pred.len(), truth.len())?;
    let abs: Vec<F> = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).collect();
    Ok(stats::mean(&abs))
}

/// Fraction of predictions with `|pred - truth| <= tol` for each tolerance.
pub fn tolerance_curve<F: Real>(pred: &[F], truth: &[F], tolerances: &[F]) -> Result<Vec<(F, F)>, EvalError> {
    check_lengths(pred.len(), truth.len())?;
    let mut err: Vec<F> = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).collect();
    err.sort_by(stats::total_cmp);
    let n = F::from_usize_lossy(err.len());
    Ok(tolerances
        .iter()
        .map(|&tol| {
            let within = err.partition_point(|&e| e <= tol);
            (tol, F::from_usize_lossy(within) / n)
        })
        .collect())
}

/// Integer tolerances `0..=max`.
pub fn integer_tolerances<F: Real>(max: u32) -> Vec<F> {
    (0..=max).map(|t| F::from_f64_lossy(f64::from(t))).collect()
}

pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, EvalError> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Classes that occur in the truth or the predictions, in rating order.
    pub classes: Vec<Rating>,
    /// Raw counts over all five classes; rows actual, columns predicted.
    pub counts: [[u64; 5]; 5],
    /// One row per observed actual class, as fractions over `classes`.
    pub rows: Vec<(Rating, Vec<f64>)>,
}

impl ConfusionMatrix {
    pub fn row_total(&self, actual: Rating) -> u64 {
        self.counts[actual.index()].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().flatten().sum();
        let diag: u64 = (0..5).map(|i| self.counts[i][i]).sum();
        if total == 0 {
            0.0
        } else {
            diag as f64 / total as f64
        }
    }
}

pub fn confusion_matrix(pred: &[Rating], truth: &[Rating]) -> Result<ConfusionMatrix, EvalError> {
    check_lengths(pred.len(), truth.len())?;
    let mut counts = [[0u64; 5]; 5];
    for (p, t) in pred.iter().zip(truth) {
        counts[t.index()][p.index()] += 1;
    }
    let classes: Vec<Rating> = Rating::ALL
        .into_iter()
        .filter(|r| counts[r.index()].iter().sum::<u64>() > 0 || counts.iter().any(|row| row[r.index()] > 0))
        .collect();
    let rows = Rating::ALL
        .into_iter()
        .filter_map(|actual| {
            let row = &counts[actual.index()];
            let total: u64 = row.iter().sum();
            (total > 0).then(|| (actual, classes.iter().map(|c| row[c.index()] as f64 / total as f64).collect()))
        })
        .collect();
    Ok(ConfusionMatrix { classes, counts, rows })
}

/// Empirical CDF sampled at each distinct value: `(x, P[X <= x])`.
pub fn empirical_cdf<F: Real>(values: &[F]) -> Vec<(F, F)> {
    let s = stats::sorted(values);
    let n = F::from_usize_lossy(s.len());
    let mut out: Vec<(F, F)> = Vec::new();
    for (i, &x) in s.iter().enumerate() {
        let y = F::from_usize_lossy(i + 1) / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = y,
            _ => out.push((x, y)),
        }
    }
    out
}

pub const DENSITY_GRID_POINTS: usize = 200;

/// Gaussian kernel density on a 200-point grid spanning the data +/- 3
/// bandwidths. Bandwidth follows Silverman's rule; degenerate samples fall
/// back to a unit-scale bandwidth.
pub fn kde_density<F: Real>(values: &[F]) -> Result<Vec<(F, F)>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let xs: Vec<f64> = values.iter().map(|v| v.to_f64_lossy()).collect();
    let n = xs.len() as f64;
    let sd = stats::std_dev(&xs);
    let s = stats::sorted(&xs);
    let iqr = stats::nearest_rank(&s, 75.0) - stats::nearest_rank(&s, 25.0);
    let mut spread = sd.min(iqr / 1.34);
    if spread <= 0.0 {
        spread = if sd > 0.0 { sd } else { 1.0 };
    }
    let h = 0.9 * spread * n.powf(-0.2);
    let lo = s[0] - 3.0 * h;
    let hi = s[s.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (DENSITY_GRID_POINTS - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..DENSITY_GRID_POINTS)
        .map(|i| {
            let x = lo + step * i as f64;
            let d: f64 = xs.iter().map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm;
            (F::from_f64_lossy(x), F::from_f64_lossy(d))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Rating::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[4.0f32], &[4.0]).unwrap(), 0.0);
        assert_eq!(mae::<f64>(&[], &[]), Err(EvalError::EmptyInput));
        assert_eq!(mae(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { pred: 1, truth: 2 }));
    }

    #[test]
    fn tolerance_examples() {
        let c = tolerance_curve(&[0.5, 1.5, 2.5], &[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        let acc: Vec<f64> = c.iter().map(|p| p.1).collect();
        assert_eq!(acc, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let c = tolerance_curve(&[2.0, 7.0], &[2.0, 7.0], &[0.0]).unwrap();
        assert_eq!(c[0].1, 1.0);
    }

    #[test]
    fn confusion_examples() {
        let m = confusion_matrix(&[Good, Fair], &[Good, Fair]).unwrap();
        assert_eq!(m.classes, vec![Good, Fair]);
        assert_eq!(m.rows, vec![(Good, vec![1.0, 0.0]), (Fair, vec![0.0, 1.0])]);

        let m = confusion_matrix(&[Good, Good, Good], &[Fair, Fair, Fair]).unwrap();
        assert_eq!(m.rows, vec![(Fair, vec![1.0, 0.0])]);
        assert_eq!(m.classes, vec![Good, Fair]);
        assert_eq!(m.counts[Fair.index()][Good.index()], 3);
        assert_eq!(m.accuracy(), 0.0);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(empirical_cdf(&[3.0, 1.0, 2.0]), vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert_eq!(empirical_cdf(&[2.0, 2.0, 5.0, 5.0]), vec![(2.0, 0.5), (5.0, 1.0)]);
    }

    fn integral(d: &[(f64, f64)]) -> f64 {
        d.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
    }

    #[test]
    fn density_single_value_peaks_there() {
        let d = kde_density(&[7.0f64]).unwrap();
        assert_eq!(d.len(), DENSITY_GRID_POINTS);
        let peak = d.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((peak.0 - 7.0).abs() < 0.05);
        assert!((integral(&d) - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn curve_monotone_and_markov(pairs in proptest::collection::vec((0.0f64..30.0, 0.0f64..30.0), 1..100)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let tols: Vec<f64> = (0..=10).map(f64::from).chain([f64::INFINITY]).collect();
            let c = tolerance_curve(&p, &t, &tols).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert_eq!(c.last().unwrap().1, 1.0);
            let m = mae(&p, &t).unwrap();
            for &(tol, acc) in &c[1..] {
                prop_assert!(acc >= 1.0 - m / tol - 1e-12);
            }
        }

        #[test]
        fn confusion_rows_normalized(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let pred: Vec<Rating> = pairs.iter().map(|p| Rating::ALL[p.0]).collect();
            let truth: Vec<Rating> = pairs.iter().map(|p| Rating::ALL[p.1]).collect();
            let m = confusion_matrix(&pred, &truth).unwrap();
            for (_, row) in &m.rows {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
            let weighted: f64 = m.rows.iter().map(|(a, row)| {
                let i = m.classes.iter().position(|c| c == a).unwrap();
                row[i] * m.row_total(*a) as f64
            }).sum::<f64>() / pred.len() as f64;
            prop_assert!((weighted - accuracy(&pred, &truth).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn density_normalized(vals in proptest::collection::vec(0.0f64..100.0, 1..60)) {
            let d = kde_density(&vals).unwrap();
            prop_assert!((integral(&d) - 1.0).abs() < 0.01);
        }
    }
}
