//! Small descriptive-statistics kernels shared by featurization, the
//! synthetic generator checks and the evaluation report.

use std::cmp::Ordering;

use crate::num::Real;

pub fn mean<F: Real>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    sum(xs) / F::from_usize_lossy(xs.len())
}

pub fn sum<F: Real>(xs: &[F]) -> F {
    xs.iter().fold(F::zero(), |acc, &x| acc + x)
}

/// Population standard deviation (divides by `n`).
pub fn std_dev<F: Real>(xs: &[F]) -> F {
    if xs.len() < 2 {
        return F::zero();
    }
    let m = mean(xs);
    let var = xs.iter().fold(F::zero(), |acc, &x| acc + (x - m) * (x - m))
        / F::from_usize_lossy(xs.len());
    var.sqrt()
}

pub fn total_cmp<F: Real>(a: &F, b: &F) -> Ordering {
    a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan()))
}

pub fn sorted<F: Real>(xs: &[F]) -> Vec<F> {
    let mut v = xs.to_vec();
    v.sort_by(total_cmp);
    v
}

/// Nearest-rank percentile of an already sorted sample: the value at rank
/// `ceil(p/100 * n)` (1-based, at least 1). Empty input yields zero.
pub fn nearest_rank<F: Real>(sorted: &[F], pct: f64) -> F {
    if sorted.is_empty() {
        return F::zero();
    }
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Pearson correlation coefficient; `None` when either side has zero variance.
pub fn pearson<F: Real>(xs: &[F], ys: &[F]) -> Option<F> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= F::zero() || syy <= F::zero() {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Ordinary least squares line `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearFit<F> {
    pub intercept: F,
    pub slope: F,
    pub r: F,
}

pub fn linear_fit<F: Real>(xs: &[F], ys: &[F]) -> Option<LinearFit<F>> {
    let r = pearson(xs, ys)?;
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx) = (F::zero(), F::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        sxy = sxy + (x - mx) * (y - my);
        sxx = sxx + (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    Some(LinearFit {
        intercept: my - slope * mx,
        slope,
        r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_matches_definition() {
        let xs = [15.0, 20.0, 35.0, 40.0, 50.0];
        assert_eq!(nearest_rank(&xs, 5.0), 15.0);
        assert_eq!(nearest_rank(&xs, 30.0), 20.0);
        assert_eq!(nearest_rank(&xs, 40.0), 20.0);
        assert_eq!(nearest_rank(&xs, 50.0), 35.0);
        assert_eq!(nearest_rank(&xs, 100.0), 50.0);
        assert_eq!(nearest_rank::<f64>(&[], 50.0), 0.0);
    }

    #[test]
    fn std_is_population() {
        let xs = [2.0f64, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert!((std_dev(&xs) - 2.0).abs() < 1e-12);
        assert_eq!(std_dev(&[3.0f32]), 0.0);
    }

    #[test]
    fn fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!((fit.r - 1.0).abs() < 1e-12);
        assert!(pearson(&xs, &[1.0; 10]).is_none());
    }

    #[test]
    fn generic_over_f32() {
        let xs = [1.0f32, 2.0, 3.0];
        assert_eq!(mean(&xs), 2.0f32);
    }
}
