//! Summary statistics for delivery-rate series.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Quantile of ascending `sorted` by linear interpolation between order
/// statistics at rank `q * (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Boxplot statistics over per-episode delivery percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl EvalSummary {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Protocol("no evaluation samples".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite evaluation sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile(&sorted, 0.25);
        let median = quantile(&sorted, 0.5);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        let (fence_low, fence_high) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        Ok(EvalSummary {
            episodes: samples.len(),
            median,
            q1,
            q3,
            whisker_low: sorted[0].max(fence_low),
            whisker_high: sorted[sorted.len() - 1].min(fence_high),
            outliers: sorted
                .iter()
                .copied()
                .filter(|&x| x < fence_low || x > fence_high)
                .collect(),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Running mean and variance (Welford). A constant stream has a mean equal
/// to that constant bit for bit.
#[derive(Clone, Copy, Debug, Default)]
pub struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation; zero below two observations.
    pub fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Trailing moving average; the first `window - 1` points average what is
/// available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..xs.len())
        .map(|i| {
            let mut r = Running::default();
            for &x in &xs[(i + 1).saturating_sub(window)..=i] {
                r.push(x);
            }
            r.mean()
        })
        .collect()
}

/// Rule for the episode at which a smoothed curve has converged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRule {
    /// Fraction of the plateau that has to be reached.
    pub fraction: f64,
    /// Episodes the curve has to stay at or above that level.
    pub hold: usize,
    /// Trailing episodes averaged into the plateau value.
    pub plateau_window: usize,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            fraction: 0.95,
            hold: 500,
            plateau_window: 1000,
        }
    }
}

impl ConvergenceRule {
    pub fn plateau(&self, smoothed: &[f64]) -> Option<f64> {
        if smoothed.is_empty() {
            return None;
        }
        let tail = &smoothed[smoothed.len().saturating_sub(self.plateau_window)..];
        let mut r = Running::default();
        tail.iter().for_each(|&x| r.push(x));
        Some(r.mean())
    }

    /// First episode from which the curve stays at or above
    /// `fraction * plateau` for `hold` consecutive episodes.
    pub fn episode(&self, smoothed: &[f64]) -> Option<usize> {
        let level = self.fraction * self.plateau(smoothed)?;
        let hold = self.hold.max(1);
        let mut run = 0;
        for (i, &x) in smoothed.iter().enumerate() {
            if x >= level {
                run += 1;
                if run == hold {
                    return Some(i + 1 - hold);
                }
            } else {
                run = 0;
            }
        }
        None
    }
}

/// Median of a list, `None` when empty.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile(&sorted, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_built_quantiles() {
        let s = EvalSummary::from_samples(&[100.0, 0.0, 50.0, 50.0]).unwrap();
        assert_eq!(s.q1, 37.5);
        assert_eq!(s.median, 50.0);
        assert_eq!(s.q3, 62.5);
        assert_eq!(s.whisker_low, 0.0);
        assert_eq!(s.whisker_high, 100.0);
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn perfect_policy_summary() {
        let s = EvalSummary::from_samples(&[100.0; 1000]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (100.0, 100.0, 100.0));
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn whiskers_stop_at_fences() {
        let mut xs = vec![50.0; 20];
        xs.extend([0.0, 100.0]);
        let s = EvalSummary::from_samples(&xs).unwrap();
        assert_eq!((s.whisker_low, s.whisker_high), (50.0, 50.0));
        assert_eq!(s.outliers, vec![0.0, 100.0]);
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(EvalSummary::from_samples(&[]).is_err());
    }

    #[test]
    fn smoothing_edge_cases() {
        let xs = [0.1, 0.7, 0.3, 0.9, 0.2];
        assert_eq!(moving_average(&xs, 1), xs.to_vec());
        assert_eq!(moving_average(&[0.1; 300], 100), vec![0.1; 300]);
        let m = moving_average(&xs, 2);
        assert!((m[3] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn running_mean_of_constants_is_exact() {
        let mut r = Running::default();
        for _ in 0..10 {
            r.push(0.1);
        }
        assert_eq!(r.mean(), 0.1);
        assert_eq!(r.std(), 0.0);
    }

    #[test]
    fn convergence_episode() {
        let rule = ConvergenceRule {
            fraction: 0.95,
            hold: 3,
            plateau_window: 4,
        };
        let curve = [0.0, 96.0, 10.0, 95.0, 99.0, 100.0, 100.0, 100.0, 100.0];
        assert_eq!(rule.episode(&curve), Some(3));
        assert_eq!(rule.episode(&[0.0, 0.0, 100.0]), None);
    }

    proptest! {
        #[test]
        fn summary_ordering(xs in prop::collection::vec(0.0f64..100.0, 1..200)) {
            let s = EvalSummary::from_samples(&xs).unwrap();
            prop_assert!(s.q1 <= s.median && s.median <= s.q3);
            prop_assert!(s.whisker_low <= s.q1 && s.q3 <= s.whisker_high);
            let fence = 1.5 * s.iqr();
            for o in &s.outliers {
                prop_assert!(*o < s.q1 - fence || *o > s.q3 + fence);
            }
        }
    }
}
