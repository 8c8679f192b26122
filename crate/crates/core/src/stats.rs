//! Streaming summary statistics and confidence intervals for aggregating
//! macro-replications.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Count, mean and centred second moment, mergeable in any grouping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combines two summaries (Chan et al. pairwise update).
    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        RunningStats {
            count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Half-width of the two-sided Student-t confidence interval at `level`.
    pub fn ci_half_width(&self, level: f64) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        t_quantile(0.5 + 0.5 * level, (self.count - 1) as f64) * self.std_error()
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::default();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Quantile of Student's t distribution with `dof` degrees of freedom.
pub fn t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// Pointwise mean and confidence band of equally long curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl CurveSummary {
    /// Summarises `curves` (all the same length), reducing in input order.
    pub fn from_curves(curves: &[Vec<f64>], level: f64) -> CurveSummary {
        let len = curves.first().map_or(0, Vec::len);
        let mut stats = vec![RunningStats::default(); len];
        for curve in curves {
            debug_assert_eq!(curve.len(), len);
            for (s, x) in stats.iter_mut().zip(curve) {
                s.push(*x);
            }
        }
        CurveSummary {
            mean: stats.iter().map(RunningStats::mean).collect(),
            half_width: stats.iter().map(|s| s.ci_half_width(level)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        Some((*self.mean.last()?, *self.half_width.last()?))
    }
}
