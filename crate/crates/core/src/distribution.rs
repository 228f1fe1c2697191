//! Per-group empirical watch-time distributions.
//!
//! Forward labels use mid-ranks, `(count_lt + count_eq / 2) / n`, so they stay
//! strictly inside `(0, 1)`. The inverse interpolates linearly through the
//! knots `((i - 0.5) / n, x_(i))`; on distinct samples the pair is an exact
//! bijection on the order statistics.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grouping::DurationGroups;

/// Default lower bound on samples per duration group.
pub const DEFAULT_MIN_GROUP_SAMPLES: usize = 10;

/// Checkpoints store the full sample up to this size, a quantile grid beyond.
pub const FULL_SAMPLE_LIMIT: usize = 100_000;
pub const DEFAULT_GRID_KNOTS: usize = 1_000;

// Index-space tolerance for snapping a label back onto its knot.
const KNOT_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot fit an ECDF on no samples"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample {v}")));
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    /// Wraps values that are already sorted ascending.
    pub fn from_sorted(sorted: Vec<f64>) -> Result<Self> {
        if sorted.is_empty() {
            return Err(Error::invalid("cannot build an ECDF from no samples"));
        }
        if sorted.iter().any(|v| !v.is_finite()) || sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("ECDF samples must be finite and sorted"));
        }
        Ok(Self { sorted })
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// Mid-rank quantile label of `w`, clamped to `[0.5/n, 1 - 0.5/n]`.
    pub fn label(&self, w: f64) -> f64 {
        let n = self.sorted.len() as f64;
        let lt = self.sorted.partition_point(|&x| x < w);
        let le = self.sorted.partition_point(|&x| x <= w);
        let q = (2 * lt + (le - lt)) as f64 / (2.0 * n);
        q.clamp(0.5 / n, 1.0 - 0.5 / n)
    }

    pub fn inverse(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
        }
        Ok(self.inverse_clamped(q))
    }

    /// Inverse for a `q` already known to lie in `[0, 1]`.
    pub(crate) fn inverse_clamped(&self, q: f64) -> f64 {
        let xs = &self.sorted;
        let n = xs.len();
        // 1-based fractional position on the knot grid
        let pos = q * n as f64 + 0.5;
        if pos <= 1.0 {
            return xs[0];
        }
        if pos >= n as f64 {
            return xs[n - 1];
        }
        let nearest = pos.round();
        if (pos - nearest).abs() <= KNOT_SNAP {
            return xs[nearest as usize - 1];
        }
        let j = pos.floor() as usize;
        let t = pos - j as f64;
        let (lo, hi) = (xs[j - 1], xs[j]);
        (lo + t * (hi - lo)).clamp(lo, hi)
    }

    /// Lossy compression onto `knots` equally spaced quantiles.
    pub fn to_grid(&self, knots: usize) -> Self {
        if knots == 0 || knots >= self.n() {
            return self.clone();
        }
        let sorted = (1..=knots)
            .map(|j| self.inverse_clamped((j as f64 - 0.5) / knots as f64))
            .collect();
        Self { sorted }
    }

    /// The representation written to checkpoints.
    pub fn for_checkpoint(&self) -> Self {
        if self.n() <= FULL_SAMPLE_LIMIT {
            self.clone()
        } else {
            self.to_grid(DEFAULT_GRID_KNOTS)
        }
    }
}

pub fn fit_ecdf(values: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::fit(values)
}

pub fn cdf_label(e: &EmpiricalCdf, w: f64) -> f64 {
    e.label(w)
}

pub fn inverse_cdf(e: &EmpiricalCdf, q: f64) -> Result<f64> {
    e.inverse(q)
}

/// One ECDF per duration group, index-aligned with the groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCdfs {
    cdfs: Vec<EmpiricalCdf>,
}

impl GroupCdfs {
    pub fn new(cdfs: Vec<EmpiricalCdf>) -> Result<Self> {
        if cdfs.is_empty() {
            return Err(Error::invalid("at least one group CDF is required"));
        }
        Ok(Self { cdfs })
    }

    pub fn len(&self) -> usize {
        self.cdfs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdfs.is_empty()
    }

    pub fn get(&self, k: usize) -> &EmpiricalCdf {
        &self.cdfs[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmpiricalCdf> {
        self.cdfs.iter()
    }
}

pub fn fit_group_cdfs(ds: &Dataset, g: &DurationGroups, min_group_samples: usize) -> Result<GroupCdfs> {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); g.m()];
    for r in ds.records() {
        buckets[g.assign(r.duration)].push(r.watch_time);
    }
    let min = min_group_samples.max(1);
    let cdfs = buckets
        .iter()
        .enumerate()
        .map(|(group, b)| {
            if b.len() < min {
                Err(Error::GroupTooSmall {
                    group,
                    count: b.len(),
                    min,
                })
            } else {
                EmpiricalCdf::fit(b)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    GroupCdfs::new(cdfs)
}
