//! Equal-frequency binning of video duration.
//!
//! Group `k` covers the half-open interval `(b_k, b_{k+1}]`, with the first
//! group open to the left and the last open to the right, so a sample sitting
//! exactly on a boundary joins the lower group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationGroups {
    m: usize,
    boundaries: Vec<f64>,
}

impl DurationGroups {
    /// Rebuilds groups from stored boundaries (e.g. a checkpoint).
    pub fn from_boundaries(m: usize, boundaries: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("group count must be >= 1"));
        }
        if boundaries.len() != m - 1 {
            return Err(Error::invalid(format!(
                "{} boundaries given for {m} groups",
                boundaries.len()
            )));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("boundaries must be finite and non-decreasing"));
        }
        Ok(Self { m, boundaries })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Smallest `k` with `d <= b_{k+1}`, else the last group.
    pub fn assign(&self, d: f64) -> usize {
        self.boundaries.partition_point(|&b| b < d)
    }
}

/// Cut values are order statistics: `b_i` is the `ceil(i * n / m)`-th smallest
/// duration, so every boundary is an observed value.
pub fn fit_duration_groups(durations: &[f64], m: usize) -> Result<DurationGroups> {
    if durations.is_empty() {
        return Err(Error::invalid("cannot fit duration groups on empty input"));
    }
    if m == 0 {
        return Err(Error::invalid("group count must be >= 1"));
    }
    let n = durations.len();
    if m > n {
        return Err(Error::invalid(format!("group count {m} exceeds sample count {n}")));
    }
    if let Some(d) = durations.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(Error::invalid(format!("duration {d} is not a positive real")));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let boundaries = (1..m)
        .map(|i| {
            let rank = (i * n).div_ceil(m);
            sorted[rank - 1]
        })
        .collect();
    Ok(DurationGroups { m, boundaries })
}

pub fn assign_group(g: &DurationGroups, d: f64) -> usize {
    g.assign(d)
}

pub fn group_sizes(g: &DurationGroups, durations: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; g.m];
    for &d in durations {
        counts[g.assign(d)] += 1;
    }
    counts
}
