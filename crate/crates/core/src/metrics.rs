//! MAE, pairwise concordance (XAUC), per-user XAUC (XGAUC) and a per-duration
//! group breakdown.
//!
//! Pair scoring: pairs with equal truths are not scored; a prediction tie
//! scores 0.5.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::DurationGroups;

const PAIR_CHUNK: usize = 1 << 16;

fn check_aligned(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.iter().chain(truth).any(|x| !x.is_finite()) {
        return Err(Error::invalid("metrics require finite values"));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_aligned(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, y)| (y - p).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Exact XAUC over every unordered pair, in `O(n log n)`.
///
/// Records are swept in increasing truth order; a Fenwick tree over
/// prediction ranks counts, for each record, the earlier (strictly smaller
/// truth) records whose prediction is lower or tied.
pub fn xauc_exact(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_aligned(pred, truth)?;
    let (twice_score, pairs) = concordance_counts(pred, truth);
    if pairs == 0 {
        return Err(Error::NoScorablePair);
    }
    Ok(twice_score as f64 / (2.0 * pairs as f64))
}

/// Returns (2 * summed pair scores, number of scored pairs).
fn concordance_counts(pred: &[f64], truth: &[f64]) -> (u128, u128) {
    let n = pred.len();
    let mut levels = pred.to_vec();
    levels.sort_unstable_by(f64::total_cmp);
    levels.dedup();
    let rank = |p: f64| levels.partition_point(|&x| x < p);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| truth[a].total_cmp(&truth[b]));

    let mut tree = Fenwick::new(levels.len());
    let mut inserted: u128 = 0;
    let mut twice: u128 = 0;
    let mut pairs: u128 = 0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && truth[order[end]] == truth[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            let r = rank(pred[i]);
            let below = tree.prefix(r) as u128;
            let tied = tree.prefix(r + 1) as u128 - below;
            twice += 2 * below + tied;
            pairs += inserted;
        }
        for &i in &order[start..end] {
            tree.add(rank(pred[i]));
        }
        inserted += (end - start) as u128;
        start = end;
    }
    (twice, pairs)
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Default sampled-pair budget: `min(10 n, 10^7)`.
pub fn default_num_pairs(n: usize) -> usize {
    (10 * n).min(10_000_000)
}

/// XAUC over `num_pairs` uniformly drawn index pairs; pairs with equal truths
/// are redrawn. Each chunk of pairs has its own seeded stream, so the result
/// does not depend on how chunks are scheduled.
pub fn xauc_sampled(pred: &[f64], truth: &[f64], num_pairs: usize, seed: u64) -> Result<f64> {
    check_aligned(pred, truth)?;
    if num_pairs == 0 {
        return Err(Error::invalid("num_pairs must be >= 1"));
    }
    let n = pred.len();
    let scorable = n >= 2 && truth.iter().any(|&t| t != truth[0]);
    if !scorable {
        return Err(Error::NoScorablePair);
    }
    let chunks = num_pairs.div_ceil(PAIR_CHUNK);
    let twice: u64 = (0..chunks)
        .map(|c| {
            let count = PAIR_CHUNK.min(num_pairs - c * PAIR_CHUNK);
            score_chunk(pred, truth, count, seed, c as u64)
        })
        .sum();
    Ok(twice as f64 / (2.0 * num_pairs as f64))
}

fn score_chunk(pred: &[f64], truth: &[f64], count: usize, seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = pred.len();
    let mut twice = 0;
    for _ in 0..count {
        let (i, j) = loop {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if truth[i] != truth[j] {
                break (i, j);
            }
        };
        twice += pair_score_twice(pred[i], pred[j], truth[i], truth[j]);
    }
    twice
}

#[inline]
fn pair_score_twice(pi: f64, pj: f64, ti: f64, tj: f64) -> u64 {
    if pi == pj {
        1
    } else if (pi < pj) == (ti < tj) {
        2
    } else {
        0
    }
}

/// Per-user exact XAUC weighted by each scored user's record count. Users
/// with fewer than two records or no scorable pair are skipped.
pub fn xgauc(pred: &[f64], truth: &[f64], user_ids: &[u64]) -> Result<f64> {
    check_aligned(pred, truth)?;
    if user_ids.len() != pred.len() {
        return Err(Error::Shape("user ids not aligned with predictions".into()));
    }
    let mut by_user: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &u) in user_ids.iter().enumerate() {
        by_user.entry(u).or_default().push(i);
    }
    let mut num = 0.0;
    let mut den = 0usize;
    let mut p = Vec::new();
    let mut t = Vec::new();
    for idx in by_user.values() {
        if idx.len() < 2 {
            continue;
        }
        p.clear();
        t.clear();
        p.extend(idx.iter().map(|&i| pred[i]));
        t.extend(idx.iter().map(|&i| truth[i]));
        match xauc_exact(&p, &t) {
            Ok(x) => {
                num += x * idx.len() as f64;
                den += idx.len();
            }
            Err(Error::NoScorablePair) => {}
            Err(e) => return Err(e),
        }
    }
    if den == 0 {
        return Err(Error::NoScorableUser);
    }
    Ok(num / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostic {
    pub group: usize,
    pub count: usize,
    /// `None` for empty groups.
    pub mae: Option<f64>,
    /// `None` when the group has no scorable pair.
    pub xauc: Option<f64>,
    pub mean_truth: Option<f64>,
}

pub fn duration_bias_report(
    pred: &[f64],
    truth: &[f64],
    durations: &[f64],
    g: &DurationGroups,
) -> Result<Vec<GroupDiagnostic>> {
    check_aligned(pred, truth)?;
    if durations.len() != pred.len() {
        return Err(Error::Shape("durations not aligned with predictions".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g.m()];
    for (i, &d) in durations.iter().enumerate() {
        members[g.assign(d)].push(i);
    }
    members
        .iter()
        .enumerate()
        .map(|(k, idx)| {
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
            let xauc = match xauc_exact(&p, &t) {
                Ok(x) => Some(x),
                Err(Error::NoScorablePair) => None,
                Err(e) => return Err(e),
            };
            let (mae_k, mean_truth) = if idx.is_empty() {
                (None, None)
            } else {
                (Some(mae(&p, &t)?), Some(t.iter().sum::<f64>() / t.len() as f64))
            };
            Ok(GroupDiagnostic {
                group: k,
                count: idx.len(),
                mae: mae_k,
                xauc,
                mean_truth,
            })
        })
        .collect()
}

/// Max over min of the per-group MAE, over non-empty groups with positive MAE.
pub fn mae_spread(per_group: &[GroupDiagnostic]) -> Option<f64> {
    let maes: Vec<f64> = per_group.iter().filter_map(|g| g.mae).filter(|&m| m > 0.0).collect();
    if maes.is_empty() {
        return None;
    }
    let max = maes.iter().copied().fold(f64::MIN, f64::max);
    let min = maes.iter().copied().fold(f64::MAX, f64::min);
    Some(max / min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: f64,
    /// Sampled XAUC over `pairs_sampled` pairs drawn with `seed`.
    pub xauc: f64,
    pub xauc_exact: f64,
    pub xgauc: f64,
    pub per_group: Vec<GroupDiagnostic>,
    pub pairs_sampled: usize,
    pub seed: u64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "n,mae,xauc,xauc_exact,xgauc,pairs_sampled,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n, self.mae, self.xauc, self.xauc_exact, self.xgauc, self.pairs_sampled, self.seed
        )
    }
}

/// Every metric for one prediction vector.
pub fn evaluate(
    pred: &[f64],
    truth: &[f64],
    user_ids: &[u64],
    durations: &[f64],
    diagnostic_groups: &DurationGroups,
    num_pairs: usize,
    seed: u64,
) -> Result<EvalReport> {
    Ok(EvalReport {
        n: pred.len(),
        mae: mae(pred, truth)?,
        xauc: xauc_sampled(pred, truth, num_pairs, seed)?,
        xauc_exact: xauc_exact(pred, truth)?,
        xgauc: xgauc(pred, truth, user_ids)?,
        per_group: duration_bias_report(pred, truth, durations, diagnostic_groups)?,
        pairs_sampled: num_pairs,
        seed,
    })
}
