//! The four watch-time predictors.
//!
//! * `Vr` regresses raw watch time.
//! * `Wlr` fits a watch-time-weighted click-through style classifier on
//!   "watched past the 60th percentile" and reads watch time off the odds.
//! * `D2q` splits by duration quantile, maps each record's watch time to its
//!   within-group quantile, regresses that quantile with one shared network,
//!   and decodes through the group's inverse CDF.
//! * `ResD2q` is `D2q` with a residual duration tower.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distribution::{fit_ecdf, fit_group_cdfs, GroupCdfs, DEFAULT_MIN_GROUP_SAMPLES};
use crate::error::{Error, Result};
use crate::grouping::{fit_duration_groups, DurationGroups};
use crate::model::{
    forward_heads, train, Architecture, Batch, HeadTarget, LossKind, ModelConfig, NetParams, OutputHead,
};
use crate::synthgen::DiscreteToyWorld;

/// Probabilities are kept this far from 0 and 1 before forming odds.
pub const PROB_EPS: f64 = 1e-7;
const PREDICT_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Vr,
    Wlr,
    D2q,
    Resd2q,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Vr, MethodKind::Wlr, MethodKind::D2q, MethodKind::Resd2q];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Vr => "vr",
            MethodKind::Wlr => "wlr",
            MethodKind::D2q => "d2q",
            MethodKind::Resd2q => "resd2q",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            MethodKind::Vr => "VR",
            MethodKind::Wlr => "WLR",
            MethodKind::D2q => "D2Q",
            MethodKind::Resd2q => "Res-D2Q",
        }
    }

    pub fn uses_groups(self) -> bool {
        matches!(self, MethodKind::D2q | MethodKind::Resd2q)
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "vr" => Ok(MethodKind::Vr),
            "wlr" => Ok(MethodKind::Wlr),
            "d2q" => Ok(MethodKind::D2q),
            "resd2q" => Ok(MethodKind::Resd2q),
            _ => Err(Error::invalid(format!("unknown method {s:?}"))),
        }
    }
}

/// How WLR turns its heads into seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WlrMode {
    /// `p_w / (1 - p_w) * (1 - p_q60)`.
    #[default]
    Adapted,
    /// `p_w / (1 - p_w)`.
    Classic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorOptions {
    pub min_group_samples: usize,
    pub wlr_mode: WlrMode,
}

impl Default for PredictorOptions {
    fn default() -> Self {
        Self {
            min_group_samples: DEFAULT_MIN_GROUP_SAMPLES,
            wlr_mode: WlrMode::Adapted,
        }
    }
}

/// Standardizes raw durations before they enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationScaler {
    pub mean: f64,
    pub sd: f64,
}

impl DurationScaler {
    pub fn fit(durations: &[f64]) -> Self {
        let n = durations.len().max(1) as f64;
        let mean = durations.iter().sum::<f64>() / n;
        let var = durations.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, sd }
    }

    pub fn apply(&self, d: f64) -> f64 {
        (d - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub config: ModelConfig,
    pub options: PredictorOptions,
    pub data_fingerprint: String,
    pub schema_hash: String,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub kind: MethodKind,
    pub arch: Architecture,
    pub params: NetParams,
    pub groups: Option<DurationGroups>,
    pub group_cdfs: Option<GroupCdfs>,
    pub q60_threshold: Option<f64>,
    /// VR regresses `w / target_scale` (the largest training watch time, so
    /// targets share the unit range of the other heads); predictions are
    /// scaled back.
    pub target_scale: f64,
    pub duration_scaler: DurationScaler,
    pub wlr_mode: WlrMode,
    pub train_meta: TrainMeta,
}

/// Model-side features of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<'a> {
    pub dense: &'a [f64],
    pub ids: &'a [u32],
}

pub fn make_d2q_labels(ds: &Dataset, g: &DurationGroups, cdfs: &GroupCdfs) -> Result<Vec<f64>> {
    if cdfs.len() != g.m() {
        return Err(Error::Shape(format!("{} CDFs for {} groups", cdfs.len(), g.m())));
    }
    Ok(ds
        .records()
        .iter()
        .map(|r| cdfs.get(g.assign(r.duration)).label(r.watch_time))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlrLabels {
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub threshold: f64,
}

/// Positives watched at least the 0.6 quantile of training watch time; they
/// carry their watch time as weight, negatives weight 1.
pub fn make_wlr_labels(ds: &Dataset) -> Result<WlrLabels> {
    let w = ds.watch_times();
    let threshold = fit_ecdf(&w)?.inverse(0.6)?;
    let labels: Vec<f64> = w.iter().map(|&x| f64::from(u8::from(x >= threshold))).collect();
    let weights = w
        .iter()
        .zip(&labels)
        .map(|(&x, &y)| if y == 1.0 { x } else { 1.0 })
        .collect();
    Ok(WlrLabels {
        labels,
        weights,
        threshold,
    })
}

/// `p_w / (1 - p_w) * (1 - p_q60)` with `p_w` clamped away from 0 and 1.
pub fn wlr_adapted(p_w: f64, p_q60: f64) -> f64 {
    wlr_odds(p_w) * (1.0 - p_q60.clamp(0.0, 1.0))
}

pub fn wlr_odds(p_w: f64) -> f64 {
    let p = p_w.clamp(PROB_EPS, 1.0 - PROB_EPS);
    p / (1.0 - p)
}

/// `sum_d P(D = d) E[W | u, v, d]`.
pub fn backdoor_estimate(world: &DiscreteToyWorld, u: usize, v: usize) -> Result<f64> {
    world
        .p_duration
        .iter()
        .enumerate()
        .map(|(d, p)| Ok(p * world.expected(u, v, d)?))
        .sum()
}

/// Backdoor adjustment with a fitted predictor standing in for `E[W|u,v,d]`.
pub fn backdoor_with_predictor(p: &Predictor, world: &DiscreteToyWorld, u: usize, v: usize) -> Result<f64> {
    let ids = [u as u32, v as u32];
    let f = Features { dense: &[], ids: &ids };
    world
        .durations
        .iter()
        .zip(&world.p_duration)
        .map(|(&d, &pd)| Ok(pd * p.predict(&f, d)?))
        .sum()
}

fn input_batch(ds: &Dataset, scaler: &DurationScaler) -> Batch {
    let schema = ds.schema();
    let mut b = Batch {
        dense: Vec::with_capacity(ds.len() * schema.dense_len),
        ids: Vec::with_capacity(ds.len() * schema.id_slots()),
        duration: Vec::with_capacity(ds.len()),
        targets: Vec::new(),
    };
    for r in ds.records() {
        b.dense.extend_from_slice(&r.dense_features);
        b.ids.extend_from_slice(&r.id_features);
        b.duration.push(scaler.apply(r.duration));
    }
    b
}

pub fn train_predictor(kind: MethodKind, ds: &Dataset, m: usize, c: &ModelConfig) -> Result<Predictor> {
    train_predictor_with(kind, ds, m, c, &PredictorOptions::default())
}

pub fn train_predictor_with(
    kind: MethodKind,
    ds: &Dataset,
    m: usize,
    c: &ModelConfig,
    opts: &PredictorOptions,
) -> Result<Predictor> {
    if m == 0 {
        return Err(Error::invalid("group count must be >= 1"));
    }
    if m > 1 && !kind.uses_groups() {
        return Err(Error::invalid(format!("m>1 invalid for {kind}")));
    }
    let mut c = c.clone();
    match kind {
        MethodKind::Vr => {
            c.output_head = OutputHead::Linear;
            c.duration_tower = None;
        }
        MethodKind::Wlr | MethodKind::D2q => {
            c.output_head = OutputHead::Sigmoid;
            c.duration_tower = None;
        }
        MethodKind::Resd2q => {
            c.output_head = OutputHead::Sigmoid;
            if c.duration_tower.is_none() {
                c.duration_tower = Some(ModelConfig::default_tower());
            }
        }
    }
    let schema = ds.schema();
    let heads = if kind == MethodKind::Wlr { 2 } else { 1 };
    let arch = Architecture::new(&c, schema.dense_len, &schema.id_slot_vocab_sizes, heads)?;
    let scaler = DurationScaler::fit(&ds.durations());
    let mut batch = input_batch(ds, &scaler);

    let mut groups = None;
    let mut group_cdfs = None;
    let mut q60_threshold = None;
    let mut target_scale = 1.0;
    match kind {
        MethodKind::Vr => {
            let w = ds.watch_times();
            let max = w.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                target_scale = max;
            }
            let labels = w.iter().map(|x| x / target_scale).collect();
            batch.targets = vec![HeadTarget::unweighted(LossKind::Mse, labels)];
        }
        MethodKind::Wlr => {
            let l = make_wlr_labels(ds)?;
            q60_threshold = Some(l.threshold);
            batch.targets = vec![
                HeadTarget {
                    loss: LossKind::WeightedLogLoss,
                    labels: l.labels.clone(),
                    weights: l.weights,
                },
                HeadTarget::unweighted(LossKind::WeightedLogLoss, l.labels),
            ];
        }
        MethodKind::D2q | MethodKind::Resd2q => {
            let g = fit_duration_groups(&ds.durations(), m)?;
            let cdfs = fit_group_cdfs(ds, &g, opts.min_group_samples)?;
            let labels = make_d2q_labels(ds, &g, &cdfs)?;
            batch.targets = vec![HeadTarget::unweighted(LossKind::Mse, labels)];
            groups = Some(g);
            group_cdfs = Some(cdfs);
        }
    }
    let (params, report) = train(&c, &arch, &batch)?;
    Ok(Predictor {
        kind,
        arch,
        params,
        groups,
        group_cdfs,
        q60_threshold,
        target_scale,
        duration_scaler: scaler,
        wlr_mode: opts.wlr_mode,
        train_meta: TrainMeta {
            seed: c.seed,
            config: c,
            options: opts.clone(),
            data_fingerprint: ds.fingerprint(),
            schema_hash: schema.hash(),
            epoch_losses: report.epoch_losses,
        },
    })
}

impl Predictor {
    pub fn m(&self) -> usize {
        self.groups.as_ref().map_or(1, DurationGroups::m)
    }

    /// Converts raw head outputs for one row into seconds.
    pub fn decode(&self, heads: &[f64], duration: f64) -> Result<f64> {
        let w = match self.kind {
            MethodKind::Vr => (heads[0] * self.target_scale).max(0.0),
            MethodKind::Wlr => match self.wlr_mode {
                WlrMode::Adapted => wlr_adapted(heads[0], heads[1]),
                WlrMode::Classic => wlr_odds(heads[0]),
            },
            MethodKind::D2q | MethodKind::Resd2q => {
                let (g, cdfs) = match (&self.groups, &self.group_cdfs) {
                    (Some(g), Some(c)) => (g, c),
                    _ => return Err(Error::Checkpoint("quantile predictor without group CDFs".into())),
                };
                cdfs.get(g.assign(duration)).inverse_clamped(heads[0].clamp(0.0, 1.0))
            }
        };
        Ok(w)
    }

    pub fn predict(&self, f: &Features<'_>, duration: f64) -> Result<f64> {
        check_duration(duration)?;
        let b = Batch {
            dense: f.dense.to_vec(),
            ids: f.ids.to_vec(),
            duration: vec![self.duration_scaler.apply(duration)],
            targets: Vec::new(),
        };
        let heads = forward_heads(&self.params, &b)?;
        let row: Vec<f64> = heads.iter().map(|h| h[0]).collect();
        self.decode(&row, duration)
    }

    /// Predictions for every record of `ds`, in order.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let schema = ds.schema();
        if schema.dense_len != self.arch.dense_len || schema.id_slot_vocab_sizes.len() != self.arch.id_vocab.len() {
            return Err(Error::Shape(format!(
                "dataset has {} dense / {} id slots, model expects {} / {}",
                schema.dense_len,
                schema.id_slots(),
                self.arch.dense_len,
                self.arch.id_vocab.len()
            )));
        }
        let mut out = Vec::with_capacity(ds.len());
        for chunk in ds.records().chunks(PREDICT_CHUNK) {
            let mut b = Batch::default();
            for r in chunk {
                check_duration(r.duration)?;
                b.dense.extend_from_slice(&r.dense_features);
                b.ids.extend_from_slice(&r.id_features);
                b.duration.push(self.duration_scaler.apply(r.duration));
            }
            let heads = forward_heads(&self.params, &b)?;
            let mut row = vec![0.0; heads.len()];
            for (i, r) in chunk.iter().enumerate() {
                for (slot, h) in row.iter_mut().zip(&heads) {
                    *slot = h[i];
                }
                out.push(self.decode(&row, r.duration)?);
            }
        }
        Ok(out)
    }
}

fn check_duration(d: f64) -> Result<()> {
    if d.is_finite() && d > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("duration {d} is not a positive real")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionRecord;
    use crate::distribution::EmpiricalCdf;
    use crate::synthgen::{make_toy_world, ToyWorldSpec};

    fn ds(durations: &[f64], watch: &[f64]) -> Dataset {
        let recs = durations
            .iter()
            .zip(watch)
            .enumerate()
            .map(|(i, (&d, &w))| InteractionRecord {
                user_id: (i % 3) as u64,
                video_id: i as u64,
                duration: d,
                watch_time: w,
                dense_features: vec![d.ln()],
                id_features: vec![(i % 3) as u32, (i % 5) as u32],
            })
            .collect();
        Dataset::with_inferred_schema(recs).unwrap()
    }

    fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            dense_embed_dim: 2,
            id_embed_total_dim: 4,
            duration_embed_dim: 2,
            projection_out_dim: 6,
            mlp_dims: vec![5, 3],
            batch_size: 8,
            epochs: 3,
            learning_rate: 0.05,
            embedding_lr_scale: 4.0,
            seed,
            ..ModelConfig::desk()
        }
    }

    fn synthetic(n: usize) -> Dataset {
        let d: Vec<f64> = (0..n).map(|i| 5.0 + (i * 37 % 101) as f64).collect();
        let w: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(i, d)| d * (0.2 + 0.6 * ((i * 13 % 7) as f64 / 7.0)))
            .collect();
        ds(&d, &w)
    }

    #[test]
    fn d2q_labels_single_group() {
        let data = ds(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]);
        let g = fit_duration_groups(&data.durations(), 1).unwrap();
        let c = fit_group_cdfs(&data, &g, 1).unwrap();
        assert_eq!(
            make_d2q_labels(&data, &g, &c).unwrap(),
            vec![0.125, 0.375, 0.625, 0.875]
        );
    }

    #[test]
    fn d2q_labels_two_groups() {
        let data = ds(&[1.0, 1.0, 9.0, 9.0], &[5.0, 15.0, 50.0, 100.0]);
        let g = fit_duration_groups(&data.durations(), 2).unwrap();
        let c = fit_group_cdfs(&data, &g, 1).unwrap();
        assert_eq!(make_d2q_labels(&data, &g, &c).unwrap(), vec![0.25, 0.75, 0.25, 0.75]);
    }

    #[test]
    fn d2q_labels_ties_and_pooling() {
        let data = ds(&[3.0, 5.0, 7.0], &[8.0, 8.0, 2.0]);
        let g = fit_duration_groups(&data.durations(), 1).unwrap();
        let c = fit_group_cdfs(&data, &g, 1).unwrap();
        let l = make_d2q_labels(&data, &g, &c).unwrap();
        assert_eq!(l[0], l[1]);
        let pooled = fit_ecdf(&data.watch_times()).unwrap();
        let expect: Vec<f64> = data.watch_times().iter().map(|&w| pooled.label(w)).collect();
        assert_eq!(l, expect);
    }

    #[test]
    fn wlr_labels_one_to_ten() {
        let w: Vec<f64> = (1..=10).map(f64::from).collect();
        let l = make_wlr_labels(&ds(&[100.0; 10], &w)).unwrap();
        assert_eq!(l.threshold, 6.5);
        assert_eq!(l.labels, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(l.weights, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn wlr_labels_all_equal() {
        let l = make_wlr_labels(&ds(&[10.0; 4], &[3.0; 4])).unwrap();
        assert!(l.labels.iter().all(|&y| y == 1.0));
        assert_eq!(l.weights, vec![3.0; 4]);
    }

    #[test]
    fn wlr_weight_law() {
        let data = synthetic(300);
        let l = make_wlr_labels(&data).unwrap();
        let pos_w: f64 = l
            .weights
            .iter()
            .zip(&l.labels)
            .filter(|(_, &y)| y == 1.0)
            .map(|(w, _)| w)
            .sum();
        let direct: f64 = data.watch_times().iter().filter(|&&w| w >= l.threshold).sum();
        assert_eq!(pos_w, direct);
        let min_pos = l
            .weights
            .iter()
            .zip(&l.labels)
            .filter(|(_, &y)| y == 1.0)
            .map(|(w, _)| *w)
            .fold(f64::MAX, f64::min);
        assert!(min_pos >= l.threshold);
    }

    #[test]
    fn wlr_formulas() {
        assert!((wlr_adapted(0.5, 0.4) - 0.6).abs() < 1e-15);
        assert_eq!(wlr_odds(0.5), 1.0);
        assert!(wlr_odds(1.0).is_finite());
        assert_eq!(wlr_odds(0.0), PROB_EPS / (1.0 - PROB_EPS));
    }

    #[test]
    fn d2q_decodes_knot() {
        let data = synthetic(40);
        let mut p = train_predictor(MethodKind::D2q, &data, 1, &small_config(1)).unwrap();
        p.group_cdfs = Some(GroupCdfs::new(vec![EmpiricalCdf::fit(&[10.0, 20.0, 30.0, 40.0]).unwrap()]).unwrap());
        assert_eq!(p.decode(&[0.375], 50.0).unwrap(), 20.0);
    }

    #[test]
    fn group_guard_and_mismatch() {
        let data = synthetic(40);
        let e = train_predictor(MethodKind::Wlr, &data, 10, &small_config(1)).unwrap_err();
        assert!(e.to_string().ends_with("m>1 invalid for wlr"), "{e}");
        assert!(train_predictor(MethodKind::Vr, &data, 2, &small_config(1)).is_err());
        assert!(train_predictor(MethodKind::D2q, &data, 0, &small_config(1)).is_err());
        let e = train_predictor(MethodKind::D2q, &data, 8, &small_config(1)).unwrap_err();
        assert!(matches!(e, Error::GroupTooSmall { .. }), "{e}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = synthetic(120);
        for kind in MethodKind::ALL {
            let m = if kind.uses_groups() { 3 } else { 1 };
            let a = train_predictor(kind, &data, m, &small_config(4)).unwrap();
            let b = train_predictor(kind, &data, m, &small_config(4)).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            let pred = a.predict_dataset(&data).unwrap();
            assert!(pred.iter().all(|w| w.is_finite() && *w >= 0.0), "{kind}");
        }
    }

    #[test]
    fn resd2q_without_tower_equals_d2q() {
        let data = synthetic(120);
        let d = train_predictor(MethodKind::D2q, &data, 3, &small_config(2)).unwrap();
        let c = ModelConfig {
            duration_tower: Some(vec![]),
            ..small_config(2)
        };
        let r = train_predictor(MethodKind::Resd2q, &data, 3, &c).unwrap();
        assert_eq!(d.predict_dataset(&data).unwrap(), r.predict_dataset(&data).unwrap());
        let with_tower = train_predictor(MethodKind::Resd2q, &data, 3, &small_config(2)).unwrap();
        assert!(with_tower.arch.has_tower());
    }

    #[test]
    fn single_and_batched_predictions_agree() {
        let data = synthetic(60);
        let p = train_predictor(MethodKind::Wlr, &data, 1, &small_config(3)).unwrap();
        let all = p.predict_dataset(&data).unwrap();
        for (r, &expect) in data.records().iter().zip(&all).take(10) {
            let f = Features {
                dense: &r.dense_features,
                ids: &r.id_features,
            };
            assert_eq!(p.predict(&f, r.duration).unwrap(), expect);
        }
        let r = &data.records()[0];
        let f = Features {
            dense: &r.dense_features,
            ids: &r.id_features,
        };
        assert!(p.predict(&f, 0.0).is_err());
        assert!(p.predict(&f, -3.0).is_err());
    }

    #[test]
    fn training_record_routes_to_its_label_group() {
        let data = synthetic(200);
        let p = train_predictor(MethodKind::D2q, &data, 4, &small_config(5)).unwrap();
        let g = p.groups.as_ref().unwrap();
        let cdfs = p.group_cdfs.as_ref().unwrap();
        for r in data.records() {
            let k = g.assign(r.duration);
            let w = p.decode(&[cdfs.get(k).label(r.watch_time)], r.duration).unwrap();
            let sorted = cdfs.get(k).sorted_values();
            assert!(w >= sorted[0] && w <= sorted[sorted.len() - 1]);
        }
    }

    fn toy(p_duration: Vec<f64>, expected: Vec<f64>, nd: usize) -> DiscreteToyWorld {
        make_toy_world(ToyWorldSpec {
            n_users: 1,
            n_videos: 1,
            durations: (1..=nd).map(|d| d as f64 * 10.0).collect(),
            p_duration,
            expected_watch: expected,
            exposure: None,
            relative_noise: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn backdoor_examples() {
        assert_eq!(backdoor_estimate(&toy(vec![1.0], vec![7.5], 1), 0, 0).unwrap(), 7.5);
        assert_eq!(
            backdoor_estimate(&toy(vec![0.5, 0.5], vec![2.0, 4.0], 2), 0, 0).unwrap(),
            3.0
        );
        assert!(matches!(
            backdoor_estimate(&toy(vec![1.0], vec![7.5], 1), 1, 0),
            Err(Error::MissingEntry(_))
        ));
    }

    #[test]
    fn method_names_roundtrip() {
        for k in MethodKind::ALL {
            assert_eq!(k.name().parse::<MethodKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert_eq!("Res-D2Q".parse::<MethodKind>().unwrap(), MethodKind::Resd2q);
        assert!("xyz".parse::<MethodKind>().is_err());
    }
}
