//! Experiment harness: run configuration, dataset generation, checkpoints,
//! evaluation and the group-count sweep with its reports.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! data/seed_<s>/{train.jsonl,test.jsonl,manifest.json}
//! checkpoints/<method>_m<m>_seed<s>.d2qc
//! eval/<checkpoint stem>.{json,csv}
//! cells/<method>_m<m>_seed<s>.json
//! results.csv  diagnostics.csv  summary.md  xgauc_vs_m.svg
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_dataset, load_dataset_with_schema, save_dataset, Dataset, Format, Schema};
use crate::distribution::{EmpiricalCdf, GroupCdfs, DEFAULT_MIN_GROUP_SAMPLES};
use crate::error::{Error, Result};
use crate::grouping::{fit_duration_groups, DurationGroups};
use crate::metrics::{default_num_pairs, evaluate, mae_spread, EvalReport, GroupDiagnostic};
use crate::model::{Architecture, ModelConfig, NetParams};
use crate::predictors::{
    train_predictor_with, DurationScaler, MethodKind, Predictor, PredictorOptions, TrainMeta, WlrMode,
};
use crate::synthgen::{generate_world, sample_logged_interactions, sample_unbiased_test, GenConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D2QC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const RESULTS_HEADER: &str = "method,m,seed,mae,xauc,xgauc,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub methods: Vec<MethodKind>,
    pub group_counts: Vec<usize>,
    pub train_size: usize,
    pub test_size: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Sampled XAUC pair budget; `None` means `min(10 n, 10^7)`.
    pub num_pairs: Option<usize>,
    /// Equal-frequency groups on the test set used for the per-duration
    /// breakdown, independent of the predictor's own grouping.
    pub diagnostic_groups: usize,
    pub min_group_samples: usize,
    pub wlr_mode: WlrMode,
    /// When false, `wall_time_s` is written as 0 so results are byte-stable.
    pub record_wall_time: bool,
    /// Reuse finished cells whose inputs are unchanged.
    pub reuse_cells: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            model: ModelConfig::desk(),
            methods: MethodKind::ALL.to_vec(),
            group_counts: vec![1, 4, 8, 16, 32, 64, 256],
            train_size: 200_000,
            test_size: 40_000,
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("out"),
            num_pairs: None,
            diagnostic_groups: 8,
            min_group_samples: DEFAULT_MIN_GROUP_SAMPLES,
            wlr_mode: WlrMode::Adapted,
            record_wall_time: true,
            reuse_cells: true,
        }
    }
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Mixes the world seed out of the generator base seed and the run seed.
pub fn world_seed(base: u64, seed: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(seed)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: RunConfig = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.model.validate()?;
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("methods and seeds must be non-empty"));
        }
        if self.group_counts.is_empty() || self.group_counts.contains(&0) {
            return Err(Error::invalid("group_counts must be non-empty and all >= 1"));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::invalid("train_size and test_size must be >= 1"));
        }
        if self.diagnostic_groups == 0 || self.num_pairs == Some(0) {
            return Err(Error::invalid("diagnostic_groups and num_pairs must be >= 1"));
        }
        Ok(())
    }

    /// Hash of everything that can change a result; the output location and
    /// bookkeeping flags are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.record_wall_time = true;
        c.reuse_cells = true;
        sha256_json(&c)
    }

    fn data_key(&self, seed: u64) -> String {
        sha256_json(&(&self.gen, self.train_size, self.test_size, seed))
    }

    fn cell_key(&self, method: MethodKind, m: usize, seed: u64) -> String {
        sha256_json(&(
            self.data_key(seed),
            &self.model,
            self.num_pairs,
            self.diagnostic_groups,
            self.min_group_samples,
            self.wlr_mode,
            method,
            m,
        ))
    }

    pub fn predictor_options(&self) -> PredictorOptions {
        PredictorOptions {
            min_group_samples: self.min_group_samples,
            wlr_mode: self.wlr_mode,
        }
    }

    pub fn data_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join("data").join(format!("seed_{seed}"))
    }

    /// Every `(method, m, seed)` the sweep runs. VR and WLR have no grouping
    /// and run once at `m = 1`; Res-D2Q needs at least two groups.
    pub fn cells(&self) -> Vec<(MethodKind, usize, u64)> {
        let mut counts = self.group_counts.clone();
        counts.sort_unstable();
        counts.dedup();
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &m in &counts {
                for &k in MethodKind::ALL.iter().filter(|k| self.methods.contains(k)) {
                    let run = match k {
                        MethodKind::Vr | MethodKind::Wlr => m == counts[0],
                        MethodKind::D2q => true,
                        MethodKind::Resd2q => m > 1,
                    };
                    if run {
                        let m_eff = if k.uses_groups() { m } else { 1 };
                        out.push((k, m_eff, seed));
                    }
                }
            }
        }
        out
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub config_hash: String,
    pub data_key: String,
    pub seed: u64,
    pub world_seed: u64,
    pub gen: GenConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub schema: Schema,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: Dataset,
    pub test: Dataset,
    pub manifest: DataManifest,
}

/// Builds the world for `seed` and samples the logged train set and the
/// unbiased test set, in memory.
pub fn generate_seed_data(config: &RunConfig, seed: u64) -> Result<SeedData> {
    config.validate()?;
    let ws = world_seed(config.gen.seed, seed);
    let world = generate_world(&GenConfig {
        seed: ws,
        ..config.gen.clone()
    })?;
    let train = sample_logged_interactions(&world, config.train_size, ws)?;
    let test = sample_unbiased_test(&world, config.test_size, ws)?;
    let manifest = DataManifest {
        config_hash: config.hash(),
        data_key: config.data_key(seed),
        seed,
        world_seed: ws,
        gen: config.gen.clone(),
        train_size: config.train_size,
        test_size: config.test_size,
        schema: world.schema(),
        train_fingerprint: train.fingerprint(),
        test_fingerprint: test.fingerprint(),
    };
    Ok(SeedData { train, test, manifest })
}

fn write_seed_data(config: &RunConfig, data: &SeedData) -> Result<PathBuf> {
    let dir = config.data_dir(data.manifest.seed);
    create_dir(&dir)?;
    save_dataset(&data.train, dir.join("train.jsonl"), Format::Jsonl)?;
    save_dataset(&data.test, dir.join("test.jsonl"), Format::Jsonl)?;
    let manifest = dir.join("manifest.json");
    write_file(&manifest, serde_json::to_string_pretty(&data.manifest)?.as_bytes())?;
    Ok(manifest)
}

fn read_manifest(dir: &Path) -> Result<DataManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the data for `seed` from disk, checking it was generated from the
/// same generator settings.
pub fn load_seed_data(config: &RunConfig, seed: u64) -> Result<SeedData> {
    let dir = config.data_dir(seed);
    let manifest = read_manifest(&dir)?;
    if manifest.data_key != config.data_key(seed) {
        return Err(Error::invalid(format!(
            "data in {} was generated with different settings; rerun generate",
            dir.display()
        )));
    }
    let train = load_dataset_with_schema(dir.join("train.jsonl"), Format::Jsonl, &manifest.schema)?;
    let test = load_dataset_with_schema(dir.join("test.jsonl"), Format::Jsonl, &manifest.schema)?;
    if train.fingerprint() != manifest.train_fingerprint || test.fingerprint() != manifest.test_fingerprint {
        return Err(Error::invalid(format!(
            "data files in {} do not match their manifest",
            dir.display()
        )));
    }
    Ok(SeedData { train, test, manifest })
}

fn ensure_seed_data(config: &RunConfig, seed: u64) -> Result<SeedData> {
    match load_seed_data(config, seed) {
        Ok(d) => Ok(d),
        Err(_) => {
            let d = generate_seed_data(config, seed)?;
            write_seed_data(config, &d)?;
            Ok(d)
        }
    }
}

/// Writes train and test JSONL plus a manifest for every configured seed and
/// returns the manifest paths.
pub fn cmd_generate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    config
        .seeds
        .iter()
        .map(|&s| write_seed_data(config, &generate_seed_data(config, s)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub method: MethodKind,
    pub m: usize,
    pub config_hash: String,
    pub data_seed: Option<u64>,
    pub schema: Schema,
    pub arch: Architecture,
    pub groups: Option<DurationGroups>,
    pub q60_threshold: Option<f64>,
    pub target_scale: f64,
    pub duration_scaler: DurationScaler,
    pub wlr_mode: WlrMode,
    pub train_meta: TrainMeta,
    /// Payload layout, in order; network tensors first, then `cdf.<k>`.
    pub tensors: Vec<TensorEntry>,
}

/// Serializes a predictor. Group CDFs above the full-sample limit are stored
/// as a quantile grid.
pub fn encode_checkpoint(p: &Predictor, schema: &Schema, config_hash: &str, data_seed: Option<u64>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f64> = Vec::with_capacity(p.params.num_params());
    for (name, shape, values) in p.params.tensors() {
        tensors.push(TensorEntry { name, shape });
        payload.extend_from_slice(values);
    }
    if let Some(cdfs) = &p.group_cdfs {
        for (k, cdf) in cdfs.iter().enumerate() {
            let stored = cdf.for_checkpoint();
            tensors.push(TensorEntry {
                name: format!("cdf.{k}"),
                shape: vec![stored.n()],
            });
            payload.extend_from_slice(stored.sorted_values());
        }
    }
    let header = CheckpointHeader {
        method: p.kind,
        m: p.m(),
        config_hash: config_hash.to_string(),
        data_seed,
        schema: schema.clone(),
        arch: p.arch.clone(),
        groups: p.groups.clone(),
        q60_threshold: p.q60_threshold,
        target_scale: p.target_scale,
        duration_scaler: p.duration_scaler,
        wlr_mode: p.wlr_mode,
        train_meta: p.train_meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Predictor)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing D2QC magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen || !(body.len() - hlen).is_multiple_of(8) {
        return Err(bad("truncated checkpoint"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
    let payload: Vec<f64> = body[hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if expected != payload.len() {
        return Err(Error::Checkpoint(format!(
            "payload has {} values, header describes {expected}",
            payload.len()
        )));
    }
    let n_params = NetParams::zeros(&header.arch).num_params();
    if n_params > payload.len() {
        return Err(bad("payload shorter than the network"));
    }
    let params = NetParams::from_flat(&header.arch, &payload[..n_params])?;
    let mut offset = n_params;
    let mut cdfs = Vec::new();
    for t in header.tensors.iter().filter(|t| t.name.starts_with("cdf.")) {
        let n: usize = t.shape.iter().product();
        cdfs.push(EmpiricalCdf::from_sorted(payload[offset..offset + n].to_vec())?);
        offset += n;
    }
    let group_cdfs = if cdfs.is_empty() {
        None
    } else {
        Some(GroupCdfs::new(cdfs)?)
    };
    if header.groups.as_ref().map(DurationGroups::m) != group_cdfs.as_ref().map(GroupCdfs::len) {
        return Err(bad("group boundaries and CDFs disagree"));
    }
    let predictor = Predictor {
        kind: header.method,
        arch: header.arch.clone(),
        params,
        groups: header.groups.clone(),
        group_cdfs,
        q60_threshold: header.q60_threshold,
        target_scale: header.target_scale,
        duration_scaler: header.duration_scaler,
        wlr_mode: header.wlr_mode,
        train_meta: header.train_meta.clone(),
    };
    Ok((header, predictor))
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    p: &Predictor,
    schema: &Schema,
    config_hash: &str,
    data_seed: Option<u64>,
) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(p, schema, config_hash, data_seed)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Predictor)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

fn cell_name(method: MethodKind, m: usize, seed: u64) -> String {
    format!("{}_m{m}_seed{seed}", method.name())
}

/// Trains one predictor on a seed's logged data with the run's model config.
pub fn train_cell(config: &RunConfig, train: &Dataset, method: MethodKind, m: usize, seed: u64) -> Result<Predictor> {
    let model = ModelConfig {
        seed,
        ..config.model.clone()
    };
    train_predictor_with(method, train, m, &model, &config.predictor_options())
}

/// Trains from the generated files and writes a checkpoint. Uses the first
/// configured seed unless one is given.
pub fn cmd_train(config: &RunConfig, method: MethodKind, m: usize, seed: Option<u64>) -> Result<PathBuf> {
    config.validate()?;
    let seed = seed.unwrap_or(config.seeds[0]);
    let data = load_seed_data(config, seed)?;
    let p = train_cell(config, &data.train, method, m, seed)?;
    let path = config
        .output_dir
        .join("checkpoints")
        .join(format!("{}.d2qc", cell_name(method, m, seed)));
    write_checkpoint(&path, &p, data.train.schema(), &config.hash(), Some(seed))?;
    Ok(path)
}

/// Every metric for `pred` on `test`, with the run's pair budget and
/// diagnostic grouping.
pub fn evaluate_predictions(config: &RunConfig, test: &Dataset, pred: &[f64], seed: u64) -> Result<EvalReport> {
    let durations = test.durations();
    let diag = fit_duration_groups(&durations, config.diagnostic_groups.min(test.len()))?;
    let pairs = config.num_pairs.unwrap_or_else(|| default_num_pairs(test.len()));
    evaluate(
        pred,
        &test.watch_times(),
        &test.user_ids(),
        &durations,
        &diag,
        pairs,
        seed,
    )
}

fn load_test_for(header: &CheckpointHeader, path: &Path) -> Result<Dataset> {
    let expected = header.schema.hash();
    let manifest = path.parent().and_then(|d| read_manifest(d).ok());
    if let Some(m) = manifest {
        let found = m.schema.hash();
        if found != expected {
            return Err(Error::SchemaMismatch { expected, found });
        }
        return load_dataset_with_schema(path, Format::Jsonl, &m.schema);
    }
    let format = Format::from_path(path).unwrap_or(Format::Jsonl);
    let raw = load_dataset(path, format)?;
    Dataset::new(header.schema.clone(), raw.records().to_vec()).map_err(|_| Error::SchemaMismatch {
        expected,
        found: raw.schema().hash(),
    })
}

/// Evaluates a checkpoint, by default on the unbiased test set of the seed it
/// was trained on, and writes the report as JSON and as a CSV row.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, test: Option<&Path>) -> Result<EvalReport> {
    let (header, p) = read_checkpoint(checkpoint)?;
    let seed = header.data_seed.unwrap_or(config.seeds[0]);
    let test_path = match test {
        Some(t) => t.to_path_buf(),
        None => config.data_dir(seed).join("test.jsonl"),
    };
    let ds = load_test_for(&header, &test_path)?;
    let pred = p.predict_dataset(&ds)?;
    let report = evaluate_predictions(config, &ds, &pred, header.train_meta.seed)?;
    let stem = checkpoint
        .file_stem()
        .map_or_else(|| "eval".to_string(), |s| s.to_string_lossy().into_owned());
    let dir = config.output_dir.join("eval");
    write_file(
        &dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    let csv = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
    write_file(&dir.join(format!("{stem}.csv")), csv.as_bytes())?;
    Ok(report)
}

/// JSON has no NaN; failed rows store their metrics as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*x)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: MethodKind,
    pub m: usize,
    pub seed: u64,
    #[serde(with = "nan_as_null")]
    pub mae: f64,
    #[serde(with = "nan_as_null")]
    pub xauc: f64,
    #[serde(with = "nan_as_null")]
    pub xgauc: f64,
    pub wall_time_s: f64,
    /// Max/min per-duration-group MAE on the diagnostic grouping.
    #[serde(with = "nan_as_null")]
    pub mae_spread: f64,
    pub per_group: Vec<GroupDiagnostic>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.method, self.m, self.seed, self.mae, self.xauc, self.xgauc, self.wall_time_s
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellRecord {
    key: String,
    config_hash: String,
    row: SweepRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

/// Mean and sample standard deviation.
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Seed-averaged metrics for one `(method, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: MethodKind,
    pub m: usize,
    pub seeds: usize,
    pub failed: usize,
    pub mae: f64,
    pub xauc: f64,
    pub xgauc: f64,
    pub xgauc_sd: f64,
    pub mae_spread: f64,
}

impl SweepResult {
    /// Seed means per `(method, m)` over successful rows, ordered by `m`
    /// then method.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut by: BTreeMap<(usize, MethodKind), Vec<&SweepRow>> = BTreeMap::new();
        for r in &self.rows {
            by.entry((r.m, r.method)).or_default().push(r);
        }
        by.into_iter()
            .map(|((m, method), rows)| {
                let ok: Vec<&&SweepRow> = rows.iter().filter(|r| !r.failed()).collect();
                let col = |f: fn(&SweepRow) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
                let (xgauc, xgauc_sd) = if ok.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    mean_sd(&col(|r| r.xgauc))
                };
                let mean = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { mean_sd(&v).0 };
                CellSummary {
                    method,
                    m,
                    seeds: rows.len(),
                    failed: rows.len() - ok.len(),
                    mae: mean(col(|r| r.mae)),
                    xauc: mean(col(|r| r.xauc)),
                    xgauc,
                    xgauc_sd,
                    mae_spread: mean(col(|r| r.mae_spread)),
                }
            })
            .collect()
    }

    pub fn find(&self, method: MethodKind, m: usize) -> Option<CellSummary> {
        self.summary().into_iter().find(|s| s.method == method && s.m == m)
    }

    /// The `m` with the highest mean XGAUC for a grouped method.
    pub fn best_m(&self, method: MethodKind) -> Option<CellSummary> {
        self.summary()
            .into_iter()
            .filter(|s| s.method == method && s.xgauc.is_finite())
            .max_by(|a, b| a.xgauc.total_cmp(&b.xgauc))
    }

    pub fn results_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("method,m,seed,group,count,mae,xauc\n");
        let opt = |x: Option<f64>| x.map_or_else(|| "NaN".to_string(), |v| v.to_string());
        for r in &self.rows {
            for g in &r.per_group {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.method,
                    r.m,
                    r.seed,
                    g.group,
                    g.count,
                    opt(g.mae),
                    opt(g.xauc)
                );
            }
        }
        s
    }

    pub fn summary_markdown(&self) -> String {
        let summary = self.summary();
        let best = summary
            .iter()
            .filter(|s| s.xgauc.is_finite())
            .max_by(|a, b| a.xgauc.total_cmp(&b.xgauc))
            .map(|s| (s.method, s.m));
        let seeds = self
            .rows
            .iter()
            .map(|r| r.seed)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        let mut s = String::new();
        let _ = writeln!(s, "# Offline evaluation\n");
        let _ = writeln!(
            s,
            "Means over {seeds} seed(s) on the unbiased test set. Config hash `{}`.\n",
            self.config_hash
        );
        let _ = writeln!(s, "| #Groups | Method | XAUC | XGAUC | MAE | MAE spread | failed |");
        let _ = writeln!(s, "|---:|---|---:|---:|---:|---:|---:|");
        for c in &summary {
            let bold = best == Some((c.method, c.m));
            let mut x = if bold {
                format!("**{:.4}**", c.xgauc)
            } else {
                format!("{:.4}", c.xgauc)
            };
            if c.seeds > 1 {
                let _ = write!(x, " ± {:.4}", c.xgauc_sd);
            }
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {} | {:.4} | {:.3} | {} |",
                c.m,
                c.method.display_name(),
                c.xauc,
                x,
                c.mae,
                c.mae_spread,
                c.failed
            );
        }
        s
    }

    /// Mean XGAUC against group count: lines for the grouped methods and
    /// dashed references for the ungrouped baselines.
    pub fn xgauc_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const L: f64 = 70.0;
        const R: f64 = 150.0;
        const T: f64 = 30.0;
        const B: f64 = 50.0;
        let summary = self.summary();
        let mut ms: Vec<usize> = summary.iter().filter(|c| c.method.uses_groups()).map(|c| c.m).collect();
        ms.sort_unstable();
        ms.dedup();
        if ms.is_empty() {
            ms.push(1);
        }
        let vals: Vec<f64> = summary.iter().map(|c| c.xgauc).filter(|x| x.is_finite()).collect();
        let (mut lo, mut hi) = vals
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        if vals.is_empty() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.1).max(1e-3);
        lo -= pad;
        hi += pad;
        let x_at = |i: usize| {
            L + (W - L - R)
                * if ms.len() > 1 {
                    i as f64 / (ms.len() - 1) as f64
                } else {
                    0.5
                }
        };
        let y_at = |v: f64| T + (H - T - B) * (hi - v) / (hi - lo);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, "<!-- config {} -->", self.config_hash);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            H - B,
            W - R,
            H - B
        );
        let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
        for (i, m) in ms.iter().enumerate() {
            let x = x_at(i);
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{}" text-anchor="middle">{m}</text>"#,
                H - B + 18.0
            );
        }
        for k in 0..=4 {
            let v = lo + (hi - lo) * f64::from(k) / 4.0;
            let y = y_at(v);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
                L - 6.0,
                y + 4.0,
                v * 100.0
            );
            let _ = writeln!(
                s,
                r##"<line x1="{L}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##,
                W - R
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">number of duration groups</text>"#,
            (L + W - R) / 2.0,
            H - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">XGAUC (%)</text>"#,
            (T + H - B) / 2.0,
            (T + H - B) / 2.0
        );
        let colors = [
            (MethodKind::Vr, "#7f7f7f"),
            (MethodKind::Wlr, "#d62728"),
            (MethodKind::D2q, "#1f77b4"),
            (MethodKind::Resd2q, "#2ca02c"),
        ];
        let mut legend_y = T + 10.0;
        for (method, color) in colors {
            let pts: Vec<(usize, f64)> = summary
                .iter()
                .filter(|c| c.method == method && c.xgauc.is_finite())
                .map(|c| (c.m, c.xgauc))
                .collect();
            if pts.is_empty() {
                continue;
            }
            if method.uses_groups() {
                let coords: Vec<String> = pts
                    .iter()
                    .filter_map(|(m, v)| {
                        ms.iter()
                            .position(|x| x == m)
                            .map(|i| format!("{:.1},{:.1}", x_at(i), y_at(*v)))
                    })
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    coords.join(" ")
                );
                for c in &coords {
                    let (x, y) = c.split_once(',').unwrap();
                    let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
                }
            } else {
                let y = y_at(pts[0].1);
                let _ = writeln!(
                    s,
                    r#"<line x1="{L}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="{color}" stroke-width="2" stroke-dasharray="6 4"/>"#,
                    W - R
                );
            }
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>"#,
                W - R + 10.0,
                W - R + 30.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">{}</text>"#,
                W - R + 36.0,
                legend_y + 4.0,
                method.display_name()
            );
            legend_y += 18.0;
        }
        s.push_str("</svg>\n");
        s
    }
}

fn run_cell(config: &RunConfig, data: &SeedData, method: MethodKind, m: usize, seed: u64) -> SweepRow {
    let start = Instant::now();
    let outcome = train_cell(config, &data.train, method, m, seed).and_then(|p| {
        let pred = p.predict_dataset(&data.test)?;
        evaluate_predictions(config, &data.test, &pred, seed)
    });
    let wall = if config.record_wall_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    match outcome {
        Ok(r) => SweepRow {
            method,
            m,
            seed,
            mae: r.mae,
            xauc: r.xauc,
            xgauc: r.xgauc,
            wall_time_s: wall,
            mae_spread: mae_spread(&r.per_group).unwrap_or(f64::NAN),
            per_group: r.per_group,
            error: None,
        },
        Err(e) => SweepRow {
            method,
            m,
            seed,
            mae: f64::NAN,
            xauc: f64::NAN,
            xgauc: f64::NAN,
            wall_time_s: wall,
            mae_spread: f64::NAN,
            per_group: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

fn read_cell(path: &Path, key: &str) -> Option<SweepRow> {
    let text = fs::read_to_string(path).ok()?;
    let rec: CellRecord = serde_json::from_str(&text).ok()?;
    (rec.key == key).then_some(rec.row)
}

/// Trains and evaluates every cell, then writes `results.csv`,
/// `diagnostics.csv`, `summary.md` and `xgauc_vs_m.svg`. A failing cell is
/// kept as a NaN row with its error and the sweep moves on.
pub fn cmd_sweep(config: &RunConfig) -> Result<SweepResult> {
    cmd_sweep_with(config, |_| {})
}

/// As [`cmd_sweep`], calling `progress` after each cell.
pub fn cmd_sweep_with(config: &RunConfig, mut progress: impl FnMut(&SweepRow)) -> Result<SweepResult> {
    config.validate()?;
    let hash = config.hash();
    let cells_dir = config.output_dir.join("cells");
    create_dir(&cells_dir)?;
    let mut rows = Vec::new();
    let cells = config.cells();
    for &seed in &config.seeds {
        let mut data: Option<SeedData> = None;
        for &(method, m, _) in cells.iter().filter(|c| c.2 == seed) {
            let key = config.cell_key(method, m, seed);
            let path = cells_dir.join(format!("{}.json", cell_name(method, m, seed)));
            let cached = if config.reuse_cells {
                read_cell(&path, &key)
            } else {
                None
            };
            let row = match cached {
                Some(r) => r,
                None => {
                    let d = match &data {
                        Some(d) => d,
                        None => data.insert(ensure_seed_data(config, seed)?),
                    };
                    let row = run_cell(config, d, method, m, seed);
                    let rec = CellRecord {
                        key,
                        config_hash: hash.clone(),
                        row: row.clone(),
                    };
                    write_file(&path, serde_json::to_string_pretty(&rec)?.as_bytes())?;
                    row
                }
            };
            progress(&row);
            rows.push(row);
        }
    }
    let result = SweepResult {
        config_hash: hash,
        rows,
    };
    let out = &config.output_dir;
    write_file(&out.join("results.csv"), result.results_csv().as_bytes())?;
    write_file(&out.join("diagnostics.csv"), result.diagnostics_csv().as_bytes())?;
    write_file(&out.join("summary.md"), result.summary_markdown().as_bytes())?;
    write_file(&out.join("xgauc_vs_m.svg"), result.xgauc_svg().as_bytes())?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        RunConfig {
            gen: GenConfig {
                n_users: 20,
                n_videos: 60,
                ..GenConfig::default()
            },
            model: ModelConfig {
                id_embed_total_dim: 8,
                projection_out_dim: 8,
                mlp_dims: vec![6, 4],
                epochs: 1,
                ..ModelConfig::desk()
            },
            methods: MethodKind::ALL.to_vec(),
            group_counts: vec![1, 2],
            train_size: 400,
            test_size: 200,
            seeds: vec![1],
            output_dir: dir.to_path_buf(),
            num_pairs: Some(2000),
            ..RunConfig::default()
        }
    }

    #[test]
    fn default_cell_count() {
        let c = RunConfig::default();
        // VR + WLR at m=1, D2Q at 7 counts, Res-D2Q at the 6 counts above 1
        assert_eq!(c.cells().len(), 3 * (2 + 7 + 6));
        let only_vr = RunConfig {
            methods: vec![MethodKind::Vr],
            group_counts: vec![1],
            seeds: vec![1],
            ..RunConfig::default()
        };
        assert_eq!(only_vr.cells(), vec![(MethodKind::Vr, 1, 1)]);
    }

    #[test]
    fn config_hash_ignores_output_dir() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            train_size: 5,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let zero = RunConfig {
            train_size: 0,
            ..tiny(dir.path())
        };
        assert!(cmd_generate(&zero).is_err());
        assert!(RunConfig {
            group_counts: vec![0],
            ..tiny(dir.path())
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            methods: vec![],
            ..tiny(dir.path())
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_file_roundtrip_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train_size": 1234, "methods": ["vr", "d2q"]}"#).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.train_size, 1234);
        assert_eq!(c.methods, vec![MethodKind::Vr, MethodKind::D2q]);
        assert_eq!(c.test_size, 40_000);
        c.save(&path).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), c);
    }

    #[test]
    fn generate_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let manifests = cmd_generate(&c).unwrap();
        assert_eq!(manifests.len(), 1);
        let d = c.data_dir(1);
        let first: Vec<Vec<u8>> = ["train.jsonl", "test.jsonl", "manifest.json"]
            .iter()
            .map(|f| fs::read(d.join(f)).unwrap())
            .collect();
        cmd_generate(&c).unwrap();
        for (f, bytes) in ["train.jsonl", "test.jsonl", "manifest.json"].iter().zip(&first) {
            assert_eq!(&fs::read(d.join(f)).unwrap(), bytes, "{f}");
        }
        let m = read_manifest(&d).unwrap();
        assert_eq!(m.config_hash, c.hash());
        let loaded = load_seed_data(&c, 1).unwrap();
        assert_eq!(loaded.train.len(), 400);
        assert_eq!(loaded.test.len(), 200);
    }

    #[test]
    fn checkpoint_roundtrip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        cmd_generate(&c).unwrap();
        let path = cmd_train(&c, MethodKind::D2q, 2, None).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"D2QC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), CHECKPOINT_VERSION);
        cmd_train(&c, MethodKind::D2q, 2, None).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);

        let (header, p) = read_checkpoint(&path).unwrap();
        assert_eq!(header.method, MethodKind::D2q);
        assert_eq!(header.m, 2);
        assert_eq!(header.config_hash, c.hash());
        let data = load_seed_data(&c, 1).unwrap();
        let direct = train_cell(&c, &data.train, MethodKind::D2q, 2, 1).unwrap();
        assert_eq!(
            p.predict_dataset(&data.test).unwrap(),
            direct.predict_dataset(&data.test).unwrap()
        );
        let pred = p
            .predict_dataset(&data.test.select(&(0..100).collect::<Vec<_>>()).unwrap())
            .unwrap();
        assert!(pred.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        cmd_generate(&c).unwrap();
        let path = cmd_train(&c, MethodKind::Vr, 1, None).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_checkpoint(&wrong), Err(Error::Checkpoint(_))));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 8]),
            Err(Error::Checkpoint(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_checkpoint(&v2).is_err());
    }

    #[test]
    fn train_guards() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        assert!(cmd_train(&c, MethodKind::D2q, 2, None).is_err(), "no data yet");
        cmd_generate(&c).unwrap();
        let e = cmd_train(&c, MethodKind::Wlr, 10, None).unwrap_err();
        assert!(e.to_string().contains("m>1 invalid for wlr"));
        let e = cmd_train(&c, MethodKind::D2q, 100, None).unwrap_err();
        assert!(e.to_string().starts_with("group 0 has"), "{e}");
    }

    #[test]
    fn eval_writes_reports_and_checks_schema() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        cmd_generate(&c).unwrap();
        let ck = cmd_train(&c, MethodKind::Wlr, 1, None).unwrap();
        let report = cmd_eval(&c, &ck, None).unwrap();
        let json = fs::read_to_string(dir.path().join("eval").join("wlr_m1_seed1.json")).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(report.per_group.iter().map(|g| g.count).sum::<usize>(), 200);

        // a test set from a different world shape
        let other = RunConfig {
            gen: GenConfig {
                n_users: 30,
                ..c.gen.clone()
            },
            output_dir: dir.path().join("other"),
            ..c.clone()
        };
        cmd_generate(&other).unwrap();
        let foreign = other.data_dir(1).join("test.jsonl");
        assert!(matches!(
            cmd_eval(&c, &ck, Some(&foreign)),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn oracle_and_constant_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            gen: GenConfig {
                noise_sd: 0.0,
                ..tiny(dir.path()).gen
            },
            ..tiny(dir.path())
        };
        let data = generate_seed_data(&c, 1).unwrap();
        let truth = data.test.watch_times();
        let r = evaluate_predictions(&c, &data.test, &truth, 1).unwrap();
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.xauc, 1.0);
        assert_eq!(r.xauc_exact, 1.0);
        let constant = vec![3.0; truth.len()];
        let r = evaluate_predictions(&c, &data.test, &constant, 1).unwrap();
        assert_eq!(r.xauc_exact, 0.5);
        assert_eq!(r.xauc, 0.5);
    }

    #[test]
    fn sweep_rows_reports_and_cell_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let r = cmd_sweep(&c).unwrap();
        // VR, WLR, D2Q at m=1; D2Q, Res-D2Q at m=2
        assert_eq!(r.rows.len(), 5);
        assert!(r.rows.iter().all(|row| !row.failed() && row.xgauc.is_finite()));
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), RESULTS_HEADER);
        assert_eq!(csv.lines().count(), 6);
        assert!(fs::read_to_string(dir.path().join("summary.md"))
            .unwrap()
            .contains("| 2 | Res-D2Q |"));
        let svg = fs::read_to_string(dir.path().join("xgauc_vs_m.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));

        let again = cmd_sweep(&c).unwrap();
        assert_eq!(again, r);
        assert_eq!(fs::read_to_string(dir.path().join("results.csv")).unwrap(), csv);

        // removing one cell recomputes only that cell with identical metrics
        let cell = dir.path().join("cells").join("d2q_m2_seed1.json");
        fs::remove_file(&cell).unwrap();
        let third = cmd_sweep(&c).unwrap();
        for (a, b) in third.rows.iter().zip(&r.rows) {
            assert_eq!((a.mae, a.xauc, a.xgauc), (b.mae, b.xauc, b.xgauc));
        }
    }

    #[test]
    fn failed_cell_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            methods: vec![MethodKind::D2q],
            group_counts: vec![1, 200],
            ..tiny(dir.path())
        };
        let r = cmd_sweep(&c).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(!r.rows[0].failed());
        assert!(r.rows[1].failed() && r.rows[1].xgauc.is_nan());
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(csv.lines().nth(2).unwrap().starts_with("d2q,200,1,NaN,NaN,NaN"));
        // the failure is cached like any other cell
        let again = cmd_sweep(&c).unwrap();
        assert!(again.rows[1].failed());
        assert_eq!(fs::read_to_string(dir.path().join("results.csv")).unwrap(), csv);
    }
}
