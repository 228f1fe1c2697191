//! Interaction-log schema, validation and JSONL/CSV persistence.
//!
//! Categorical ids are expected to be remapped to contiguous integers before
//! they reach this module; nothing here hashes features.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One logged (user, video, duration, watch-time) event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: u64,
    pub video_id: u64,
    /// Video length in seconds, strictly positive.
    pub duration: f64,
    /// Seconds watched. May exceed `duration` (rewatches).
    pub watch_time: f64,
    #[serde(rename = "dense")]
    pub dense_features: Vec<f64>,
    #[serde(rename = "ids")]
    pub id_features: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub dense_len: usize,
    pub id_slot_vocab_sizes: Vec<u32>,
    pub dense_names: Vec<String>,
    pub id_names: Vec<String>,
}

impl Schema {
    pub fn new(dense_len: usize, id_slot_vocab_sizes: Vec<u32>) -> Self {
        let dense_names = (0..dense_len).map(|i| format!("dense_{i}")).collect();
        let id_names = (0..id_slot_vocab_sizes.len()).map(|i| format!("id_{i}")).collect();
        Self {
            dense_len,
            id_slot_vocab_sizes,
            dense_names,
            id_names,
        }
    }

    pub fn id_slots(&self) -> usize {
        self.id_slot_vocab_sizes.len()
    }

    /// Stable hash of the schema, used to pair checkpoints with datasets.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Checks a record against the schema; `index` is only used for the error.
    pub fn validate(&self, index: usize, r: &InteractionRecord) -> Result<()> {
        let violation = |field: &str, message: String| Error::Schema {
            index,
            field: field.to_string(),
            message,
        };
        if !(r.duration.is_finite() && r.duration > 0.0) {
            return Err(violation(
                "duration",
                format!("must be finite and > 0, got {}", r.duration),
            ));
        }
        if !(r.watch_time.is_finite() && r.watch_time >= 0.0) {
            return Err(violation(
                "watch_time",
                format!("must be finite and >= 0, got {}", r.watch_time),
            ));
        }
        if r.dense_features.len() != self.dense_len {
            return Err(violation(
                "dense",
                format!("expected {} values, got {}", self.dense_len, r.dense_features.len()),
            ));
        }
        if let Some(x) = r.dense_features.iter().find(|x| !x.is_finite()) {
            return Err(violation("dense", format!("non-finite value {x}")));
        }
        if r.id_features.len() != self.id_slots() {
            return Err(violation(
                "ids",
                format!("expected {} slots, got {}", self.id_slots(), r.id_features.len()),
            ));
        }
        for (slot, (&id, &vocab)) in r.id_features.iter().zip(&self.id_slot_vocab_sizes).enumerate() {
            if id >= vocab {
                return Err(violation(
                    "ids",
                    format!("slot {slot} value {id} >= vocabulary size {vocab}"),
                ));
            }
        }
        Ok(())
    }
}

/// A validated, non-empty, schema-consistent list of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: Schema,
    records: Vec<InteractionRecord>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<InteractionRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, r) in records.iter().enumerate() {
            schema.validate(i, r)?;
        }
        Ok(Self { schema, records })
    }

    /// Builds a dataset whose id vocabularies are inferred as `max + 1` per slot.
    pub fn with_inferred_schema(records: Vec<InteractionRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let mut vocab = vec![0u32; first.id_features.len()];
        for r in &records {
            for (v, &id) in vocab.iter_mut().zip(&r.id_features) {
                *v = (*v).max(id.saturating_add(1));
            }
        }
        let schema = Schema::new(first.dense_features.len(), vocab);
        Self::new(schema, records)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.duration).collect()
    }

    pub fn watch_times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.watch_time).collect()
    }

    pub fn user_ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.user_id).collect()
    }

    /// Subset in the given index order. Indices must be in range.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(self.schema.clone(), records)
    }

    /// Content hash over schema and every record value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.schema.hash().as_bytes());
        for r in &self.records {
            h.update(r.user_id.to_le_bytes());
            h.update(r.video_id.to_le_bytes());
            h.update(r.duration.to_le_bytes());
            h.update(r.watch_time.to_le_bytes());
            for x in &r.dense_features {
                h.update(x.to_le_bytes());
            }
            for id in &r.id_features {
                h.update(id.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

/// Loads a dataset, inferring id vocabularies from the data.
pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let path = path.as_ref();
    let (records, names) = read_records(path, format)?;
    let mut ds = Dataset::with_inferred_schema(records)?;
    if let Some((dense_names, id_names)) = names {
        ds.schema.dense_names = dense_names;
        ds.schema.id_names = id_names;
    }
    Ok(ds)
}

/// Loads a dataset and validates it against a declared schema.
pub fn load_dataset_with_schema(path: impl AsRef<Path>, format: Format, schema: &Schema) -> Result<Dataset> {
    let (records, _) = read_records(path.as_ref(), format)?;
    Dataset::new(schema.clone(), records)
}

type ColumnNames = Option<(Vec<String>, Vec<String>)>;

fn read_records(path: &Path, format: Format) -> Result<(Vec<InteractionRecord>, ColumnNames)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        Format::Jsonl => read_jsonl(reader, path).map(|r| (r, None)),
        Format::Csv => read_csv(reader, path).map(|(r, n)| (r, Some(n))),
    }
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<InteractionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InteractionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

const CSV_FIXED: [&str; 4] = ["user_id", "video_id", "duration", "watch_time"];

/// Records plus the dense and id column names found in the header.
type CsvContents = (Vec<InteractionRecord>, (Vec<String>, Vec<String>));

fn read_csv(reader: impl BufRead, path: &Path) -> Result<CsvContents> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(Error::EmptyDataset),
            Some((_, l)) => {
                let l = l.map_err(|e| Error::io(path, e))?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
        }
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 4 || cols[..4] != CSV_FIXED {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with {}", CSV_FIXED.join(",")),
        });
    }
    let dense_len = cols[4..].iter().take_while(|c| c.starts_with("dense_")).count();
    let id_cols = &cols[4 + dense_len..];
    if let Some(bad) = id_cols.iter().find(|c| !c.starts_with("id_")) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected column `{bad}`"),
        });
    }
    let dense_names = cols[4..4 + dense_len].iter().map(|s| s.to_string()).collect();
    let id_names = id_cols.iter().map(|s| s.to_string()).collect();

    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} columns, got {}", cols.len(), fields.len()),
            });
        }
        let bad = |col: &str, v: &str| Error::Parse {
            line: lineno,
            message: format!("column `{col}`: cannot parse `{v}`"),
        };
        let int = |j: usize| fields[j].parse::<u64>().map_err(|_| bad(cols[j], fields[j]));
        let real = |j: usize| fields[j].parse::<f64>().map_err(|_| bad(cols[j], fields[j]));
        let dense = (4..4 + dense_len).map(real).collect::<Result<Vec<_>>>()?;
        let ids = (4 + dense_len..cols.len())
            .map(|j| fields[j].parse::<u32>().map_err(|_| bad(cols[j], fields[j])))
            .collect::<Result<Vec<_>>>()?;
        out.push(InteractionRecord {
            user_id: int(0)?,
            video_id: int(1)?,
            duration: real(2)?,
            watch_time: real(3)?,
            dense_features: dense,
            id_features: ids,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((out, (dense_names, id_names)))
}

/// Writes a dataset. Floats are written in shortest round-trip form, so a
/// reload reproduces every value bit for bit.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    if ds.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        Format::Jsonl => {
            for r in &ds.records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        Format::Csv => {
            let mut header = CSV_FIXED.join(",");
            for i in 0..ds.schema.dense_len {
                write!(header, ",dense_{i}").unwrap();
            }
            for i in 0..ds.schema.id_slots() {
                write!(header, ",id_{i}").unwrap();
            }
            writeln!(w, "{header}").map_err(io)?;
            let mut line = String::new();
            for r in &ds.records {
                line.clear();
                write!(line, "{},{},{:?},{:?}", r.user_id, r.video_id, r.duration, r.watch_time).unwrap();
                for x in &r.dense_features {
                    write!(line, ",{x:?}").unwrap();
                }
                for id in &r.id_features {
                    write!(line, ",{id}").unwrap();
                }
                writeln!(w, "{line}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Seeded disjoint train/test partition. Each side keeps the original
/// relative record order.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = ds.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::invalid(format!(
            "test_fraction {test_fraction} leaves an empty split for n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = idx[..n_test].to_vec();
    let mut train_idx = idx[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.select(&train_idx)?, ds.select(&test_idx)?))
}
