//! Labeled feature-vector datasets and their on-disk shard formats.
//!
//! Two formats are understood:
//!
//! - **binary** (little-endian): magic `FVS1`, `u32` K, `u32` N, then N
//!   records of `[u32 label][K x f32 values]`.
//! - **csv**: header-free lines `label,v0,...,v{K-1}`.
//!
//! Values are widened to `f64` on load. Loading never normalizes; call
//! [`l2_normalize`] explicitly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"FVS1";

/// Tolerance on the Euclidean norm of an already-normalized record.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub label: u32,
    pub values: Vec<f64>,
}

impl FeatureRecord {
    pub fn new(label: u32, values: Vec<f64>) -> Self {
        Self { label, values }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    records: Vec<FeatureRecord>,
    normalized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShardFormat {
    Binary,
    Csv,
}

impl ShardFormat {
    /// `.csv` files are CSV, everything else is treated as a binary shard.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ShardFormat::Csv,
            _ => ShardFormat::Binary,
        }
    }
}

impl FeatureDataset {
    /// Builds an unnormalized dataset, validating every record against `dim`.
    pub fn new(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimensionality must be positive"));
        }
        for (index, record) in records.iter().enumerate() {
            validate_record(index, record, dim)?;
        }
        Ok(Self {
            dim,
            records,
            normalized: false,
        })
    }

    /// Builds a dataset and marks it normalized after checking every norm.
    pub fn new_normalized(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        let mut dataset = Self::new(dim, records)?;
        for (index, record) in dataset.records.iter().enumerate() {
            let norm = record.norm();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::record(index, format!("norm {norm} is not 1")));
            }
        }
        dataset.normalized = true;
        Ok(dataset)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FeatureRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.records.iter().map(|r| r.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Keeps the records whose label satisfies `keep`, preserving order and
    /// the normalized flag.
    pub fn filter_labels(&self, keep: impl Fn(u32) -> bool) -> Self {
        Self {
            dim: self.dim,
            records: self
                .records
                .iter()
                .filter(|r| keep(r.label))
                .cloned()
                .collect(),
            normalized: self.normalized,
        }
    }
}

fn validate_record(index: usize, record: &FeatureRecord, dim: usize) -> Result<()> {
    if record.values.len() != dim {
        return Err(Error::record(
            index,
            format!("has {} values, expected {dim}", record.values.len()),
        ));
    }
    if let Some(pos) = record.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::record(
            index,
            format!("value {pos} is not finite ({})", record.values[pos]),
        ));
    }
    Ok(())
}

pub fn load_shard(path: impl AsRef<Path>, format: ShardFormat) -> Result<FeatureDataset> {
    let path = path.as_ref();
    match format {
        ShardFormat::Binary => {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            decode_binary(&bytes)
        }
        ShardFormat::Csv => decode_csv(File::open(path)?),
    }
}

pub fn write_shard(
    path: impl AsRef<Path>,
    dataset: &FeatureDataset,
    format: ShardFormat,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ShardFormat::Binary => out.write_all(&encode_binary(dataset)?)?,
        ShardFormat::Csv => {
            for record in dataset.records() {
                write!(out, "{}", record.label)?;
                for v in &record.values {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn encode_binary(dataset: &FeatureDataset) -> Result<Vec<u8>> {
    let dim = u32::try_from(dataset.dim).map_err(|_| Error::invalid("K does not fit in u32"))?;
    let n = u32::try_from(dataset.len()).map_err(|_| Error::invalid("N does not fit in u32"))?;
    let mut buf = Vec::with_capacity(12 + dataset.len() * (4 + 4 * dataset.dim));
    buf.extend_from_slice(SHARD_MAGIC);
    buf.write_u32::<LittleEndian>(dim)?;
    buf.write_u32::<LittleEndian>(n)?;
    for record in dataset.records() {
        buf.write_u32::<LittleEndian>(record.label)?;
        for &v in &record.values {
            buf.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(buf)
}

pub fn decode_binary(bytes: &[u8]) -> Result<FeatureDataset> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::format("shard header", "file shorter than magic"))?;
    if &magic != SHARD_MAGIC {
        return Err(Error::format(
            "shard header",
            format!("bad magic {magic:?}"),
        ));
    }
    let dim = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format("shard header", "missing K"))? as usize;
    let n = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format("shard header", "missing N"))? as usize;
    if dim == 0 {
        return Err(Error::format("shard header", "K is zero"));
    }

    let record_bytes = 4 + 4 * dim;
    let remaining = bytes.len() - 12;
    let mut records = Vec::with_capacity(n.min(remaining / record_bytes));
    for index in 0..n {
        let label = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::record(index, "truncated label"))?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = cur
                .read_f32::<LittleEndian>()
                .map_err(|_| Error::record(index, "truncated values"))?;
            values.push(f64::from(v));
        }
        let record = FeatureRecord { label, values };
        validate_record(index, &record, dim)?;
        records.push(record);
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(Error::format(
            "shard",
            format!(
                "{} trailing bytes after {n} records",
                bytes.len() - cur.position() as usize
            ),
        ));
    }
    Ok(FeatureDataset {
        dim,
        records,
        normalized: false,
    })
}

pub fn decode_csv(reader: impl Read) -> Result<FeatureDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut dim = None;
    let mut records = Vec::new();
    for (index, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::record(index, e.to_string()))?;
        if row.len() < 2 {
            return Err(Error::record(index, "needs a label and at least one value"));
        }
        let label: u32 = row[0]
            .parse()
            .map_err(|_| Error::record(index, format!("bad label {:?}", &row[0])))?;
        let values = row
            .iter()
            .skip(1)
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| Error::record(index, format!("bad value {field:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let expected = *dim.get_or_insert(values.len());
        let record = FeatureRecord { label, values };
        validate_record(index, &record, expected)?;
        records.push(record);
    }
    let dim = dim.ok_or(Error::Empty("csv shard has no records"))?;
    Ok(FeatureDataset {
        dim,
        records,
        normalized: false,
    })
}

/// Scales every record to unit Euclidean norm.
///
/// A dataset whose normalized flag is already set is returned unchanged.
pub fn l2_normalize(dataset: &FeatureDataset) -> Result<FeatureDataset> {
    if dataset.normalized {
        return Ok(dataset.clone());
    }
    let records = dataset
        .records
        .iter()
        .enumerate()
        .map(|(index, record)| {
            let norm = record.norm();
            if norm == 0.0 {
                return Err(Error::record(
                    index,
                    "all-zero feature vector cannot be normalized",
                ));
            }
            Ok(FeatureRecord {
                label: record.label,
                values: record.values.iter().map(|v| v / norm).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureDataset {
        dim: dataset.dim,
        records,
        normalized: true,
    })
}

/// Draws `count` distinct feature indices with a seeded generator and
/// restricts the dataset to them. The returned index list is the column
/// order of the new dataset; pass it to [`project`] for test data.
///
/// The projected vectors are no longer unit-norm, so the result is flagged
/// unnormalized.
pub fn subsample_features(
    dataset: &FeatureDataset,
    count: usize,
    seed: u64,
) -> Result<(FeatureDataset, Vec<usize>)> {
    let indices = feature_sample_indices(dataset.dim, count, seed)?;
    let projected = project(dataset, &indices)?;
    Ok((projected, indices))
}

pub fn feature_sample_indices(dim: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > dim {
        return Err(Error::invalid(format!(
            "feature count {count} outside 1..={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, dim, count).into_vec())
}

pub fn project(dataset: &FeatureDataset, indices: &[usize]) -> Result<FeatureDataset> {
    if indices.is_empty() {
        return Err(Error::invalid("empty feature index list"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.dim) {
        return Err(Error::invalid(format!(
            "feature index {bad} >= K={}",
            dataset.dim
        )));
    }
    let records = dataset
        .records
        .iter()
        .map(|r| FeatureRecord {
            label: r.label,
            values: indices.iter().map(|&i| r.values[i]).collect(),
        })
        .collect();
    Ok(FeatureDataset {
        dim: indices.len(),
        records,
        normalized: false,
    })
}

/// Groups records by label; lists keep dataset order.
pub fn split_by_class(dataset: &FeatureDataset) -> Result<BTreeMap<u32, Vec<FeatureRecord>>> {
    if dataset.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset"));
    }
    let mut by_class: BTreeMap<u32, Vec<FeatureRecord>> = BTreeMap::new();
    for record in &dataset.records {
        by_class
            .entry(record.label)
            .or_default()
            .push(record.clone());
    }
    Ok(by_class)
}
