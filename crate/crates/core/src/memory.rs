//! Per-class memories and the memory bank.
//!
//! A [`ClassMemory`] holds one density per feature dimension plus the number
//! of samples it was formed from. The [`MemoryBank`] is the classifier's
//! whole state. Adding a class never touches existing entries; updating a
//! class with new samples of a known label goes through [`MemoryBank::update_class`].
//!
//! # Bank file layout
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! "BMB1" | u32 version
//! u8 estimator tag
//!    0 (gmm): u32 S | u32 max_iter | f64 tol | f64 sigma_floor
//!    1 (kde): u8 rule (0 silverman, 1 fixed) | f64 bandwidth
//! u32 K | u32 M | u64 total_count
//! M x [u32 class_id | u64 count | u64 block_len]      (ascending class_id)
//! M x class block
//!    gmm: K x [u32 S_k | S_k x (weight, mean, sigma) | S_k x (weight_sum, sum, sum_sq)]
//!    kde: K x [f64 bandwidth | u64 n | n x center]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    self, ComponentStats, DensityModel, EmConfig, GaussianComponent, Gmm1D, Kde1D,
};
use crate::error::{Error, Result};
use crate::feature_store::{self, FeatureDataset, FeatureRecord};
use crate::math::derive_seed;

pub const BANK_MAGIC: &[u8; 4] = b"BMB1";
pub const BANK_VERSION: u32 = 1;

/// Default mixture size per feature.
pub const DEFAULT_COMPONENTS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "lowercase")]
pub enum BandwidthRule {
    Silverman,
    Fixed(f64),
}

impl BandwidthRule {
    fn explicit(self) -> Option<f64> {
        match self {
            BandwidthRule::Silverman => None,
            BandwidthRule::Fixed(h) => Some(h),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorConfig {
    Gmm {
        components: usize,
        #[serde(default)]
        em: EmConfig,
    },
    Kde {
        bandwidth: BandwidthRule,
    },
}

impl EstimatorConfig {
    pub fn gmm(components: usize) -> Self {
        EstimatorConfig::Gmm {
            components,
            em: EmConfig::default(),
        }
    }

    pub fn kde(bandwidth: BandwidthRule) -> Self {
        EstimatorConfig::Kde { bandwidth }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorConfig::Gmm { components, em } => {
                if components == 0 {
                    return Err(Error::invalid("gmm component count must be at least 1"));
                }
                if em.max_iter == 0
                    || em.tol.is_nan()
                    || em.tol < 0.0
                    || em.sigma_floor.is_nan()
                    || em.sigma_floor <= 0.0
                {
                    return Err(Error::invalid("invalid EM settings"));
                }
            }
            EstimatorConfig::Kde { bandwidth } => {
                if let BandwidthRule::Fixed(h) = bandwidth {
                    if !(h.is_finite() && h > 0.0) {
                        return Err(Error::invalid(format!("bandwidth {h} must be positive")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_gmm(&self) -> bool {
        matches!(self, EstimatorConfig::Gmm { .. })
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::gmm(DEFAULT_COMPONENTS)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMemory {
    class_id: u32,
    count: u64,
    models: Vec<DensityModel>,
    /// Per feature, per component accumulators. GMM mode only.
    suff_stats: Option<Vec<Vec<ComponentStats>>>,
}

impl ClassMemory {
    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn models(&self) -> &[DensityModel] {
        &self.models
    }

    pub fn suff_stats(&self) -> Option<&[Vec<ComponentStats>]> {
        self.suff_stats.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.models.len()
    }

    /// Per-feature means of the stored densities.
    pub fn feature_means(&self) -> Vec<f64> {
        self.models.iter().map(DensityModel::mean).collect()
    }

    /// Canonical byte encoding of this memory's parameter block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.encode_block(&mut buf);
        buf
    }

    fn encode_block(&self, buf: &mut Vec<u8>) {
        for (k, model) in self.models.iter().enumerate() {
            match model {
                DensityModel::Gmm(g) => {
                    buf.write_u32::<LittleEndian>(g.len() as u32).unwrap();
                    for c in g.components() {
                        put_f64s(buf, &[c.weight, c.mean, c.sigma]);
                    }
                    let stats = &self.suff_stats.as_ref().expect("gmm memory carries stats")[k];
                    for s in stats {
                        put_f64s(buf, &[s.weight_sum, s.sum, s.sum_sq]);
                    }
                }
                DensityModel::Kde(kde) => {
                    put_f64s(buf, &[kde.bandwidth()]);
                    buf.write_u64::<LittleEndian>(kde.centers().len() as u64)
                        .unwrap();
                    put_f64s(buf, kde.centers());
                }
            }
        }
    }
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.write_f64::<LittleEndian>(v).unwrap();
    }
}

/// Fits one density per feature dimension over `records`, all of which must
/// carry `class_id`. Feature fits run in parallel; each gets its own seed
/// derived from `(seed, class_id, k)`.
pub fn form_memory(
    class_id: u32,
    records: &[FeatureRecord],
    estimator: &EstimatorConfig,
    seed: u64,
) -> Result<ClassMemory> {
    estimator.validate()?;
    let dim = check_records(class_id, records)?;
    let columns = columns(records, dim);

    let (models, suff_stats) = match *estimator {
        EstimatorConfig::Gmm { components, em } => {
            let fitted = columns
                .par_iter()
                .enumerate()
                .map(|(k, column)| {
                    let gmm = density::fit_gmm(
                        column,
                        components,
                        derive_seed(seed, u64::from(class_id), k as u64),
                        &em,
                    )?;
                    let stats = gmm.accumulate(column);
                    Ok((DensityModel::Gmm(gmm), stats))
                })
                .collect::<Result<Vec<_>>>()?;
            let (models, stats): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
            (models, Some(stats))
        }
        EstimatorConfig::Kde { bandwidth } => {
            let models = columns
                .par_iter()
                .map(|column| density::fit_kde(column, bandwidth.explicit()).map(DensityModel::Kde))
                .collect::<Result<Vec<_>>>()?;
            (models, None)
        }
    };

    Ok(ClassMemory {
        class_id,
        count: records.len() as u64,
        models,
        suff_stats,
    })
}

/// Forms a memory for every class in `dataset` and adds them all to `bank`.
/// No class in the dataset may already be present; on error the bank is
/// left unchanged.
pub fn learn_dataset(bank: &mut MemoryBank, dataset: &FeatureDataset, seed: u64) -> Result<()> {
    if dataset.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: dataset.dim(),
        });
    }
    let by_class = feature_store::split_by_class(dataset)?;
    if let Some(&c) = by_class.keys().find(|c| bank.contains(**c)) {
        return Err(Error::DuplicateClass(c));
    }
    let estimator = bank.estimator;
    let memories = by_class
        .par_iter()
        .map(|(&c, records)| form_memory(c, records, &estimator, seed))
        .collect::<Result<Vec<_>>>()?;
    for m in memories {
        bank.add_class(m)?;
    }
    Ok(())
}

/// One-shot bank over every class in `dataset`.
pub fn fit_bank(
    dataset: &FeatureDataset,
    estimator: &EstimatorConfig,
    seed: u64,
) -> Result<MemoryBank> {
    let mut bank = MemoryBank::new(dataset.dim(), *estimator)?;
    learn_dataset(&mut bank, dataset, seed)?;
    Ok(bank)
}

/// Folds new samples of existing classes into `bank`, class by class in
/// ascending id order. Every class must already be present; on error the
/// bank is left unchanged.
pub fn update_dataset(bank: &mut MemoryBank, dataset: &FeatureDataset) -> Result<()> {
    let by_class = feature_store::split_by_class(dataset)?;
    if let Some(&c) = by_class.keys().find(|c| !bank.contains(**c)) {
        return Err(Error::UnknownClass(c));
    }
    let mut updated = bank.clone();
    for (c, records) in &by_class {
        updated.update_class(*c, records)?;
    }
    *bank = updated;
    Ok(())
}

/// Checks labels and shape; returns K.
fn check_records(class_id: u32, records: &[FeatureRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or(Error::Empty("a class memory needs at least one record"))?;
    let dim = first.values.len();
    if dim == 0 {
        return Err(Error::record(0, "record has no features"));
    }
    for (index, r) in records.iter().enumerate() {
        if r.label != class_id {
            return Err(Error::record(
                index,
                format!("label {} differs from class {class_id}", r.label),
            ));
        }
        if r.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.values.len(),
            });
        }
    }
    Ok(dim)
}

fn columns(records: &[FeatureRecord], dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|k| records.iter().map(|r| r.values[k]).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    dim: usize,
    estimator: EstimatorConfig,
    classes: BTreeMap<u32, ClassMemory>,
    total_count: u64,
}

impl MemoryBank {
    pub fn new(dim: usize, estimator: EstimatorConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimensionality must be positive"));
        }
        estimator.validate()?;
        Ok(Self {
            dim,
            estimator,
            classes: BTreeMap::new(),
            total_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn estimator(&self) -> &EstimatorConfig {
        &self.estimator
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, class_id: u32) -> Option<&ClassMemory> {
        self.classes.get(&class_id)
    }

    pub fn contains(&self, class_id: u32) -> bool {
        self.classes.contains_key(&class_id)
    }

    /// Class ids in ascending order.
    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.keys().copied().collect()
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassMemory> {
        self.classes.values()
    }

    /// Inserts a newly formed class. Existing entries are not read.
    pub fn add_class(&mut self, memory: ClassMemory) -> Result<()> {
        if self.classes.contains_key(&memory.class_id) {
            return Err(Error::DuplicateClass(memory.class_id));
        }
        self.check_compatible(&memory)?;
        self.total_count += memory.count;
        self.classes.insert(memory.class_id, memory);
        Ok(())
    }

    /// Replaces a class wholesale, e.g. with a memory refit from retained
    /// feature vectors.
    pub fn replace_class(&mut self, memory: ClassMemory) -> Result<()> {
        self.check_compatible(&memory)?;
        let old = self
            .classes
            .get(&memory.class_id)
            .ok_or(Error::UnknownClass(memory.class_id))?;
        self.total_count = self.total_count - old.count + memory.count;
        self.classes.insert(memory.class_id, memory);
        Ok(())
    }

    fn check_compatible(&self, memory: &ClassMemory) -> Result<()> {
        if memory.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: memory.dim(),
            });
        }
        if memory.count == 0 {
            return Err(Error::invalid(format!(
                "class {} has zero count",
                memory.class_id
            )));
        }
        let kind_ok = match self.estimator {
            EstimatorConfig::Gmm { components, .. } => {
                memory.suff_stats.is_some()
                    && memory
                        .models
                        .iter()
                        .all(|m| m.as_gmm().is_some_and(|g| g.len() <= components))
            }
            EstimatorConfig::Kde { .. } => {
                memory.suff_stats.is_none() && memory.models.iter().all(|m| m.as_kde().is_some())
            }
        };
        if !kind_ok {
            return Err(Error::EstimatorMismatch(format!(
                "class {} was not formed with the bank's estimator",
                memory.class_id
            )));
        }
        Ok(())
    }

    /// Absorbs new samples of an existing class.
    ///
    /// GMM: one incremental EM step. Responsibilities of the new samples
    /// under the current models are added to the stored accumulators and the
    /// parameters are recomputed from the merged accumulators. KDE: the new
    /// values are appended to the centers and the bandwidth re-derived.
    ///
    /// The class entry is swapped in only once the update has fully
    /// succeeded.
    pub fn update_class(&mut self, class_id: u32, records: &[FeatureRecord]) -> Result<()> {
        let current = self
            .classes
            .get(&class_id)
            .ok_or(Error::UnknownClass(class_id))?;
        if records.is_empty() {
            return Ok(());
        }
        let dim = check_records(class_id, records)?;
        if dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: dim,
            });
        }
        let columns = columns(records, dim);

        let updated = match self.estimator {
            EstimatorConfig::Gmm { em, .. } => {
                let old_stats = current.suff_stats.as_ref().ok_or_else(|| {
                    Error::EstimatorMismatch("gmm class without statistics".into())
                })?;
                let fitted = columns
                    .par_iter()
                    .zip(current.models.par_iter())
                    .zip(old_stats.par_iter())
                    .map(|((column, model), stats)| {
                        let gmm = model
                            .as_gmm()
                            .ok_or_else(|| Error::EstimatorMismatch("expected a gmm".into()))?;
                        let merged: Vec<ComponentStats> = gmm
                            .accumulate(column)
                            .iter()
                            .zip(stats)
                            .map(|(new, old)| old.merge(new))
                            .collect();
                        let (gmm, merged) = gmm.refit_from_stats(&merged, em.sigma_floor)?;
                        Ok((DensityModel::Gmm(gmm), merged))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (models, stats): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
                ClassMemory {
                    class_id,
                    count: current.count + records.len() as u64,
                    models,
                    suff_stats: Some(stats),
                }
            }
            EstimatorConfig::Kde { bandwidth } => {
                let models = columns
                    .par_iter()
                    .zip(current.models.par_iter())
                    .map(|(column, model)| {
                        let kde = model
                            .as_kde()
                            .ok_or_else(|| Error::EstimatorMismatch("expected a kde".into()))?;
                        let mut centers = kde.centers().to_vec();
                        centers.extend_from_slice(column);
                        density::fit_kde(&centers, bandwidth.explicit()).map(DensityModel::Kde)
                    })
                    .collect::<Result<Vec<_>>>()?;
                ClassMemory {
                    class_id,
                    count: current.count + records.len() as u64,
                    models,
                    suff_stats: None,
                }
            }
        };

        self.total_count += records.len() as u64;
        self.classes.insert(class_id, updated);
        Ok(())
    }

    pub fn footprint(&self) -> Footprint {
        memory_footprint(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BANK_MAGIC);
        buf.write_u32::<LittleEndian>(BANK_VERSION).unwrap();
        match self.estimator {
            EstimatorConfig::Gmm { components, em } => {
                buf.push(0);
                buf.write_u32::<LittleEndian>(components as u32).unwrap();
                buf.write_u32::<LittleEndian>(em.max_iter as u32).unwrap();
                put_f64s(&mut buf, &[em.tol, em.sigma_floor]);
            }
            EstimatorConfig::Kde { bandwidth } => {
                buf.push(1);
                match bandwidth {
                    BandwidthRule::Silverman => {
                        buf.push(0);
                        put_f64s(&mut buf, &[0.0]);
                    }
                    BandwidthRule::Fixed(h) => {
                        buf.push(1);
                        put_f64s(&mut buf, &[h]);
                    }
                }
            }
        }
        buf.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        buf.write_u32::<LittleEndian>(self.classes.len() as u32)
            .unwrap();
        buf.write_u64::<LittleEndian>(self.total_count).unwrap();

        let blocks: Vec<Vec<u8>> = self.classes.values().map(ClassMemory::to_bytes).collect();
        for (memory, block) in self.classes.values().zip(&blocks) {
            buf.write_u32::<LittleEndian>(memory.class_id).unwrap();
            buf.write_u64::<LittleEndian>(memory.count).unwrap();
            buf.write_u64::<LittleEndian>(block.len() as u64).unwrap();
        }
        for block in blocks {
            buf.extend_from_slice(&block);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        BankReader::new(bytes).read_bank()
    }

    /// Human-readable export of the full bank.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank is always serializable")
    }
}

pub fn save_bank(bank: &MemoryBank, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, bank.to_bytes())?;
    Ok(())
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<MemoryBank> {
    MemoryBank::from_bytes(&fs::read(path)?)
}

struct BankReader<'a> {
    cur: Cursor<&'a [u8]>,
}

fn truncated(_: std::io::Error) -> Error {
    Error::format("bank", "unexpected end of file")
}

impl<'a> BankReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            cur: Cursor::new(bytes),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(truncated)
    }

    fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(truncated)
    }

    fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(truncated)
    }

    fn f64(&mut self) -> Result<f64> {
        let v = self.cur.read_f64::<LittleEndian>().map_err(truncated)?;
        if !v.is_finite() {
            return Err(Error::format("bank", "non-finite parameter"));
        }
        Ok(v)
    }

    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    fn read_bank(mut self) -> Result<MemoryBank> {
        let mut magic = [0u8; 4];
        self.cur.read_exact(&mut magic).map_err(truncated)?;
        if &magic != BANK_MAGIC {
            return Err(Error::format("bank", format!("bad magic {magic:?}")));
        }
        let version = self.u32()?;
        if version != BANK_VERSION {
            return Err(Error::format(
                "bank",
                format!("unsupported version {version} (expected {BANK_VERSION})"),
            ));
        }
        let estimator = match self.u8()? {
            0 => {
                let components = self.u32()? as usize;
                let max_iter = self.u32()? as usize;
                let tol = self.f64()?;
                let sigma_floor = self.f64()?;
                EstimatorConfig::Gmm {
                    components,
                    em: EmConfig {
                        max_iter,
                        tol,
                        sigma_floor,
                    },
                }
            }
            1 => {
                let rule = self.u8()?;
                let h = self.f64()?;
                match rule {
                    0 => EstimatorConfig::kde(BandwidthRule::Silverman),
                    1 => EstimatorConfig::kde(BandwidthRule::Fixed(h)),
                    other => {
                        return Err(Error::format(
                            "bank",
                            format!("unknown bandwidth rule {other}"),
                        ))
                    }
                }
            }
            other => {
                return Err(Error::format(
                    "bank",
                    format!("unknown estimator tag {other}"),
                ))
            }
        };
        estimator
            .validate()
            .map_err(|e| Error::format("bank", e.to_string()))?;
        let dim = self.u32()? as usize;
        let n_classes = self.u32()? as usize;
        let total_count = self.u64()?;
        let mut bank =
            MemoryBank::new(dim, estimator).map_err(|e| Error::format("bank", e.to_string()))?;

        if n_classes.saturating_mul(20) > self.remaining() {
            return Err(Error::format("bank", "class table is truncated"));
        }
        let mut table = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            table.push((self.u32()?, self.u64()?, self.u64()?));
        }
        for (class_id, count, block_len) in table {
            let start = self.cur.position();
            let memory = self.read_class(class_id, count, dim, &estimator)?;
            if self.cur.position() - start != block_len {
                return Err(Error::format(
                    "bank",
                    format!("class {class_id} block length does not match its table entry"),
                ));
            }
            if let Some(&last) = bank.classes.keys().next_back() {
                if class_id <= last {
                    return Err(Error::format(
                        "bank",
                        "class table is not strictly ascending",
                    ));
                }
            }
            bank.add_class(memory)
                .map_err(|e| Error::format("bank", e.to_string()))?;
        }
        if self.remaining() != 0 {
            return Err(Error::format(
                "bank",
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        if bank.total_count != total_count {
            return Err(Error::format(
                "bank",
                format!(
                    "total count {total_count} does not match class counts {}",
                    bank.total_count
                ),
            ));
        }
        Ok(bank)
    }

    fn read_class(
        &mut self,
        class_id: u32,
        count: u64,
        dim: usize,
        estimator: &EstimatorConfig,
    ) -> Result<ClassMemory> {
        let mut models = Vec::with_capacity(dim);
        match estimator {
            EstimatorConfig::Gmm { .. } => {
                let mut all_stats = Vec::with_capacity(dim);
                for _ in 0..dim {
                    let s = self.u32()? as usize;
                    if s.saturating_mul(48) > self.remaining() {
                        return Err(Error::format("bank", "mixture block is truncated"));
                    }
                    let mut components = Vec::with_capacity(s);
                    for _ in 0..s {
                        components.push(GaussianComponent::new(
                            self.f64()?,
                            self.f64()?,
                            self.f64()?,
                        ));
                    }
                    let gmm = Gmm1D::new(components.clone())
                        .map_err(|e| Error::format("bank", format!("class {class_id}: {e}")))?;
                    if gmm.components() != components.as_slice() {
                        return Err(Error::format("bank", "mixture is not in canonical order"));
                    }
                    let mut stats = Vec::with_capacity(s);
                    for _ in 0..s {
                        stats.push(ComponentStats {
                            weight_sum: self.f64()?,
                            sum: self.f64()?,
                            sum_sq: self.f64()?,
                        });
                    }
                    models.push(DensityModel::Gmm(gmm));
                    all_stats.push(stats);
                }
                Ok(ClassMemory {
                    class_id,
                    count,
                    models,
                    suff_stats: Some(all_stats),
                })
            }
            EstimatorConfig::Kde { .. } => {
                for _ in 0..dim {
                    let h = self.f64()?;
                    let n = self.u64()? as usize;
                    if n.saturating_mul(8) > self.remaining() {
                        return Err(Error::format("bank", "kde block is truncated"));
                    }
                    let centers = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
                    let kde = Kde1D::new(centers, h)
                        .map_err(|e| Error::format("bank", format!("class {class_id}: {e}")))?;
                    models.push(DensityModel::Kde(kde));
                }
                Ok(ClassMemory {
                    class_id,
                    count,
                    models,
                    suff_stats: None,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFootprint {
    pub class_id: u32,
    /// Reals needed to evaluate the densities: `3*S_k` per feature for a
    /// mixture (weight, mean, sigma), `N_c + 1` per feature for a KDE
    /// (centers plus bandwidth).
    pub parameters: usize,
    /// Reals kept only for data-incremental updates (GMM accumulators).
    pub sufficient_statistics: usize,
    /// Stored integer counts (N_c).
    pub counts: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub classes: Vec<ClassFootprint>,
    pub total_parameters: usize,
    pub total_sufficient_statistics: usize,
    pub total_counts: usize,
}

pub fn memory_footprint(bank: &MemoryBank) -> Footprint {
    let classes: Vec<ClassFootprint> = bank
        .classes()
        .map(|m| {
            let parameters = m
                .models
                .iter()
                .map(|model| match model {
                    DensityModel::Gmm(g) => 3 * g.len(),
                    DensityModel::Kde(k) => k.centers().len() + 1,
                })
                .sum();
            let sufficient_statistics = m
                .suff_stats
                .as_ref()
                .map_or(0, |s| s.iter().map(|f| 3 * f.len()).sum());
            ClassFootprint {
                class_id: m.class_id,
                parameters,
                sufficient_statistics,
                counts: 1,
            }
        })
        .collect();
    Footprint {
        total_parameters: classes.iter().map(|c| c.parameters).sum(),
        total_sufficient_statistics: classes.iter().map(|c| c.sufficient_statistics).sum(),
        total_counts: classes.iter().map(|c| c.counts).sum(),
        classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::SIGMA_FLOOR;
    use proptest::prelude::*;

    fn recs(label: u32, rows: &[&[f64]]) -> Vec<FeatureRecord> {
        rows.iter()
            .map(|r| FeatureRecord::new(label, r.to_vec()))
            .collect()
    }

    fn gmm_params(m: &ClassMemory, k: usize) -> &[GaussianComponent] {
        m.models()[k].as_gmm().unwrap().components()
    }

    #[test]
    fn form_memory_single_component_matches_closed_form() {
        let rows: &[&[f64]] = &[&[0.6, 0.8], &[0.8, 0.6], &[0.0, 1.0], &[1.0, 0.0]];
        let m = form_memory(3, &recs(3, rows), &EstimatorConfig::gmm(1), 0).unwrap();
        assert_eq!(m.count(), 4);
        for k in 0..2 {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
            let c = gmm_params(&m, k)[0];
            assert!((c.mean - mean).abs() < 1e-12);
            assert!((c.sigma - std.max(SIGMA_FLOOR)).abs() < 1e-12);
            let w: f64 = m.suff_stats().unwrap()[k]
                .iter()
                .map(|s| s.weight_sum)
                .sum();
            assert!((w - 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn form_memory_from_one_record() {
        let m = form_memory(0, &recs(0, &[&[0.6, 0.8]]), &EstimatorConfig::gmm(2), 0).unwrap();
        for (k, v) in [0.6, 0.8].into_iter().enumerate() {
            let c = gmm_params(&m, k);
            assert_eq!(c.len(), 1);
            assert_eq!(c[0].mean, v);
            assert_eq!(c[0].sigma, SIGMA_FLOOR);
        }
    }

    #[test]
    fn form_memory_errors() {
        assert!(matches!(
            form_memory(0, &[], &EstimatorConfig::default(), 0),
            Err(Error::Empty(_))
        ));
        let mut mixed = recs(0, &[&[1.0], &[2.0]]);
        mixed[1].label = 1;
        assert!(matches!(
            form_memory(0, &mixed, &EstimatorConfig::default(), 0),
            Err(Error::InvalidRecord { index: 1, .. })
        ));
    }

    #[test]
    fn footprint_counts() {
        let m = form_memory(
            0,
            &recs(0, &[&[0.1, 0.2, 0.3, 0.4][..]; 6]),
            &EstimatorConfig::gmm(1),
            0,
        )
        .unwrap();
        let mut bank = MemoryBank::new(4, EstimatorConfig::gmm(1)).unwrap();
        bank.add_class(m).unwrap();
        let fp = bank.footprint();
        assert_eq!(fp.classes[0].parameters, 12);
        assert_eq!(fp.classes[0].counts, 1);

        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![0.01 * i as f64; 3]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let kde = form_memory(
            1,
            &recs(1, &refs),
            &EstimatorConfig::kde(BandwidthRule::Silverman),
            0,
        )
        .unwrap();
        let mut kbank = MemoryBank::new(3, EstimatorConfig::kde(BandwidthRule::Silverman)).unwrap();
        kbank.add_class(kde).unwrap();
        assert_eq!(kbank.footprint().classes[0].parameters, 60 * 3 + 3);
        assert_eq!(kbank.footprint().total_sufficient_statistics, 0);
    }

    #[test]
    fn footprint_at_k2048_s2() {
        // Two well-separated modes in every feature so S stays at 2.
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![if i % 2 == 0 { -0.5 } else { 0.5 } + 0.001 * i as f64; 2048])
            .collect();
        let records: Vec<FeatureRecord> =
            rows.into_iter().map(|v| FeatureRecord::new(0, v)).collect();
        let m = form_memory(0, &records, &EstimatorConfig::gmm(2), 0).unwrap();
        let mut bank = MemoryBank::new(2048, EstimatorConfig::gmm(2)).unwrap();
        bank.add_class(m).unwrap();
        assert_eq!(bank.footprint().classes[0].parameters, 12288);
    }

    #[test]
    fn add_class_rules() {
        let est = EstimatorConfig::gmm(2);
        let mut bank = MemoryBank::new(1, est).unwrap();
        bank.add_class(form_memory(0, &recs(0, &[&[0.1], &[0.2]]), &est, 0).unwrap())
            .unwrap();
        assert_eq!(bank.len(), 1);
        let dup = form_memory(0, &recs(0, &[&[0.3]]), &est, 0).unwrap();
        assert!(matches!(bank.add_class(dup), Err(Error::DuplicateClass(0))));

        bank.add_class(form_memory(1, &recs(1, &[&[0.5], &[0.7]]), &est, 0).unwrap())
            .unwrap();
        let before: Vec<Vec<u8>> = bank.classes().map(ClassMemory::to_bytes).collect();
        bank.add_class(form_memory(2, &recs(2, &[&[0.9]]), &est, 0).unwrap())
            .unwrap();
        let after: Vec<Vec<u8>> = bank.classes().take(2).map(ClassMemory::to_bytes).collect();
        assert_eq!(before, after);
        assert_eq!(bank.total_count(), 5);

        let wrong_k = form_memory(3, &recs(3, &[&[0.1, 0.2]]), &est, 0).unwrap();
        assert!(matches!(
            bank.add_class(wrong_k),
            Err(Error::DimensionMismatch { .. })
        ));
        let wrong_kind = form_memory(
            4,
            &recs(4, &[&[0.1]]),
            &EstimatorConfig::kde(BandwidthRule::Silverman),
            0,
        )
        .unwrap();
        assert!(matches!(
            bank.add_class(wrong_kind),
            Err(Error::EstimatorMismatch(_))
        ));
    }

    #[test]
    fn update_with_empty_batch_is_noop() {
        let est = EstimatorConfig::gmm(2);
        let mut bank = MemoryBank::new(1, est).unwrap();
        bank.add_class(form_memory(0, &recs(0, &[&[0.1], &[0.2]]), &est, 0).unwrap())
            .unwrap();
        let snapshot = bank.clone();
        bank.update_class(0, &[]).unwrap();
        assert_eq!(bank, snapshot);
        assert!(matches!(
            bank.update_class(9, &[]),
            Err(Error::UnknownClass(9))
        ));
    }

    #[test]
    fn update_single_component_equals_batch_refit() {
        let est = EstimatorConfig::gmm(1);
        let a = recs(0, &[&[0.1, 0.9], &[0.3, 0.7], &[0.2, 0.5]]);
        let b = recs(0, &[&[0.6, 0.1], &[0.4, 0.3]]);
        let mut bank = MemoryBank::new(2, est).unwrap();
        bank.add_class(form_memory(0, &a, &est, 0).unwrap())
            .unwrap();
        bank.update_class(0, &b).unwrap();

        let all: Vec<FeatureRecord> = a.iter().chain(&b).cloned().collect();
        let batch = form_memory(0, &all, &est, 0).unwrap();
        let inc = bank.class(0).unwrap();
        assert_eq!(inc.count(), 5);
        assert_eq!(bank.total_count(), 5);
        for k in 0..2 {
            let (x, y) = (gmm_params(inc, k)[0], gmm_params(&batch, k)[0]);
            assert!((x.mean - y.mean).abs() < 1e-9);
            assert!((x.sigma - y.sigma).abs() < 1e-9);
            assert!((x.weight - y.weight).abs() < 1e-9);
        }
    }

    #[test]
    fn kde_update_appends_centers() {
        let est = EstimatorConfig::kde(BandwidthRule::Fixed(0.1));
        let mut bank = MemoryBank::new(1, est).unwrap();
        bank.add_class(form_memory(0, &recs(0, &[&[0.1]]), &est, 0).unwrap())
            .unwrap();
        bank.update_class(0, &recs(0, &[&[0.2], &[0.3]])).unwrap();
        let kde = bank.class(0).unwrap().models()[0].as_kde().unwrap().clone();
        assert_eq!(kde.centers(), &[0.1, 0.2, 0.3]);
        assert_eq!(kde.bandwidth(), 0.1);
        assert_eq!(bank.total_count(), 3);
    }

    #[test]
    fn replace_class_keeps_counts_consistent() {
        let est = EstimatorConfig::gmm(1);
        let mut bank = MemoryBank::new(1, est).unwrap();
        bank.add_class(form_memory(0, &recs(0, &[&[0.1], &[0.2]]), &est, 0).unwrap())
            .unwrap();
        bank.replace_class(form_memory(0, &recs(0, &[&[0.1], &[0.2], &[0.4]]), &est, 0).unwrap())
            .unwrap();
        assert_eq!(bank.total_count(), 3);
        assert!(bank
            .replace_class(form_memory(5, &recs(5, &[&[0.1]]), &est, 0).unwrap())
            .is_err());
    }

    #[test]
    fn bank_round_trip_and_corruption() {
        for est in [
            EstimatorConfig::gmm(2),
            EstimatorConfig::kde(BandwidthRule::Silverman),
        ] {
            let mut bank = MemoryBank::new(2, est).unwrap();
            for c in 0..3u32 {
                let rows: Vec<Vec<f64>> = (0..7)
                    .map(|i| vec![0.1 * c as f64 + 0.01 * i as f64, 0.5])
                    .collect();
                let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                bank.add_class(form_memory(c, &recs(c, &refs), &est, 1).unwrap())
                    .unwrap();
            }
            let bytes = bank.to_bytes();
            let back = MemoryBank::from_bytes(&bytes).unwrap();
            assert_eq!(back, bank);
            assert_eq!(back.to_bytes(), bytes);

            for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
                assert!(MemoryBank::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
            }
            let mut bad_version = bytes.clone();
            bad_version[4] = 9;
            assert!(matches!(
                MemoryBank::from_bytes(&bad_version),
                Err(Error::Format { .. })
            ));
            let mut trailing = bytes.clone();
            trailing.push(0);
            assert!(MemoryBank::from_bytes(&trailing).is_err());
            assert!(bank.to_json().contains("\"class_id\": 2"));
        }
    }

    #[test]
    fn bank_file_with_forty_classes_at_k2048() {
        let est = EstimatorConfig::gmm(2);
        let mut bank = MemoryBank::new(2048, est).unwrap();
        for c in 0..40u32 {
            let records: Vec<FeatureRecord> = (0..4)
                .map(|i| FeatureRecord::new(c, vec![0.001 * (c as f64 + i as f64); 2048]))
                .collect();
            bank.add_class(form_memory(c, &records, &est, 0).unwrap())
                .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skin40.bmb");
        save_bank(&bank, &path).unwrap();
        let loaded = load_bank(&path).unwrap();
        assert_eq!(loaded.len(), 40);
        assert_eq!(loaded.dim(), 2048);
        assert_eq!(loaded, bank);
    }

    proptest! {
        #[test]
        fn total_count_tracks_absorbed_records(
            batches in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 1..8), 1..6)
        ) {
            let est = EstimatorConfig::gmm(2);
            let mut bank = MemoryBank::new(1, est).unwrap();
            let first: Vec<FeatureRecord> = batches[0].iter().map(|&v| FeatureRecord::new(0, vec![v])).collect();
            bank.add_class(form_memory(0, &first, &est, 0).unwrap()).unwrap();
            let mut absorbed = first.len() as u64;
            for batch in &batches[1..] {
                let rs: Vec<FeatureRecord> = batch.iter().map(|&v| FeatureRecord::new(0, vec![v])).collect();
                bank.update_class(0, &rs).unwrap();
                absorbed += rs.len() as u64;
                let w: f64 = bank.class(0).unwrap().suff_stats().unwrap()[0].iter().map(|s| s.weight_sum).sum();
                prop_assert!((w - absorbed as f64).abs() < 1e-6);
            }
            prop_assert_eq!(bank.total_count(), absorbed);
            prop_assert_eq!(bank.class(0).unwrap().count(), absorbed);
        }
    }
}
