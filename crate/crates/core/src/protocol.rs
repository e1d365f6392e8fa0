//! Continual-learning evaluation protocols.
//!
//! - class-incremental: classes arrive a few at a time in a fixed order;
//!   after each round the mean class recall (MCR) over every class learned
//!   so far is measured.
//! - few-shot: class-incremental, but each new class only contributes
//!   `shots_per_class` training samples.
//! - data-incremental: every class is present from the first round; later
//!   rounds deliver fresh samples of the same classes.
//!
//! All randomness flows from the declared seeds, so a report is a pure
//! function of its datasets and config (wall-clock durations excepted).

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, PriorMode};
use crate::density::GaussianComponent;
use crate::error::{Error, Result};
use crate::feature_store::{self, FeatureDataset, FeatureRecord};
use crate::math::{derive_seed, log_sum_exp, normal_log_pdf};
use crate::memory::{self, EstimatorConfig, Footprint, MemoryBank};

// Stream tags mixed into derived seeds.
const FEW_SHOT_STREAM: u64 = 0x5eed_0001;
const DATA_STREAM: u64 = 0x5eed_0002;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    ClassIncremental,
    DataIncremental,
    FewShot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSubsample {
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub mode: ProtocolMode,
    /// class_incremental / few_shot
    #[serde(default)]
    pub classes_per_round: Option<usize>,
    /// few_shot
    #[serde(default)]
    pub shots_per_class: Option<usize>,
    /// data_incremental
    #[serde(default)]
    pub samples_per_round_per_class: Option<usize>,
    /// data_incremental
    #[serde(default)]
    pub rounds: Option<usize>,
    /// Defaults to ascending class id.
    #[serde(default)]
    pub class_order: Option<Vec<u32>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub feature_subsample: Option<FeatureSubsample>,
    #[serde(default)]
    pub prior: PriorMode,
    /// data_incremental: keep every delivered feature vector and refit each
    /// class from scratch instead of the incremental EM update.
    #[serde(default)]
    pub refit_from_cache: bool,
}

impl ProtocolConfig {
    pub fn class_incremental(
        classes_per_round: usize,
        estimator: EstimatorConfig,
        seed: u64,
    ) -> Self {
        Self {
            mode: ProtocolMode::ClassIncremental,
            classes_per_round: Some(classes_per_round),
            shots_per_class: None,
            samples_per_round_per_class: None,
            rounds: None,
            class_order: None,
            seed,
            estimator,
            feature_subsample: None,
            prior: PriorMode::Counts,
            refit_from_cache: false,
        }
    }

    pub fn few_shot(
        classes_per_round: usize,
        shots_per_class: usize,
        estimator: EstimatorConfig,
        seed: u64,
    ) -> Self {
        Self {
            mode: ProtocolMode::FewShot,
            shots_per_class: Some(shots_per_class),
            ..Self::class_incremental(classes_per_round, estimator, seed)
        }
    }

    pub fn data_incremental(
        samples_per_round_per_class: usize,
        rounds: usize,
        estimator: EstimatorConfig,
        seed: u64,
    ) -> Self {
        Self {
            mode: ProtocolMode::DataIncremental,
            classes_per_round: None,
            samples_per_round_per_class: Some(samples_per_round_per_class),
            rounds: Some(rounds),
            ..Self::class_incremental(1, estimator, seed)
        }
    }

    pub fn with_class_order(mut self, order: Vec<u32>) -> Self {
        self.class_order = Some(order);
        self
    }

    /// Every problem with the config, independent of any dataset.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let positive = |name: &str, v: Option<usize>, problems: &mut Vec<String>| match v {
            None => problems.push(format!("{name} is required for mode {:?}", self.mode)),
            Some(0) => problems.push(format!("{name} must be positive")),
            Some(_) => {}
        };
        match self.mode {
            ProtocolMode::ClassIncremental => {
                positive("classes_per_round", self.classes_per_round, &mut problems)
            }
            ProtocolMode::FewShot => {
                positive("classes_per_round", self.classes_per_round, &mut problems);
                positive("shots_per_class", self.shots_per_class, &mut problems);
            }
            ProtocolMode::DataIncremental => {
                positive(
                    "samples_per_round_per_class",
                    self.samples_per_round_per_class,
                    &mut problems,
                );
                positive("rounds", self.rounds, &mut problems);
            }
        }
        if let Err(e) = self.estimator.validate() {
            problems.push(format!("estimator: {e}"));
        }
        if let Some(order) = &self.class_order {
            let distinct: BTreeSet<u32> = order.iter().copied().collect();
            if distinct.len() != order.len() {
                problems.push("class_order contains duplicates".into());
            }
        }
        if let Some(sub) = &self.feature_subsample {
            if sub.count == 0 {
                problems.push("feature_subsample.count must be positive".into());
            }
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based.
    pub round: usize,
    pub n_classes: usize,
    pub mcr: f64,
    /// Aligned with `classes`.
    pub recalls: Vec<f64>,
    /// Wall-clock seconds; `None` once stripped for reproducible output.
    pub duration_s: Option<f64>,
    /// Classes learned so far, ascending.
    pub classes: Vec<u32>,
    /// Plain accuracy over the evaluated test pool, for diagnostics.
    pub accuracy: f64,
    /// Per-feature log-densities clamped during this round's evaluation.
    pub clamped_features: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Config echo with the resolved class order.
    pub config: ProtocolConfig,
    pub rounds: Vec<RoundReport>,
    pub footprint: Footprint,
}

impl EvalReport {
    pub fn final_round(&self) -> &RoundReport {
        self.rounds
            .last()
            .expect("a report always has at least one round")
    }

    pub fn final_mcr(&self) -> f64 {
        self.final_round().mcr
    }

    /// Copy with every wall-clock duration removed.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.rounds {
            r.duration_s = None;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// `round,n_classes,mcr` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,n_classes,mcr\n");
        for r in &self.rounds {
            out.push_str(&format!("{},{},{}\n", r.round, r.n_classes, r.mcr));
        }
        out
    }
}

/// Outcome of a protocol run: the report and the final memory bank.
#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub report: EvalReport,
    pub bank: MemoryBank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub classes: Vec<u32>,
    pub recalls: Vec<f64>,
    pub mcr: f64,
    pub accuracy: f64,
}

/// Per-class recall over `classes_in_scope` and its unweighted mean.
pub fn mean_class_recall(
    predictions: &[u32],
    labels: &[u32],
    classes_in_scope: &[u32],
) -> Result<RecallReport> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    if classes_in_scope.is_empty() {
        return Err(Error::Empty("no classes in scope"));
    }
    let mut tally: BTreeMap<u32, (usize, usize)> =
        classes_in_scope.iter().map(|&c| (c, (0, 0))).collect();
    let mut correct_total = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        let entry = tally
            .get_mut(&l)
            .ok_or_else(|| Error::invalid(format!("label {l} is not in scope")))?;
        entry.1 += 1;
        if p == l {
            entry.0 += 1;
            correct_total += 1;
        }
    }
    let mut classes = Vec::with_capacity(tally.len());
    let mut recalls = Vec::with_capacity(tally.len());
    for (c, (correct, total)) in tally {
        if total == 0 {
            return Err(Error::invalid(format!(
                "class {c} has no test samples; recall undefined"
            )));
        }
        classes.push(c);
        recalls.push(correct as f64 / total as f64);
    }
    let mcr = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(RecallReport {
        classes,
        recalls,
        mcr,
        accuracy: correct_total as f64 / labels.len() as f64,
    })
}

struct Prepared {
    test: FeatureDataset,
    by_class: BTreeMap<u32, Vec<FeatureRecord>>,
    order: Vec<u32>,
    dim: usize,
}

fn prepare(
    train: &FeatureDataset,
    test: &FeatureDataset,
    config: &ProtocolConfig,
) -> Result<Prepared> {
    config.validate()?;
    if !train.is_normalized() || !test.is_normalized() {
        return Err(Error::invalid(
            "train and test datasets must be L2-normalized",
        ));
    }
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    let (train, test) = match &config.feature_subsample {
        Some(sub) => {
            let (train, indices) = feature_store::subsample_features(train, sub.count, sub.seed)?;
            let test = feature_store::project(test, &indices)?;
            (train, test)
        }
        None => (train.clone(), test.clone()),
    };
    let by_class = feature_store::split_by_class(&train)?;
    let order = match &config.class_order {
        Some(order) => {
            let given: BTreeSet<u32> = order.iter().copied().collect();
            let present: BTreeSet<u32> = by_class.keys().copied().collect();
            if given != present || given.len() != order.len() {
                return Err(Error::invalid(
                    "class_order must be a permutation of the training classes",
                ));
            }
            order.clone()
        }
        None => by_class.keys().copied().collect(),
    };
    let test_classes: BTreeSet<u32> = test.records().iter().map(|r| r.label).collect();
    if let Some(c) = test_classes.iter().find(|c| !by_class.contains_key(c)) {
        return Err(Error::invalid(format!(
            "test class {c} never appears in training data"
        )));
    }
    if let Some(c) = order.iter().find(|c| !test_classes.contains(c)) {
        return Err(Error::invalid(format!("class {c} has no test samples")));
    }
    Ok(Prepared {
        dim: train.dim(),
        test,
        by_class,
        order,
    })
}

struct Evaluation {
    recall: RecallReport,
    clamped: usize,
}

fn evaluate(bank: &MemoryBank, test: &FeatureDataset, prior: PriorMode) -> Result<Evaluation> {
    let learned: BTreeSet<u32> = bank.class_ids().into_iter().collect();
    let pool: Vec<FeatureRecord> = test
        .records()
        .iter()
        .filter(|r| learned.contains(&r.label))
        .cloned()
        .collect();
    let scores = classifier::predict_batch(bank, &pool, prior, false)?;
    let predictions: Vec<u32> = scores.iter().map(|s| s.predicted).collect();
    let labels: Vec<u32> = pool.iter().map(|r| r.label).collect();
    let scope: Vec<u32> = learned.into_iter().collect();
    Ok(Evaluation {
        recall: mean_class_recall(&predictions, &labels, &scope)?,
        clamped: scores.iter().map(|s| s.clamped_features).sum(),
    })
}

fn round_report(round: usize, eval: Evaluation, started: Instant) -> RoundReport {
    RoundReport {
        round,
        n_classes: eval.recall.classes.len(),
        mcr: eval.recall.mcr,
        recalls: eval.recall.recalls,
        duration_s: Some(started.elapsed().as_secs_f64()),
        classes: eval.recall.classes,
        accuracy: eval.recall.accuracy,
        clamped_features: eval.clamped,
    }
}

/// Training records of one class in few-shot mode: a seeded subset of
/// `shots`, kept in dataset order. The seed depends only on the run seed and
/// the class id.
fn few_shot_records(
    records: &[FeatureRecord],
    shots: usize,
    seed: u64,
    class_id: u32,
) -> Vec<FeatureRecord> {
    if shots >= records.len() {
        return records.to_vec();
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(class_id), FEW_SHOT_STREAM));
    let mut picked = rand::seq::index::sample(&mut rng, records.len(), shots).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| records[i].clone()).collect()
}

/// Dispatches on `config.mode`.
pub fn run(
    train: &FeatureDataset,
    test: &FeatureDataset,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    match config.mode {
        ProtocolMode::ClassIncremental | ProtocolMode::FewShot => {
            run_class_incremental(train, test, config)
        }
        ProtocolMode::DataIncremental => run_data_incremental(train, test, config),
    }
}

pub fn run_class_incremental(
    train: &FeatureDataset,
    test: &FeatureDataset,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    if config.mode == ProtocolMode::DataIncremental {
        return Err(Error::invalid(
            "run_class_incremental needs class_incremental or few_shot mode",
        ));
    }
    let prep = prepare(train, test, config)?;
    let per_round = config.classes_per_round.expect("validated");
    let shots = match config.mode {
        ProtocolMode::FewShot => config.shots_per_class,
        _ => None,
    };

    let mut bank = MemoryBank::new(prep.dim, config.estimator)?;
    let mut rounds = Vec::new();
    for (i, new_classes) in prep.order.chunks(per_round).enumerate() {
        let started = Instant::now();
        let memories = new_classes
            .par_iter()
            .map(|&c| {
                let all = &prep.by_class[&c];
                let records = match shots {
                    Some(s) => few_shot_records(all, s, config.seed, c),
                    None => all.clone(),
                };
                memory::form_memory(c, &records, &config.estimator, config.seed)
            })
            .collect::<Result<Vec<_>>>()?;
        for m in memories {
            bank.add_class(m)?;
        }
        let eval = evaluate(&bank, &prep.test, config.prior)?;
        rounds.push(round_report(i + 1, eval, started));
    }

    let mut echo = config.clone();
    echo.class_order = Some(prep.order);
    Ok(ProtocolRun {
        report: EvalReport {
            config: echo,
            rounds,
            footprint: bank.footprint(),
        },
        bank,
    })
}

/// Splits each class's records into `rounds` disjoint batches of `per_round`.
/// Membership is a seeded shuffle; inside a batch records keep dataset order.
fn data_schedule(
    by_class: &BTreeMap<u32, Vec<FeatureRecord>>,
    per_round: usize,
    rounds: usize,
    seed: u64,
) -> Result<BTreeMap<u32, Vec<Vec<FeatureRecord>>>> {
    let needed = per_round
        .checked_mul(rounds)
        .ok_or_else(|| Error::invalid("schedule size overflows"))?;
    let mut out = BTreeMap::new();
    for (&c, records) in by_class {
        if records.len() < needed {
            return Err(Error::invalid(format!(
                "class {c} has {} training samples but the schedule needs {needed}",
                records.len()
            )));
        }
        let mut perm: Vec<usize> = (0..records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(c), DATA_STREAM));
        perm.shuffle(&mut rng);
        let batches = perm[..needed]
            .chunks(per_round)
            .map(|chunk| {
                let mut idx = chunk.to_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| records[i].clone()).collect()
            })
            .collect();
        out.insert(c, batches);
    }
    Ok(out)
}

pub fn run_data_incremental(
    train: &FeatureDataset,
    test: &FeatureDataset,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    if config.mode != ProtocolMode::DataIncremental {
        return Err(Error::invalid(
            "run_data_incremental needs data_incremental mode",
        ));
    }
    let prep = prepare(train, test, config)?;
    let per_round = config.samples_per_round_per_class.expect("validated");
    let n_rounds = config.rounds.expect("validated");
    let schedule = data_schedule(&prep.by_class, per_round, n_rounds, config.seed)?;

    let mut bank = MemoryBank::new(prep.dim, config.estimator)?;
    let mut cache: BTreeMap<u32, Vec<FeatureRecord>> = BTreeMap::new();
    let mut rounds = Vec::with_capacity(n_rounds);
    for round in 0..n_rounds {
        let started = Instant::now();
        if round == 0 {
            let memories = prep
                .order
                .par_iter()
                .map(|&c| memory::form_memory(c, &schedule[&c][0], &config.estimator, config.seed))
                .collect::<Result<Vec<_>>>()?;
            for m in memories {
                bank.add_class(m)?;
            }
            if config.refit_from_cache {
                for &c in &prep.order {
                    cache.insert(c, schedule[&c][0].clone());
                }
            }
        } else if config.refit_from_cache {
            for &c in &prep.order {
                let cached = cache.get_mut(&c).expect("filled in round one");
                cached.extend(schedule[&c][round].iter().cloned());
            }
            let memories = prep
                .order
                .par_iter()
                .map(|&c| memory::form_memory(c, &cache[&c], &config.estimator, config.seed))
                .collect::<Result<Vec<_>>>()?;
            for m in memories {
                bank.replace_class(m)?;
            }
        } else {
            for &c in &prep.order {
                bank.update_class(c, &schedule[&c][round])?;
            }
        }
        let eval = evaluate(&bank, &prep.test, config.prior)?;
        rounds.push(round_report(round + 1, eval, started));
    }

    let mut echo = config.clone();
    echo.class_order = Some(prep.order);
    Ok(ProtocolRun {
        report: EvalReport {
            config: echo,
            rounds,
            footprint: bank.footprint(),
        },
        bank,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    GmmComponents(Vec<usize>),
    /// Each seed shuffles the base class order.
    ClassOrder(Vec<u64>),
    FeatureCount(Vec<usize>),
}

/// The base config with one axis value applied.
pub fn sweep_configs(
    base: &ProtocolConfig,
    train: &FeatureDataset,
    axis: &SweepAxis,
) -> Result<Vec<ProtocolConfig>> {
    let configs = match axis {
        SweepAxis::GmmComponents(values) => {
            let em = match base.estimator {
                EstimatorConfig::Gmm { em, .. } => em,
                EstimatorConfig::Kde { .. } => Default::default(),
            };
            values
                .iter()
                .map(|&components| ProtocolConfig {
                    estimator: EstimatorConfig::Gmm { components, em },
                    ..base.clone()
                })
                .collect()
        }
        SweepAxis::ClassOrder(seeds) => {
            let base_order = base.class_order.clone().unwrap_or_else(|| train.classes());
            seeds
                .iter()
                .map(|&s| {
                    let mut order = base_order.clone();
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
                    base.clone().with_class_order(order)
                })
                .collect()
        }
        SweepAxis::FeatureCount(counts) => {
            let seed = base.feature_subsample.map_or(base.seed, |s| s.seed);
            counts
                .iter()
                .map(|&count| ProtocolConfig {
                    feature_subsample: Some(FeatureSubsample { count, seed }),
                    ..base.clone()
                })
                .collect()
        }
    };
    Ok(configs)
}

/// One full protocol run per axis value.
pub fn sweep(
    train: &FeatureDataset,
    test: &FeatureDataset,
    base: &ProtocolConfig,
    axis: &SweepAxis,
) -> Result<Vec<EvalReport>> {
    sweep_configs(base, train, axis)?
        .iter()
        .map(|cfg| run(train, test, cfg).map(|r| r.report))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub n_classes: usize,
    pub mean_mcr: f64,
    /// Sample standard deviation (zero for a single run).
    pub std_mcr: f64,
}

/// Mean and standard deviation of MCR per round across repeated runs.
pub fn summarize(reports: &[EvalReport]) -> Result<Vec<RoundSummary>> {
    let first = reports
        .first()
        .ok_or(Error::Empty("no reports to summarize"))?;
    if reports.iter().any(|r| r.rounds.len() != first.rounds.len()) {
        return Err(Error::invalid("reports have different round counts"));
    }
    Ok((0..first.rounds.len())
        .map(|i| {
            let values: Vec<f64> = reports.iter().map(|r| r.rounds[i].mcr).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            RoundSummary {
                round: first.rounds[i].round,
                n_classes: first.rounds[i].n_classes,
                mean_mcr: mean,
                std_mcr: std,
            }
        })
        .collect())
}

/// Generative description of one synthetic class: an independent 1-D
/// mixture per feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub features: Vec<Vec<GaussianComponent>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub classes: Vec<SyntheticClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl SyntheticModel {
    /// Every class gets a random center in `[0.1, 0.1 + spread)` per feature
    /// and a symmetric two-mode mixture around it.
    #[allow(clippy::too_many_arguments)]
    pub fn random_bimodal(
        n_classes: usize,
        dim: usize,
        spread: f64,
        mode_offset: f64,
        sigma: f64,
        train_per_class: usize,
        test_per_class: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = (0..n_classes)
            .map(|_| SyntheticClass {
                features: (0..dim)
                    .map(|_| {
                        let center = 0.1 + spread * rng.random::<f64>();
                        vec![
                            GaussianComponent::new(0.5, center - mode_offset, sigma),
                            GaussianComponent::new(0.5, center + mode_offset, sigma),
                        ]
                    })
                    .collect(),
            })
            .collect();
        Self {
            classes,
            train_per_class,
            test_per_class,
        }
    }

    /// Classes far apart relative to their spread; the Bayes error is
    /// effectively zero.
    pub fn well_separated(
        n_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        seed: u64,
    ) -> Self {
        Self::random_bimodal(
            n_classes,
            dim,
            0.9,
            0.06,
            0.02,
            train_per_class,
            test_per_class,
            seed,
        )
    }

    /// Makes the given features carry no class information by giving every
    /// class the first class's mixture there.
    pub fn share_features(&mut self, features: impl IntoIterator<Item = usize>) {
        let Some((first, rest)) = self.classes.split_first_mut() else {
            return;
        };
        for k in features {
            for class in rest.iter_mut() {
                class.features[k] = first.features[k].clone();
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.features.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Empty("synthetic model has no classes"));
        }
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::invalid("synthetic model has no features"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::invalid(
                "need at least one train and one test sample per class",
            ));
        }
        for class in &self.classes {
            if class.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: class.features.len(),
                });
            }
            for mixture in &class.features {
                crate::density::Gmm1D::new(mixture.clone())?;
            }
        }
        Ok(())
    }

    fn draw_raw(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.classes[class]
            .features
            .iter()
            .map(|mixture| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &mixture[mixture.len() - 1];
                for c in mixture {
                    acc += c.weight;
                    if u < acc {
                        chosen = c;
                        break;
                    }
                }
                Normal::new(chosen.mean, chosen.sigma)
                    .expect("validated sigma")
                    .sample(rng)
            })
            .collect()
    }

    fn true_log_likelihood(&self, class: usize, x: &[f64]) -> f64 {
        self.classes[class]
            .features
            .iter()
            .zip(x)
            .map(|(mixture, &v)| {
                let terms: Vec<f64> = mixture
                    .iter()
                    .map(|c| c.weight.ln() + normal_log_pdf(v, c.mean, c.sigma))
                    .collect();
                log_sum_exp(&terms)
            })
            .sum()
    }
}

/// Draws labeled train and test sets (class ids `0..M`, class-major order)
/// from the model and L2-normalizes them.
pub fn make_synthetic_dataset(
    model: &SyntheticModel,
    seed: u64,
) -> Result<(FeatureDataset, FeatureDataset)> {
    model.validate()?;
    let draw = |per_class: usize, stream: u64| -> Result<FeatureDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, 0));
        let mut records = Vec::with_capacity(per_class * model.classes.len());
        for c in 0..model.classes.len() {
            for _ in 0..per_class {
                records.push(FeatureRecord::new(c as u32, model.draw_raw(c, &mut rng)));
            }
        }
        feature_store::l2_normalize(&FeatureDataset::new(model.dim(), records)?)
    };
    Ok((
        draw(model.train_per_class, 1)?,
        draw(model.test_per_class, 2)?,
    ))
}

/// Monte Carlo error rate of the Bayes classifier that knows the true
/// generative mixtures, with equal class priors, on raw (unnormalized)
/// draws. Normalization cannot add information, so this is a lower bound on
/// the Bayes error of the normalized dataset.
pub fn monte_carlo_bayes_error(
    model: &SyntheticModel,
    samples_per_class: usize,
    seed: u64,
) -> Result<f64> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = 0usize;
    for c in 0..model.classes.len() {
        for _ in 0..samples_per_class {
            let x = model.draw_raw(c, &mut rng);
            let mut best = (f64::NEG_INFINITY, 0);
            for m in 0..model.classes.len() {
                let ll = model.true_log_likelihood(m, &x);
                if ll > best.0 {
                    best = (ll, m);
                }
            }
            if best.1 != c {
                errors += 1;
            }
        }
    }
    Ok(errors as f64 / (samples_per_class * model.classes.len()) as f64)
}
