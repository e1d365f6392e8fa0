use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bayesmem::classifier;
use bayesmem::feature_store::{self, ShardFormat};
use bayesmem::memory::{self, BandwidthRule, EstimatorConfig, MemoryBank};
use bayesmem::protocol::{self, EvalReport, SweepAxis, SyntheticModel};
use bayesmem::{FeatureDataset, PriorMode};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::run_file;
use crate::{
    EstimatorKind, ExtendArgs, FitArgs, Format, InspectArgs, PredictArgs, Prior, ProtocolArgs,
    SynthArgs,
};

fn shard_format(path: &Path, format: Format) -> ShardFormat {
    match format {
        Format::Auto => ShardFormat::from_path(path),
        Format::Binary => ShardFormat::Binary,
        Format::Csv => ShardFormat::Csv,
    }
}

/// Loads a shard and L2-normalizes it, as every stored and scored vector is.
fn load_features(path: &Path, format: Format) -> CliResult<FeatureDataset> {
    let raw = feature_store::load_shard(path, shard_format(path, format))
        .map_err(|e| CliError::library(path, e))?;
    feature_store::l2_normalize(&raw).map_err(|e| CliError::library(path, e))
}

fn load_bank(path: &Path) -> CliResult<MemoryBank> {
    memory::load_bank(path).map_err(|e| CliError::library(path, e))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

fn save_bank(bank: &MemoryBank, out: &Path, inputs: &[&Path]) -> CliResult<()> {
    if let Some(input) = inputs.iter().find(|p| same_file(p, out)) {
        return Err(CliError::Validation(format!(
            "--out {} would overwrite input {}",
            out.display(),
            input.display()
        )));
    }
    memory::save_bank(bank, out).map_err(|e| CliError::library(out, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let estimator = match args.estimator {
        EstimatorKind::Gmm => {
            if args.components == 0 {
                return Err(CliError::Validation(
                    "--components must be at least 1".into(),
                ));
            }
            if args.bandwidth.is_some() {
                return Err(CliError::Validation(
                    "--bandwidth only applies to --estimator kde".into(),
                ));
            }
            EstimatorConfig::gmm(args.components)
        }
        EstimatorKind::Kde => EstimatorConfig::kde(match args.bandwidth {
            Some(h) => BandwidthRule::Fixed(h),
            None => BandwidthRule::Silverman,
        }),
    };
    estimator.validate()?;
    let data = load_features(&args.features, args.format)?;
    let bank = memory::fit_bank(&data, &estimator, args.seed)?;
    save_bank(&bank, &args.out, &[&args.features])?;
    eprintln!(
        "fitted {} classes ({} samples, K={}) -> {}",
        bank.len(),
        bank.total_count(),
        bank.dim(),
        args.out.display()
    );
    Ok(())
}

pub fn learn(args: &ExtendArgs) -> CliResult<()> {
    let mut bank = load_bank(&args.bank)?;
    let data = load_features(&args.features, args.format)?;
    let overlap: Vec<u32> = data
        .classes()
        .into_iter()
        .filter(|c| bank.contains(*c))
        .collect();
    if !overlap.is_empty() {
        return Err(CliError::Validation(format!(
            "classes already in the bank: {}; use `update` to add samples to existing classes",
            join_ids(&overlap)
        )));
    }
    memory::learn_dataset(&mut bank, &data, args.seed)?;
    save_bank(&bank, &args.out, &[&args.bank, &args.features])?;
    eprintln!(
        "bank now holds {} classes -> {}",
        bank.len(),
        args.out.display()
    );
    Ok(())
}

pub fn update(args: &ExtendArgs) -> CliResult<()> {
    let mut bank = load_bank(&args.bank)?;
    let data = load_features(&args.features, args.format)?;
    let unknown: Vec<u32> = data
        .classes()
        .into_iter()
        .filter(|c| !bank.contains(*c))
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Validation(format!(
            "classes not in the bank: {}; use `learn` to add new classes",
            join_ids(&unknown)
        )));
    }
    memory::update_dataset(&mut bank, &data)?;
    save_bank(&bank, &args.out, &[&args.bank, &args.features])?;
    eprintln!("updated {} samples -> {}", data.len(), args.out.display());
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let bank = load_bank(&args.bank)?;
    let data = load_features(&args.features, args.format)?;
    if data.dim() != bank.dim() {
        return Err(CliError::Validation(format!(
            "feature dimension {} does not match the bank's {}",
            data.dim(),
            bank.dim()
        )));
    }
    let prior = match args.prior {
        Prior::Counts => PriorMode::Counts,
        Prior::Uniform => PriorMode::Uniform,
    };
    let scores = classifier::predict_batch(&bank, data.records(), prior, args.posteriors)?;

    let mut out = String::from("index,label,predicted,log_joint");
    if args.posteriors {
        for c in bank.class_ids() {
            write!(out, ",posterior_{c}").unwrap();
        }
    }
    out.push('\n');
    for (i, (record, s)) in data.records().iter().zip(&scores).enumerate() {
        write!(
            out,
            "{i},{},{},{}",
            record.label,
            s.predicted,
            s.predicted_log_joint()
        )
        .unwrap();
        if let Some(post) = &s.posterior {
            for p in post {
                write!(out, ",{p}").unwrap();
            }
        }
        out.push('\n');
    }
    write_file(&args.out, out)
}

#[derive(Serialize)]
struct InputDigest {
    role: &'static str,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Seeds {
    protocol: u64,
    feature_subsample: Option<u64>,
    class_order_shuffles: Vec<u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    inputs: Vec<InputDigest>,
    seeds: Seeds,
    protocol: &'a bayesmem::ProtocolConfig,
    sweep: &'a Option<SweepAxis>,
    reports: Vec<String>,
}

fn digest(role: &'static str, path: &Path) -> CliResult<InputDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(InputDigest {
        role,
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn protocol(args: &ProtocolArgs) -> CliResult<()> {
    let run = run_file::load(&args.config)?;
    let train = load_features(&run.train, Format::Auto)?;
    let test = load_features(&run.test, Format::Auto)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    let configs = match &run.sweep {
        Some(axis) => protocol::sweep_configs(&run.protocol, &train, axis)?,
        None => vec![run.protocol.clone()],
    };
    let mut reports: Vec<EvalReport> = Vec::with_capacity(configs.len());
    for cfg in &configs {
        reports.push(protocol::run(&train, &test, cfg)?.report);
    }

    let names: Vec<String> = if run.sweep.is_some() {
        (0..reports.len()).map(|i| format!("report_{i}")).collect()
    } else {
        vec!["report".into()]
    };
    let mut timings = String::from("report,round,n_classes,duration_s\n");
    for (name, report) in names.iter().zip(&reports) {
        let written = if args.timings {
            report.clone()
        } else {
            report.without_timings()
        };
        write_file(&args.out.join(format!("{name}.json")), to_json(&written))?;
        write_file(&args.out.join(format!("{name}.csv")), report.to_csv())?;
        for r in &report.rounds {
            writeln!(
                timings,
                "{name},{},{},{}",
                r.round,
                r.n_classes,
                r.duration_s.unwrap_or(f64::NAN)
            )
            .unwrap();
        }
        eprintln!(
            "{name}: {} rounds, final MCR {:.4}",
            report.rounds.len(),
            report.final_mcr()
        );
    }
    if args.timings {
        write_file(&args.out.join("timings.csv"), timings)?;
    }
    if run.sweep.is_some() {
        let mut summary = String::from("round,n_classes,mean_mcr,std_mcr\n");
        if reports
            .iter()
            .all(|r| r.rounds.len() == reports[0].rounds.len())
        {
            for s in protocol::summarize(&reports)? {
                writeln!(
                    summary,
                    "{},{},{},{}",
                    s.round, s.n_classes, s.mean_mcr, s.std_mcr
                )
                .unwrap();
            }
        }
        write_file(&args.out.join("summary.csv"), summary)?;
    }

    let manifest = Manifest {
        tool: "bayesmem",
        version: env!("CARGO_PKG_VERSION"),
        inputs: vec![
            digest("config", &args.config)?,
            digest("train", &run.train)?,
            digest("test", &run.test)?,
        ],
        seeds: Seeds {
            protocol: run.protocol.seed,
            feature_subsample: run.protocol.feature_subsample.map(|s| s.seed),
            class_order_shuffles: match &run.sweep {
                Some(SweepAxis::ClassOrder(seeds)) => seeds.clone(),
                _ => Vec::new(),
            },
        },
        protocol: &run.protocol,
        sweep: &run.sweep,
        reports: names,
    };
    write_file(&args.out.join("manifest.json"), to_json(&manifest))
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    if args.classes == 0 || args.dim == 0 || args.train_per_class == 0 || args.test_per_class == 0 {
        return Err(CliError::Validation(
            "--classes, --dim, --train-per-class and --test-per-class must be positive".into(),
        ));
    }
    let model = SyntheticModel::well_separated(
        args.classes,
        args.dim,
        args.train_per_class,
        args.test_per_class,
        args.seed,
    );
    let (train, test) = protocol::make_synthetic_dataset(&model, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let (format, ext) = match args.format {
        Format::Csv => (ShardFormat::Csv, "csv"),
        Format::Auto | Format::Binary => (ShardFormat::Binary, "fvs"),
    };
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, data) in [("train", &train), ("test", &test)] {
        let path = args.out.join(format!("{name}.{ext}"));
        feature_store::write_shard(&path, data, format).map_err(|e| CliError::library(&path, e))?;
        written.push(path);
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassSummary {
    class_id: u32,
    count: u64,
}

#[derive(Serialize)]
struct BankSummary<'a> {
    dim: usize,
    estimator: &'a EstimatorConfig,
    total_count: u64,
    classes: Vec<ClassSummary>,
    footprint: memory::Footprint,
}

pub fn inspect(args: &InspectArgs) -> CliResult<()> {
    let bank = load_bank(&args.bank)?;
    if args.full {
        println!("{}", bank.to_json());
        return Ok(());
    }
    let summary = BankSummary {
        dim: bank.dim(),
        estimator: bank.estimator(),
        total_count: bank.total_count(),
        classes: bank
            .classes()
            .map(|m| ClassSummary {
                class_id: m.class_id(),
                count: m.count(),
            })
            .collect(),
        footprint: bank.footprint(),
    };
    print!("{}", to_json(&summary));
    Ok(())
}
