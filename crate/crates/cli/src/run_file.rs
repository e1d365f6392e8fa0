//! Protocol run files (JSON).
//!
//! ```json
//! {
//!   "train": "train.fvs",
//!   "test": "test.fvs",
//!   "protocol": { "mode": "class_incremental", "classes_per_round": 5, "seed": 0 },
//!   "sweep": { "axis": "gmm_components", "values": [1, 2, 3] }
//! }
//! ```
//!
//! Relative dataset paths resolve against the run file's directory.

use std::path::{Path, PathBuf};

use bayesmem::memory::EstimatorConfig;
use bayesmem::protocol::{FeatureSubsample, SweepAxis};
use bayesmem::{PriorMode, ProtocolConfig, ProtocolMode};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

const TOP_LEVEL: &[&str] = &["train", "test", "protocol", "sweep"];

#[derive(Debug, Clone)]
pub struct RunFile {
    pub train: PathBuf,
    pub test: PathBuf,
    pub protocol: ProtocolConfig,
    pub sweep: Option<SweepAxis>,
}

pub fn load(path: &Path) -> CliResult<RunFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base).map_err(CliError::Schema)
}

fn check<T: DeserializeOwned>(
    obj: &Map<String, Value>,
    key: &str,
    prefix: &str,
    problems: &mut Vec<String>,
) {
    if let Some(v) = obj.get(key) {
        if let Err(e) = serde_json::from_value::<T>(v.clone()) {
            problems.push(format!("{prefix}{key}: {e}"));
        }
    }
}

fn unknown_keys(
    obj: &Map<String, Value>,
    known: &[&str],
    prefix: &str,
    problems: &mut Vec<String>,
) {
    for key in obj.keys() {
        if !known.contains(&key.as_str()) {
            problems.push(format!("{prefix}{key}: unknown field"));
        }
    }
}

fn path_field(
    obj: &Map<String, Value>,
    key: &str,
    base: &Path,
    problems: &mut Vec<String>,
) -> PathBuf {
    match obj.get(key) {
        None => {
            problems.push(format!("missing required field `{key}`"));
            PathBuf::new()
        }
        Some(Value::String(s)) => base.join(s),
        Some(_) => {
            problems.push(format!("{key}: expected a path string"));
            PathBuf::new()
        }
    }
}

/// Parses and validates a run file, reporting every problem found.
pub fn parse(text: &str, base: &Path) -> Result<RunFile, Vec<String>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| vec![format!("not valid JSON: {e}")])?;
    let Value::Object(root) = root else {
        return Err(vec!["run file must be a JSON object".into()]);
    };
    let mut problems = Vec::new();
    unknown_keys(&root, TOP_LEVEL, "", &mut problems);
    let train = path_field(&root, "train", base, &mut problems);
    let test = path_field(&root, "test", base, &mut problems);
    check::<SweepAxis>(&root, "sweep", "", &mut problems);

    let protocol = match root.get("protocol") {
        None => {
            problems.push("missing required field `protocol`".into());
            None
        }
        Some(Value::Object(p)) => {
            let before = problems.len();
            let known = [
                "mode",
                "classes_per_round",
                "shots_per_class",
                "samples_per_round_per_class",
                "rounds",
                "class_order",
                "seed",
                "estimator",
                "feature_subsample",
                "prior",
                "refit_from_cache",
            ];
            unknown_keys(p, &known, "protocol.", &mut problems);
            if !p.contains_key("mode") {
                problems.push("missing required field `protocol.mode`".into());
            }
            check::<ProtocolMode>(p, "mode", "protocol.", &mut problems);
            for key in [
                "classes_per_round",
                "shots_per_class",
                "samples_per_round_per_class",
                "rounds",
            ] {
                check::<Option<usize>>(p, key, "protocol.", &mut problems);
            }
            check::<Option<Vec<u32>>>(p, "class_order", "protocol.", &mut problems);
            check::<u64>(p, "seed", "protocol.", &mut problems);
            check::<EstimatorConfig>(p, "estimator", "protocol.", &mut problems);
            check::<Option<FeatureSubsample>>(p, "feature_subsample", "protocol.", &mut problems);
            check::<PriorMode>(p, "prior", "protocol.", &mut problems);
            check::<bool>(p, "refit_from_cache", "protocol.", &mut problems);
            if problems.len() == before {
                match serde_json::from_value::<ProtocolConfig>(Value::Object(p.clone())) {
                    Ok(cfg) => {
                        problems
                            .extend(cfg.problems().into_iter().map(|m| format!("protocol: {m}")));
                        Some(cfg)
                    }
                    Err(e) => {
                        problems.push(format!("protocol: {e}"));
                        None
                    }
                }
            } else {
                None
            }
        }
        Some(_) => {
            problems.push("protocol: expected an object".into());
            None
        }
    };

    match protocol {
        Some(protocol) if problems.is_empty() => Ok(RunFile {
            train,
            test,
            protocol,
            sweep: root
                .get("sweep")
                .map(|v| serde_json::from_value(v.clone()).expect("checked above")),
        }),
        _ => Err(problems),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let f = parse(
            r#"{"train":"a.fvs","test":"b.fvs","protocol":{"mode":"class_incremental","classes_per_round":2}}"#,
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(f.train, PathBuf::from("/data/a.fvs"));
        assert_eq!(f.protocol.estimator, EstimatorConfig::gmm(2));
        assert_eq!(f.protocol.prior, PriorMode::Counts);
        assert!(f.sweep.is_none());
    }

    #[test]
    fn every_problem_is_reported() {
        let problems = parse(
            r#"{"test":5,"bogus":1,"protocol":{"classes_per_round":"x","seed":-1,"extra":true}}"#,
            Path::new("."),
        )
        .unwrap_err();
        let joined = problems.join("\n");
        for needle in [
            "`train`",
            "test:",
            "bogus",
            "protocol.mode",
            "classes_per_round",
            "protocol.seed",
            "protocol.extra",
        ] {
            assert!(joined.contains(needle), "{needle} missing from:\n{joined}");
        }
    }

    #[test]
    fn semantic_problems_follow_schema_checks() {
        let problems = parse(
            r#"{"train":"a","test":"b","protocol":{"mode":"few_shot","classes_per_round":0}}"#,
            Path::new("."),
        )
        .unwrap_err();
        assert_eq!(problems.len(), 2, "{problems:?}");
    }

    #[test]
    fn sweep_is_parsed() {
        let f = parse(
            r#"{"train":"a","test":"b","protocol":{"mode":"class_incremental","classes_per_round":1},
                "sweep":{"axis":"feature_count","values":[4,8]}}"#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(f.sweep, Some(SweepAxis::FeatureCount(vec![4, 8])));
    }
}
