//! One-parameter sweeps over a base config.
//!
//! Each point runs the base config with one dotted key overridden, using
//! only `trainer.strategy` (the summary holds one row per point). Points
//! land in `<out>/<key>=<value>/`; `sweep_summary.csv` has the columns
//! `param,value,final_global_acc,final_personalized_acc,best_personalized_acc`.
//! A failing point is reported on stderr and recorded with NaN metrics.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use crate::config::{parse_config_table, set_dotted, ConfigError, ExperimentConfig};
use crate::experiment::run_experiment;

pub const SUMMARY_HEADER: [&str; 5] = [
    "param",
    "value",
    "final_global_acc",
    "final_personalized_acc",
    "best_personalized_acc",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub final_global_acc: f64,
    pub final_personalized_acc: f64,
    pub best_personalized_acc: f64,
    pub error: Option<String>,
}

/// TOML values a command-line literal may stand for, most specific first.
fn candidates(raw: &str) -> Vec<toml::Value> {
    let raw = raw.trim();
    if let Ok(i) = raw.parse::<i64>() {
        return vec![toml::Value::Integer(i), toml::Value::Float(i as f64)];
    }
    if let Ok(f) = raw.parse::<f64>() {
        return vec![toml::Value::Float(f)];
    }
    if let Ok(b) = raw.parse::<bool>() {
        return vec![toml::Value::Boolean(b)];
    }
    vec![toml::Value::String(raw.to_string())]
}

/// The base config with `param` set to `raw`.
pub fn point_config(base: &toml::Table, base_dir: &Path, param: &str, raw: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut last = None;
    for value in candidates(raw) {
        let mut table = base.clone();
        set_dotted(&mut table, param, value)?;
        // sweeps run one strategy per point
        table.remove("algorithms");
        match parse_config_table(table, base_dir) {
            Ok(cfg) => return Ok(cfg),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one candidate"))
}

fn point_dir(out: &Path, param: &str, raw: &str) -> PathBuf {
    let clean: String = raw
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    out.join(format!("{param}={clean}"))
}

pub fn run_sweep(config_path: &Path, param: &str, values: &[String], out: Option<&Path>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!("sweep needs at least one value for `{param}`");
    }
    let src = std::fs::read_to_string(config_path)?;
    let base: toml::Table = src.parse()?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    // the parameter must exist in the schema: check the first value up front
    let first = point_config(&base, base_dir, param, &values[0])?;
    let out = out.map(Path::to_path_buf).unwrap_or(first.output.dir);
    std::fs::create_dir_all(&out)?;

    let mut rows = Vec::new();
    for raw in values {
        let outcome = point_config(&base, base_dir, param, raw)
            .map_err(anyhow::Error::from)
            .and_then(|cfg| run_experiment(&cfg, &point_dir(&out, param, raw)));
        let row = match outcome {
            Ok(summaries) => {
                let s = &summaries[0];
                SweepRow {
                    value: raw.trim().to_string(),
                    final_global_acc: s.final_global_acc,
                    final_personalized_acc: s.final_personalized_acc,
                    best_personalized_acc: s.best_personalized_acc,
                    error: None,
                }
            }
            Err(e) => {
                eprintln!("sweep point {param}={raw} failed: {e:#}");
                SweepRow {
                    value: raw.trim().to_string(),
                    final_global_acc: f64::NAN,
                    final_personalized_acc: f64::NAN,
                    best_personalized_acc: f64::NAN,
                    error: Some(format!("{e:#}")),
                }
            }
        };
        rows.push(row);
    }

    let mut w = csv::Writer::from_path(out.join("sweep_summary.csv"))?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &rows {
        w.write_record([
            param.to_string(),
            r.value.clone(),
            r.final_global_acc.to_string(),
            r.final_personalized_acc.to_string(),
            r.best_personalized_acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
