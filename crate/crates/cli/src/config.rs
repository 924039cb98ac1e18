//! Experiment configuration: a TOML file, validated and resolved on load.
//!
//! Every key except `dataset.source` and `trainer.strategy` has a default.
//! Relative paths are resolved against the config file's directory; the
//! output directory is resolved against `PFEDBRED_OUTPUT_ROOT` when that
//! variable is set.

use std::path::{Path, PathBuf};

use pfedbred::algorithms::{Strategy, TrainerConfig};
use pfedbred::federation::{AggregationWeighting, EvalConfig, RoundConfig};
use pfedbred::models::{DEFAULT_HIDDEN_DIM, DEFAULT_LEAKY_SLOPE};
use pfedbred::{InitScheme, ModelKind};
use serde::{Deserialize, Serialize};

pub const OUTPUT_ROOT_ENV: &str = "PFEDBRED_OUTPUT_ROOT";

/// Rounds used when `federation.rounds` is omitted.
pub const DEFAULT_ROUNDS_SYNTHETIC: usize = 100;
pub const DEFAULT_ROUNDS_IDX: usize = 400;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("`{key}`{}: {reason}", line_suffix(*.line))]
    Range {
        key: String,
        line: Option<usize>,
        reason: String,
    },
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Range { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn d_seed() -> u64 {
    1
}
fn d_num_clients() -> usize {
    20
}
fn d_train_fraction() -> f64 {
    0.75
}
fn d_num_classes() -> usize {
    10
}
fn d_examples_per_class() -> usize {
    300
}
fn d_input_dim() -> usize {
    60
}
fn d_separation() -> f64 {
    2.0
}
fn d_classes_per_client() -> usize {
    3
}
fn d_alpha() -> f64 {
    0.5
}
fn d_min_samples() -> usize {
    10
}
fn d_max_retries() -> usize {
    100
}
fn d_model_kind() -> ModelKind {
    ModelKind::Mclr
}
fn d_hidden_dim() -> usize {
    DEFAULT_HIDDEN_DIM
}
fn d_leaky_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}
fn d_local_iterations() -> usize {
    20
}
fn d_sample_ratio() -> f64 {
    0.2
}
fn d_beta() -> f64 {
    1.0
}
fn d_cadence() -> usize {
    1
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Strategies to run in order; defaults to `[trainer.strategy]`.
    #[serde(default)]
    pub algorithms: Vec<Strategy>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "d_num_clients")]
    pub num_clients: usize,
    #[serde(default = "d_train_fraction")]
    pub train_fraction: f64,
    pub source: SourceConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSource", into = "RawSource")]
pub enum SourceConfig {
    Synthetic {
        num_classes: usize,
        examples_per_class: usize,
        input_dim: usize,
        class_separation: f64,
    },
    /// Pairs of IDX files, concatenated in order (e.g. train then test).
    Idx {
        images: Vec<PathBuf>,
        labels: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Idx,
}

/// Flat on-disk form of [`SourceConfig`]. A plain struct keeps per-key
/// positions in parse errors, which a tagged enum would lose.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSource {
    kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    examples_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    images: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<PathBuf>>,
}

fn reject_extra(kind: &str, present: &[(&str, bool)]) -> Result<(), String> {
    match present.iter().find(|(_, set)| *set) {
        Some((key, _)) => Err(format!("`{key}` does not apply to kind = \"{kind}\"")),
        None => Ok(()),
    }
}

impl TryFrom<RawSource> for SourceConfig {
    type Error = String;

    fn try_from(r: RawSource) -> Result<Self, String> {
        match r.kind {
            SourceKind::Synthetic => {
                reject_extra("synthetic", &[("images", r.images.is_some()), ("labels", r.labels.is_some())])?;
                Ok(SourceConfig::Synthetic {
                    num_classes: r.num_classes.unwrap_or_else(d_num_classes),
                    examples_per_class: r.examples_per_class.unwrap_or_else(d_examples_per_class),
                    input_dim: r.input_dim.unwrap_or_else(d_input_dim),
                    class_separation: r.class_separation.unwrap_or_else(d_separation),
                })
            }
            SourceKind::Idx => {
                reject_extra(
                    "idx",
                    &[
                        ("num_classes", r.num_classes.is_some()),
                        ("examples_per_class", r.examples_per_class.is_some()),
                        ("input_dim", r.input_dim.is_some()),
                        ("class_separation", r.class_separation.is_some()),
                    ],
                )?;
                Ok(SourceConfig::Idx {
                    images: r.images.ok_or("kind = \"idx\" needs `images`")?,
                    labels: r.labels.ok_or("kind = \"idx\" needs `labels`")?,
                })
            }
        }
    }
}

impl From<SourceConfig> for RawSource {
    fn from(s: SourceConfig) -> Self {
        let empty = RawSource {
            kind: SourceKind::Synthetic,
            num_classes: None,
            examples_per_class: None,
            input_dim: None,
            class_separation: None,
            images: None,
            labels: None,
        };
        match s {
            SourceConfig::Synthetic {
                num_classes,
                examples_per_class,
                input_dim,
                class_separation,
            } => RawSource {
                num_classes: Some(num_classes),
                examples_per_class: Some(examples_per_class),
                input_dim: Some(input_dim),
                class_separation: Some(class_separation),
                ..empty
            },
            SourceConfig::Idx { images, labels } => RawSource {
                kind: SourceKind::Idx,
                images: Some(images),
                labels: Some(labels),
                ..empty
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub enum PartitionConfig {
    LabelSkew {
        classes_per_client: usize,
    },
    Dirichlet {
        alpha: f64,
        min_samples: usize,
        max_retries: usize,
    },
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig::LabelSkew {
            classes_per_client: d_classes_per_client(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    LabelSkew,
    Dirichlet,
}

/// Flat on-disk form of [`PartitionConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPartition {
    kind: PartitionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes_per_client: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_retries: Option<usize>,
}

impl TryFrom<RawPartition> for PartitionConfig {
    type Error = String;

    fn try_from(r: RawPartition) -> Result<Self, String> {
        match r.kind {
            PartitionKind::LabelSkew => {
                reject_extra(
                    "label_skew",
                    &[
                        ("alpha", r.alpha.is_some()),
                        ("min_samples", r.min_samples.is_some()),
                        ("max_retries", r.max_retries.is_some()),
                    ],
                )?;
                Ok(PartitionConfig::LabelSkew {
                    classes_per_client: r.classes_per_client.unwrap_or_else(d_classes_per_client),
                })
            }
            PartitionKind::Dirichlet => {
                reject_extra("dirichlet", &[("classes_per_client", r.classes_per_client.is_some())])?;
                Ok(PartitionConfig::Dirichlet {
                    alpha: r.alpha.unwrap_or_else(d_alpha),
                    min_samples: r.min_samples.unwrap_or_else(d_min_samples),
                    max_retries: r.max_retries.unwrap_or_else(d_max_retries),
                })
            }
        }
    }
}

impl From<PartitionConfig> for RawPartition {
    fn from(p: PartitionConfig) -> Self {
        match p {
            PartitionConfig::LabelSkew { classes_per_client } => RawPartition {
                kind: PartitionKind::LabelSkew,
                classes_per_client: Some(classes_per_client),
                alpha: None,
                min_samples: None,
                max_retries: None,
            },
            PartitionConfig::Dirichlet {
                alpha,
                min_samples,
                max_retries,
            } => RawPartition {
                kind: PartitionKind::Dirichlet,
                classes_per_client: None,
                alpha: Some(alpha),
                min_samples: Some(min_samples),
                max_retries: Some(max_retries),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_model_kind")]
    pub kind: ModelKind,
    #[serde(default = "d_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "d_leaky_slope")]
    pub leaky_slope: f64,
    /// Zeros for MCLR and `normal(0.1)` for DNN when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: d_model_kind(),
            hidden_dim: d_hidden_dim(),
            leaky_slope: d_leaky_slope(),
            init: None,
        }
    }
}

impl ModelConfig {
    pub fn init_scheme(&self) -> InitScheme {
        self.init.unwrap_or(match self.kind {
            ModelKind::Mclr => InitScheme::Zeros,
            ModelKind::Dnn => InitScheme::Normal { std: 0.1 },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// 100 for synthetic data and 400 for IDX data when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default = "d_local_iterations")]
    pub local_iterations: usize,
    #[serde(default = "d_sample_ratio")]
    pub sample_ratio: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default)]
    pub aggregation_weighting: AggregationWeighting,
    #[serde(default)]
    pub train_only_sampled: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            rounds: None,
            local_iterations: d_local_iterations(),
            sample_ratio: d_sample_ratio(),
            beta: d_beta(),
            aggregation_weighting: AggregationWeighting::default(),
            train_only_sampled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "d_cadence")]
    pub cadence: usize,
    /// Extra rounds with a deviation CSV; the final round always gets one.
    #[serde(default)]
    pub deviation_rounds: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cadence: d_cadence(),
            deviation_rounds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_output_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: d_output_dir() }
    }
}

impl ExperimentConfig {
    pub fn round_config(&self) -> RoundConfig {
        let f = &self.federation;
        RoundConfig {
            rounds: f.rounds.unwrap_or(DEFAULT_ROUNDS_SYNTHETIC),
            local_iterations: f.local_iterations,
            sample_ratio: f.sample_ratio,
            beta: f.beta,
            aggregation_weighting: f.aggregation_weighting,
            train_only_sampled: f.train_only_sampled,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            cadence: self.eval.cadence,
            deviation_rounds: self.eval.deviation_rounds.clone(),
            record_trajectory: false,
        }
    }

    /// Trainer settings for one strategy of the run.
    pub fn trainer_for(&self, strategy: Strategy) -> TrainerConfig {
        TrainerConfig {
            strategy,
            ..self.trainer.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

/// Reads, resolves and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&src, base)
}

/// As [`parse_config`], with relative paths taken against `base`.
pub fn parse_config_str(src: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    resolve(cfg, src, base)
}

/// Parses a config given as an already-edited TOML table.
pub fn parse_config_table(table: toml::Table, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let src = toml::to_string(&table).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    parse_config_str(&src, base)
}

fn absolutize(p: &Path, base: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

fn resolve(mut cfg: ExperimentConfig, src: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let range = |key: &str, reason: String| ConfigError::Range {
        key: key.to_string(),
        line: locate_key(src, key),
        reason,
    };

    if cfg.algorithms.is_empty() {
        cfg.algorithms = vec![cfg.trainer.strategy];
    }
    let mut seen = Vec::new();
    for a in &cfg.algorithms {
        if seen.contains(a) {
            return Err(range("algorithms", format!("`{a}` listed twice")));
        }
        seen.push(*a);
    }
    if cfg.seed > i64::MAX as u64 {
        return Err(range("seed", "must fit in a signed 64-bit integer".into()));
    }

    let ds = &mut cfg.dataset;
    if ds.num_clients == 0 {
        return Err(range("dataset.num_clients", "must be >= 1".into()));
    }
    if !(ds.train_fraction > 0.0 && ds.train_fraction < 1.0) {
        return Err(range(
            "dataset.train_fraction",
            format!("must be in (0, 1), got {}", ds.train_fraction),
        ));
    }
    let default_rounds = match &mut ds.source {
        SourceConfig::Synthetic {
            num_classes,
            examples_per_class,
            input_dim,
            class_separation,
        } => {
            if *num_classes < 2 {
                return Err(range("dataset.source.num_classes", "must be >= 2".into()));
            }
            if *examples_per_class == 0 {
                return Err(range("dataset.source.examples_per_class", "must be >= 1".into()));
            }
            if *input_dim == 0 {
                return Err(range("dataset.source.input_dim", "must be >= 1".into()));
            }
            if !(class_separation.is_finite() && *class_separation >= 0.0) {
                return Err(range(
                    "dataset.source.class_separation",
                    format!("must be finite and >= 0, got {class_separation}"),
                ));
            }
            DEFAULT_ROUNDS_SYNTHETIC
        }
        SourceConfig::Idx { images, labels } => {
            if images.is_empty() || images.len() != labels.len() {
                return Err(range(
                    "dataset.source.images",
                    format!(
                        "need one labels file per images file, got {} and {}",
                        images.len(),
                        labels.len()
                    ),
                ));
            }
            for (key, list) in [("dataset.source.images", images), ("dataset.source.labels", labels)] {
                for p in list.iter_mut() {
                    *p = absolutize(p, base);
                    if !p.is_file() {
                        return Err(range(key, format!("file not found: {}", p.display())));
                    }
                }
            }
            DEFAULT_ROUNDS_IDX
        }
    };
    match ds.partition {
        PartitionConfig::LabelSkew { classes_per_client } => {
            if classes_per_client == 0 {
                return Err(range("dataset.partition.classes_per_client", "must be >= 1".into()));
            }
            if let SourceConfig::Synthetic { num_classes, .. } = ds.source {
                if classes_per_client > num_classes {
                    return Err(range(
                        "dataset.partition.classes_per_client",
                        format!("exceeds the {num_classes} classes"),
                    ));
                }
            }
        }
        PartitionConfig::Dirichlet { alpha, max_retries, .. } => {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(range("dataset.partition.alpha", format!("must be > 0, got {alpha}")));
            }
            if max_retries == 0 {
                return Err(range("dataset.partition.max_retries", "must be >= 1".into()));
            }
        }
    }

    let m = &mut cfg.model;
    if m.kind == ModelKind::Dnn {
        if m.hidden_dim == 0 {
            return Err(range("model.hidden_dim", "must be >= 1".into()));
        }
        if !(m.leaky_slope.is_finite() && (0.0..1.0).contains(&m.leaky_slope)) {
            return Err(range(
                "model.leaky_slope",
                format!("must lie in [0, 1), got {}", m.leaky_slope),
            ));
        }
    }
    let init = m.init_scheme();
    if let Err(e) = init.validate() {
        return Err(range("model.init", e.to_string()));
    }
    m.init = Some(init);

    for strategy in &cfg.algorithms {
        if let Err(e) = cfg.trainer_for(*strategy).validate() {
            return Err(core_range(src, "trainer", e));
        }
    }

    cfg.federation.rounds.get_or_insert(default_rounds);
    if let Err(e) = cfg.round_config().validate() {
        return Err(core_range(src, "federation", e));
    }
    if cfg.eval.cadence == 0 {
        return Err(range("eval.cadence", "must be >= 1".into()));
    }

    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| base.to_path_buf());
    cfg.output.dir = absolutize(&cfg.output.dir, &root);
    Ok(cfg)
}

/// Maps a core validation error to a config key under `section`.
fn core_range(src: &str, section: &str, e: pfedbred::Error) -> ConfigError {
    match e {
        pfedbred::Error::InvalidParameter { name, reason } => {
            let key = format!("{section}.{name}");
            ConfigError::Range {
                line: locate_key(src, &key),
                key,
                reason,
            }
        }
        other => ConfigError::Range {
            key: section.to_string(),
            line: locate_key(src, section),
            reason: other.to_string(),
        },
    }
}

/// 1-based line where a dotted key (or its longest present prefix) is set.
pub fn locate_key(src: &str, dotted: &str) -> Option<usize> {
    let mut table = String::new();
    let mut best: Option<(usize, usize)> = None;
    let mut consider = |full: &str, line: usize| {
        let matched = if full == dotted {
            dotted.len() + 1
        } else if dotted.starts_with(full) && dotted.as_bytes().get(full.len()) == Some(&b'.') {
            full.len()
        } else {
            return;
        };
        if best.is_none_or(|(len, _)| matched > len) {
            best = Some((matched, line));
        }
    };
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            table = header
                .trim_start_matches('[')
                .split(']')
                .next()
                .unwrap_or("")
                .split('.')
                .map(str::trim)
                .collect::<Vec<_>>()
                .join(".");
            consider(&table, i + 1);
            continue;
        }
        if let Some((key, _)) = line.split_once('=') {
            if line.starts_with('#') {
                continue;
            }
            let key = key
                .split('.')
                .map(|k| k.trim().trim_matches('"'))
                .collect::<Vec<_>>()
                .join(".");
            let full = if table.is_empty() { key } else { format!("{table}.{key}") };
            consider(&full, i + 1);
        }
    }
    best.map(|(_, line)| line)
}

/// Sets a dotted key in a TOML table, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Range {
            key: dotted.to_string(),
            line: None,
            reason: "malformed key".into(),
        });
    }
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(ConfigError::Range {
                    key: dotted.to_string(),
                    line: None,
                    reason: format!("`{p}` is not a table"),
                })
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
