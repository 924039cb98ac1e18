//! Runs every configured strategy on one federation and writes the outputs.
//!
//! Output layout under the run directory:
//!
//! ```text
//! resolved_config.toml
//! metrics.csv                     round,algo,seed,global_acc,global_loss,personalized_acc,personalized_loss
//! <algo>/deviation_round_<t>.csv  client,class,L,G,dL,dG
//! <algo>/global_model.bin
//! <algo>/personalized/client_<i>.bin
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pfedbred::algorithms::{Strategy, Trainer};
use pfedbred::data::{load_idx, partition_dirichlet, partition_label_skew, synth_generate};
use pfedbred::federation::{Simulation, TrainingHistory, DATA_STREAM, PARTITION_STREAM};
use pfedbred::metrics::DeviationReport;
use pfedbred::{Dataset, ModelKind, ModelSpec, Partition, RngStream};

use crate::config::{ExperimentConfig, PartitionConfig, SourceConfig};
use crate::dump::write_model;

pub const METRICS_HEADER: [&str; 7] = [
    "round",
    "algo",
    "seed",
    "global_acc",
    "global_loss",
    "personalized_acc",
    "personalized_loss",
];
pub const DEVIATION_HEADER: [&str; 6] = ["client", "class", "L", "G", "dL", "dG"];

/// Data, split and model shape shared by every strategy of a run.
pub struct Federation {
    pub data: Dataset,
    pub partition: Partition,
    pub model: ModelSpec,
}

pub fn build_federation(cfg: &ExperimentConfig) -> Result<Federation> {
    let data = match &cfg.dataset.source {
        SourceConfig::Synthetic {
            num_classes,
            examples_per_class,
            input_dim,
            class_separation,
        } => synth_generate(
            *num_classes,
            *examples_per_class,
            *input_dim,
            *class_separation,
            &mut RngStream::new(cfg.seed, DATA_STREAM),
        )?,
        SourceConfig::Idx { images, labels } => {
            let parts = images
                .iter()
                .zip(labels)
                .map(|(i, l)| load_idx(i, l).with_context(|| format!("loading {}", i.display())))
                .collect::<Result<Vec<_>>>()?;
            Dataset::concat(parts)?
        }
    };
    let ds = &cfg.dataset;
    let mut stream = RngStream::new(cfg.seed, PARTITION_STREAM);
    let partition = match ds.partition {
        PartitionConfig::LabelSkew { classes_per_client } => {
            partition_label_skew(&data, ds.num_clients, classes_per_client, ds.train_fraction, &mut stream)?
        }
        PartitionConfig::Dirichlet {
            alpha,
            min_samples,
            max_retries,
        } => partition_dirichlet(
            &data,
            ds.num_clients,
            alpha,
            min_samples,
            max_retries,
            ds.train_fraction,
            &mut stream,
        )?,
    };
    let m = &cfg.model;
    let mut model = match m.kind {
        ModelKind::Mclr => ModelSpec::mclr(data.dim(), data.num_classes()),
        ModelKind::Dnn => ModelSpec::dnn(data.dim(), data.num_classes(), m.hidden_dim),
    };
    model.leaky_slope = m.leaky_slope;
    model.validate()?;
    Ok(Federation {
        data,
        partition,
        model,
    })
}

/// Headline numbers of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoSummary {
    pub algo: Strategy,
    pub final_global_acc: f64,
    pub final_personalized_acc: f64,
    pub best_global_acc: f64,
    pub best_personalized_acc: f64,
}

impl AlgoSummary {
    fn from_history(algo: Strategy, h: &TrainingHistory) -> Self {
        let last = h.final_eval().expect("the final round is always evaluated");
        AlgoSummary {
            algo,
            final_global_acc: last.global.accuracy,
            final_personalized_acc: last.personalized.aggregate.accuracy,
            best_global_acc: h.best_global_accuracy(),
            best_personalized_acc: h.best_personalized_accuracy(),
        }
    }
}

/// Trains one strategy; no files are written.
pub fn train(cfg: &ExperimentConfig, fed: &Federation, strategy: Strategy) -> Result<TrainingHistory> {
    let trainer = Trainer::new(cfg.trainer_for(strategy))?;
    let sim = Simulation {
        model: &fed.model,
        data: &fed.data,
        partition: &fed.partition,
        trainer: &trainer,
        batch_size: trainer.config.batch_size,
        rounds: cfg.round_config(),
        init: cfg.model.init_scheme(),
        seed: cfg.seed,
        eval: cfg.eval_config(),
    };
    let history = sim.run().with_context(|| format!("training {strategy}"))?;
    Ok(history)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_deviation(path: &Path, dev: &DeviationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DEVIATION_HEADER)?;
    for (i, c, l, g, dl, dg) in dev.rows() {
        w.write_record([i.to_string(), c.to_string(), fmt(l), fmt(g), fmt(dl), fmt(dg)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_models(cfg: &ExperimentConfig, fed: &Federation, strategy: Strategy, h: &TrainingHistory, dir: &Path) -> Result<()> {
    write_model(&dir.join("global_model.bin"), &h.server.w)?;
    let trainer = Trainer::new(cfg.trainer_for(strategy))?;
    let sim = Simulation {
        model: &fed.model,
        data: &fed.data,
        partition: &fed.partition,
        trainer: &trainer,
        batch_size: trainer.config.batch_size,
        rounds: cfg.round_config(),
        init: cfg.model.init_scheme(),
        seed: cfg.seed,
        eval: cfg.eval_config(),
    };
    let personal = sim.personalized_models(&h.server, &h.clients, h.server.round)?;
    let pdir = dir.join("personalized");
    std::fs::create_dir_all(&pdir)?;
    for (i, p) in personal.iter().enumerate() {
        write_model(&pdir.join(format!("client_{i}.bin")), p)?;
    }
    Ok(())
}

/// Runs all strategies of `cfg`, writing into `out` (created if missing).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AlgoSummary>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("resolved_config.toml"), cfg.to_toml())
        .with_context(|| format!("writing into {}", out.display()))?;
    let fed = build_federation(cfg)?;
    log::info!(
        "{} rows, {} clients, {} parameters",
        fed.data.len(),
        fed.partition.num_clients(),
        fed.model.parameter_count()
    );

    let mut metrics = csv::Writer::from_path(out.join("metrics.csv"))?;
    metrics.write_record(METRICS_HEADER)?;
    let mut summaries = Vec::new();
    for &strategy in &cfg.algorithms {
        let h = train(cfg, &fed, strategy)?;
        for e in &h.evals {
            metrics.write_record([
                e.round.to_string(),
                strategy.to_string(),
                cfg.seed.to_string(),
                fmt(e.global.accuracy),
                fmt(e.global.loss),
                fmt(e.personalized.aggregate.accuracy),
                fmt(e.personalized.aggregate.loss),
            ])?;
        }
        let dir = out.join(strategy.name());
        std::fs::create_dir_all(&dir)?;
        for e in &h.evals {
            if let Some(dev) = &e.deviation {
                write_deviation(&dir.join(format!("deviation_round_{}.csv", e.round)), dev)?;
            }
        }
        write_models(cfg, &fed, strategy, &h, &dir)?;
        let s = AlgoSummary::from_history(strategy, &h);
        log::info!(
            "{strategy}: final global {:.4}, final personalized {:.4}",
            s.final_global_acc,
            s.final_personalized_acc
        );
        summaries.push(s);
    }
    metrics.flush()?;
    Ok(summaries)
}

/// The configured output directory.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.clone()
}
