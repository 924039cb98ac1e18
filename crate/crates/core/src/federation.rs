//! Server loop: client sampling, parallel local training, aggregation and
//! periodic evaluation.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{LocalTrainer, LossSource, ShardBatches};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::{self, DeviationReport, EvalReport, LocalTestReport};
use crate::models::ModelSpec;
use crate::param_space::{seeded_init, InitScheme, ParamVector, RngStream};

/// Stream id of the server (client sampling).
pub const SERVER_STREAM: u64 = 0;
/// Stream id for the initial global model.
pub const INIT_STREAM: u64 = 1 << 40;
/// Stream id for synthetic data generation.
pub const DATA_STREAM: u64 = INIT_STREAM + 1;
/// Stream id for partitioning.
pub const PARTITION_STREAM: u64 = INIT_STREAM + 2;
/// Evaluation streams are `EVAL_STREAM_BASE + client`.
pub const EVAL_STREAM_BASE: u64 = 1 << 41;

/// Training stream of client `i`.
pub fn client_stream(i: usize) -> u64 {
    i as u64 + 1
}

/// Per-client context carried across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    /// Index into the partition's shards.
    pub id: usize,
    /// Personalized model.
    pub theta: ParamVector,
    /// The client's local w at the end of its last round of training.
    pub memorized_w: ParamVector,
    pub rng: RngStream,
}

impl ClientState {
    /// Fresh client with theta and memorized w both set to `w0`.
    pub fn new(id: usize, w0: &ParamVector, seed: u64) -> Self {
        ClientState {
            id,
            theta: w0.clone(),
            memorized_w: w0.clone(),
            rng: RngStream::new(seed, client_stream(id)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationWeighting {
    Uniform,
    #[default]
    ByDataCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    /// Global rounds T.
    pub rounds: usize,
    /// Local iterations R per round.
    pub local_iterations: usize,
    pub sample_ratio: f64,
    /// Aggregation momentum; 1 is plain averaging.
    pub beta: f64,
    pub aggregation_weighting: AggregationWeighting,
    /// Only sampled clients train. Off by default: every client trains and
    /// sampling only selects who is aggregated.
    pub train_only_sampled: bool,
}

impl RoundConfig {
    pub fn new(rounds: usize, local_iterations: usize) -> Result<Self> {
        let cfg = RoundConfig {
            rounds,
            local_iterations,
            sample_ratio: 0.2,
            beta: 1.0,
            aggregation_weighting: AggregationWeighting::ByDataCount,
            train_only_sampled: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be >= 1"));
        }
        if self.local_iterations == 0 {
            return Err(Error::invalid("local_iterations", "must be >= 1"));
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(Error::invalid(
                "sample_ratio",
                format!("must be in (0, 1], got {}", self.sample_ratio),
            ));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid("beta", format!("must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w: ParamVector,
    /// Completed rounds.
    pub round: usize,
}

/// `ceil(n * ratio)` distinct ids, sorted. All ids when the ratio is 1.
pub fn sample_clients(n: usize, ratio: f64, rng: &mut RngStream) -> Vec<usize> {
    // the epsilon keeps 100 * 0.2 from rounding up to 21
    let m = ((n as f64 * ratio - 1e-9).ceil() as usize).clamp(1, n.max(1));
    if m >= n {
        return (0..n).collect();
    }
    let mut ids = index::sample(rng, n, m).into_vec();
    ids.sort_unstable();
    ids
}

/// `(1 - beta) * prev + beta * weighted_mean(updates)`. Weights are
/// normalized to sum to one.
pub fn aggregate(prev: &ParamVector, updates: &[(f64, &ParamVector)], beta: f64) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Empty("aggregation updates"));
    }
    let total: f64 = updates.iter().map(|(wt, _)| wt).sum();
    if updates.iter().any(|(wt, _)| !(*wt >= 0.0 && wt.is_finite())) || total <= 0.0 {
        return Err(Error::invalid(
            "aggregation weights",
            "must be finite, non-negative and not all zero",
        ));
    }
    let mut mean = ParamVector::zeros(prev.dim());
    for (wt, u) in updates {
        prev.check_dim(u)?;
        mean.axpy(wt / total, u);
    }
    let out = if beta == 1.0 {
        mean
    } else {
        let mut out = prev.clone();
        out.scale(1.0 - beta);
        out.axpy(beta, &mean);
        out
    };
    out.ensure_finite(|| "aggregated global model".into())?;
    Ok(out)
}

/// One global round. Returns the sampled ids.
///
/// `sources[i]` draws batches for client `i`; its `train_size` drives
/// data-count weighting.
pub fn run_round<S: LossSource>(
    server: &mut ServerState,
    clients: &mut [ClientState],
    sources: &[S],
    trainer: &dyn LocalTrainer,
    cfg: &RoundConfig,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if clients.len() != sources.len() {
        return Err(Error::DimensionMismatch {
            left: clients.len(),
            right: sources.len(),
        });
    }
    let sampled = sample_clients(clients.len(), cfg.sample_ratio, rng);
    let mut is_sampled = vec![false; clients.len()];
    for &i in &sampled {
        is_sampled[i] = true;
    }
    let w_in = &server.w;
    let locals: Vec<(usize, ParamVector)> = clients
        .par_iter_mut()
        .zip(sources.par_iter())
        .enumerate()
        .filter(|(i, _)| !cfg.train_only_sampled || is_sampled[*i])
        .map(|(i, (client, source))| {
            let w = trainer
                .local_update(source, client, w_in, cfg.local_iterations)
                .map_err(|e| Error::Client {
                    client: client.id,
                    source: Box::new(e),
                })?;
            client.memorized_w = w.clone();
            Ok((i, w))
        })
        .collect::<Result<_>>()?;

    let updates: Vec<(f64, &ParamVector)> = locals
        .iter()
        .filter(|(i, _)| is_sampled[*i])
        .map(|(i, w)| {
            let weight = match cfg.aggregation_weighting {
                AggregationWeighting::Uniform => 1.0,
                AggregationWeighting::ByDataCount => sources[*i].train_size() as f64,
            };
            (weight, w)
        })
        .collect();
    server.w = aggregate(&server.w, &updates, cfg.beta)?;
    server.round += 1;
    Ok(sampled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Evaluate every `cadence` rounds and after the final round.
    pub cadence: usize,
    /// Rounds at which the per-class deviation is computed, besides the
    /// final round.
    pub deviation_rounds: Vec<usize>,
    /// Keep the global model after every round.
    pub record_trajectory: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cadence: 1,
            deviation_rounds: Vec::new(),
            record_trajectory: false,
        }
    }
}

impl EvalConfig {
    pub fn is_eval_round(&self, round: usize, total: usize) -> bool {
        round == total || round % self.cadence.max(1) == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundEval {
    pub round: usize,
    pub global: EvalReport,
    pub personalized: LocalTestReport,
    pub deviation: Option<DeviationReport>,
}

#[derive(Debug, Clone)]
pub struct TrainingHistory {
    pub evals: Vec<RoundEval>,
    /// Global model after rounds 0..=T when recording was requested.
    pub trajectory: Vec<ParamVector>,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

impl TrainingHistory {
    pub fn final_eval(&self) -> Option<&RoundEval> {
        self.evals.last()
    }

    pub fn best_personalized_accuracy(&self) -> f64 {
        self.evals
            .iter()
            .map(|e| e.personalized.aggregate.accuracy)
            .fold(f64::NAN, f64::max)
    }

    pub fn best_global_accuracy(&self) -> f64 {
        self.evals.iter().map(|e| e.global.accuracy).fold(f64::NAN, f64::max)
    }
}

/// Everything needed to run one algorithm on one federation.
pub struct Simulation<'a> {
    pub model: &'a ModelSpec,
    pub data: &'a Dataset,
    pub partition: &'a Partition,
    pub trainer: &'a dyn LocalTrainer,
    pub batch_size: usize,
    pub rounds: RoundConfig,
    pub init: InitScheme,
    pub seed: u64,
    pub eval: EvalConfig,
}

impl Simulation<'_> {
    fn sources(&self) -> Vec<ShardBatches<'_>> {
        self.partition
            .client_shards
            .iter()
            .map(|s| ShardBatches::new(self.model, self.data, s, self.batch_size))
            .collect()
    }

    pub fn initial_model(&self) -> Result<ParamVector> {
        let mut rng = RngStream::new(self.seed, INIT_STREAM);
        seeded_init(self.model.parameter_count(), &mut rng, self.init)
    }

    /// Personalized model of every client for the evaluation at `round`.
    pub fn personalized_models(
        &self,
        server: &ServerState,
        clients: &[ClientState],
        round: usize,
    ) -> Result<Vec<ParamVector>> {
        let sources = self.sources();
        clients
            .par_iter()
            .zip(sources.par_iter())
            .map(|(c, src)| {
                let mut rng = RngStream::new(self.seed, EVAL_STREAM_BASE + c.id as u64).derive(round as u64);
                self.trainer.personalized_model(src, c, &server.w, &mut rng)
            })
            .collect()
    }

    pub fn evaluate(&self, server: &ServerState, clients: &[ClientState], deviation: bool) -> Result<RoundEval> {
        let personal = self.personalized_models(server, clients, server.round)?;
        let pool = self.partition.test_pool();
        let global = metrics::global_test(self.model, self.data, &pool, &server.w)?;
        let personalized = metrics::local_test(self.model, self.data, self.partition, &personal)?;
        let deviation = if deviation {
            Some(metrics::loss_deviation(self.model, self.data, self.partition, &personal)?)
        } else {
            None
        };
        Ok(RoundEval {
            round: server.round,
            global,
            personalized,
            deviation,
        })
    }

    pub fn run(&self) -> Result<TrainingHistory> {
        self.model.validate()?;
        self.rounds.validate()?;
        self.partition.validate(self.data)?;
        let w0 = self.initial_model()?;
        let mut clients: Vec<ClientState> = (0..self.partition.num_clients())
            .map(|i| ClientState::new(i, &w0, self.seed))
            .collect();
        let mut server = ServerState { w: w0, round: 0 };
        let mut rng = RngStream::new(self.seed, SERVER_STREAM);
        let sources = self.sources();
        let total = self.rounds.rounds;
        let mut trajectory = Vec::new();
        if self.eval.record_trajectory {
            trajectory.push(server.w.clone());
        }
        let mut evals = Vec::new();
        for t in 1..=total {
            run_round(&mut server, &mut clients, &sources, self.trainer, &self.rounds, &mut rng)
                .map_err(|e| Error::Round {
                    round: t,
                    source: Box::new(e),
                })?;
            if self.eval.record_trajectory {
                trajectory.push(server.w.clone());
            }
            if self.eval.is_eval_round(t, total) {
                let deviation = t == total || self.eval.deviation_rounds.contains(&t);
                let e = self.evaluate(&server, &clients, deviation)?;
                log::info!(
                    "{} round {t}: global acc {:.4}, personalized acc {:.4}",
                    self.trainer.strategy(),
                    e.global.accuracy,
                    e.personalized.aggregate.accuracy
                );
                evals.push(e);
            }
        }
        Ok(TrainingHistory {
            evals,
            trajectory,
            server,
            clients,
        })
    }
}

/// Runs a full simulation; see [`Simulation::run`].
pub fn run_training(sim: &Simulation<'_>) -> Result<TrainingHistory> {
    sim.run()
}
