//! Local trainers.
//!
//! pFedBreD with a spherical gaussian prior runs, for each local iteration
//! `r`:
//!
//! ```text
//! mu     <- prior mean from w, grad f(w), memorized w and previous theta
//! theta  <- prox_{lambda}(f_batch; anchor = mu), warm-started at theta
//! w      <- w - alpha_m * lambda * (w - theta)
//! ```
//!
//! pFedMe is the same loop with `mu = w`. FedAvg and first-order Per-FedAvg
//! are plain SGD variants that leave `theta` untouched.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::bregman::{bregman_prox, Objective, PriorSpec, ProxSolver};
use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::federation::ClientState;
use crate::models::{self, Batch, ModelSpec};
use crate::param_space::{linear_combine, ParamVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PfedbredFo,
    PfedbredMfo,
    PfedbredMg,
    PfedbredMgVariant,
    Pfedme,
    Fedavg,
    PerfedavgFo,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::PfedbredFo,
        Strategy::PfedbredMfo,
        Strategy::PfedbredMg,
        Strategy::PfedbredMgVariant,
        Strategy::Pfedme,
        Strategy::Fedavg,
        Strategy::PerfedavgFo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::PfedbredFo => "pfedbred_fo",
            Strategy::PfedbredMfo => "pfedbred_mfo",
            Strategy::PfedbredMg => "pfedbred_mg",
            Strategy::PfedbredMgVariant => "pfedbred_mg_variant",
            Strategy::Pfedme => "pfedme",
            Strategy::Fedavg => "fedavg",
            Strategy::PerfedavgFo => "perfedavg_fo",
        }
    }

    /// Strategies that solve a prox subproblem and keep a personalized theta.
    pub fn uses_prox(self) -> bool {
        !matches!(self, Strategy::Fedavg | Strategy::PerfedavgFo)
    }

    /// Strategies whose prior mean reads the memorized global slice.
    pub fn uses_memory(self) -> bool {
        matches!(
            self,
            Strategy::PfedbredMfo | Strategy::PfedbredMg | Strategy::PfedbredMgVariant
        )
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy `{s}`")))
    }
}

fn default_lambda() -> f64 {
    15.0
}
fn default_eta() -> f64 {
    0.05
}
fn default_eta_alpha() -> f64 {
    0.01
}
fn default_step() -> f64 {
    0.01
}
fn default_prox_steps() -> usize {
    5
}
fn default_batch_size() -> usize {
    20
}

/// Scalars of one local trainer. Fields a strategy does not read are still
/// validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub strategy: Strategy,
    /// Prior scale, also the envelope regularization weight.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Weight of the memorized term in mfo/mg.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Weight of the local-gradient term in fo/mg.
    #[serde(default = "default_eta_alpha")]
    pub eta_alpha: f64,
    /// Main (global model) step size.
    #[serde(default = "default_step")]
    pub alpha_m: f64,
    /// Personalized / inner step size.
    #[serde(default = "default_step")]
    pub alpha: f64,
    /// Gradient steps per prox solve.
    #[serde(default = "default_prox_steps")]
    pub prox_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// One extra SGD step on a local training batch before local testing.
    #[serde(default)]
    pub ft_enabled: bool,
    /// Use `eta * (memorized_w - theta)` for the outer w step of mfo/mg too.
    #[serde(default)]
    pub memorized_outer_step: bool,
    /// mg-variant weight on the look-ahead gradient; defaults to `eta_alpha / eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_alpha_tilde: Option<f64>,
    /// mg-variant look-ahead step; defaults to `eta_alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_tilde: Option<f64>,
}

impl TrainerConfig {
    pub fn new(strategy: Strategy) -> Self {
        TrainerConfig {
            strategy,
            lambda: default_lambda(),
            eta: default_eta(),
            eta_alpha: default_eta_alpha(),
            alpha_m: default_step(),
            alpha: default_step(),
            prox_steps: default_prox_steps(),
            batch_size: default_batch_size(),
            ft_enabled: false,
            memorized_outer_step: false,
            eta_alpha_tilde: None,
            eta_tilde: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("lambda", self.lambda), ("alpha_m", self.alpha_m)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("eta", Some(self.eta)),
            ("eta_alpha", Some(self.eta_alpha)),
            ("alpha", Some(self.alpha)),
            ("eta_alpha_tilde", self.eta_alpha_tilde),
            ("eta_tilde", self.eta_tilde),
        ];
        for (name, v) in non_negative {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
                }
            }
        }
        if self.strategy.uses_prox() && self.alpha <= 0.0 {
            return Err(Error::invalid(
                "alpha",
                "prox-based strategies need alpha > 0",
            ));
        }
        if self.prox_steps == 0 {
            return Err(Error::invalid("prox_steps", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::gaussian(self.lambda)
    }

    pub fn prox_solver(&self) -> Result<ProxSolver> {
        ProxSolver::new(self.prox_steps, self.alpha)
    }

    /// The prior-mean rule this configuration implies.
    pub fn mean_rule(&self) -> MeanRule {
        match self.strategy {
            Strategy::PfedbredFo => MeanRule::FirstOrder {
                eta_alpha: self.eta_alpha,
            },
            Strategy::PfedbredMfo => MeanRule::MemorizedFirstOrder { eta: self.eta },
            Strategy::PfedbredMg => MeanRule::MemorizedGradients {
                eta: self.eta,
                eta_alpha: self.eta_alpha,
            },
            Strategy::PfedbredMgVariant => {
                // eta * eta_alpha_tilde collapses to eta_alpha under the default
                let weight = match self.eta_alpha_tilde {
                    Some(t) => self.eta * t,
                    None => self.eta_alpha,
                };
                MeanRule::MgVariant {
                    eta: self.eta,
                    weight,
                    lookahead: self.eta_tilde.unwrap_or(self.eta_alpha),
                }
            }
            Strategy::Pfedme | Strategy::Fedavg | Strategy::PerfedavgFo => MeanRule::Identity,
        }
    }
}

/// How the personalized prior mean is produced from the current global slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanRule {
    /// `mu = w`.
    Identity,
    /// `mu = w - eta_alpha * grad f(w)`.
    FirstOrder { eta_alpha: f64 },
    /// `mu = w - eta * (memorized_w - theta_prev)`.
    MemorizedFirstOrder { eta: f64 },
    /// `mu = w - eta * (memorized_w - theta_prev) - eta_alpha * grad f(w)`.
    MemorizedGradients { eta: f64, eta_alpha: f64 },
    /// `mu = w - weight * grad f(w - lookahead * grad f(w)) - eta * (memorized_w - theta_prev)`.
    MgVariant { eta: f64, weight: f64, lookahead: f64 },
}

/// Inputs to [`select_prior_mean`].
pub struct MeanContext<'a> {
    pub w: &'a ParamVector,
    pub loss: &'a dyn Objective,
    pub memorized_w: &'a ParamVector,
    pub theta_prev: &'a ParamVector,
}

pub fn select_prior_mean(rule: MeanRule, ctx: &MeanContext<'_>) -> Result<ParamVector> {
    let MeanContext {
        w,
        loss,
        memorized_w: m,
        theta_prev: theta,
    } = *ctx;
    w.check_dim(m)?;
    w.check_dim(theta)?;
    match rule {
        MeanRule::Identity => Ok(w.clone()),
        MeanRule::FirstOrder { eta_alpha } => {
            let g = loss.gradient(w)?;
            linear_combine(&[(1.0, w), (-eta_alpha, &g)])
        }
        MeanRule::MemorizedFirstOrder { eta } => {
            linear_combine(&[(1.0, w), (-eta, m), (eta, theta)])
        }
        MeanRule::MemorizedGradients { eta, eta_alpha } => {
            let g = loss.gradient(w)?;
            linear_combine(&[(1.0, w), (-eta, m), (eta, theta), (-eta_alpha, &g)])
        }
        MeanRule::MgVariant {
            eta,
            weight,
            lookahead,
        } => {
            let g = loss.gradient(w)?;
            let ahead = linear_combine(&[(1.0, w), (-lookahead, &g)])?;
            let g_ahead = loss.gradient(&ahead)?;
            linear_combine(&[(1.0, w), (-eta, m), (eta, theta), (-weight, &g_ahead)])
        }
    }
}

/// Produces a fresh stochastic local loss per draw.
pub trait LossSource: Sync {
    fn draw<'s>(&'s self, rng: &mut RngStream) -> Result<Box<dyn Objective + 's>>;

    /// Number of local training examples, used for data-count weighting.
    fn train_size(&self) -> usize {
        1
    }
}

/// Mean loss of a mini-batch owned by the objective.
pub struct OwnedBatchLoss<'a> {
    pub spec: &'a ModelSpec,
    pub batch: Batch,
}

impl Objective for OwnedBatchLoss<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        models::forward_loss(self.spec, params, &self.batch)
    }

    fn gradient(&self, params: &ParamVector) -> Result<ParamVector> {
        models::gradient(self.spec, params, &self.batch)
    }
}

/// Uniform mini-batches (without replacement within a batch) from one
/// client's training rows.
pub struct ShardBatches<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a Dataset,
    pub rows: &'a [usize],
    pub batch_size: usize,
}

impl<'a> ShardBatches<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a Dataset, shard: &'a ClientShard, batch_size: usize) -> Self {
        ShardBatches {
            spec,
            data,
            rows: &shard.train,
            batch_size,
        }
    }

    pub fn sample_batch(&self, rng: &mut RngStream) -> Result<Batch> {
        if self.rows.is_empty() {
            return Err(Error::Empty("client training shard"));
        }
        let amount = self.batch_size.min(self.rows.len());
        let picked: Vec<usize> = index::sample(rng, self.rows.len(), amount)
            .into_iter()
            .map(|i| self.rows[i])
            .collect();
        Ok(self.data.batch(&picked))
    }
}

impl LossSource for ShardBatches<'_> {
    fn draw<'s>(&'s self, rng: &mut RngStream) -> Result<Box<dyn Objective + 's>> {
        Ok(Box::new(OwnedBatchLoss {
            spec: self.spec,
            batch: self.sample_batch(rng)?,
        }))
    }

    fn train_size(&self) -> usize {
        self.rows.len()
    }
}

fn check_iter(v: &ParamVector, what: &str, r: usize) -> Result<()> {
    v.ensure_finite(|| format!("{what} at local iteration {r}"))
}

/// pFedBreD local loop (also pFedMe under [`MeanRule::Identity`]).
///
/// Starts from `w_in` and the client's stored theta, runs `local_iterations`
/// rounds of mean selection, prox solve and outer step, writes the final
/// theta back to the client and returns the final local w.
pub fn local_update_pfedbred(
    cfg: &TrainerConfig,
    source: &dyn LossSource,
    client: &mut ClientState,
    w_in: &ParamVector,
    local_iterations: usize,
) -> Result<ParamVector> {
    let prior = cfg.prior()?;
    let solver = cfg.prox_solver()?;
    let rule = cfg.mean_rule();
    let step = cfg.alpha_m * prior.lambda();
    let memorized_outer = cfg.memorized_outer_step && cfg.strategy.uses_memory();
    w_in.check_dim(&client.theta)?;

    let mut w = w_in.clone();
    let mut theta = client.theta.clone();
    for r in 1..=local_iterations {
        let loss = source.draw(&mut client.rng)?;
        let mu = select_prior_mean(
            rule,
            &MeanContext {
                w: &w,
                loss: &*loss,
                memorized_w: &client.memorized_w,
                theta_prev: &theta,
            },
        )?;
        let theta_next = bregman_prox(&prior, &*loss, &mu, solver, &theta)?;
        if memorized_outer {
            let coef = cfg.alpha_m * cfg.eta;
            let (m, prev) = (client.memorized_w.as_slice(), theta.as_slice());
            for (j, wj) in w.as_mut_slice().iter_mut().enumerate() {
                *wj -= coef * (m[j] - prev[j]);
            }
        } else {
            for (wj, tj) in w.as_mut_slice().iter_mut().zip(theta_next.iter()) {
                *wj -= step * (*wj - tj);
            }
        }
        theta = theta_next;
        check_iter(&theta, "theta", r)?;
        check_iter(&w, "w", r)?;
    }
    client.theta = theta;
    Ok(w)
}

/// pFedMe: the pFedBreD loop with the prior mean pinned to the current w.
pub fn local_update_pfedme(
    cfg: &TrainerConfig,
    source: &dyn LossSource,
    client: &mut ClientState,
    w_in: &ParamVector,
    local_iterations: usize,
) -> Result<ParamVector> {
    let cfg = TrainerConfig {
        strategy: Strategy::Pfedme,
        ..cfg.clone()
    };
    local_update_pfedbred(&cfg, source, client, w_in, local_iterations)
}

/// FedAvg: `local_iterations` SGD steps of size `alpha`.
pub fn local_update_fedavg(
    cfg: &TrainerConfig,
    source: &dyn LossSource,
    client: &mut ClientState,
    w_in: &ParamVector,
    local_iterations: usize,
) -> Result<ParamVector> {
    let mut w = w_in.clone();
    for r in 1..=local_iterations {
        let loss = source.draw(&mut client.rng)?;
        let g = loss.gradient(&w)?;
        w.check_dim(&g)?;
        w.axpy(-cfg.alpha, &g);
        check_iter(&w, "w", r)?;
    }
    Ok(w)
}

/// First-order Per-FedAvg: per iteration, an inner step of size `alpha` on
/// one batch and an outer step of size `alpha_m` using the gradient of a
/// second batch at the inner point.
pub fn local_update_perfedavg_fo(
    cfg: &TrainerConfig,
    source: &dyn LossSource,
    client: &mut ClientState,
    w_in: &ParamVector,
    local_iterations: usize,
) -> Result<ParamVector> {
    let mut w = w_in.clone();
    for r in 1..=local_iterations {
        let inner = source.draw(&mut client.rng)?;
        let outer = source.draw(&mut client.rng)?;
        let g1 = inner.gradient(&w)?;
        w.check_dim(&g1)?;
        let mut tmp = w.clone();
        tmp.axpy(-cfg.alpha, &g1);
        let g2 = outer.gradient(&tmp)?;
        w.axpy(-cfg.alpha_m, &g2);
        check_iter(&w, "w", r)?;
    }
    Ok(w)
}

/// `steps` SGD steps of size `stepsize` on a single loss. Returns a new
/// vector; the input is not modified.
pub fn fine_tune(
    params: &ParamVector,
    loss: &dyn Objective,
    steps: usize,
    stepsize: f64,
) -> Result<ParamVector> {
    let mut p = params.clone();
    for _ in 0..steps {
        let g = loss.gradient(&p)?;
        p.check_dim(&g)?;
        p.axpy(-stepsize, &g);
    }
    p.ensure_finite(|| "fine-tuned model".into())?;
    Ok(p)
}

/// A local training rule plus its evaluation-time personalization.
pub trait LocalTrainer: Sync {
    fn strategy(&self) -> Strategy;

    /// Runs one round of local training and returns the client's local w.
    fn local_update(
        &self,
        source: &dyn LossSource,
        client: &mut ClientState,
        w_in: &ParamVector,
        local_iterations: usize,
    ) -> Result<ParamVector>;

    /// The model evaluated on the client's local test data. Never written
    /// back to the client.
    fn personalized_model(
        &self,
        source: &dyn LossSource,
        client: &ClientState,
        w_global: &ParamVector,
        rng: &mut RngStream,
    ) -> Result<ParamVector>;
}

/// Dispatches on [`TrainerConfig::strategy`].
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { config })
    }
}

/// Per-FedAvg personalizes with two fine-tune steps (global step size, then
/// personalized step size) on fresh local batches.
pub const PERFEDAVG_EVAL_STEPS: usize = 2;

impl LocalTrainer for Trainer {
    fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    fn local_update(
        &self,
        source: &dyn LossSource,
        client: &mut ClientState,
        w_in: &ParamVector,
        local_iterations: usize,
    ) -> Result<ParamVector> {
        let cfg = &self.config;
        match cfg.strategy {
            Strategy::Fedavg => local_update_fedavg(cfg, source, client, w_in, local_iterations),
            Strategy::PerfedavgFo => {
                local_update_perfedavg_fo(cfg, source, client, w_in, local_iterations)
            }
            Strategy::Pfedme => local_update_pfedme(cfg, source, client, w_in, local_iterations),
            Strategy::PfedbredFo
            | Strategy::PfedbredMfo
            | Strategy::PfedbredMg
            | Strategy::PfedbredMgVariant => {
                local_update_pfedbred(cfg, source, client, w_in, local_iterations)
            }
        }
    }

    fn personalized_model(
        &self,
        source: &dyn LossSource,
        client: &ClientState,
        w_global: &ParamVector,
        rng: &mut RngStream,
    ) -> Result<ParamVector> {
        let cfg = &self.config;
        let base = match cfg.strategy {
            Strategy::Fedavg => return Ok(w_global.clone()),
            Strategy::PerfedavgFo => {
                let mut p = w_global.clone();
                for (k, step) in [cfg.alpha_m, cfg.alpha].into_iter().enumerate() {
                    debug_assert!(k < PERFEDAVG_EVAL_STEPS);
                    let loss = source.draw(rng)?;
                    p = fine_tune(&p, &*loss, 1, step)?;
                }
                p
            }
            _ => client.theta.clone(),
        };
        if cfg.ft_enabled {
            let loss = source.draw(rng)?;
            fine_tune(&base, &*loss, 1, cfg.alpha)
        } else {
            Ok(base)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::FnObjective;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    /// `f(w) = 0.5 * ||w - target||^2`, the same for every draw.
    struct Quadratic(ParamVector);

    impl Objective for Quadratic {
        fn value(&self, p: &ParamVector) -> Result<f64> {
            Ok(0.5 * p.sub(&self.0)?.norm_sq())
        }
        fn gradient(&self, p: &ParamVector) -> Result<ParamVector> {
            p.sub(&self.0)
        }
    }

    impl LossSource for Quadratic {
        fn draw<'s>(&'s self, _rng: &mut RngStream) -> Result<Box<dyn Objective + 's>> {
            Ok(Box::new(Quadratic(self.0.clone())))
        }
    }

    fn client(theta: ParamVector, memorized: ParamVector) -> ClientState {
        ClientState {
            id: 0,
            theta,
            memorized_w: memorized,
            rng: RngStream::new(0, 1),
        }
    }

    fn zero_loss() -> impl Objective {
        FnObjective::new(|_: &ParamVector| 0.0, |p: &ParamVector| ParamVector::zeros(p.dim()))
    }

    #[test]
    fn fo_with_zero_eta_alpha_is_identity() {
        let w = pv(&[0.3, -1.2]);
        let loss = Quadratic(pv(&[5.0, 5.0]));
        let ctx = MeanContext {
            w: &w,
            loss: &loss,
            memorized_w: &w,
            theta_prev: &w,
        };
        let mu = select_prior_mean(MeanRule::FirstOrder { eta_alpha: 0.0 }, &ctx).unwrap();
        assert_eq!(mu, w);
        assert_eq!(select_prior_mean(MeanRule::Identity, &ctx).unwrap(), w);
    }

    #[test]
    fn fo_mean_arithmetic() {
        // f(w) = 0.5 ||w - (0, 2)||^2 has gradient (1, -1) at w = (1, 1).
        let w = pv(&[1.0, 1.0]);
        let loss = Quadratic(pv(&[0.0, 2.0]));
        let ctx = MeanContext {
            w: &w,
            loss: &loss,
            memorized_w: &w,
            theta_prev: &w,
        };
        let mu = select_prior_mean(MeanRule::FirstOrder { eta_alpha: 0.01 }, &ctx).unwrap();
        assert!((mu[0] - 0.99).abs() < 1e-15 && (mu[1] - 1.01).abs() < 1e-15);
    }

    #[test]
    fn mfo_mean_arithmetic() {
        let w = pv(&[1.0, 0.0]);
        let m = pv(&[1.0, 1.0]);
        let theta = pv(&[0.0, 1.0]);
        let loss = zero_loss();
        let ctx = MeanContext {
            w: &w,
            loss: &loss,
            memorized_w: &m,
            theta_prev: &theta,
        };
        let mu = select_prior_mean(MeanRule::MemorizedFirstOrder { eta: 0.05 }, &ctx).unwrap();
        assert!((mu[0] - 0.95).abs() < 1e-15 && mu[1].abs() < 1e-15);
    }

    #[test]
    fn mg_is_mfo_minus_gradient_term() {
        let w = pv(&[0.4, -0.7, 2.0]);
        let m = pv(&[1.0, 0.1, -0.3]);
        let theta = pv(&[0.2, 0.5, 1.5]);
        let loss = Quadratic(pv(&[3.0, -1.0, 0.25]));
        let ctx = MeanContext {
            w: &w,
            loss: &loss,
            memorized_w: &m,
            theta_prev: &theta,
        };
        let (eta, eta_alpha) = (0.05, 0.01);
        let mfo = select_prior_mean(MeanRule::MemorizedFirstOrder { eta }, &ctx).unwrap();
        let mg = select_prior_mean(MeanRule::MemorizedGradients { eta, eta_alpha }, &ctx).unwrap();
        let g = loss.gradient(&w).unwrap();
        let composed = linear_combine(&[(1.0, &mfo), (-eta_alpha, &g)]).unwrap();
        assert_eq!(mg, composed);
    }

    #[test]
    fn mg_variant_matches_hand_formula() {
        let w = pv(&[1.0, -1.0]);
        let m = pv(&[0.5, 0.5]);
        let theta = pv(&[0.0, 0.0]);
        let target = pv(&[2.0, 1.0]);
        let loss = Quadratic(target.clone());
        let ctx = MeanContext {
            w: &w,
            loss: &loss,
            memorized_w: &m,
            theta_prev: &theta,
        };
        let cfg = TrainerConfig::new(Strategy::PfedbredMgVariant);
        let mu = select_prior_mean(cfg.mean_rule(), &ctx).unwrap();
        // defaults: weight = eta * (eta_alpha / eta) = eta_alpha, lookahead = eta_alpha
        let (eta, ea) = (cfg.eta, cfg.eta_alpha);
        for j in 0..2 {
            let g = w[j] - target[j];
            let ahead = w[j] - ea * g;
            let g_ahead = ahead - target[j];
            let expected = w[j] - ea * g_ahead - eta * (m[j] - theta[j]);
            assert!((mu[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_selection_checks_dims() {
        let w = pv(&[1.0, 0.0]);
        let m = pv(&[1.0]);
        let loss = zero_loss();
        let ctx = MeanContext {
            w: &w,
            loss: &loss,
            memorized_w: &m,
            theta_prev: &w,
        };
        assert!(matches!(
            select_prior_mean(MeanRule::Identity, &ctx),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_loss_leaves_w_unchanged_at_fixed_point() {
        let w = pv(&[0.5, -0.5]);
        let src = Quadratic(w.clone()); // gradient vanishes at w
        for strategy in Strategy::ALL {
            let mut cfg = TrainerConfig::new(strategy);
            cfg.eta_alpha = 0.0;
            let mut c = client(w.clone(), w.clone());
            let out = Trainer::new(cfg).unwrap().local_update(&src, &mut c, &w, 3).unwrap();
            assert_eq!(out, w, "{strategy}");
        }
    }

    #[test]
    fn one_iteration_closed_form_chain() {
        // f = 0.5 ||theta - a||^2, gaussian prior, fo mean, K = 1 prox step
        // from theta_0. Every quantity is scalar arithmetic per coordinate.
        let a = pv(&[1.0, -2.0]);
        let w0 = pv(&[0.2, 0.3]);
        let theta0 = pv(&[0.0, 0.5]);
        let mut cfg = TrainerConfig::new(Strategy::PfedbredFo);
        cfg.prox_steps = 1;
        cfg.lambda = 15.0;
        let mut c = client(theta0.clone(), w0.clone());
        let w_out = local_update_pfedbred(&cfg, &Quadratic(a.clone()), &mut c, &w0, 1).unwrap();
        for j in 0..2 {
            let mu = w0[j] - cfg.eta_alpha * (w0[j] - a[j]);
            let theta = theta0[j] - cfg.alpha * ((theta0[j] - a[j]) + cfg.lambda * (theta0[j] - mu));
            let w = w0[j] - cfg.alpha_m * cfg.lambda * (w0[j] - theta);
            assert!((c.theta[j] - theta).abs() < 1e-15);
            assert!((w_out[j] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn outer_step_norm_identity() {
        let a = pv(&[1.0, -2.0, 0.5]);
        let w0 = pv(&[0.2, 0.3, 0.0]);
        let cfg = TrainerConfig::new(Strategy::PfedbredMg);
        let mut c = client(pv(&[0.0, 0.0, 0.0]), w0.clone());
        let w1 = local_update_pfedbred(&cfg, &Quadratic(a), &mut c, &w0, 1).unwrap();
        let lhs = w1.sub(&w0).unwrap().norm_sq().sqrt();
        let rhs = cfg.alpha_m * cfg.lambda * w0.sub(&c.theta).unwrap().norm_sq().sqrt();
        assert!((lhs - rhs).abs() <= 1e-15 * rhs.max(1.0));
    }

    #[test]
    fn pfedme_update_bounded_by_lambda() {
        let a = pv(&[3.0, -1.0]);
        let w0 = pv(&[0.0, 0.0]);
        let mut prev = f64::INFINITY;
        for lambda in [1.0, 1e-2, 1e-4, 1e-6] {
            let mut cfg = TrainerConfig::new(Strategy::Pfedme);
            cfg.lambda = lambda;
            let mut c = client(w0.clone(), w0.clone());
            let w1 = local_update_pfedme(&cfg, &Quadratic(a.clone()), &mut c, &w0, 1).unwrap();
            let dw = w1.sub(&w0).unwrap().norm_sq().sqrt();
            let bound = cfg.alpha_m * lambda * w0.sub(&c.theta).unwrap().norm_sq().sqrt();
            assert!(dw <= bound * (1.0 + 1e-12));
            assert!(dw < prev);
            prev = dw;
        }
    }

    #[test]
    fn fedavg_single_step() {
        let cfg = TrainerConfig {
            alpha: 0.1,
            ..TrainerConfig::new(Strategy::Fedavg)
        };
        let mut c = client(pv(&[9.0, 9.0]), pv(&[0.0, 0.0]));
        let w = local_update_fedavg(&cfg, &Quadratic(pv(&[1.0, 0.0])), &mut c, &pv(&[0.0, 0.0]), 1)
            .unwrap();
        assert!((w[0] - 0.1).abs() < 1e-15 && w[1] == 0.0);
        assert_eq!(c.theta, pv(&[9.0, 9.0]));
    }

    #[test]
    fn fedavg_geometric_contraction() {
        let cfg = TrainerConfig {
            alpha: 0.1,
            ..TrainerConfig::new(Strategy::Fedavg)
        };
        let a = pv(&[1.0, -3.0]);
        let w0 = pv(&[0.5, 2.0]);
        let mut c = client(w0.clone(), w0.clone());
        let r = 7;
        let w = local_update_fedavg(&cfg, &Quadratic(a.clone()), &mut c, &w0, r).unwrap();
        for j in 0..2 {
            let expected = a[j] + (1.0 - 0.1f64).powi(r as i32) * (w0[j] - a[j]);
            assert!((w[j] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn perfedavg_zero_alpha_is_sgd_with_alpha_m() {
        let a = pv(&[1.0, -3.0]);
        let w0 = pv(&[0.5, 2.0]);
        let per = TrainerConfig {
            alpha: 0.0,
            alpha_m: 0.2,
            ..TrainerConfig::new(Strategy::PerfedavgFo)
        };
        let avg = TrainerConfig {
            alpha: 0.2,
            ..TrainerConfig::new(Strategy::Fedavg)
        };
        let mut c1 = client(w0.clone(), w0.clone());
        let mut c2 = client(w0.clone(), w0.clone());
        let x = local_update_perfedavg_fo(&per, &Quadratic(a.clone()), &mut c1, &w0, 4).unwrap();
        let y = local_update_fedavg(&avg, &Quadratic(a), &mut c2, &w0, 4).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn perfedavg_quadratic_contraction() {
        // inner: w - alpha (w - a); outer gradient at the inner point is
        // (1 - alpha)(w - a), so w - a contracts by 1 - alpha_m (1 - alpha).
        let cfg = TrainerConfig {
            alpha: 0.3,
            alpha_m: 0.1,
            ..TrainerConfig::new(Strategy::PerfedavgFo)
        };
        let a = pv(&[1.0, -1.0]);
        let w0 = pv(&[0.0, 4.0]);
        let mut c = client(w0.clone(), w0.clone());
        let w = local_update_perfedavg_fo(&cfg, &Quadratic(a.clone()), &mut c, &w0, 3).unwrap();
        let ratio = 1.0 - 0.1 * (1.0 - 0.3);
        for j in 0..2 {
            let expected = a[j] + f64::powi(ratio, 3) * (w0[j] - a[j]);
            assert!((w[j] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn perfedavg_tiny_alpha_tracks_plain_gradient() {
        // Non-quadratic loss so the inner step actually bends the direction.
        let loss = FnObjective::new(
            |p: &ParamVector| p.iter().map(|x| x.powi(4) / 4.0 + x.sin()).sum(),
            |p: &ParamVector| ParamVector::new(p.iter().map(|x| x.powi(3) + x.cos()).collect()).unwrap(),
        );
        let w = pv(&[0.7, -1.3, 2.1]);
        let g = loss.gradient(&w).unwrap();
        let mut tmp = w.clone();
        tmp.axpy(-1e-4, &g);
        let d = loss.gradient(&tmp).unwrap();
        let cos = g.dot(&d).unwrap() / (g.norm_sq().sqrt() * d.norm_sq().sqrt());
        assert!(cos >= (5.0f64).to_radians().cos());
    }

    #[test]
    fn fine_tune_cases() {
        let loss = Quadratic(pv(&[1.0, 1.0]));
        let p = pv(&[0.0, 3.0]);
        assert_eq!(fine_tune(&p, &loss, 1, 0.0).unwrap(), p);
        let one = fine_tune(&p, &loss, 1, 0.25).unwrap();
        let g = loss.gradient(&p).unwrap();
        assert_eq!(one, linear_combine(&[(1.0, &p), (-0.25, &g)]).unwrap());
        assert_eq!(p, pv(&[0.0, 3.0]));
    }

    #[test]
    fn personalized_model_does_not_touch_client() {
        let mut cfg = TrainerConfig::new(Strategy::PfedbredMg);
        cfg.ft_enabled = true;
        let trainer = Trainer::new(cfg).unwrap();
        let c = client(pv(&[0.1, 0.2]), pv(&[0.0, 0.0]));
        let before = c.theta.clone();
        let w = pv(&[1.0, 1.0]);
        let mut rng = RngStream::new(1, 1);
        let p = trainer
            .personalized_model(&Quadratic(pv(&[5.0, 5.0])), &c, &w, &mut rng)
            .unwrap();
        assert_ne!(p, before);
        assert_eq!(c.theta, before);
    }

    #[test]
    fn perfedavg_personalization_takes_two_steps() {
        let cfg = TrainerConfig {
            alpha: 0.5,
            alpha_m: 0.25,
            ..TrainerConfig::new(Strategy::PerfedavgFo)
        };
        let trainer = Trainer::new(cfg).unwrap();
        let c = client(pv(&[0.0]), pv(&[0.0]));
        let mut rng = RngStream::new(1, 1);
        let p = trainer
            .personalized_model(&Quadratic(pv(&[1.0])), &c, &pv(&[0.0]), &mut rng)
            .unwrap();
        // 0 -> 0.25 -> 0.25 + 0.5 * 0.75
        assert!((p[0] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainerConfig::new(Strategy::PfedbredMg);
        cfg.validate().unwrap();
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainerConfig::new(Strategy::Pfedme);
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainerConfig::new(Strategy::PerfedavgFo);
        cfg.alpha = 0.0;
        cfg.validate().unwrap();
        cfg.eta = f64::NAN;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("fedprox".parse::<Strategy>().is_err());
    }
}
