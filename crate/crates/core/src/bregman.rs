//! Convex generators, Bregman divergences, the Bregman proximal mapping and
//! the Bregman-Moreau envelope.
//!
//! A [`ConvexGenerator`] holds a log-partition function `g` over natural
//! parameters and its Fenchel conjugate `g*` over mean parameters. The
//! regularizer used throughout the simulator is `D_{g*}(theta, anchor)`, the
//! Bregman divergence of the conjugate with both arguments in mean
//! coordinates:
//!
//! ```text
//! D_{g*}(x, y) = g*(x) - g*(y) - <grad g*(y), x - y>
//! ```
//!
//! Natural and mean coordinates are linked by `mu = grad g(s)` and
//! `s = grad g*(mu)`.
//!
//! All non-gaussian families are separable: `g(s) = sum_j g_1(s_j)`.

use crate::error::{Error, Result};
use crate::param_space::ParamVector;

/// Per-coordinate variance of a gaussian generator.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianScale {
    /// `Sigma = scale * I`. `Uniform(1.0)` gives `g = g* = 0.5 * ||.||^2`.
    Uniform(f64),
    /// Diagonal `Sigma`, one positive entry per coordinate.
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexGenerator {
    /// `g(s) = 0.5 <s, Sigma s>`, `g*(x) = 0.5 <x, Sigma^-1 x>`.
    Gaussian(GaussianScale),
    /// `g(s) = ln(1 + e^s)`, `g*(x) = x ln x + (1 - x) ln(1 - x)`.
    Bernoulli,
    /// `g(s) = e^s`, `g*(x) = x ln x - x`.
    Poisson,
    /// `g(s) = -ln(-s)` on `s < 0`, `g*(x) = -ln x - 1` on `x > 0`.
    Exponential,
}

impl ConvexGenerator {
    /// The spherical unit gaussian, `g = 0.5 * ||.||^2`.
    pub fn standard_gaussian() -> Self {
        ConvexGenerator::Gaussian(GaussianScale::Uniform(1.0))
    }

    pub fn gaussian_diagonal(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::Empty("gaussian variances"));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(
                "gaussian.variance",
                format!("entries must be finite and > 0, got {v}"),
            ));
        }
        Ok(ConvexGenerator::Gaussian(GaussianScale::Diagonal(variances)))
    }

    pub fn gaussian_uniform(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(
                "gaussian.scale",
                format!("must be finite and > 0, got {scale}"),
            ));
        }
        Ok(ConvexGenerator::Gaussian(GaussianScale::Uniform(scale)))
    }

    pub fn family(&self) -> &'static str {
        match self {
            ConvexGenerator::Gaussian(_) => "gaussian",
            ConvexGenerator::Bernoulli => "bernoulli",
            ConvexGenerator::Poisson => "poisson",
            ConvexGenerator::Exponential => "exponential",
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, ConvexGenerator::Gaussian(_))
    }

    fn variance(&self, j: usize) -> f64 {
        match self {
            ConvexGenerator::Gaussian(GaussianScale::Uniform(s)) => *s,
            ConvexGenerator::Gaussian(GaussianScale::Diagonal(v)) => v[j],
            _ => unreachable!("variance of a non-gaussian generator"),
        }
    }

    fn check_len(&self, v: &ParamVector) -> Result<()> {
        match self {
            ConvexGenerator::Gaussian(GaussianScale::Diagonal(d)) if d.len() != v.dim() => {
                Err(Error::DimensionMismatch {
                    left: d.len(),
                    right: v.dim(),
                })
            }
            _ => Ok(()),
        }
    }

    fn domain_err(&self, index: usize, value: f64, domain: &'static str) -> Error {
        Error::Domain {
            family: self.family(),
            index,
            value,
            domain,
        }
    }

    fn check_natural(&self, j: usize, s: f64) -> Result<()> {
        match self {
            ConvexGenerator::Exponential if !(s < 0.0 && s.is_finite()) => {
                Err(self.domain_err(j, s, "s < 0"))
            }
            _ if !s.is_finite() => Err(self.domain_err(j, s, "finite")),
            _ => Ok(()),
        }
    }

    /// Domain of `g*` itself. Bernoulli and poisson admit the boundary.
    fn check_mean_closed(&self, j: usize, x: f64) -> Result<()> {
        let ok = match self {
            ConvexGenerator::Gaussian(_) => x.is_finite(),
            ConvexGenerator::Bernoulli => (0.0..=1.0).contains(&x),
            ConvexGenerator::Poisson => x >= 0.0 && x.is_finite(),
            ConvexGenerator::Exponential => x > 0.0 && x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(self.domain_err(j, x, self.mean_closed_domain()))
        }
    }

    /// Interior of the mean domain, where `grad g*` exists.
    fn check_mean_open(&self, j: usize, x: f64) -> Result<()> {
        let ok = match self {
            ConvexGenerator::Gaussian(_) => x.is_finite(),
            ConvexGenerator::Bernoulli => x > 0.0 && x < 1.0,
            ConvexGenerator::Poisson | ConvexGenerator::Exponential => x > 0.0 && x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(self.domain_err(j, x, self.mean_open_domain()))
        }
    }

    fn mean_closed_domain(&self) -> &'static str {
        match self {
            ConvexGenerator::Gaussian(_) => "finite",
            ConvexGenerator::Bernoulli => "0 <= x <= 1",
            ConvexGenerator::Poisson => "x >= 0",
            ConvexGenerator::Exponential => "x > 0",
        }
    }

    fn mean_open_domain(&self) -> &'static str {
        match self {
            ConvexGenerator::Gaussian(_) => "finite",
            ConvexGenerator::Bernoulli => "0 < x < 1",
            ConvexGenerator::Poisson | ConvexGenerator::Exponential => "x > 0",
        }
    }

    fn g1(&self, j: usize, s: f64) -> Result<f64> {
        self.check_natural(j, s)?;
        Ok(match self {
            ConvexGenerator::Gaussian(_) => 0.5 * self.variance(j) * s * s,
            ConvexGenerator::Bernoulli => s.max(0.0) + (-s.abs()).exp().ln_1p(),
            ConvexGenerator::Poisson => s.exp(),
            ConvexGenerator::Exponential => -(-s).ln(),
        })
    }

    fn dg1(&self, j: usize, s: f64) -> Result<f64> {
        self.check_natural(j, s)?;
        Ok(match self {
            ConvexGenerator::Gaussian(_) => self.variance(j) * s,
            ConvexGenerator::Bernoulli => sigmoid(s),
            ConvexGenerator::Poisson => s.exp(),
            ConvexGenerator::Exponential => -1.0 / s,
        })
    }

    fn gc1(&self, j: usize, x: f64) -> Result<f64> {
        self.check_mean_closed(j, x)?;
        Ok(match self {
            ConvexGenerator::Gaussian(_) => 0.5 * x * x / self.variance(j),
            ConvexGenerator::Bernoulli => xlogx(x) + xlogx(1.0 - x),
            ConvexGenerator::Poisson => xlogx(x) - x,
            ConvexGenerator::Exponential => -x.ln() - 1.0,
        })
    }

    fn dgc1(&self, j: usize, x: f64) -> Result<f64> {
        self.check_mean_open(j, x)?;
        Ok(match self {
            ConvexGenerator::Gaussian(_) => x / self.variance(j),
            ConvexGenerator::Bernoulli => (x / (1.0 - x)).ln(),
            ConvexGenerator::Poisson => x.ln(),
            ConvexGenerator::Exponential => -1.0 / x,
        })
    }

    fn hgc1(&self, j: usize, x: f64) -> Result<f64> {
        self.check_mean_open(j, x)?;
        Ok(match self {
            ConvexGenerator::Gaussian(_) => 1.0 / self.variance(j),
            ConvexGenerator::Bernoulli => 1.0 / (x * (1.0 - x)),
            ConvexGenerator::Poisson => 1.0 / x,
            ConvexGenerator::Exponential => 1.0 / (x * x),
        })
    }

    /// Closed-form `D_{g*}(x, y)` for one coordinate, both in mean coordinates.
    fn div1(&self, j: usize, x: f64, y: f64) -> Result<f64> {
        self.check_mean_closed(j, x)?;
        self.check_mean_open(j, y)?;
        let d = match self {
            ConvexGenerator::Gaussian(_) => 0.5 * (x - y) * (x - y) / self.variance(j),
            ConvexGenerator::Bernoulli => {
                xlog_ratio(x, y) + xlog_ratio(1.0 - x, 1.0 - y)
            }
            ConvexGenerator::Poisson => xlog_ratio(x, y) - x + y,
            ConvexGenerator::Exponential => {
                let r = x / y;
                r - r.ln() - 1.0
            }
        };
        // rounding can leave a tiny negative residue near x == y
        Ok(d.max(0.0))
    }

    fn map(&self, v: &ParamVector, f: impl Fn(usize, f64) -> Result<f64>) -> Result<ParamVector> {
        self.check_len(v)?;
        let out = v
            .iter()
            .enumerate()
            .map(|(j, &x)| f(j, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVector::from_raw(out))
    }

    fn sum(&self, v: &ParamVector, f: impl Fn(usize, f64) -> Result<f64>) -> Result<f64> {
        self.check_len(v)?;
        v.iter().enumerate().map(|(j, &x)| f(j, x)).sum()
    }

    /// `g(s)`, the log-partition function at natural parameter `s`.
    pub fn log_partition(&self, s: &ParamVector) -> Result<f64> {
        self.sum(s, |j, x| self.g1(j, x))
    }

    /// `grad g(s)`: natural to mean coordinates.
    pub fn grad_g(&self, s: &ParamVector) -> Result<ParamVector> {
        self.map(s, |j, x| self.dg1(j, x))
    }

    /// `g*(x)`.
    pub fn conjugate(&self, x: &ParamVector) -> Result<f64> {
        self.sum(x, |j, v| self.gc1(j, v))
    }

    /// `grad g*(x)`: mean to natural coordinates.
    pub fn grad_g_conj(&self, x: &ParamVector) -> Result<ParamVector> {
        self.map(x, |j, v| self.dgc1(j, v))
    }

    /// Diagonal of `hess g*(x)`.
    pub fn hess_g_conj_diag(&self, x: &ParamVector) -> Result<ParamVector> {
        self.map(x, |j, v| self.hgc1(j, v))
    }

    /// `D_{g*}(x, y)` with both arguments in mean coordinates.
    pub fn divergence(&self, x: &ParamVector, y: &ParamVector) -> Result<f64> {
        x.check_dim(y)?;
        self.check_len(x)?;
        let mut total = 0.0;
        for j in 0..x.dim() {
            total += self.div1(j, x[j], y[j])?;
        }
        Ok(total)
    }

    /// `D_{g*}(x, grad g(s))` written through the natural parameter `s`:
    /// `g*(x) + g(s) - <x, s>`.
    pub fn divergence_natural(&self, x: &ParamVector, s: &ParamVector) -> Result<f64> {
        x.check_dim(s)?;
        self.check_len(x)?;
        let mut total = 0.0;
        for j in 0..x.dim() {
            total += (self.gc1(j, x[j])? + self.g1(j, s[j])? - x[j] * s[j]).max(0.0);
        }
        Ok(total)
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn xlog_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// The scaled exponential-family prior: a generator and its scale `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    generator: ConvexGenerator,
    lambda: f64,
}

impl PriorSpec {
    pub fn new(generator: ConvexGenerator, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        Ok(PriorSpec { generator, lambda })
    }

    /// Spherical unit gaussian prior with scale `lambda`.
    pub fn gaussian(lambda: f64) -> Result<Self> {
        PriorSpec::new(ConvexGenerator::standard_gaussian(), lambda)
    }

    pub fn generator(&self) -> &ConvexGenerator {
        &self.generator
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// A differentiable function of a parameter vector.
pub trait Objective {
    fn value(&self, params: &ParamVector) -> Result<f64>;
    fn gradient(&self, params: &ParamVector) -> Result<ParamVector>;
}

/// An [`Objective`] built from a pair of closures.
pub struct FnObjective<V, G> {
    value: V,
    gradient: G,
}

impl<V, G> FnObjective<V, G>
where
    V: Fn(&ParamVector) -> f64,
    G: Fn(&ParamVector) -> ParamVector,
{
    pub fn new(value: V, gradient: G) -> Self {
        FnObjective { value, gradient }
    }
}

impl<V, G> Objective for FnObjective<V, G>
where
    V: Fn(&ParamVector) -> f64,
    G: Fn(&ParamVector) -> ParamVector,
{
    fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok((self.value)(params))
    }

    fn gradient(&self, params: &ParamVector) -> Result<ParamVector> {
        Ok((self.gradient)(params))
    }
}

/// Fixed-step, fixed-count gradient descent for the prox subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxSolver {
    pub steps: usize,
    pub step_size: f64,
}

impl ProxSolver {
    pub fn new(steps: usize, step_size: f64) -> Result<Self> {
        let solver = ProxSolver { steps, step_size };
        solver.validate()?;
        Ok(solver)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("prox_steps", "must be >= 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid(
                "prox_step_size",
                format!("must be > 0, got {}", self.step_size),
            ));
        }
        Ok(())
    }
}

/// Approximates `argmin_theta { loss(theta) + lambda * D_{g*}(theta, anchor) }`
/// with exactly `solver.steps` gradient steps from `start`.
pub fn bregman_prox(
    spec: &PriorSpec,
    loss: &dyn Objective,
    anchor: &ParamVector,
    solver: ProxSolver,
    start: &ParamVector,
) -> Result<ParamVector> {
    solver.validate()?;
    anchor.check_dim(start)?;
    let gen = spec.generator();
    let lambda = spec.lambda();
    let alpha = solver.step_size;
    let mut theta = start.clone();

    if let ConvexGenerator::Gaussian(_) = gen {
        gen.check_len(anchor)?;
        for step in 0..solver.steps {
            let grad = loss.gradient(&theta)?;
            theta.check_dim(&grad)?;
            if !grad.is_finite() {
                return Err(Error::non_finite(format!("prox inner gradient at step {step}")));
            }
            let t = theta.as_mut_slice();
            for j in 0..t.len() {
                let reg = (t[j] - anchor[j]) / gen.variance(j);
                t[j] -= alpha * (grad[j] + lambda * reg);
            }
            theta.ensure_finite(|| format!("prox inner step {step}"))?;
        }
        return Ok(theta);
    }

    let anchor_nat = gen.grad_g_conj(anchor)?;
    for step in 0..solver.steps {
        let grad = loss.gradient(&theta)?;
        theta.check_dim(&grad)?;
        if !grad.is_finite() {
            return Err(Error::non_finite(format!("prox inner gradient at step {step}")));
        }
        let theta_nat = gen.grad_g_conj(&theta)?;
        let t = theta.as_mut_slice();
        for j in 0..t.len() {
            t[j] -= alpha * (grad[j] + lambda * (theta_nat[j] - anchor_nat[j]));
        }
        theta.ensure_finite(|| format!("prox inner step {step}"))?;
    }
    Ok(theta)
}

/// `loss(theta) + lambda * D_{g*}(theta, anchor)`, the prox objective.
pub fn prox_objective(
    spec: &PriorSpec,
    loss: &dyn Objective,
    anchor: &ParamVector,
    theta: &ParamVector,
) -> Result<f64> {
    Ok(loss.value(theta)? + spec.lambda() * spec.generator().divergence(theta, anchor)?)
}

/// Envelope value at `anchor`: the prox objective at the prox solution
/// (warm-started at the anchor).
pub fn envelope_value(
    spec: &PriorSpec,
    loss: &dyn Objective,
    anchor: &ParamVector,
    solver: ProxSolver,
) -> Result<f64> {
    let theta = bregman_prox(spec, loss, anchor, solver, anchor)?;
    prox_objective(spec, loss, anchor, &theta)
}

/// Gradient of the envelope with respect to the anchor,
/// `lambda * hess g*(anchor) (anchor - prox)`.
///
/// For separable generators the Hessian is diagonal and this is the exact
/// derivative of [`envelope_value`] in the limit of an exact prox solve.
pub fn envelope_gradient(
    spec: &PriorSpec,
    anchor: &ParamVector,
    prox_result: &ParamVector,
) -> Result<ParamVector> {
    anchor.check_dim(prox_result)?;
    let hess = spec.generator().hess_g_conj_diag(anchor)?;
    let lambda = spec.lambda();
    let out = (0..anchor.dim())
        .map(|j| lambda * hess[j] * (anchor[j] - prox_result[j]))
        .collect();
    Ok(ParamVector::from_raw(out))
}

/// First-order envelope gradient with the Hessian replaced by the identity,
/// `lambda * (anchor - prox)`.
pub fn envelope_gradient_first_order(
    spec: &PriorSpec,
    anchor: &ParamVector,
    prox_result: &ParamVector,
) -> Result<ParamVector> {
    anchor.check_dim(prox_result)?;
    let lambda = spec.lambda();
    let out = anchor
        .iter()
        .zip(prox_result.iter())
        .map(|(a, p)| lambda * (a - p))
        .collect();
    Ok(ParamVector::from_raw(out))
}
