//! Local/global test evaluation and per-class loss deviation.

use rayon::prelude::*;

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::models::{self, ModelSpec};
use crate::param_space::ParamVector;

/// Accuracy and mean NLL over some set of rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
}

impl EvalReport {
    pub fn nan() -> Self {
        EvalReport {
            accuracy: f64::NAN,
            loss: f64::NAN,
            samples: 0,
        }
    }
}

/// Evaluates `params` on the given dataset rows.
pub fn evaluate(spec: &ModelSpec, data: &Dataset, rows: &[usize], params: &ParamVector) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Empty("evaluation rows"));
    }
    let batch = data.batch(rows);
    let out = models::evaluate_rows(spec, params, &batch)?;
    let correct = out
        .iter()
        .zip(batch.labels())
        .filter(|((_, pred), y)| pred == *y)
        .count();
    let loss = out.iter().map(|(l, _)| l).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / rows.len() as f64,
        loss,
        samples: rows.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientMetrics {
    pub client: usize,
    pub report: EvalReport,
    /// Share of the evaluated test rows held by this client.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTestReport {
    pub per_client: Vec<ClientMetrics>,
    /// Shard-size weighted mean of the per-client metrics.
    pub aggregate: EvalReport,
}

/// Each client's model on its own test shard. Clients with an empty test
/// shard are skipped with a warning and the weights renormalized.
pub fn local_test(
    spec: &ModelSpec,
    data: &Dataset,
    partition: &Partition,
    models: &[ParamVector],
) -> Result<LocalTestReport> {
    if models.len() != partition.num_clients() {
        return Err(Error::DimensionMismatch {
            left: models.len(),
            right: partition.num_clients(),
        });
    }
    let evaluated: Vec<(usize, EvalReport)> = partition
        .client_shards
        .par_iter()
        .zip(models.par_iter())
        .enumerate()
        .filter(|(_, (shard, _))| !shard.test.is_empty())
        .map(|(i, (shard, p))| evaluate(spec, data, &shard.test, p).map(|r| (i, r)))
        .collect::<Result<_>>()?;
    for (i, shard) in partition.client_shards.iter().enumerate() {
        if shard.test.is_empty() {
            log::warn!("client {i} has no test rows; excluded from local test");
        }
    }
    if evaluated.is_empty() {
        return Err(Error::Empty("local test shards"));
    }
    let total: usize = evaluated.iter().map(|(_, r)| r.samples).sum();
    let mut aggregate = EvalReport {
        accuracy: 0.0,
        loss: 0.0,
        samples: total,
    };
    let per_client = evaluated
        .into_iter()
        .map(|(client, report)| {
            let weight = report.samples as f64 / total as f64;
            aggregate.accuracy += weight * report.accuracy;
            aggregate.loss += weight * report.loss;
            ClientMetrics {
                client,
                report,
                weight,
            }
        })
        .collect();
    Ok(LocalTestReport {
        per_client,
        aggregate,
    })
}

/// One model on the pooled test rows.
pub fn global_test(spec: &ModelSpec, data: &Dataset, pool: &[usize], model: &ParamVector) -> Result<EvalReport> {
    evaluate(spec, data, pool, model)
}

/// Per-client, per-class loss matrices and their deviations from the
/// class means. Matrices are row-major `[client][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub num_clients: usize,
    pub num_classes: usize,
    /// Own-test-data loss of personalized model i on class c; 0 if the
    /// client has no test rows of class c.
    pub l: Vec<f64>,
    /// Pooled-test-data loss of personalized model i on class c.
    pub g: Vec<f64>,
    /// Test rows of class c held by client i.
    pub counts: Vec<usize>,
    /// Count-weighted mean of `l` over clients.
    pub l_bar: Vec<f64>,
    /// Unweighted mean of `g` over clients.
    pub g_bar: Vec<f64>,
    /// Classes with no test rows anywhere; their columns are all zero.
    pub absent: Vec<bool>,
}

impl DeviationReport {
    fn at(&self, i: usize, c: usize) -> usize {
        i * self.num_classes + c
    }

    pub fn l(&self, i: usize, c: usize) -> f64 {
        self.l[self.at(i, c)]
    }

    pub fn g(&self, i: usize, c: usize) -> f64 {
        self.g[self.at(i, c)]
    }

    pub fn count(&self, i: usize, c: usize) -> usize {
        self.counts[self.at(i, c)]
    }

    pub fn dl(&self, i: usize, c: usize) -> f64 {
        self.l(i, c) - self.l_bar[c]
    }

    pub fn dg(&self, i: usize, c: usize) -> f64 {
        self.g(i, c) - self.g_bar[c]
    }

    /// `(client, class, L, G, dL, dG)` in row-major order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, f64, f64, f64, f64)> + '_ {
        (0..self.num_clients).flat_map(move |i| {
            (0..self.num_classes)
                .map(move |c| (i, c, self.l(i, c), self.g(i, c), self.dl(i, c), self.dg(i, c)))
        })
    }
}

/// Mean loss per label over `rows`, and the per-label row counts.
fn per_class_loss(
    spec: &ModelSpec,
    data: &Dataset,
    rows: &[usize],
    params: &ParamVector,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let c = data.num_classes();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    if !rows.is_empty() {
        let batch = data.batch(rows);
        let out = models::evaluate_rows(spec, params, &batch)?;
        for ((loss, _), &y) in out.iter().zip(batch.labels()) {
            sums[y] += loss;
            counts[y] += 1;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            *s /= n as f64;
        }
    }
    Ok((sums, counts))
}

pub fn loss_deviation(
    spec: &ModelSpec,
    data: &Dataset,
    partition: &Partition,
    models: &[ParamVector],
) -> Result<DeviationReport> {
    let n = partition.num_clients();
    if models.len() != n {
        return Err(Error::DimensionMismatch {
            left: models.len(),
            right: n,
        });
    }
    let c = data.num_classes();
    let pool = partition.test_pool();
    let per_client: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)> = partition
        .client_shards
        .par_iter()
        .zip(models.par_iter())
        .map(|(shard, p)| {
            let (l, counts) = per_class_loss(spec, data, &shard.test, p)?;
            let (g, _) = per_class_loss(spec, data, &pool, p)?;
            Ok((l, counts, g))
        })
        .collect::<Result<_>>()?;

    let mut report = DeviationReport {
        num_clients: n,
        num_classes: c,
        l: Vec::with_capacity(n * c),
        g: Vec::with_capacity(n * c),
        counts: Vec::with_capacity(n * c),
        l_bar: vec![0.0; c],
        g_bar: vec![0.0; c],
        absent: vec![false; c],
    };
    for (l, counts, g) in per_client {
        report.l.extend(l);
        report.counts.extend(counts);
        report.g.extend(g);
    }
    for class in 0..c {
        let total: usize = (0..n).map(|i| report.count(i, class)).sum();
        if total == 0 {
            report.absent[class] = true;
            log::warn!("class {class} has no test rows in the federation");
            continue;
        }
        report.l_bar[class] = (0..n)
            .map(|i| report.count(i, class) as f64 / total as f64 * report.l(i, class))
            .sum();
        report.g_bar[class] = (0..n).map(|i| report.g(i, class)).sum::<f64>() / n as f64;
    }
    Ok(report)
}
