use pfedbred::algorithms::{select_prior_mean, MeanContext, MeanRule};
use pfedbred::bregman::{bregman_prox, FnObjective};
use pfedbred::data::{partition_label_skew, synth_generate};
use pfedbred::federation::aggregate;
use pfedbred::metrics::local_test;
use pfedbred::models::{forward_loss, predict};
use pfedbred::param_space::linear_combine;
use pfedbred::{
    Batch, ClientShard, ConvexGenerator, ModelSpec, Objective, ParamVector, Partition, PriorSpec,
    ProxSolver, RngStream,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn pv(v: Vec<f64>) -> ParamVector {
    ParamVector::new(v).unwrap()
}

/// A family and a pair of points inside its mean-parameter domain.
fn domain_pair() -> impl Strategy<Value = (ConvexGenerator, Vec<f64>, Vec<f64>)> {
    (0usize..4, 1usize..6).prop_flat_map(|(family, n)| {
        let (gen, lo, hi) = match family {
            0 => (ConvexGenerator::standard_gaussian(), -50.0, 50.0),
            1 => (ConvexGenerator::Bernoulli, 1e-6, 1.0 - 1e-6),
            2 => (ConvexGenerator::Poisson, 1e-6, 1e3),
            _ => (ConvexGenerator::Exponential, 1e-3, 1e3),
        };
        (Just(gen), vec(lo..hi, n), vec(lo..hi, n))
    })
}

/// A family and an interior natural-parameter point.
fn natural_point() -> impl Strategy<Value = (ConvexGenerator, Vec<f64>)> {
    (0usize..4, 1usize..6).prop_flat_map(|(family, n)| {
        let (gen, lo, hi) = match family {
            0 => (ConvexGenerator::standard_gaussian(), -50.0, 50.0),
            1 => (ConvexGenerator::Bernoulli, -5.0, 5.0),
            2 => (ConvexGenerator::Poisson, -5.0, 5.0),
            _ => (ConvexGenerator::Exponential, -50.0, -0.02),
        };
        (Just(gen), vec(lo..hi, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn divergence_nonnegative_and_zero_on_diagonal((gen, x, y) in domain_pair()) {
        let (x, y) = (pv(x), pv(y));
        prop_assert!(gen.divergence(&x, &y).unwrap() >= 0.0);
        prop_assert_eq!(gen.divergence(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn conjugate_gradient_inverts_gradient((gen, s) in natural_point()) {
        let s = pv(s);
        let back = gen.grad_g_conj(&gen.grad_g(&s).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&s).unwrap() <= 1e-10);
    }

    #[test]
    fn gaussian_prox_satisfies_optimality(
        a in vec(-5.0..5.0f64, 3),
        curv in vec(0.1..4.0f64, 3),
        anchor in vec(-5.0..5.0f64, 3),
        lambda in 0.1..20.0f64,
    ) {
        let (a2, c2) = (a.clone(), curv.clone());
        let loss = FnObjective::new(
            move |p: &ParamVector| (0..3).map(|j| 0.5 * c2[j] * (p[j] - a2[j]).powi(2)).sum(),
            move |p: &ParamVector| pv((0..3).map(|j| curv[j] * (p[j] - a[j])).collect()),
        );
        let prior = PriorSpec::gaussian(lambda).unwrap();
        let anchor = pv(anchor);
        let step = 1.0 / (4.0 + lambda);
        let theta = bregman_prox(&prior, &loss, &anchor, ProxSolver::new(3000, step).unwrap(), &anchor).unwrap();
        let g = loss.gradient(&theta).unwrap();
        for j in 0..3 {
            prop_assert!((g[j] + lambda * (theta[j] - anchor[j])).abs() <= 1e-6);
        }
    }

    #[test]
    fn loss_invariant_to_common_bias_shift(
        params in vec(-2.0..2.0f64, 3 * 4 + 3),
        inputs in vec(0.0..1.0f64, 4 * 5),
        labels in vec(0usize..3, 5),
        shift in -10.0..10.0f64,
    ) {
        let spec = ModelSpec::mclr(4, 3);
        let batch = Batch::new(inputs, 4, labels).unwrap();
        let p = pv(params);
        let mut shifted = p.clone().into_vec();
        for j in spec.output_bias_range() {
            shifted[j] += shift;
        }
        let a = forward_loss(&spec, &p, &batch).unwrap();
        let b = forward_loss(&spec, &pv(shifted), &batch).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn predict_invariant_under_positive_affine_logits(
        params in vec(-2.0..2.0f64, 3 * 4 + 3),
        inputs in vec(0.0..1.0f64, 4 * 5),
        scale in prop_oneof![Just(0.5), Just(2.0), Just(4.0)],
        shift in prop_oneof![Just(-8.0), Just(0.0), Just(3.0)],
    ) {
        let spec = ModelSpec::mclr(4, 3);
        let batch = Batch::new(inputs, 4, vec![0; 5]).unwrap();
        let p = pv(params);
        let mut q: Vec<f64> = p.iter().map(|v| v * scale).collect();
        for j in spec.output_bias_range() {
            q[j] += shift;
        }
        prop_assert_eq!(predict(&spec, &p, &batch).unwrap(), predict(&spec, &pv(q), &batch).unwrap());
    }

    #[test]
    fn label_skew_partition_invariants(
        seed in 0u64..1000,
        clients in 1usize..12,
        k in 1usize..5,
        train_fraction in 0.3..0.9f64,
    ) {
        let ds = synth_generate(5, 40, 3, 1.0, &mut RngStream::new(seed, 0)).unwrap();
        let part = partition_label_skew(&ds, clients, k, train_fraction, &mut RngStream::new(seed, 1)).unwrap();
        part.validate(&ds).unwrap();
        for (i, shard) in part.client_shards.iter().enumerate() {
            prop_assert_eq!(part.client_labels(&ds, i).len(), k);
            let n = shard.len() as f64;
            prop_assert!((shard.train.len() as f64 - n * train_fraction).abs() <= 1.0);
        }
    }

    #[test]
    fn uniform_aggregation_is_the_mean(
        updates in vec(vec(-100.0..100.0f64, 4), 1..10),
        prev in vec(-100.0..100.0f64, 4),
    ) {
        let ups: Vec<ParamVector> = updates.into_iter().map(pv).collect();
        let pairs: Vec<(f64, &ParamVector)> = ups.iter().map(|u| (1.0, u)).collect();
        let out = aggregate(&pv(prev), &pairs, 1.0).unwrap();
        for j in 0..4 {
            let mean = ups.iter().map(|u| u[j]).sum::<f64>() / ups.len() as f64;
            prop_assert!((out[j] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn mg_mean_decomposes(
        w in vec(-3.0..3.0f64, 4),
        m in vec(-3.0..3.0f64, 4),
        theta in vec(-3.0..3.0f64, 4),
        target in vec(-3.0..3.0f64, 4),
        eta in 0.0..1.0f64,
        eta_alpha in 0.0..1.0f64,
    ) {
        let t = pv(target);
        let loss = FnObjective::new(|_: &ParamVector| 0.0, move |p: &ParamVector| p.sub(&t).unwrap());
        let (w, m, theta) = (pv(w), pv(m), pv(theta));
        let ctx = MeanContext { w: &w, loss: &loss, memorized_w: &m, theta_prev: &theta };
        let mg = select_prior_mean(MeanRule::MemorizedGradients { eta, eta_alpha }, &ctx).unwrap();
        let mfo = select_prior_mean(MeanRule::MemorizedFirstOrder { eta }, &ctx).unwrap();
        let g = loss.gradient(&w).unwrap();
        prop_assert_eq!(mg, linear_combine(&[(1.0, &mfo), (-eta_alpha, &g)]).unwrap());
    }

    #[test]
    fn equal_shards_aggregate_to_unweighted_mean(
        params in vec(vec(-1.0..1.0f64, 2 * 2 + 2), 3),
        seed in 0u64..100,
    ) {
        let ds = synth_generate(2, 12, 2, 1.0, &mut RngStream::new(seed, 0)).unwrap();
        let part = Partition {
            client_shards: (0..3)
                .map(|i| ClientShard { train: vec![], test: (i * 8..i * 8 + 8).collect() })
                .collect(),
        };
        let models: Vec<ParamVector> = params.into_iter().map(pv).collect();
        let r = local_test(&ModelSpec::mclr(2, 2), &ds, &part, &models).unwrap();
        let mean = r.per_client.iter().map(|c| c.report.accuracy).sum::<f64>() / 3.0;
        prop_assert!((r.aggregate.accuracy - mean).abs() <= 1e-12);
    }
}
