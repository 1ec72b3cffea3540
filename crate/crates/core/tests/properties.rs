mod common;

use common::{graph, small_dataset};
use fdglm::{
    cost_model, partition_features, run, run_with_observer, GraphFamily, LossKind, Problem, RegAssignment, RegKind,
    SolverConfig,
};
use ndarray::Array1;
use proptest::prelude::*;

fn family_strategy() -> impl Strategy<Value = GraphFamily> {
    prop_oneof![
        Just(GraphFamily::Complete),
        Just(GraphFamily::Star),
        Just(GraphFamily::Path),
        Just(GraphFamily::ErdosRenyi { p: 0.5 }),
    ]
}

fn loss_strategy() -> impl Strategy<Value = LossKind> {
    prop_oneof![
        Just(LossKind::Squared),
        Just(LossKind::Absolute),
        Just(LossKind::Logistic),
        (0.1f64..2.0).prop_map(|kappa| LossKind::Huber { kappa }),
    ]
}

fn fixed(t: usize, tau: f64, sigma: f64) -> SolverConfig {
    SolverConfig {
        tau: Some(tau),
        sigma: Some(sigma),
        r: Some(1.0),
        checkpoint_every: Some(1),
        ..SolverConfig::new(t)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ergodic_average_is_mean_of_iterates(
        m in 1usize..5, n in 2usize..7, extra in 0usize..4, seed in 0u64..1000,
        family in family_strategy(), loss in loss_strategy(), rounds in 1usize..40,
    ) {
        let d = m + extra;
        let data = small_dataset(n, d, seed, loss == LossKind::Logistic);
        let g = graph(family, m);
        let partition = partition_features(d, m).unwrap();
        let reg = RegAssignment::Uniform(RegKind::L1 { weight: 0.01 });
        let problem = Problem { dataset: &data, partition: &partition, graph: &g, loss, reg: &reg };
        let (tau, sigma) = common::theorem_steps(&data, &g, loss);
        let mut sum = Array1::<f64>::zeros(d);
        let result = run_with_observer(&problem, &fixed(rounds, tau, sigma), |_, agents| {
            let parts: Vec<Array1<f64>> = agents.iter().map(|a| a.theta.clone()).collect();
            sum += &partition.concat(&parts);
        }).unwrap();
        let mean = sum / rounds as f64;
        prop_assert!(common::max_abs_diff(&mean, &result.theta_bar) <= 1e-12);
        prop_assert_eq!(result.history.len(), rounds + 1);
    }

    #[test]
    fn traffic_matches_degree_sum(
        m in 1usize..7, n in 2usize..6, seed in 0u64..1000, family in family_strategy(), rounds in 1usize..10,
    ) {
        let data = small_dataset(n, m, seed, false);
        let g = graph(family, m);
        let partition = partition_features(m, m).unwrap();
        let reg = RegAssignment::default();
        let problem = Problem { dataset: &data, partition: &partition, graph: &g, loss: LossKind::Squared, reg: &reg };
        let result = run(&problem, &fixed(rounds, 0.1, 0.1)).unwrap();
        let per_round: u64 = (0..m).map(|j| 2 * n as u64 * g.degree(j) as u64).sum();
        for row in &result.history {
            prop_assert_eq!(row.cum_floats_sent, per_round * row.t as u64);
        }
    }

    #[test]
    fn step_size_rule_respects_coupling_bound(
        m in 1usize..6, n in 2usize..20, extra in 0usize..5, seed in 0u64..1000,
        family in family_strategy(), loss in loss_strategy(), r in 0.01f64..100.0,
    ) {
        let d = m + extra;
        let data = small_dataset(n, d, seed, loss == LossKind::Logistic);
        let g = graph(family, m);
        let partition = partition_features(d, m).unwrap();
        let reg = RegAssignment::default();
        let problem = Problem { dataset: &data, partition: &partition, graph: &g, loss, reg: &reg };
        let config = SolverConfig { r: Some(r), ..SolverConfig::new(1) };
        let result = run(&problem, &config).unwrap();
        let c = result.constants.unwrap();
        prop_assert!(result.step_sizes.satisfies_coupling_bound(c.chi, c.laplacian_bound, n));
        prop_assert!(result.warnings.is_empty());
    }

    #[test]
    fn v_updates_cancel_on_regular_graphs(m in 2usize..7, n in 1usize..5, seed in 0u64..1000, rounds in 1usize..10) {
        let data = small_dataset(n, m, seed, false);
        let g = graph(GraphFamily::Complete, m);
        let partition = partition_features(m, m).unwrap();
        let reg = RegAssignment::default();
        let problem = Problem { dataset: &data, partition: &partition, graph: &g, loss: LossKind::Squared, reg: &reg };
        let mut ok = true;
        run_with_observer(&problem, &fixed(rounds, 0.3, 0.3), |_, agents| {
            let total = agents.iter().fold(Array1::<f64>::zeros(n), |acc, a| acc + &a.v);
            ok &= total.iter().all(|x| x.abs() < 1e-10);
        }).unwrap();
        prop_assert!(ok);
    }
}

#[test]
fn zero_fixed_point_with_zero_responses() {
    let data = small_dataset(5, 6, 9, false).with_responses(Array1::zeros(5)).unwrap();
    for family in [GraphFamily::Complete, GraphFamily::Star, GraphFamily::Path] {
        let g = graph(family, 3);
        let partition = partition_features(6, 3).unwrap();
        let reg = RegAssignment::default();
        let problem = Problem { dataset: &data, partition: &partition, graph: &g, loss: LossKind::Squared, reg: &reg };
        let result = run_with_observer(&problem, &fixed(50, 0.7, 0.7), |_, agents| {
            for a in agents {
                assert!(a.theta.iter().chain(&a.v).chain(&a.lambda).all(|&x| x == 0.0));
            }
        })
        .unwrap();
        assert!(result.theta_bar.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn flop_counter_matches_cost_model() {
    for (m, family) in [(1, GraphFamily::Complete), (4, GraphFamily::Star), (4, GraphFamily::Path), (16, GraphFamily::Lattice2d)] {
        let (n, d, rounds) = (24, 32, 7);
        let data = small_dataset(n, d, 5, false);
        let g = graph(family, m);
        let partition = partition_features(d, m).unwrap();
        let reg = RegAssignment::default();
        let problem = Problem { dataset: &data, partition: &partition, graph: &g, loss: LossKind::Squared, reg: &reg };
        let result = run(&problem, &fixed(rounds, 0.1, 0.1)).unwrap();
        let model = cost_model(n, d, m, g.max_degree()).unwrap();
        assert_eq!(result.final_row().cum_flops, model.flops_per_agent_per_iter * rounds as u64);
        for (j, &f) in result.agent_flops.iter().enumerate() {
            let b = (d / m) as u64;
            let per = n as u64 * (4 * b + 2 * g.degree(j) as u64 + 7) + 5 * b;
            assert_eq!(f, per * rounds as u64);
        }
    }
}

#[test]
fn baseline_flops_per_round() {
    let (n, d) = (10, 6);
    let data = small_dataset(n, d, 1, false);
    let result = fdglm::baseline_single_agent(&data, LossKind::Squared, &RegAssignment::default(), &fixed(3, 0.1, 0.1)).unwrap();
    assert_eq!(result.agent_flops[0], 3 * (n as u64 * (4 * d as u64 + 2) + 5 * d as u64));
    assert_eq!(result.floats_sent, 0);
}

#[test]
fn single_precision_tracks_double() {
    let data64 = small_dataset(20, 6, 3, false);
    let x32 = data64.x().mapv(|v| v as f32);
    let y32 = data64.y().mapv(|v| v as f32);
    let data32 = fdglm::Dataset::new(x32, y32).unwrap();
    let g = graph(GraphFamily::Star, 3);
    let partition = partition_features(6, 3).unwrap();
    let reg = RegAssignment::default();
    let config = SolverConfig { r: Some(2.0), ..SolverConfig::new(300) };
    let r64 = run(&Problem { dataset: &data64, partition: &partition, graph: &g, loss: LossKind::Squared, reg: &reg }, &config).unwrap();
    let r32 = run(&Problem { dataset: &data32, partition: &partition, graph: &g, loss: LossKind::Squared, reg: &reg }, &config).unwrap();
    let rel = (r64.final_row().objective - r32.final_row().objective).abs() / r64.final_row().objective;
    assert!(rel < 1e-3, "{rel}");
}
