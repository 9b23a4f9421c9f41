use ocdfl_core::datagen::{Dataset, Shard};
use ocdfl_core::engine::*;
use ocdfl_core::learner::{evaluate, init_model, local_update, Layout, ModelParams, TrainConfig};
use ocdfl_core::rng::{stream, Stream};
use ocdfl_core::topology::{Arena, Mover, Position};
use ocdfl_core::Error;

fn small_data(seed: u64) -> (Dataset, Dataset) {
    let spec = SyntheticSpec {
        train_samples: 480,
        test_samples: 160,
        feature_dim: 8,
        num_classes: 4,
        separation: 4.0,
    };
    synthetic_data(&spec, seed).unwrap()
}

fn small_cfg(scheme: Scheme, num_nodes: usize) -> ExperimentConfig {
    ExperimentConfig {
        num_nodes,
        rounds: 4,
        scheme,
        seed: 11,
        hidden: vec![8],
        payload_bits: (Layout::mlp(8, &[8], 4).unwrap().serialized_bits()) as f64,
        ..Default::default()
    }
}

/// Nodes parked on a small circle, well within range of each other.
fn parked(n: usize) -> Vec<Mover> {
    (0..n)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            Mover::stationary(Position::new(2500.0 + 300.0 * a.cos(), 2500.0 + 300.0 * a.sin()))
        })
        .collect()
}

/// Straightforward single-expression energy: P S / (B log2(1 + P G G (c/4 pi f)^2 d^-n / (N0 B))).
fn oracle_energy(p: &ocdfl_core::radio::RadioParams, d: f64, bits: f64) -> f64 {
    let pr = p.p_tx * p.g_tx * p.g_rx * (p.light_speed / (4.0 * std::f64::consts::PI * p.freq)).powi(2)
        * d.powf(-p.env_exp);
    p.p_tx * bits / (p.bandwidth * (1.0 + pr / (p.noise_density * p.bandwidth)).log2())
}

#[test]
fn zero_rounds_and_zero_nodes_are_rejected() {
    let (train, test) = small_data(1);
    let cfg = ExperimentConfig { rounds: 0, ..small_cfg(Scheme::Full, 4) };
    assert!(matches!(run_experiment(&cfg, &train, &test), Err(Error::InvalidParameter { .. })));
    let cfg = ExperimentConfig { num_nodes: 0, ..small_cfg(Scheme::Full, 4) };
    assert!(run_experiment(&cfg, &train, &test).is_err());
}

#[test]
fn isolated_scheme_matches_independent_local_training() {
    let (train, test) = small_data(2);
    let cfg = small_cfg(Scheme::None, 5);
    let layout = Layout::mlp(8, &[8], 4).unwrap();
    let shards: Vec<Shard> = (0..5)
        .map(|i| Shard { owner: i, indices: (i * 90..(i + 1) * 90).collect() })
        .collect();
    let models: Vec<ModelParams> = (0..5)
        .map(|i| init_model(&layout, &mut stream(99, Stream::ModelInit, i as u64)))
        .collect();
    let mut sim = Simulation::from_parts(cfg.clone(), &train, &test, shards.clone(), models.clone()).unwrap();
    sim.set_movers(&parked(5));

    let mut own = models;
    let mut rngs: Vec<_> = (0..5).map(|i| stream(cfg.seed, Stream::Training, i as u64)).collect();
    for _ in 0..cfg.rounds {
        let report = sim.run_round().unwrap();
        assert!(report.deliveries.is_empty());
        for i in 0..5 {
            own[i] = local_update(&own[i], &train, &shards[i].indices, &cfg.train, &mut rngs[i]).unwrap();
            let e = evaluate(&own[i], &test, None).unwrap();
            let m = report.metrics.nodes[i];
            assert_eq!(m.tx_energy_j, 0.0);
            assert_eq!(m.delivered_gain, 0.0);
            assert_eq!((m.num_selected, m.num_received), (0, 0));
            assert_eq!((m.loss, m.accuracy), (e.loss, e.accuracy));
        }
    }
    assert_eq!(sim.into_models(), own);
}

#[test]
fn single_node_is_local_training_for_every_scheme() {
    let (train, test) = small_data(3);
    let outcomes: Vec<_> = Scheme::ALL
        .iter()
        .map(|&s| run_experiment(&small_cfg(s, 1), &train, &test).unwrap())
        .collect();
    for o in &outcomes {
        assert_eq!(o.total_energy(), 0.0);
        assert_eq!(o.rounds.len(), 4);
        assert!(o.rounds.iter().all(|r| r.nodes.len() == 1 && r.nodes[0].num_received == 0));
        assert_eq!(o.final_models, outcomes[0].final_models);
        let strip = |o: &ExperimentOutcome| o.rounds.iter().map(|r| r.nodes.clone()).collect::<Vec<_>>();
        assert_eq!(strip(o), strip(&outcomes[0]));
    }
}

#[test]
fn identical_nodes_stay_identical_under_full_communication() {
    let (train, test) = small_data(4);
    let shard: Vec<usize> = (0..120).collect();
    let cfg = ExperimentConfig {
        // one full batch per epoch, so training order cannot differ between nodes
        train: TrainConfig { learning_rate: 0.5, local_epochs: 2, batch_size: 120 },
        ..small_cfg(Scheme::Full, 3)
    };
    let model = init_model(&Layout::mlp(8, &[8], 4).unwrap(), &mut stream(5, Stream::ModelInit, 0));
    let shards = (0..3).map(|i| Shard { owner: i, indices: shard.clone() }).collect();
    let mut sim = Simulation::from_parts(cfg, &train, &test, shards, vec![model.clone(); 3]).unwrap();
    sim.set_movers(&parked(3));
    for _ in 0..5 {
        let report = sim.run_round().unwrap();
        assert_eq!(report.graph.num_edges(), 3);
        let first = &sim.nodes()[0].model;
        assert_ne!(first, &model);
        assert!(sim.nodes().iter().all(|n| &n.model == first));
        // equal losses carry no gain, so nothing is credited even though all send
        assert!(report.metrics.nodes.iter().all(|m| m.num_selected == 2 && m.delivered_gain == 0.0));
    }
}

#[test]
fn pure_averaging_reaches_consensus() {
    let (train, test) = small_data(5);
    let n = 7;
    let cfg = ExperimentConfig {
        train: TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        arena: Arena::new(100.0, 100.0).unwrap(),
        rounds: 1,
        ..small_cfg(Scheme::Full, n)
    };
    let mut sim = Simulation::new(cfg, &train, &test).unwrap();
    let budget = (n as f64).log2().ceil() as usize + 5;
    for _ in 0..budget {
        let report = sim.run_round().unwrap();
        assert_eq!(report.graph.num_edges(), n * (n - 1) / 2);
    }
    let models: Vec<&[f64]> = sim.nodes().iter().map(|s| s.model.values()).collect();
    for m in &models[1..] {
        let spread = m.iter().zip(models[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-6, "{spread}");
    }
}

#[test]
fn energy_accounting_and_delivery_are_consistent() {
    let (train, test) = small_data(6);
    for scheme in [Scheme::Ocdfl, Scheme::Full] {
        let cfg = ExperimentConfig {
            rounds: 3,
            arena: Arena::new(2500.0, 2500.0).unwrap(),
            ..small_cfg(scheme, 8)
        };
        let mut sim = Simulation::new(cfg.clone(), &train, &test).unwrap();
        for _ in 0..cfg.rounds {
            let report = sim.run_round().unwrap();
            let nodes = sim.nodes();
            let mut expected_energy = vec![0.0; 8];
            let mut received = vec![0usize; 8];
            for (i, decision) in report.decisions.iter().enumerate() {
                let Some(decision) = decision else {
                    assert!(report.graph.neighbors(i).is_empty());
                    continue;
                };
                assert_eq!(report.metrics.nodes[i].num_selected, decision.selected.len());
                for &k in &decision.selected {
                    assert!(report.graph.contains_edge(i, k));
                    received[k] += 1;
                    let link = link_params(&nodes[i].radio, &nodes[k].radio);
                    let d = link_distance(nodes[i].position().distance(&nodes[k].position()));
                    expected_energy[i] += oracle_energy(&link, d, cfg.payload_bits);
                }
            }
            assert_eq!(report.deliveries.len(), received.iter().sum::<usize>());
            for (i, m) in report.metrics.nodes.iter().enumerate() {
                assert_eq!(m.num_received, received[i]);
                let e = expected_energy[i];
                assert!((m.tx_energy_j - e).abs() <= 1e-10 * e.max(1e-300), "{} vs {e}", m.tx_energy_j);
                let gain: f64 = report.deliveries.iter().filter(|d| d.sender == i).map(|d| d.raw_gain).sum();
                assert_eq!(m.delivered_gain, gain);
            }
            let from_deliveries: f64 = report.deliveries.iter().map(|d| d.energy_j).sum();
            assert!((report.metrics.total_energy() - from_deliveries).abs() <= 1e-12 * from_deliveries.max(1e-300));
        }
    }
}

#[test]
fn full_sends_to_every_neighbor_and_ocdfl_to_a_subset() {
    let (train, test) = small_data(7);
    let mut full = Simulation::new(small_cfg(Scheme::Full, 10), &train, &test).unwrap();
    let mut ocdfl = Simulation::new(small_cfg(Scheme::Ocdfl, 10), &train, &test).unwrap();
    for _ in 0..3 {
        let f = full.run_round().unwrap();
        let o = ocdfl.run_round().unwrap();
        // same seed, same mobility
        assert_eq!(f.graph, o.graph);
        for i in 0..10 {
            assert_eq!(f.metrics.nodes[i].num_selected, f.graph.degree(i));
            let sel = o.metrics.nodes[i].num_selected;
            let skipped = o.decisions[i].as_ref().is_none_or(|d| d.skipped);
            assert!(sel <= o.graph.degree(i));
            assert_eq!(sel == 0, skipped);
        }
    }
}

#[test]
fn runs_are_bitwise_reproducible() {
    let (train, test) = small_data(8);
    let cfg = small_cfg(Scheme::Ocdfl, 6);
    let a = run_experiment(&cfg, &train, &test).unwrap();
    let b = run_experiment(&cfg, &train, &test).unwrap();
    assert_eq!(a, b);
    let c = run_experiment(&ExperimentConfig { seed: 12, ..cfg }, &train, &test).unwrap();
    assert_ne!(a.final_models, c.final_models);
}

#[test]
fn errors_carry_round_and_node() {
    let (train, test) = small_data(9);
    let cfg = ExperimentConfig {
        train: TrainConfig { learning_rate: 1e300, local_epochs: 1, batch_size: 10 },
        ..small_cfg(Scheme::None, 2)
    };
    match run_experiment(&cfg, &train, &test) {
        Err(Error::InRound { round: 1, node: 0, source }) => {
            assert!(matches!(*source, Error::Diverged { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn shared_init_starts_every_node_equal() {
    let (train, test) = small_data(10);
    let cfg = ExperimentConfig { shared_init: true, ..small_cfg(Scheme::None, 3) };
    let sim = Simulation::new(cfg, &train, &test).unwrap();
    assert!(sim.nodes().iter().all(|n| n.model == sim.nodes()[0].model));
    assert!(sim.nodes().iter().all(|n| n.shard.len() == 480 / 3));
}
