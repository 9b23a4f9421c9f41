use ocdfl_core::datagen::{make_synthetic, partition_dirichlet, DirichletSpec};
use ocdfl_core::engine::{synthetic_data, SyntheticSpec};
use ocdfl_core::learner::{evaluate, init_model, local_update, Layout, TrainConfig};
use ocdfl_core::rng::{stream, Stream};

#[test]
fn one_epoch_lowers_shard_loss_on_the_default_task() {
    let (train, _) = synthetic_data(&SyntheticSpec::default(), 1).unwrap();
    let layout = Layout::mlp(32, &[64], 10).unwrap();
    let cfg = TrainConfig { local_epochs: 1, ..TrainConfig::default() };
    let spec = DirichletSpec { alpha: 100.0, num_nodes: 20, num_classes: 10 };
    let shards = partition_dirichlet(&train, &spec, &mut stream(1, Stream::Partition, 0)).unwrap().shards;
    let mut decreased = 0;
    for seed in 0..100u64 {
        let shard = &shards[seed as usize % shards.len()].indices;
        let model = init_model(&layout, &mut stream(seed, Stream::ModelInit, 0));
        let before = evaluate(&model, &train, Some(shard)).unwrap().loss;
        let after = local_update(&model, &train, shard, &cfg, &mut stream(seed, Stream::Training, 0)).unwrap();
        if evaluate(&after, &train, Some(shard)).unwrap().loss < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 95, "{decreased}/100");
}

#[test]
fn well_separated_binary_task_is_linearly_solvable() {
    let mut rng = stream(3, Stream::Synthetic, 0);
    let data = make_synthetic(3000, 16, 2, 8.0, &mut rng).unwrap();
    let (train, test) = data.split_tail(1000);
    let layout = Layout::mlp(16, &[], 2).unwrap();
    let cfg = TrainConfig { learning_rate: 0.1, local_epochs: 5, batch_size: 20 };
    let idx: Vec<usize> = (0..train.len()).collect();
    let model = local_update(&init_model(&layout, &mut stream(3, Stream::ModelInit, 0)), &train, &idx, &cfg, &mut stream(3, Stream::Training, 0)).unwrap();
    let acc = evaluate(&model, &test, None).unwrap().accuracy;
    assert!(acc > 0.99, "{acc}");
}

#[test]
fn zero_separation_is_chance_level() {
    let mut rng = stream(4, Stream::Synthetic, 0);
    let data = make_synthetic(6000, 8, 4, 0.0, &mut rng).unwrap();
    let (train, test) = data.split_tail(2000);
    let layout = Layout::mlp(8, &[16], 4).unwrap();
    let cfg = TrainConfig { learning_rate: 0.1, local_epochs: 3, batch_size: 20 };
    let idx: Vec<usize> = (0..train.len()).collect();
    let model = local_update(&init_model(&layout, &mut stream(4, Stream::ModelInit, 0)), &train, &idx, &cfg, &mut stream(4, Stream::Training, 0)).unwrap();
    let acc = evaluate(&model, &test, None).unwrap().accuracy;
    assert!((acc - 0.25).abs() < 0.04, "{acc}");
}
