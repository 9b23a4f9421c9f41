//! The round loop.
//!
//! Every round: move nodes, rebuild the neighbor graph, train locally, share
//! losses as zero-cost beacons, pick peers, pay transmit energy for each
//! (sender, peer) pair, deliver models, average, and evaluate on the shared
//! test set. Rounds are barrier-synchronized: models sent in a round are the
//! senders' post-training models, and each node averages only after every
//! delivery of the round has landed.

use alloc::vec::Vec;

use crate::datagen::{partition_dirichlet, Dataset, DirichletSpec, Shard, SyntheticTask};
use crate::gain::{knowledge_gain, GainParams};
use crate::learner::{evaluate, fed_average, init_model, local_update, Layout, ModelParams, TrainConfig};
use crate::radio::{self, RadioParams};
use crate::rng::{self, SimRng, Stream};
use crate::selector::{self, BaselinePolicy, SelectionDecision, SelectionInstance, SelectorConfig};
use crate::topology::{build_graph_with_ranges, step_mobility, Arena, MobilityConfig, Mover, NeighborGraph, Position};
use crate::{Error, NodeId, Result};

/// Peer selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Gain-to-energy optimized selection.
    Ocdfl,
    /// Send to every neighbor.
    Full,
    /// Never send.
    None,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ocdfl, Scheme::Full, Scheme::None];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Ocdfl => "ocdfl",
            Scheme::Full => "full",
            Scheme::None => "none",
        }
    }
}

impl core::fmt::Display for Scheme {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ocdfl" => Ok(Scheme::Ocdfl),
            "full" => Ok(Scheme::Full),
            "none" => Ok(Scheme::None),
            other => Err(Error::invalid(
                "scheme",
                alloc::format!("unknown scheme {other:?} (ocdfl, full, none)"),
            )),
        }
    }
}

/// Which loss a node beacons to its neighbors for gain computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainLoss {
    /// Loss on the node's own shard after local training.
    LocalShard,
    /// Loss on the shared test set after local training.
    GlobalTest,
}

/// Per-node radio draws and shared link constants. Powers in dBm are drawn
/// uniformly in dB and converted once per node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioSetup {
    pub p_tx_dbm: (f64, f64),
    /// Hz
    pub bandwidth_hz: (f64, f64),
    /// linear
    pub g_tx: f64,
    /// linear
    pub g_rx: f64,
    pub freq: f64,
    pub env_exp: f64,
    /// W/Hz
    pub noise_density: f64,
    pub d_max: f64,
    pub light_speed: f64,
}

impl Default for RadioSetup {
    fn default() -> Self {
        Self {
            p_tx_dbm: (10.0, 21.0),
            bandwidth_hz: (5e6, 20e6),
            g_tx: 1.0,
            g_rx: 1.0,
            freq: 1e9,
            env_exp: 2.0,
            noise_density: radio::dbm_per_hz_to_watts_per_hz(-174.0),
            d_max: 2000.0,
            light_speed: radio::SPEED_OF_LIGHT,
        }
    }
}

impl RadioSetup {
    fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> RadioParams {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let p_dbm = draw(rng, self.p_tx_dbm);
        let bw = draw(rng, self.bandwidth_hz);
        RadioParams {
            p_tx: radio::dbm_to_watts(p_dbm),
            bandwidth: bw,
            g_tx: self.g_tx,
            g_rx: self.g_rx,
            freq: self.freq,
            env_exp: self.env_exp,
            noise_density: self.noise_density,
            d_max: self.d_max,
            light_speed: self.light_speed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("p_tx_dbm", self.p_tx_dbm), ("bandwidth_hz", self.bandwidth_hz)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(name, "range must be finite with min <= max"));
            }
        }
        // a representative node must be valid at both ends of the draw ranges
        for (p, b) in [(self.p_tx_dbm.0, self.bandwidth_hz.0), (self.p_tx_dbm.1, self.bandwidth_hz.1)] {
            RadioParams {
                p_tx: radio::dbm_to_watts(p),
                bandwidth: b,
                g_tx: self.g_tx,
                g_rx: self.g_rx,
                freq: self.freq,
                env_exp: self.env_exp,
                noise_density: self.noise_density,
                d_max: self.d_max,
                light_speed: self.light_speed,
            }
            .validate()?;
        }
        Ok(())
    }
}

/// Shape of the synthetic classification task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub train_samples: usize,
    pub test_samples: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Distance between any two class centers, in within-class standard deviations.
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_samples: 4000,
            test_samples: 1000,
            feature_dim: 32,
            num_classes: 10,
            separation: 4.0,
        }
    }
}

/// Train and test sets from one synthetic task, seeded from the experiment seed.
pub fn synthetic_data(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = rng::stream(seed, Stream::Synthetic, 0);
    let task = SyntheticTask::new(spec.feature_dim, spec.num_classes, spec.separation, &mut rng)?;
    let train = task.sample(spec.train_samples, &mut rng);
    let test = task.sample(spec.test_samples, &mut rng);
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_nodes: usize,
    pub rounds: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub gain: GainParams,
    /// Carries `theta`.
    pub selector: SelectorConfig,
    pub gain_loss: GainLoss,
    pub radio: RadioSetup,
    /// Bits per transmitted model.
    pub payload_bits: f64,
    pub arena: Arena,
    pub mobility: MobilityConfig,
    /// Seconds of movement per round.
    pub round_duration: f64,
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Start every node from the same initial model.
    pub shared_init: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_nodes: 20,
            rounds: 30,
            scheme: Scheme::Ocdfl,
            seed: 1,
            gain: GainParams { mu: 2.0 },
            selector: SelectorConfig::default(),
            gain_loss: GainLoss::LocalShard,
            radio: RadioSetup::default(),
            payload_bits: 87_000.0,
            arena: Arena::new(5000.0, 5000.0).expect("positive"),
            mobility: MobilityConfig::default(),
            round_duration: 60.0,
            alpha: 100.0,
            hidden: alloc::vec![64],
            train: TrainConfig::default(),
            shared_init: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be at least 1"));
        }
        if self.num_nodes == 0 {
            return Err(Error::invalid("num_nodes", "must be at least 1"));
        }
        if !(self.payload_bits > 0.0 && self.payload_bits.is_finite()) {
            return Err(Error::invalid("payload_bits", "must be positive"));
        }
        if !(self.round_duration >= 0.0 && self.round_duration.is_finite()) {
            return Err(Error::invalid("round_duration", "must be finite and >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be positive and finite"));
        }
        GainParams::new(self.gain.mu)?;
        self.selector.validate()?;
        self.radio.validate()?;
        self.mobility.validate()?;
        self.train.validate()
    }

    pub fn layout(&self, feature_dim: usize, num_classes: usize) -> Result<Layout> {
        Layout::mlp(feature_dim, &self.hidden, num_classes)
    }
}

/// What one node did and scored in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRoundMetrics {
    pub node: NodeId,
    /// Test loss after aggregation.
    pub loss: f64,
    /// Test accuracy after aggregation.
    pub accuracy: f64,
    /// Joules spent sending this node's model.
    pub tx_energy_j: f64,
    /// Sum of raw gains over this node's deliveries.
    pub delivered_gain: f64,
    pub num_selected: usize,
    pub num_received: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub scheme: Scheme,
    pub nodes: Vec<NodeRoundMetrics>,
}

impl RoundMetrics {
    pub fn total_energy(&self) -> f64 {
        self.nodes.iter().map(|n| n.tx_energy_j).sum()
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.nodes.iter().map(|n| n.accuracy).sum::<f64>() / self.nodes.len() as f64
    }

    pub fn mean_loss(&self) -> f64 {
        self.nodes.iter().map(|n| n.loss).sum::<f64>() / self.nodes.len() as f64
    }

    pub fn mean_selected(&self) -> f64 {
        self.nodes.iter().map(|n| n.num_selected as f64).sum::<f64>() / self.nodes.len() as f64
    }

    pub fn total_delivered_gain(&self) -> f64 {
        self.nodes.iter().map(|n| n.delivered_gain).sum()
    }
}

/// A transmission that happened this round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub sender: NodeId,
    pub receiver: NodeId,
    /// Costed link length, see [`link_distance`].
    pub distance: f64,
    pub energy_j: f64,
    pub raw_gain: f64,
}

/// Everything a round produced: metrics plus the inputs and outcomes of
/// selection, for replay and auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub metrics: RoundMetrics,
    /// Selection instance per node; `None` when the node had no neighbors.
    pub instances: Vec<Option<SelectionInstance>>,
    pub decisions: Vec<Option<SelectionDecision>>,
    pub deliveries: Vec<Delivery>,
    pub graph: NeighborGraph,
    /// Beaconed losses used for gains.
    pub beacon_losses: Vec<f64>,
}

/// Models waiting to be averaged, per receiver.
#[derive(Debug, Clone, Default)]
pub struct Mailbox {
    pending: Vec<Vec<(NodeId, ModelParams)>>,
}

impl Mailbox {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            pending: alloc::vec![Vec::new(); num_nodes],
        }
    }

    pub fn deliver(&mut self, receiver: NodeId, sender: NodeId, model: ModelParams) {
        self.pending[receiver].push((sender, model));
    }

    pub fn received(&self, node: NodeId) -> &[(NodeId, ModelParams)] {
        &self.pending[node]
    }

    /// Empties every inbox and returns their contents.
    pub fn drain(&mut self) -> Vec<Vec<(NodeId, ModelParams)>> {
        let n = self.pending.len();
        core::mem::replace(&mut self.pending, alloc::vec![Vec::new(); n])
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub mover: Mover,
    pub radio: RadioParams,
    pub model: ModelParams,
    pub shard: Shard,
    rng: SimRng,
}

impl NodeState {
    pub fn position(&self) -> Position {
        self.mover.position
    }
}

/// Links shorter than this are costed as if they were this long (m). Far-field
/// path loss has no meaning closer in, and co-located nodes would otherwise
/// have an undefined energy.
pub const MIN_LINK_DISTANCE: f64 = 1.0;

/// Distance used for energy accounting of a link `d` meters long.
pub fn link_distance(d: f64) -> f64 {
    d.max(MIN_LINK_DISTANCE)
}

/// Radio parameters for `sender -> receiver`: the sender's transmit side and
/// the receiver's antenna gain.
pub fn link_params(sender: &RadioParams, receiver: &RadioParams) -> RadioParams {
    RadioParams {
        g_rx: receiver.g_rx,
        ..*sender
    }
}

/// A running experiment.
pub struct Simulation<'a> {
    cfg: ExperimentConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    nodes: Vec<NodeState>,
    mobility_rng: SimRng,
    mailbox: Mailbox,
    round: usize,
    partition_fallbacks: usize,
}

impl<'a> Simulation<'a> {
    /// Places nodes, draws radios, partitions `train` by Dir(alpha), and
    /// initializes models, all from `cfg.seed`.
    pub fn new(cfg: ExperimentConfig, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let spec = DirichletSpec {
            alpha: cfg.alpha,
            num_nodes: cfg.num_nodes,
            num_classes: train.num_classes(),
        };
        let partition = partition_dirichlet(train, &spec, &mut rng::stream(cfg.seed, Stream::Partition, 0))?;
        let layout = cfg.layout(train.feature_dim(), train.num_classes())?;
        let models = if cfg.shared_init {
            let m = init_model(&layout, &mut rng::stream(cfg.seed, Stream::ModelInit, 0));
            alloc::vec![m; cfg.num_nodes]
        } else {
            (0..cfg.num_nodes)
                .map(|i| init_model(&layout, &mut rng::stream(cfg.seed, Stream::ModelInit, i as u64)))
                .collect()
        };
        let fallbacks = partition.fallbacks;
        let mut sim = Self::from_parts(cfg, train, test, partition.shards, models)?;
        sim.partition_fallbacks = fallbacks;
        Ok(sim)
    }

    /// Builds a simulation from explicit shards and starting models.
    pub fn from_parts(
        cfg: ExperimentConfig,
        train: &'a Dataset,
        test: &'a Dataset,
        shards: Vec<Shard>,
        models: Vec<ModelParams>,
    ) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.num_nodes || models.len() != cfg.num_nodes {
            return Err(Error::invalid("simulation", "need one shard and one model per node"));
        }
        if test.is_empty() {
            return Err(Error::EmptyData);
        }
        let bits = models[0].layout().serialized_bits();
        if bits as f64 != cfg.payload_bits {
            log::warn!(
                "model serializes to {bits} bits, energy accounting uses the configured {} bits",
                cfg.payload_bits
            );
        }
        let mut placement = rng::stream(cfg.seed, Stream::Placement, 0);
        let mut radio_rng = rng::stream(cfg.seed, Stream::Radio, 0);
        let nodes = shards
            .into_iter()
            .zip(models)
            .enumerate()
            .map(|(id, (shard, model))| NodeState {
                id,
                mover: Mover::random(&cfg.arena, &cfg.mobility, &mut placement),
                radio: cfg.radio.draw(&mut radio_rng),
                model,
                shard,
                rng: rng::stream(cfg.seed, Stream::Training, id as u64),
            })
            .collect();
        let mobility_rng = rng::stream(cfg.seed, Stream::Mobility, 0);
        Ok(Self {
            mailbox: Mailbox::new(cfg.num_nodes),
            cfg,
            train,
            test,
            nodes,
            mobility_rng,
            round: 0,
            partition_fallbacks: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Overrides node placement, e.g. for static topologies.
    pub fn set_movers(&mut self, movers: &[Mover]) {
        for (n, m) in self.nodes.iter_mut().zip(movers) {
            n.mover = *m;
        }
    }

    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    /// Nodes whose Dirichlet draw had to be rescaled during partitioning.
    pub fn partition_fallbacks(&self) -> usize {
        self.partition_fallbacks
    }

    pub fn into_models(self) -> Vec<ModelParams> {
        self.nodes.into_iter().map(|n| n.model).collect()
    }

    fn graph(&self) -> NeighborGraph {
        let positions: Vec<Position> = self.nodes.iter().map(NodeState::position).collect();
        let ranges: Vec<f64> = self.nodes.iter().map(|n| n.radio.d_max).collect();
        build_graph_with_ranges(&positions, &ranges)
    }

    /// Runs one round.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round + 1;
        let n = self.nodes.len();
        let cfg = &self.cfg;

        let mut movers: Vec<Mover> = self.nodes.iter().map(|s| s.mover).collect();
        step_mobility(&mut movers, &cfg.arena, &cfg.mobility, cfg.round_duration, &mut self.mobility_rng);
        for (s, m) in self.nodes.iter_mut().zip(movers) {
            s.mover = m;
        }
        let graph = self.graph();

        let train = self.train;
        let test = self.test;
        for s in self.nodes.iter_mut() {
            s.model = local_update(&s.model, train, &s.shard.indices, &cfg.train, &mut s.rng)
                .map_err(|e| e.in_round(round, s.id))?;
        }

        let beacon_losses = self
            .nodes
            .iter()
            .map(|s| {
                let r = match cfg.gain_loss {
                    GainLoss::LocalShard => evaluate(&s.model, train, Some(&s.shard.indices)),
                    GainLoss::GlobalTest => evaluate(&s.model, test, None),
                };
                r.map(|e| e.loss).map_err(|e| e.in_round(round, s.id))
            })
            .collect::<Result<Vec<f64>>>()?;

        let mut instances = Vec::with_capacity(n);
        let mut decisions = Vec::with_capacity(n);
        let mut deliveries = Vec::new();
        let mut metrics: Vec<NodeRoundMetrics> = (0..n)
            .map(|node| NodeRoundMetrics {
                node,
                loss: 0.0,
                accuracy: 0.0,
                tx_energy_j: 0.0,
                delivered_gain: 0.0,
                num_selected: 0,
                num_received: 0,
            })
            .collect();

        for i in 0..n {
            let neighbors = graph.neighbors(i);
            if neighbors.is_empty() {
                instances.push(None);
                decisions.push(None);
                continue;
            }
            let sender = &self.nodes[i];
            let mut gains = Vec::with_capacity(neighbors.len());
            let mut raw_gains = Vec::with_capacity(neighbors.len());
            let mut energies = Vec::with_capacity(neighbors.len());
            let mut distances = Vec::with_capacity(neighbors.len());
            for &k in neighbors {
                let g = knowledge_gain(beacon_losses[i], beacon_losses[k], &cfg.gain);
                let d = link_distance(sender.position().distance(&self.nodes[k].position()));
                let link = link_params(&sender.radio, &self.nodes[k].radio);
                let e = radio::scaled_energy(&link, d, cfg.payload_bits).map_err(|e| e.in_round(round, i))?;
                gains.push(g.scaled);
                raw_gains.push(g.raw);
                energies.push(e);
                distances.push(d);
            }
            let inst = SelectionInstance::new(neighbors.to_vec(), gains, energies)
                .map_err(|e| e.in_round(round, i))?;
            let decision = match cfg.scheme {
                Scheme::Ocdfl => selector::optimize(&inst, &cfg.selector),
                Scheme::Full => selector::baseline_policy(BaselinePolicy::Broadcast, &inst),
                Scheme::None => selector::baseline_policy(BaselinePolicy::Isolated, &inst),
            };
            for &k in &decision.selected {
                let slot = neighbors.binary_search(&k).expect("selected ids come from the neighborhood");
                let link = link_params(&sender.radio, &self.nodes[k].radio);
                let d = distances[slot];
                let energy = radio::tx_energy(&link, d, cfg.payload_bits)
                    .map_err(|e| e.in_round(round, i))?;
                metrics[i].tx_energy_j += energy;
                metrics[i].delivered_gain += raw_gains[slot];
                metrics[i].num_selected += 1;
                metrics[k].num_received += 1;
                deliveries.push(Delivery {
                    sender: i,
                    receiver: k,
                    distance: d,
                    energy_j: energy,
                    raw_gain: raw_gains[slot],
                });
                self.mailbox.deliver(k, i, sender.model.clone());
            }
            if decision.skipped {
                log::trace!("round {round}: node {i} has no neighbor to help, skipping");
            }
            instances.push(Some(inst));
            decisions.push(Some(decision));
        }

        let inboxes = self.mailbox.drain();
        let aggregated = self
            .nodes
            .iter()
            .zip(&inboxes)
            .map(|(s, inbox)| {
                let received: Vec<&ModelParams> = inbox.iter().map(|(_, m)| m).collect();
                fed_average(&s.model, &received).map_err(|e| e.in_round(round, s.id))
            })
            .collect::<Result<Vec<_>>>()?;
        for ((s, model), m) in self.nodes.iter_mut().zip(aggregated).zip(metrics.iter_mut()) {
            s.model = model;
            let eval = evaluate(&s.model, test, None).map_err(|e| e.in_round(round, s.id))?;
            m.loss = eval.loss;
            m.accuracy = eval.accuracy;
        }

        self.round = round;
        Ok(RoundReport {
            metrics: RoundMetrics {
                round,
                scheme: self.cfg.scheme,
                nodes: metrics,
            },
            instances,
            decisions,
            deliveries,
            graph,
            beacon_losses,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rounds: Vec<RoundMetrics>,
    pub final_models: Vec<ModelParams>,
    pub partition_fallbacks: usize,
}

impl ExperimentOutcome {
    pub fn total_energy(&self) -> f64 {
        self.rounds.iter().map(RoundMetrics::total_energy).sum()
    }

    pub fn final_mean_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, RoundMetrics::mean_accuracy)
    }

    /// Mean selected-peer count per node per round.
    pub fn mean_selected(&self) -> f64 {
        self.rounds.iter().map(RoundMetrics::mean_selected).sum::<f64>() / self.rounds.len().max(1) as f64
    }
}

/// Runs `cfg.rounds` rounds and returns their metrics plus the final models.
pub fn run_experiment(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, train, test, |_| {})
}

/// [`run_experiment`], calling `on_round` after each round.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<ExperimentOutcome> {
    let mut sim = Simulation::new(cfg.clone(), train, test)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let report = sim.run_round()?;
        on_round(&report);
        rounds.push(report.metrics);
    }
    let partition_fallbacks = sim.partition_fallbacks();
    Ok(ExperimentOutcome {
        rounds,
        final_models: sim.into_models(),
        partition_fallbacks,
    })
}
