//! The `ocdfl` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ocdfl_core::datagen::Dataset;
use ocdfl_core::engine::{run_experiment_with, ExperimentConfig, ExperimentOutcome, Scheme, Simulation};
use ocdfl_core::gain::{check_averaging_bounds, random_triple, stronger_model_harmed};
use ocdfl_core::rng::{stream, Stream};
use ocdfl_core::selector::{best_subset_exhaustive, optimize, uniform_instance, SelectionInstance};

use crate::config::{DataSource, FileConfig, SchemeName};
use crate::data;
use crate::error::SimError;
use crate::output::{self, MetricsWriter};

#[derive(Debug, Parser)]
#[command(name = "ocdfl", version, about = "Energy-aware peer selection for decentralized federated learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment per scheme and write metrics CSVs.
    Run(RunArgs),
    /// Repeat the ocdfl scheme over a grid of theta values.
    SweepTheta(SweepArgs),
    /// Check the averaging inequalities on random vector triples.
    Prop1Suite(Prop1Args),
    /// Compare the optimizer with exhaustive search on a dumped instance.
    SelectorOracle(OracleArgs),
    /// Write one node's selection instance from a run, or a random one.
    DumpInstance(DumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SchemeArg {
    Ocdfl,
    Full,
    None,
    /// All three schemes on the same seed.
    All,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML config file (or a manifest from an earlier run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub dataset: Option<DataSource>,
    #[arg(long)]
    pub idx_images: Option<PathBuf>,
    #[arg(long)]
    pub idx_labels: Option<PathBuf>,
    /// Output directory; nothing is written anywhere else.
    #[arg(long, default_value = "ocdfl-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Also write every node's final model as a checkpoint.
    #[arg(long)]
    pub save_models: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Comma-separated theta values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,0.005,0.01,0.02,0.05,0.1")]
    pub grid: Vec<f64>,
    /// Sweep over this many random instances instead of full experiments.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Neighbors per random instance.
    #[arg(long, default_value_t = 30)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct Prop1Args {
    #[arg(long, default_value_t = 100_000)]
    pub triples: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,10,50,1000")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Instance file in the `id,gain,energy` format.
    #[arg(long)]
    pub instance: PathBuf,
    /// Selector settings come from here; theta comes from `--theta`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta: f64,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// 1-based round whose instance to dump.
    #[arg(long, default_value_t = 1)]
    pub round: usize,
    #[arg(long, default_value_t = 0)]
    pub node: usize,
    /// Write a random instance with this many neighbors instead.
    #[arg(long, value_name = "K")]
    pub random: Option<usize>,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), SimError> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::SweepTheta(a) => cmd_sweep(a),
        Command::Prop1Suite(a) => cmd_prop1(a),
        Command::SelectorOracle(a) => cmd_oracle(a),
        Command::DumpInstance(a) => cmd_dump(a),
    }
}

impl ExperimentArgs {
    /// Config file, then `--set` overrides, then the dedicated flags.
    fn resolve(&self, scheme: Option<SchemeArg>) -> Result<FileConfig, SimError> {
        let mut cfg = FileConfig::load(self.config.as_deref(), &self.overrides)?;
        let e = &mut cfg.experiment;
        if let Some(s) = scheme {
            e.scheme = match s {
                SchemeArg::Ocdfl | SchemeArg::All => SchemeName::Ocdfl,
                SchemeArg::Full => SchemeName::Full,
                SchemeArg::None => SchemeName::None,
            };
        }
        if let Some(t) = self.theta {
            e.theta = t;
        }
        if let Some(a) = self.alpha {
            e.alpha = a;
        }
        if let Some(r) = self.rounds {
            e.rounds = r;
        }
        if let Some(s) = self.seed {
            e.seed = s;
        }
        if let Some(d) = self.dataset {
            cfg.data.source = d;
        }
        if let Some(p) = &self.idx_images {
            cfg.data.idx_images = Some(p.clone());
        }
        if let Some(p) = &self.idx_labels {
            cfg.data.idx_labels = Some(p.clone());
        }
        // naming IDX files on the command line implies the IDX source
        if self.dataset.is_none() && (self.idx_images.is_some() || self.idx_labels.is_some()) {
            cfg.data.source = DataSource::Idx;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(path: &Path) -> Result<&Path, SimError> {
    fs::create_dir_all(path).map_err(|e| SimError::io(path, e))?;
    Ok(path)
}

/// Runs one experiment, streaming its metrics to `csv`.
fn run_to_csv(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    csv: &Path,
) -> Result<ExperimentOutcome, SimError> {
    let mut writer = MetricsWriter::create(csv)?;
    let mut write_err = None;
    let outcome = run_experiment_with(cfg, train, test, |report| {
        if write_err.is_none() {
            write_err = writer.write_round(&report.metrics).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    writer.finish()?;
    Ok(outcome)
}

fn median(values: &[f64]) -> f64 {
    ocdfl_core::math::median(values).unwrap_or(0.0)
}

fn cmd_run(a: RunArgs) -> Result<(), SimError> {
    let file_cfg = a.exp.resolve(a.scheme)?;
    let base = file_cfg.experiment_config()?;
    let (train, test) = data::load(&file_cfg.data, base.seed)?;
    let dir = out_dir(&a.exp.out)?;
    let schemes: Vec<Scheme> = match a.scheme {
        Some(SchemeArg::All) => Scheme::ALL.to_vec(),
        _ => vec![base.scheme],
    };
    let results: Vec<Result<ExperimentOutcome, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = schemes
            .iter()
            .map(|&scheme| {
                let cfg = ExperimentConfig { scheme, ..base.clone() };
                let csv = dir.join(format!("metrics_{scheme}.csv"));
                let (train, test) = (&train, &test);
                s.spawn(move || run_to_csv(&cfg, train, test, &csv))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
    });
    let mut outputs = Vec::new();
    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    for (scheme, result) in schemes.iter().zip(results) {
        let outcome = result?;
        outputs.push(format!("metrics_{scheme}.csv"));
        if a.save_models {
            let models_dir = dir.join(format!("models_{scheme}"));
            fs::create_dir_all(&models_dir).map_err(|e| SimError::io(&models_dir, e))?;
            for (i, m) in outcome.final_models.iter().enumerate() {
                output::save_checkpoint(&models_dir.join(format!("node_{i:03}.ckpt")), m)?;
            }
            outputs.push(format!("models_{scheme}/"));
        }
        let _ = writeln!(
            stdout,
            "{scheme}: final mean accuracy {:.4}, total tx energy {:.6e} J, mean peers/round {:.3}",
            outcome.final_mean_accuracy(),
            outcome.total_energy(),
            outcome.mean_selected()
        );
    }
    output::write_manifest(dir, "run", &file_cfg, &outputs)?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), SimError> {
    if a.grid.is_empty() || a.grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(SimError::Validation("--grid values must be finite and >= 0".into()));
    }
    let mut file_cfg = a.exp.resolve(Some(SchemeArg::Ocdfl))?;
    let base = file_cfg.experiment_config()?;
    let dir = out_dir(&a.exp.out)?;
    let mut outputs = Vec::new();
    let medians: Vec<f64> = match a.instances {
        Some(n) => {
            if n == 0 || a.k == 0 {
                return Err(SimError::Validation("--instances and --k must be positive".into()));
            }
            let mut rng = stream(base.seed, Stream::Instances, 0);
            let insts = (0..n)
                .map(|_| uniform_instance(a.k, &mut rng))
                .collect::<Result<Vec<SelectionInstance>, _>>()?;
            a.grid
                .iter()
                .map(|&theta| {
                    let sel = ocdfl_core::selector::SelectorConfig { theta, ..base.selector };
                    let counts: Vec<f64> = insts.iter().map(|i| optimize(i, &sel).num_selected() as f64).collect();
                    median(&counts)
                })
                .collect()
        }
        None => {
            let (train, test) = data::load(&file_cfg.data, base.seed)?;
            let names: Vec<String> = a.grid.iter().map(|t| format!("metrics_theta_{t}.csv")).collect();
            let results: Vec<Result<ExperimentOutcome, SimError>> = std::thread::scope(|s| {
                let handles: Vec<_> = a
                    .grid
                    .iter()
                    .zip(&names)
                    .map(|(&theta, name)| {
                        let mut cfg = base.clone();
                        cfg.selector.theta = theta;
                        let csv = dir.join(name);
                        let (train, test) = (&train, &test);
                        s.spawn(move || run_to_csv(&cfg, train, test, &csv))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
            });
            let mut medians = Vec::new();
            for (r, name) in results.into_iter().zip(names) {
                let outcome = r?;
                let counts: Vec<f64> = outcome
                    .rounds
                    .iter()
                    .flat_map(|r| r.nodes.iter().map(|n| n.num_selected as f64))
                    .collect();
                medians.push(median(&counts));
                outputs.push(name);
            }
            medians
        }
    };
    let mut summary = String::from("theta,median_selected\n");
    for (t, m) in a.grid.iter().zip(&medians) {
        summary.push_str(&format!("{t},{m}\n"));
        println!("theta {t}: median selected {m}");
    }
    let path = dir.join("theta_sweep.csv");
    fs::write(&path, summary).map_err(|e| SimError::io(&path, e))?;
    outputs.push("theta_sweep.csv".into());
    // the manifest records the grid's first value; the summary has all of them
    file_cfg.experiment.theta = a.grid[0];
    output::write_manifest(dir, "sweep-theta", &file_cfg, &outputs)?;
    Ok(())
}

/// Outcome of the averaging-inequality suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Prop1Report {
    pub triples: usize,
    /// Triples with at least one violated inequality.
    pub violations: usize,
    /// Triples where averaging moved the stronger model away from the optimum.
    pub stronger_harmed: usize,
}

/// Draws `total` triples spread evenly over `dims` and checks each.
pub fn prop1_suite(total: usize, dims: &[usize], seed: u64) -> Result<Prop1Report, SimError> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(SimError::Validation("--dims must be positive".into()));
    }
    let mut report = Prop1Report::default();
    for (j, &dim) in dims.iter().enumerate() {
        let count = total / dims.len() + usize::from(j < total % dims.len());
        let mut rng = stream(seed, Stream::Instances, dim as u64);
        for _ in 0..count {
            let (w_star, w1, w2) = random_triple(dim, &mut rng);
            let bounds = check_averaging_bounds(&w_star, &w1, &w2)?;
            report.triples += 1;
            report.violations += usize::from(!bounds.all());
            report.stronger_harmed += usize::from(stronger_model_harmed(&w_star, &w1, &w2));
        }
    }
    Ok(report)
}

fn cmd_prop1(a: Prop1Args) -> Result<(), SimError> {
    let r = prop1_suite(a.triples, &a.dims, a.seed)?;
    println!("{} violations / {} triples", r.violations, r.triples);
    println!("stronger model harmed by averaging in {} triples", r.stronger_harmed);
    if r.violations > 0 {
        return Err(SimError::CheckFailed(format!("{} triples violate the bounds", r.violations)));
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<(), SimError> {
    if !(a.theta >= 0.0 && a.theta.is_finite()) {
        return Err(SimError::Validation("--theta must be finite and >= 0".into()));
    }
    let cfg = FileConfig::load(a.config.as_deref(), &a.overrides)?;
    let mut sel = cfg.experiment_config()?.selector;
    sel.theta = a.theta;
    let text = fs::read_to_string(&a.instance).map_err(|e| SimError::io(&a.instance, e))?;
    let inst = output::parse_instance(&text, &a.instance.display().to_string())?;
    let decision = optimize(&inst, &sel);
    let (best, ratio) = best_subset_exhaustive(&inst).map_err(|e| SimError::Validation(e.to_string()))?;
    println!("optimizer: {:?}", decision.selected);
    println!("brute-force: {best:?} (ratio {ratio})");
    if decision.selected != best {
        return Err(SimError::CheckFailed("optimizer and brute-force sets differ".into()));
    }
    Ok(())
}

fn cmd_dump(a: DumpArgs) -> Result<(), SimError> {
    let file_cfg = a.exp.resolve(a.scheme)?;
    let cfg = file_cfg.experiment_config()?;
    let dir = out_dir(&a.exp.out)?;
    let (inst, name, comment) = match a.random {
        Some(k) => {
            if k == 0 {
                return Err(SimError::Validation("--random needs at least one neighbor".into()));
            }
            let inst = uniform_instance(k, &mut stream(cfg.seed, Stream::Instances, 0))?;
            let name = format!("instance_random_k{k}_s{}.txt", cfg.seed);
            (inst, name, format!("random instance, k {k}, seed {}", cfg.seed))
        }
        None => {
            if a.round == 0 || a.round > cfg.rounds {
                return Err(SimError::Validation(format!("--round must lie in 1..={}", cfg.rounds)));
            }
            if a.node >= cfg.num_nodes {
                return Err(SimError::Validation(format!("--node must be below {}", cfg.num_nodes)));
            }
            let (train, test) = data::load(&file_cfg.data, cfg.seed)?;
            let mut sim = Simulation::new(cfg.clone(), &train, &test)?;
            let mut report = sim.run_round()?;
            while report.metrics.round < a.round {
                report = sim.run_round()?;
            }
            let inst = report.instances.swap_remove(a.node).ok_or_else(|| {
                SimError::CheckFailed(format!("node {} has no neighbors in round {}", a.node, a.round))
            })?;
            let name = format!("instance_r{}_n{}.txt", a.round, a.node);
            let comment = format!(
                "scheme {}, seed {}, round {}, node {}",
                cfg.scheme, cfg.seed, a.round, a.node
            );
            (inst, name, comment)
        }
    };
    let path = dir.join(&name);
    fs::write(&path, output::format_instance(&inst, &comment)).map_err(|e| SimError::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}
