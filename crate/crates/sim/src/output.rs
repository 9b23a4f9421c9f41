//! Files the driver writes: metrics CSV, run manifest, selection instances,
//! and model checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ocdfl_core::engine::RoundMetrics;
use ocdfl_core::learner::{decode_checkpoint, encode_checkpoint, ModelParams};
use ocdfl_core::selector::SelectionInstance;
use serde::Serialize;

use crate::config::FileConfig;
use crate::error::SimError;

pub const METRICS_HEADER: &str =
    "round,node,scheme,loss,accuracy,tx_energy_j,delivered_gain,num_selected,num_received";

/// Streams metrics rows to a CSV file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, SimError> {
        let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<(), SimError> {
        writeln!(self.out, "{s}").map_err(|e| SimError::io(&self.path, e))
    }

    pub fn write_round(&mut self, round: &RoundMetrics) -> Result<(), SimError> {
        let text = metrics_rows(round);
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| SimError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), SimError> {
        self.out.flush().map_err(|e| SimError::io(&self.path, e))
    }
}

/// CSV rows for one round, node order, no header. Floats use the shortest
/// representation that reads back to the same value.
pub fn metrics_rows(round: &RoundMetrics) -> String {
    let mut s = String::new();
    for n in &round.nodes {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            round.round,
            n.node,
            round.scheme,
            n.loss,
            n.accuracy,
            n.tx_energy_j,
            n.delivered_gain,
            n.num_selected,
            n.num_received
        )
        .expect("writing to a String");
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo<'a>,
    config: &'a FileConfig,
}

#[derive(Serialize)]
struct RunInfo<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    outputs: &'a [String],
}

/// Writes `manifest.toml`: what ran, with which seed, by which version, and
/// the full resolved config. Passing the manifest back as `--config`
/// reproduces the run.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &FileConfig,
    outputs: &[String],
) -> Result<PathBuf, SimError> {
    let m = Manifest {
        run: RunInfo {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.experiment.seed,
            outputs,
        },
        config: cfg,
    };
    let text = toml::to_string(&m).expect("manifest serializes");
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| SimError::io(&path, e))?;
    Ok(path)
}

/// Text form of a selection instance: `#` comment lines, then one
/// `id,gain,energy` line per neighbor.
pub fn format_instance(inst: &SelectionInstance, comment: &str) -> String {
    let mut s = String::new();
    for line in comment.lines() {
        writeln!(s, "# {line}").expect("writing to a String");
    }
    s.push_str("# id,gain,energy\n");
    for ((id, g), e) in inst.neighbor_ids().iter().zip(inst.gains()).zip(inst.energies()) {
        writeln!(s, "{id},{g},{e}").expect("writing to a String");
    }
    s
}

pub fn parse_instance(text: &str, what: &str) -> Result<SelectionInstance, SimError> {
    let bad = |line: usize, why: &str| SimError::Validation(format!("{what}:{line}: {why}"));
    let (mut ids, mut gains, mut energies) = (Vec::new(), Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad(i + 1, "expected id,gain,energy"));
        }
        ids.push(fields[0].parse().map_err(|_| bad(i + 1, "bad id"))?);
        gains.push(fields[1].parse().map_err(|_| bad(i + 1, "bad gain"))?);
        energies.push(fields[2].parse().map_err(|_| bad(i + 1, "bad energy"))?);
    }
    SelectionInstance::new(ids, gains, energies).map_err(|e| SimError::Validation(format!("{what}: {e}")))
}

pub fn save_checkpoint(path: &Path, model: &ModelParams) -> Result<(), SimError> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| SimError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, SimError> {
    let bytes = fs::read(path).map_err(|e| SimError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| SimError::Validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ocdfl_core::engine::{NodeRoundMetrics, Scheme};

    #[test]
    fn rows_follow_the_header() {
        let r = RoundMetrics {
            round: 3,
            scheme: Scheme::Full,
            nodes: vec![NodeRoundMetrics {
                node: 1,
                loss: 0.5,
                accuracy: 0.875,
                tx_energy_j: 1e-4,
                delivered_gain: 0.0,
                num_selected: 2,
                num_received: 1,
            }],
        };
        assert_eq!(metrics_rows(&r), "3,1,full,0.5,0.875,0.0001,0,2,1\n");
        assert_eq!(METRICS_HEADER.split(',').count(), 9);
    }

    #[test]
    fn instance_text_round_trips_exactly() {
        let inst = SelectionInstance::new(vec![4, 9], vec![0.1 + 0.2, 0.0], vec![1.0 / 3.0, 1.0]).unwrap();
        let text = format_instance(&inst, "round 2 node 7");
        assert!(text.starts_with("# round 2 node 7\n"));
        assert_eq!(parse_instance(&text, "x").unwrap(), inst);
        assert!(parse_instance("1,0.5\n", "x").is_err());
        assert!(parse_instance("# nothing\n", "x").is_err());
        assert!(parse_instance("1,0.5,0\n", "x").is_err());
    }
}
