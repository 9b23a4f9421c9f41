//! Experiment configuration files.
//!
//! A config is a TOML document with one table per concern:
//! `[experiment]`, `[data]`, `[radio]`, `[mobility]`, `[train]`, `[selector]`.
//! Every key is optional and unknown keys are rejected. Decibel quantities are
//! converted to linear units here and nowhere else.

use std::path::{Path, PathBuf};

use ocdfl_core::engine::{ExperimentConfig, GainLoss, RadioSetup, Scheme, SyntheticSpec};
use ocdfl_core::gain::GainParams;
use ocdfl_core::learner::TrainConfig;
use ocdfl_core::radio::{db_to_linear, dbm_per_hz_to_watts_per_hz, SPEED_OF_LIGHT};
use ocdfl_core::selector::{AscentRule, SelectorConfig};
use ocdfl_core::topology::{Arena, MobilityConfig};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub radio: RadioSection,
    pub mobility: MobilitySection,
    pub train: TrainSection,
    pub selector: SelectorSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            data: DataSection::default(),
            radio: RadioSection::default(),
            mobility: MobilitySection::default(),
            train: TrainSection::default(),
            selector: SelectorSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Ocdfl,
    Full,
    None,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Ocdfl => Scheme::Ocdfl,
            SchemeName::Full => Scheme::Full,
            SchemeName::None => Scheme::None,
        }
    }
}

impl From<Scheme> for SchemeName {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Ocdfl => SchemeName::Ocdfl,
            Scheme::Full => SchemeName::Full,
            Scheme::None => SchemeName::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainLossName {
    /// Own shard, after local training.
    Local,
    /// Shared test set, after local training.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub num_nodes: usize,
    pub rounds: usize,
    pub scheme: SchemeName,
    pub seed: u64,
    pub theta: f64,
    pub mu: f64,
    /// Dirichlet concentration of the label split.
    pub alpha: f64,
    pub payload_bits: f64,
    pub round_duration_s: f64,
    pub gain_loss: GainLossName,
    pub shared_init: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            num_nodes: d.num_nodes,
            rounds: d.rounds,
            scheme: d.scheme.into(),
            seed: d.seed,
            theta: d.selector.theta,
            mu: d.gain.mu,
            alpha: d.alpha,
            payload_bits: d.payload_bits,
            round_duration_s: d.round_duration,
            gain_loss: GainLossName::Local,
            shared_init: d.shared_init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub train_samples: usize,
    pub test_samples: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Distance between class centers, in within-class standard deviations.
    pub separation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idx_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idx_labels: Option<PathBuf>,
    /// Cap on samples read from the IDX files.
    pub max_samples: usize,
    /// Tail fraction of the loaded IDX samples held out as the test set.
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            source: DataSource::Synthetic,
            train_samples: s.train_samples,
            test_samples: s.test_samples,
            feature_dim: s.feature_dim,
            num_classes: s.num_classes,
            separation: s.separation,
            idx_images: None,
            idx_labels: None,
            max_samples: 5000,
            test_fraction: 0.2,
        }
    }
}

impl DataSection {
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            train_samples: self.train_samples,
            test_samples: self.test_samples,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            separation: self.separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    /// Per-node transmit power is drawn uniformly in dBm from this range.
    pub p_tx_dbm: [f64; 2],
    pub bandwidth_hz: [f64; 2],
    pub g_tx_dbi: f64,
    pub g_rx_dbi: f64,
    pub freq_hz: f64,
    pub env_exp: f64,
    pub noise_dbm_per_hz: f64,
    pub d_max_m: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        let r = RadioSetup::default();
        Self {
            p_tx_dbm: [r.p_tx_dbm.0, r.p_tx_dbm.1],
            bandwidth_hz: [r.bandwidth_hz.0, r.bandwidth_hz.1],
            g_tx_dbi: 0.0,
            g_rx_dbi: 0.0,
            freq_hz: r.freq,
            env_exp: r.env_exp,
            noise_dbm_per_hz: -174.0,
            d_max_m: r.d_max,
        }
    }
}

impl RadioSection {
    pub fn setup(&self) -> RadioSetup {
        RadioSetup {
            p_tx_dbm: (self.p_tx_dbm[0], self.p_tx_dbm[1]),
            bandwidth_hz: (self.bandwidth_hz[0], self.bandwidth_hz[1]),
            g_tx: db_to_linear(self.g_tx_dbi),
            g_rx: db_to_linear(self.g_rx_dbi),
            freq: self.freq_hz,
            env_exp: self.env_exp,
            noise_density: dbm_per_hz_to_watts_per_hz(self.noise_dbm_per_hz),
            d_max: self.d_max_m,
            light_speed: SPEED_OF_LIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySection {
    pub arena_width_m: f64,
    pub arena_height_m: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause_rounds: u32,
}

impl Default for MobilitySection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        let m = MobilityConfig::default();
        Self {
            arena_width_m: e.arena.width(),
            arena_height_m: e.arena.height(),
            speed_min: m.speed_min,
            speed_max: m.speed_max,
            pause_rounds: m.pause_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: ExperimentConfig::default().hidden,
            learning_rate: t.learning_rate,
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    Plain,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSection {
    pub steps: usize,
    pub step_size: f64,
    pub threshold: f64,
    pub init_w: f64,
    pub rule: RuleName,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let s = SelectorConfig::default();
        Self {
            steps: s.steps,
            step_size: s.step_size,
            threshold: s.threshold,
            init_w: s.init_w,
            rule: match s.rule {
                AscentRule::Plain => RuleName::Plain,
                AscentRule::Adam => RuleName::Adam,
            },
        }
    }
}

impl FileConfig {
    /// Reads `path`, applies `key=value` overrides, and validates the result.
    ///
    /// A run manifest is accepted too; its `[config]` table is used.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, SimError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| SimError::io(p, e))?;
                let mut t: toml::Table = toml::from_str(&text)
                    .map_err(|e| SimError::Validation(format!("{}: {e}", p.display())))?;
                if t.contains_key("run") {
                    match t.remove("config") {
                        Some(toml::Value::Table(c)) => t = c,
                        _ => {
                            return Err(SimError::Validation(format!(
                                "{}: manifest has no [config] table",
                                p.display()
                            )))
                        }
                    }
                }
                t
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: FileConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| SimError::Validation(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.experiment_config()?.validate().map_err(invalid)?;
        let d = &self.data;
        if d.source == DataSource::Synthetic {
            if d.train_samples == 0 || d.test_samples == 0 {
                return Err(SimError::Validation("data: sample counts must be positive".into()));
            }
            if d.feature_dim == 0 || d.num_classes < 2 {
                return Err(SimError::Validation(
                    "data: need feature_dim >= 1 and num_classes >= 2".into(),
                ));
            }
            if !(d.separation >= 0.0 && d.separation.is_finite()) {
                return Err(SimError::Validation("data.separation must be finite and >= 0".into()));
            }
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(SimError::Validation("data.test_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// The engine configuration this file describes.
    pub fn experiment_config(&self) -> Result<ExperimentConfig, SimError> {
        let e = &self.experiment;
        let m = &self.mobility;
        let s = &self.selector;
        Ok(ExperimentConfig {
            num_nodes: e.num_nodes,
            rounds: e.rounds,
            scheme: e.scheme.into(),
            seed: e.seed,
            gain: GainParams::new(e.mu).map_err(invalid)?,
            selector: SelectorConfig {
                theta: e.theta,
                steps: s.steps,
                step_size: s.step_size,
                threshold: s.threshold,
                init_w: s.init_w,
                rule: match s.rule {
                    RuleName::Plain => AscentRule::Plain,
                    RuleName::Adam => AscentRule::Adam,
                },
            },
            gain_loss: match e.gain_loss {
                GainLossName::Local => GainLoss::LocalShard,
                GainLossName::Test => GainLoss::GlobalTest,
            },
            radio: self.radio.setup(),
            payload_bits: e.payload_bits,
            arena: Arena::new(m.arena_width_m, m.arena_height_m).map_err(invalid)?,
            mobility: MobilityConfig {
                speed_min: m.speed_min,
                speed_max: m.speed_max,
                pause_rounds: m.pause_rounds,
            },
            round_duration: e.round_duration_s,
            alpha: e.alpha,
            hidden: self.train.hidden.clone(),
            train: TrainConfig {
                learning_rate: self.train.learning_rate,
                local_epochs: self.train.local_epochs,
                batch_size: self.train.batch_size,
            },
            shared_init: e.shared_init,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn invalid(e: ocdfl_core::Error) -> SimError {
    SimError::Validation(e.to_string())
}

/// Sets `section.key` from a `section.key=value` string. The value is read as
/// a TOML literal, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), SimError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| SimError::Validation(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.len() != 2 || path.iter().any(|p| p.is_empty()) {
        return Err(SimError::Validation(format!(
            "override key {key:?} must look like section.key"
        )));
    }
    let value = parse_value(raw.trim());
    let section = table
        .entry(path[0])
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match section {
        toml::Value::Table(t) => {
            t.insert(path[1].to_string(), value);
            Ok(())
        }
        _ => Err(SimError::Validation(format!("{} is not a table", path[0]))),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = FileConfig::default();
        let back: FileConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.experiment_config().unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn decibels_convert_once() {
        let mut cfg = FileConfig::default();
        cfg.radio.g_tx_dbi = 3.0;
        let r = cfg.radio.setup();
        assert!((r.g_tx - 1.995_262_314_968_879_5).abs() < 1e-15);
        assert!((r.noise_density - 3.981_071_705_534_972e-21).abs() < 1e-33);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train.learning_rate=0.5").unwrap();
        apply_override(&mut t, "experiment.scheme=full").unwrap();
        apply_override(&mut t, "train.hidden=[16, 8]").unwrap();
        let cfg: FileConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.experiment.scheme, SchemeName::Full);
        assert_eq!(cfg.train.hidden, vec![16, 8]);

        let mut t = toml::Table::new();
        apply_override(&mut t, "train.learning_rat=0.5").unwrap();
        assert!(toml::Value::Table(t).try_into::<FileConfig>().is_err());
        assert!(apply_override(&mut toml::Table::new(), "rounds=3").is_err());
        assert!(apply_override(&mut toml::Table::new(), "train.rounds").is_err());
    }

    #[test]
    fn invalid_values_are_validation_errors() {
        let r = FileConfig::load(None, &["experiment.theta=-1".into()]);
        assert!(matches!(r, Err(SimError::Validation(_))));
        let r = FileConfig::load(None, &["experiment.rounds=0".into()]);
        assert!(matches!(r, Err(SimError::Validation(_))));
    }
}
