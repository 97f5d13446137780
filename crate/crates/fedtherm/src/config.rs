//! Benchmark configuration: one JSON document holding the shared pipeline
//! settings and a list of scenarios.

use std::path::Path;

use fedtherm_core::federation::{AggregationMode, FedConfig};
use fedtherm_core::model::{Optimizer, TrainConfig};
use fedtherm_core::thermal::{default_library, DomainProfile, SOURCE_SAMPLES, TARGET_SAMPLES};
use fedtherm_core::transfer::{TlMethod, TransferConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::LinkModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// All clients' training data pooled into one model.
    Centralized,
    /// Every client adapts the base model alone.
    Isolated,
    /// Federated rounds over a lossless in-process link.
    FlLocal,
    /// Federated rounds over a seeded high-latency lossy link.
    FlCloud,
}

impl Topology {
    pub fn is_federated(self) -> bool {
        matches!(self, Topology::FlLocal | Topology::FlCloud)
    }
}

/// Scales current and power by `factor` on rows `window.0..window.1` of one
/// client's raw data before it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadShiftSpec {
    pub client: usize,
    pub factor: f64,
    pub window: (usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiments {
    pub load_shift: Option<LoadShiftSpec>,
    /// Re-fine-tune each client's head on its initial data after FL.
    pub forgetting_refit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub topology: Topology,
    /// Client domains; the first one is the source.
    pub clients: Vec<DomainProfile>,
    #[serde(default)]
    pub tl_method: TlMethod,
    /// Federation settings. An empty `trainable_mask` takes the mask chosen by
    /// the transfer-learning stage.
    pub fed: FedConfig,
    #[serde(default)]
    pub link: Option<LinkModel>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub experiments: Experiments,
}

impl ScenarioSpec {
    pub fn validate(&self, at: &str) -> Result<()> {
        let field = |f: &str| format!("{at}.{f}");
        if self.name.is_empty() {
            return Err(Error::config(field("name"), "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config(field("seeds"), "at least one seed is required"));
        }
        if self.clients.is_empty() {
            return Err(Error::config(field("clients"), "at least one client is required"));
        }
        if self.topology.is_federated() && self.clients.len() < 2 {
            return Err(Error::config(field("clients"), "federated topologies need at least two clients"));
        }
        for (i, p) in self.clients.iter().enumerate() {
            p.validate().map_err(|e| Error::config(field(&format!("clients[{i}]")), e.to_string()))?;
        }
        let mut fed = self.fed.clone();
        if fed.trainable_mask.is_empty() {
            fed.trainable_mask = vec![true];
        }
        fed.validate().map_err(|e| Error::config(field("fed"), e.to_string()))?;
        match (&self.link, self.topology) {
            (None, Topology::FlCloud) => return Err(Error::config(field("link"), "fl_cloud requires a link model")),
            (Some(link), _) => link.validate().map_err(|e| match e {
                Error::Config { field: f, message } => Error::config(format!("{at}.{f}"), message),
                other => other,
            })?,
            (None, _) => {}
        }
        if let Some(shift) = &self.experiments.load_shift {
            let shift_field = field("experiments.load_shift");
            if shift.client >= self.clients.len() {
                return Err(Error::config(shift_field, format!("client index {} out of range", shift.client)));
            }
            if !(shift.factor > 0.0) || shift.window.0 >= shift.window.1 {
                return Err(Error::config(shift_field, "need factor > 0 and a non-empty window"));
            }
        }
        Ok(())
    }
}

/// Settings shared by every scenario of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub source_samples: usize,
    pub target_samples: usize,
    pub train_fraction: f64,
    /// Base model training on the source client.
    pub base: TrainConfig,
    pub transfer: TransferConfig,
    /// Training of the pooled model, starting from the base model.
    pub centralized: TrainConfig,
    /// Head re-fine-tuning in the forgetting experiment.
    pub refit: TrainConfig,
    /// Rows of the source training set sent to clients for relevance scoring.
    pub reference_rows: usize,
    /// How long an FL client waits for the server before giving up.
    pub client_idle_timeout_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source_samples: SOURCE_SAMPLES,
            target_samples: TARGET_SAMPLES,
            train_fraction: 0.7,
            base: TrainConfig { epochs: 30, ..TrainConfig::default() },
            transfer: TransferConfig::default(),
            centralized: TrainConfig { epochs: 40, ..TrainConfig::default() },
            refit: TrainConfig { epochs: 20, ..TrainConfig::default() },
            reference_rows: 500,
            client_idle_timeout_ms: 600_000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source_samples < 10 || self.target_samples < 10 {
            return Err(Error::config("pipeline.source_samples", "each client needs at least 10 samples"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("pipeline.train_fraction", "must lie in (0, 1)"));
        }
        if self.reference_rows == 0 {
            return Err(Error::config("pipeline.reference_rows", "must be >= 1"));
        }
        for (name, cfg) in [("base", &self.base), ("centralized", &self.centralized)] {
            cfg.validate().map_err(|e| Error::config(format!("pipeline.{name}"), e.to_string()))?;
        }
        // Zero refit epochs is allowed and means "no refit".
        if self.refit.epochs > 0 {
            self.refit.validate().map_err(|e| Error::config("pipeline.refit", e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub name: String,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub scenarios: Vec<ScenarioSpec>,
}

/// Local optimizer of the federated stage.
///
/// Plain SGD: a fresh Adam state every round takes near-unit steps on
/// every weight regardless of gradient size, which lets the shared layers
/// drift away from the frozen per-client heads.
pub fn federated_train() -> TrainConfig {
    TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 0.005, ..TrainConfig::default() }
}

fn fed(rounds: u32, local_epochs: usize) -> FedConfig {
    FedConfig {
        rounds,
        local_epochs,
        aggregation: AggregationMode::FedAvg,
        trainable_mask: Vec::new(),
        retry_budget: 3,
        client_timeout_ms: 5000,
        eval_each_round: true,
        train: federated_train(),
    }
}

pub const PAPER_MINI_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

impl SuiteConfig {
    /// The default suite: one source and four target clients, fine-tuning,
    /// five topologies plus the load-shift run, five seeds.
    pub fn paper_mini() -> Self {
        let clients = default_library();
        let seeds = PAPER_MINI_SEEDS.to_vec();
        let scenario = |name: &str, topology, fed: FedConfig| ScenarioSpec {
            name: name.into(),
            topology,
            clients: clients.clone(),
            tl_method: TlMethod::FineTune,
            fed,
            link: None,
            seeds: seeds.clone(),
            experiments: Experiments::default(),
        };
        let mut fl100 = scenario("fl-local-100", Topology::FlLocal, fed(100, 5));
        fl100.experiments.forgetting_refit = true;
        let mut cloud = scenario("fl-cloud-100", Topology::FlCloud, fed(100, 2));
        cloud.link = Some(LinkModel { latency_ms: (50.0, 200.0), drop_prob: 0.2, seed: 0xc10d, time_scale: 0.001 });
        let mut shift = scenario("isolated-load-shift", Topology::Isolated, fed(1, 1));
        // Rows 1260.. start halfway through an on-phase of the intermittent
        // client, so the boundary is not also a load transition.
        shift.experiments.load_shift = Some(LoadShiftSpec { client: 1, factor: 1.25, window: (1260, 1860) });
        SuiteConfig {
            name: "paper-mini".into(),
            pipeline: PipelineConfig::default(),
            scenarios: vec![
                scenario("centralized", Topology::Centralized, fed(1, 1)),
                scenario("isolated", Topology::Isolated, fed(1, 1)),
                scenario("fl-local-10", Topology::FlLocal, fed(10, 5)),
                fl100,
                cloud,
                shift,
            ],
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let suite: SuiteConfig =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.scenarios.is_empty() {
            return Err(Error::config("scenarios", "at least one scenario is required"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate(&format!("scenarios[{i}]"))?;
            if self.scenarios[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::config(format!("scenarios[{i}].name"), format!("duplicate scenario `{}`", s.name)));
            }
        }
        Ok(())
    }

    pub fn scenario(&self, name: &str) -> Option<&ScenarioSpec> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    /// Keeps only the named scenario, or fails listing the known names.
    pub fn retain_scenario(&mut self, name: &str) -> Result<()> {
        if self.scenario(name).is_none() {
            let known: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
            return Err(Error::config("scenario", format!("unknown scenario `{name}`, known: {known:?}")));
        }
        self.scenarios.retain(|s| s.name == name);
        Ok(())
    }

    /// Replaces every scenario's seed list.
    pub fn override_seeds(&mut self, seeds: &[u64]) {
        for s in &mut self.scenarios {
            s.seeds = seeds.to_vec();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_mini_is_valid_and_round_trips() {
        let suite = SuiteConfig::paper_mini();
        suite.validate().unwrap();
        let text = serde_json::to_string(&suite).unwrap();
        let back: SuiteConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, suite);
    }

    #[test]
    fn errors_carry_field_paths() {
        let mut suite = SuiteConfig::paper_mini();
        suite.scenarios[4].link = None;
        let err = suite.validate().unwrap_err().to_string();
        assert!(err.contains("scenarios[4].link"), "{err}");

        let mut suite = SuiteConfig::paper_mini();
        suite.scenarios[2].fed.rounds = 0;
        let err = suite.validate().unwrap_err().to_string();
        assert!(err.contains("scenarios[2].fed"), "{err}");

        let mut suite = SuiteConfig::paper_mini();
        suite.scenarios[4].link.as_mut().unwrap().drop_prob = 2.0;
        let err = suite.validate().unwrap_err().to_string();
        assert!(err.contains("scenarios[4].link.drop_prob"), "{err}");

        let mut suite = SuiteConfig::paper_mini();
        suite.scenarios[1].seeds.clear();
        assert!(suite.validate().unwrap_err().is_config());
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let doc = serde_json::json!({
            "name": "tiny",
            "scenarios": [{
                "name": "iso",
                "topology": "isolated",
                "clients": default_library(),
                "fed": { "rounds": 1, "local_epochs": 1 },
                "seeds": [7]
            }]
        });
        let suite: SuiteConfig = serde_json::from_value(doc).unwrap();
        suite.validate().unwrap();
        assert_eq!(suite.pipeline, PipelineConfig::default());
        assert_eq!(suite.scenarios[0].fed.retry_budget, 3);
        assert_eq!(suite.scenarios[0].tl_method, TlMethod::FineTune);
    }
}
