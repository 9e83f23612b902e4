//! TOML run configuration shared by every CLI subcommand. All fields have
//! defaults so a minimal config only names the inputs it needs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{CalendarClock, TimeBasis, TriggerKernel};
use crate::error::{Result, RpfError};
use crate::model::{Hyperparams, ModelConfig, Variant};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub fit: FitSection,
    pub simulate: SimulateSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Event CSV: time, user id, item id.
    pub events: Option<PathBuf>,
    /// Follow-edge CSV: follower id, followee id. Absent means self-loops only.
    pub network: Option<PathBuf>,
    /// Observation window end; defaults to the last event time.
    pub horizon: Option<f64>,
    /// Fitted parameter snapshot, for commands that consume a fit.
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    pub latent_dim: usize,
    /// Trigger kernel decay rate omega.
    pub decay: f64,
    /// "static" or "hour-day".
    pub basis: String,
    pub hours_per_unit: f64,
    pub anchor_hour: f64,
    pub hyper: Hyperparams,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: "dsrpf".into(),
            latent_dim: 8,
            decay: 1.0,
            basis: "static".into(),
            hours_per_unit: 24.0,
            anchor_hour: 0.0,
            hyper: Hyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { epsilon: 1e-4, max_iters: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub num_users: usize,
    pub num_items: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Average out-degree of the generated follow graph; ignored when a
    /// network file is supplied in [data].
    pub avg_degree: f64,
    pub self_loops: bool,
    pub max_events: usize,
    /// Ground-truth parameter snapshot to simulate from; absent means draw
    /// from the prior.
    pub params: Option<PathBuf>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            num_users: 50,
            num_items: 50,
            horizon: 10.0,
            seed: 0,
            avg_degree: 4.0,
            self_loops: true,
            max_events: 10_000_000,
            params: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub samples: usize,
    pub seed: u64,
    /// Raw item id restricting the prediction to one item's process.
    pub item: Option<String>,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection { samples: 1000, seed: 0, item: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Fraction of events (by time order) used for training.
    pub train_fraction: f64,
    /// Ranking metric cutoffs.
    pub cutoffs: Vec<usize>,
    /// Raw item ids whose intensity timelines `diagnose` writes.
    pub timeline_items: Vec<String>,
    pub grid_points: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            train_fraction: 0.8,
            cutoffs: vec![10, 20],
            timeline_items: Vec::new(),
            grid_points: 200,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            RpfError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| RpfError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.evaluate.train_fraction > 0.0 && self.evaluate.train_fraction < 1.0) {
            return Err(RpfError::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.evaluate.train_fraction
            )));
        }
        self.to_model_config()?.validate_standalone()
    }

    /// Builds the structural model configuration from the [model] section.
    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let variant = Variant::parse(&self.model.variant)?;
        let clock = CalendarClock {
            hours_per_unit: self.model.hours_per_unit,
            anchor_hour: self.model.anchor_hour,
        };
        let basis = match self.model.basis.as_str() {
            "static" => TimeBasis::static_basis(),
            "hour-day" | "hour_day" | "hourday" => TimeBasis::hour_day(clock),
            other => {
                return Err(RpfError::Config(format!(
                    "unknown basis {other:?}; expected \"static\" or \"hour-day\""
                )))
            }
        };
        Ok(ModelConfig {
            variant,
            latent_dim: self.model.latent_dim,
            basis,
            kernel: TriggerKernel::new(self.model.decay)?,
            hyper: self.model.hyper.clone(),
        })
    }
}
