//! JSON configuration files (`"schema": 1`).
//!
//! A model file:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "grid": { "T": 1.0, "delta": 0.4, "dt": 0.1 },
//!   "states": [[0.0]],
//!   "kernels": [[[1.0]]],
//!   "menu": { "items": [[1.0]], "costs": [0.1] },
//!   "reward": { "kind": "linear_level", "params": [1.0] },
//!   "initial_state": 0
//! }
//! ```
//!
//! `kernels` holds one row-stochastic matrix (time-homogeneous) or one per
//! step. Reward kinds: `constant` (a number), `linear_level` (coefficient
//! vector), `table` (`g[i][s][a_id]`) and `swing`
//! (`{ "spot", "volume", "layers" }`). Optional keys: `initial_distribution`,
//! `theta`, `log_space`, `max_impulses`, `gamma_bound` and `infinite`
//! (`{ "rate", "epsilon", "epsilon_fix", "n_max", "t_min", "t_max" }`).
//!
//! A swing file has `schema`, `grid` and `contract` (see
//! [`crate::swing::SwingContract`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infinite_rn::InfiniteOptions;
use crate::lattice_rs::RsOptions;
use crate::model::{
    ImpulseMenu, InitialCondition, Kernel, MarkovLattice, Reward, StrikeLayer, TimeGrid,
};
use crate::swing::SwingContract;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub delta: f64,
    pub dt: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.delta, self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenuConfig {
    pub items: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    Constant(f64),
    LinearLevel(Vec<f64>),
    Table(Vec<Vec<Vec<f64>>>),
    Swing {
        spot: usize,
        volume: usize,
        layers: Vec<StrikeLayer>,
    },
}

impl RewardConfig {
    pub fn build(&self) -> Reward {
        match self {
            RewardConfig::Constant(c) => Reward::Constant(*c),
            RewardConfig::LinearLevel(c) => Reward::LinearLevel(c.clone()),
            RewardConfig::Table(t) => Reward::Table(t.clone()),
            RewardConfig::Swing { spot, volume, layers } => Reward::Swing {
                spot: *spot,
                volume: *volume,
                layers: layers.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfiniteConfig {
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_fix: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

impl InfiniteConfig {
    pub fn options(&self) -> InfiniteOptions {
        let mut o = InfiniteOptions::new(self.rate);
        if let Some(e) = self.epsilon {
            o.epsilon = e;
        }
        if let Some(e) = self.epsilon_fix {
            o.epsilon_fix = e;
        }
        o.n_max = self.n_max;
        o.t_min = self.t_min;
        o.t_max = self.t_max;
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema: u32,
    pub grid: GridConfig,
    pub states: Vec<Vec<f64>>,
    pub kernels: Vec<Vec<Vec<f64>>>,
    pub menu: MenuConfig,
    pub reward: RewardConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_distribution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_space: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_impulses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infinite: Option<InfiniteConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwingConfig {
    pub schema: u32,
    pub grid: GridConfig,
    pub contract: SwingContract,
}

fn parse_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    let msg = msg.strip_suffix(&suffix).unwrap_or(&msg);
    Error::Config(format!("line {}, column {}: {msg}", e.line(), e.column()))
}

fn check_schema(schema: u32) -> Result<()> {
    if schema != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema {schema}; expected {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(parse_error)?;
        check_schema(cfg.schema)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The model and menu. Structural problems surface as [`Error::Config`].
    pub fn build(&self) -> Result<(MarkovLattice, ImpulseMenu)> {
        let invalid = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        let grid = self.grid.build().map_err(invalid)?;
        let kernels = self
            .kernels
            .iter()
            .map(|k| Kernel::from_dense(k))
            .collect::<Result<Vec<_>>>()
            .map_err(invalid)?;
        let mut model = MarkovLattice::new(grid, self.states.clone(), kernels, self.reward.build())
            .map_err(invalid)?;
        let initial = match (self.initial_state, &self.initial_distribution) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give initial_state or initial_distribution, not both".into(),
                ))
            }
            (Some(s), None) => Some(InitialCondition::State(s)),
            (None, Some(p)) => Some(InitialCondition::Distribution(p.clone())),
            (None, None) => None,
        };
        if let Some(initial) = initial {
            model = model.with_initial(initial).map_err(invalid)?;
        }
        if let Some(g) = self.gamma_bound {
            model = model.with_gamma_bound(g);
        }
        let menu = ImpulseMenu::new(self.menu.items.clone(), self.menu.costs.clone()).map_err(invalid)?;
        Ok((model, menu))
    }

    /// The file describing `model` and `menu`. Custom rewards have no file
    /// form.
    pub fn from_model(model: &MarkovLattice, menu: &ImpulseMenu) -> Result<Self> {
        let reward = match &model.reward {
            Reward::Constant(c) => RewardConfig::Constant(*c),
            Reward::LinearLevel(c) => RewardConfig::LinearLevel(c.clone()),
            Reward::Table(t) => RewardConfig::Table(t.clone()),
            Reward::Swing { spot, volume, layers } => RewardConfig::Swing {
                spot: *spot,
                volume: *volume,
                layers: layers.clone(),
            },
            Reward::Custom(_) => {
                return Err(Error::Config("custom rewards cannot be written to a file".into()))
            }
        };
        let (initial_state, initial_distribution) = match &model.initial {
            InitialCondition::State(s) => (Some(*s), None),
            InitialCondition::Distribution(p) => (None, Some(p.clone())),
        };
        let grid = model.grid;
        Ok(ModelConfig {
            schema: SCHEMA_VERSION,
            grid: GridConfig {
                horizon: grid.horizon,
                delta: grid.delay,
                dt: grid.dt,
            },
            states: model.states.clone(),
            kernels: model.kernels().iter().map(Kernel::to_dense).collect(),
            menu: MenuConfig {
                items: menu.items().to_vec(),
                costs: menu.costs().to_vec(),
            },
            reward,
            initial_state,
            initial_distribution,
            theta: None,
            log_space: None,
            max_impulses: None,
            gamma_bound: model.gamma_bound,
            infinite: None,
        })
    }

    pub fn rs_options(&self) -> RsOptions {
        RsOptions {
            theta: self.theta.unwrap_or(1.0),
            log_space: self.log_space,
            max_impulses: self.max_impulses,
        }
    }

    /// Discounting options; `rate` overrides the file when given.
    pub fn infinite_options(&self, rate: Option<f64>) -> Result<InfiniteOptions> {
        match (self.infinite, rate) {
            (Some(c), r) => {
                let mut o = c.options();
                if let Some(r) = r {
                    o.rate = r;
                }
                Ok(o)
            }
            (None, Some(r)) => Ok(InfiniteOptions::new(r)),
            (None, None) => Err(Error::Config(
                "infinite-horizon mode needs an \"infinite\" section with a rate".into(),
            )),
        }
    }
}

impl SwingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SwingConfig = serde_json::from_str(text).map_err(parse_error)?;
        check_schema(cfg.schema)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        self.grid.build().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Either kind of configuration file, told apart by the `contract` key.
#[derive(Debug, Clone)]
pub enum AnyConfig {
    Model(Box<ModelConfig>),
    Swing(SwingConfig),
}

impl AnyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        if value.get("contract").is_some() {
            SwingConfig::from_json(text).map(AnyConfig::Swing)
        } else {
            ModelConfig::from_json(text).map(|c| AnyConfig::Model(Box::new(c)))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}
