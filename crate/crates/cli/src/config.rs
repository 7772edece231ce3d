//! Experiment configuration: one JSON file describing the driving, the
//! map alphabet, the observable, grid and tolerance choices, the block
//! parameters and the simulation. Every numeric range is validated
//! before any computation starts, and the SHA-256 of the canonical
//! serialized form is embedded in every output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use quasip::driving::{DrivingKind, DrivingSystem};
use quasip::maps::{Branch, MapFamily, MapParameter};
use quasip::observable::{Component, Observable, Pointwise};
use quasip::simulate::JitterPolicy;

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrivingConfig {
    #[serde(flatten)]
    pub kind: DrivingKind,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapSpec {
    /// `x ↦ m·x mod 1`.
    LinearModOne { m: u32 },
    /// Explicit branch list.
    Branches { name: String, branches: Vec<BranchSpec> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchSpec {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub offset: f64,
    #[serde(default)]
    pub amp: f64,
    #[serde(default)]
    pub freq: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum ObservableSpec {
    Cos,
    Sin,
    Linear,
    Indicator { lo: f64, hi: f64 },
    /// `q - q∘T_ω` for a base preset `q`.
    Coboundary { q: Box<ObservableSpec> },
    CustomGrid { values: Vec<f64> },
}

impl ObservableSpec {
    fn pointwise(&self, field: &str) -> Result<Pointwise, ConfigError> {
        Ok(match self {
            ObservableSpec::Cos => Pointwise::Cos,
            ObservableSpec::Sin => Pointwise::Sin,
            ObservableSpec::Linear => Pointwise::Linear,
            ObservableSpec::Indicator { lo, hi } => {
                if !(0.0 <= *lo && lo < hi && *hi <= 1.0) {
                    return Err(bad(field, format!("indicator [{lo}, {hi}) not inside [0, 1]")));
                }
                Pointwise::Indicator { lo: *lo, hi: *hi }
            }
            ObservableSpec::CustomGrid { values } => {
                if values.is_empty() {
                    return Err(bad(field, "custom grid table is empty"));
                }
                Pointwise::GridTable(values.clone())
            }
            ObservableSpec::Coboundary { .. } => {
                return Err(bad(field, "coboundary cannot nest inside a coboundary"))
            }
        })
    }

    fn component(&self, field: &str) -> Result<Component, ConfigError> {
        match self {
            ObservableSpec::Coboundary { q } => Ok(Component::Coboundary {
                q: q.pointwise(field)?,
            }),
            other => Ok(Component::Fixed(other.pointwise(field)?)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub density_tol: f64,
    pub density_n_max: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            density_tol: 1e-10,
            density_n_max: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreenKuboConfig {
    pub n_max: usize,
    pub window: usize,
}

impl Default for GreenKuboConfig {
    fn default() -> Self {
        GreenKuboConfig {
            n_max: 64,
            window: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayConfig {
    pub n_max: usize,
    pub trials: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            n_max: 20,
            trials: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockConfig {
    pub beta: f64,
    pub eps: f64,
    /// Levels `1..=n_levels` are built (invalid small levels recorded).
    pub n_levels: u32,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            beta: 0.55,
            eps: 0.05,
            n_levels: 11,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_steps: u64,
    pub n_paths: usize,
    /// Dyadic checkpoints are generated automatically; extra positions
    /// can be listed here.
    #[serde(default)]
    pub extra_checkpoints: Vec<u64>,
    pub seed: u64,
    pub jitter: JitterPolicy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_steps: 4096,
            n_paths: 2000,
            extra_checkpoints: Vec::new(),
            seed: 42,
            jitter: JitterPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateConfig {
    pub p: f64,
    pub delta_grid: Vec<f64>,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            p: 5.0,
            delta_grid: vec![0.01, 0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub driving: DrivingConfig,
    pub maps: Vec<MapSpec>,
    pub observable: Vec<ObservableSpec>,
    pub grid_k: usize,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub green_kubo: GreenKuboConfig,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub blocks: BlockConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub rates: RateConfig,
    pub output_dir: String,
}

impl ExperimentConfig {
    /// The default doubling + cos experiment, written by `init`.
    pub fn template() -> Self {
        ExperimentConfig {
            driving: DrivingConfig {
                kind: DrivingKind::FinitePeriodic { period: 1 },
                master_seed: 42,
            },
            maps: vec![MapSpec::LinearModOne { m: 2 }],
            observable: vec![ObservableSpec::Cos],
            grid_k: 4096,
            tolerances: ToleranceConfig::default(),
            green_kubo: GreenKuboConfig::default(),
            decay: DecayConfig::default(),
            blocks: BlockConfig::default(),
            simulation: SimulationConfig::default(),
            rates: RateConfig::default(),
            output_dir: "out".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.maps.is_empty() {
            return Err(bad("maps", "alphabet is empty"));
        }
        if self.observable.is_empty() {
            return Err(bad("observable", "needs at least one coordinate"));
        }
        if self.grid_k < 2 {
            return Err(bad("grid_k", format!("grid size {} below 2", self.grid_k)));
        }
        if !(self.tolerances.density_tol > 0.0) {
            return Err(bad("tolerances.density_tol", "must be positive"));
        }
        if self.tolerances.density_n_max == 0 {
            return Err(bad("tolerances.density_n_max", "must be positive"));
        }
        if !(self.blocks.beta > 0.0 && self.blocks.beta < 1.0) {
            return Err(bad(
                "blocks.beta",
                format!("{} outside (0, 1)", self.blocks.beta),
            ));
        }
        if !(self.blocks.eps > 0.0 && self.blocks.eps < 1.0 - self.blocks.beta) {
            return Err(bad(
                "blocks.eps",
                format!(
                    "{} outside (0, 1 - beta) for beta {}",
                    self.blocks.eps, self.blocks.beta
                ),
            ));
        }
        if self.blocks.n_levels == 0 || self.blocks.n_levels > 40 {
            return Err(bad("blocks.n_levels", "must be in 1..=40"));
        }
        if self.simulation.n_steps < (1u64 << (self.blocks.n_levels + 1)) - 1 {
            return Err(bad(
                "simulation.n_steps",
                format!(
                    "{} steps cannot cover block levels up to {} (need {})",
                    self.simulation.n_steps,
                    self.blocks.n_levels,
                    (1u64 << (self.blocks.n_levels + 1)) - 1
                ),
            ));
        }
        if self.simulation.n_paths == 0 {
            return Err(bad("simulation.n_paths", "must be positive"));
        }
        if !(self.rates.p > 4.0) {
            return Err(bad(
                "rates.p",
                format!("{} must exceed 4 for a coupling rate", self.rates.p),
            ));
        }
        if self.green_kubo.n_max == 0 || self.green_kubo.window == 0 {
            return Err(bad("green_kubo", "n_max and window must be positive"));
        }
        if self.decay.n_max < 2 || self.decay.trials == 0 {
            return Err(bad("decay", "n_max >= 2 and trials >= 1 required"));
        }
        match self.driving.kind {
            DrivingKind::FinitePeriodic { period } => {
                if period == 0 || period as usize > self.maps.len() {
                    return Err(bad(
                        "driving.period",
                        format!("period {period} invalid for {} maps", self.maps.len()),
                    ));
                }
            }
            DrivingKind::IrrationalRotation { angle } => {
                if !(angle > 0.0 && angle < 1.0) {
                    return Err(bad("driving.angle", format!("{angle} outside (0, 1)")));
                }
            }
            DrivingKind::IidBernoulli => {}
        }
        for (i, spec) in self.observable.iter().enumerate() {
            spec.component(&format!("observable[{i}]"))?;
        }
        for (i, spec) in self.maps.iter().enumerate() {
            self.build_map(spec)
                .map_err(|e| bad(&format!("maps[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    fn build_map(&self, spec: &MapSpec) -> Result<MapParameter, quasip::maps::MapError> {
        match spec {
            MapSpec::LinearModOne { m } => Ok(MapParameter::linear_mod_one(*m)),
            MapSpec::Branches { name, branches } => MapParameter::new(
                name.clone(),
                branches
                    .iter()
                    .map(|b| Branch {
                        lo: b.lo,
                        hi: b.hi,
                        slope: b.slope,
                        offset: b.offset,
                        amp: b.amp,
                        freq: b.freq,
                    })
                    .collect(),
            ),
        }
    }

    pub fn family(&self) -> Result<MapFamily, ConfigError> {
        let alphabet = self
            .maps
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                self.build_map(spec)
                    .map_err(|e| bad(&format!("maps[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        MapFamily::new(alphabet).map_err(|e| bad("maps", e.to_string()))
    }

    pub fn driving_system(&self) -> Result<DrivingSystem, ConfigError> {
        DrivingSystem::new(self.driving.kind, self.driving.master_seed, self.maps.len())
            .map_err(|e| bad("driving", e.to_string()))
    }

    pub fn observable_object(&self) -> Result<Observable, ConfigError> {
        let comps = self
            .observable
            .iter()
            .enumerate()
            .map(|(i, s)| s.component(&format!("observable[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Observable::new(comps))
    }

    /// SHA-256 of the canonical serialized form. The output directory is
    /// a location, not experiment content, so it is excluded: reruns into
    /// different directories hash identically.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = String::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad("<file>", format!("{}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| ConfigError {
        field: format!("<parse line {} column {}>", e.line(), e.column()),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
