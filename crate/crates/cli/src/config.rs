//! Run configuration: one TOML document with a table per subcommand. Every
//! key is optional; command-line flags override the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use radloc_core::lanelet::DEFAULT_POLYGON_STEP;
use radloc_core::occupancy::{
    window_len_ns, AssignFilters, DEFAULT_FINALIZATION_LAG, DEFAULT_HORIZON_WINDOWS, DEFAULT_WINDOW_MS,
};
use radloc_core::preprocess::{TargetParams, DEFAULT_MIN_RADIAL_SPEED};
use radloc_core::render::RenderStyle;
use radloc_core::simulator::{intersection_scenario, noisy_intersection_scenario, overlap_scenario};
use radloc_core::{LocalizationConfig, ScenarioConfig, SweepConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: SimulateConfig,
    pub localize: LocalizeConfig,
    pub evaluate: EvaluateConfig,
    pub heatmap: HeatmapConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Intersection,
    Noisy,
    Overlap,
}

impl Preset {
    pub fn scenario(self) -> ScenarioConfig {
        match self {
            Preset::Intersection => intersection_scenario(),
            Preset::Noisy => noisy_intersection_scenario(),
            Preset::Overlap => overlap_scenario(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub preset: Preset,
    /// Scenario TOML file; replaces the preset when set.
    pub scenario: Option<PathBuf>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub arrival_rate: Option<f64>,
}

impl SimulateConfig {
    /// The scenario after applying the overrides, validated.
    pub fn resolve(&self) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match &self.scenario {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ScenarioConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => self.preset.scenario(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.duration {
            cfg.duration = d;
        }
        if let Some(r) = self.arrival_rate {
            cfg.traffic.arrival_rate = r;
        }
        cfg.validate()?;
        cfg.map.load()?.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    /// Sensors to localize; empty means all.
    pub sensors: Vec<String>,
    pub filter: LocalizationConfig,
    pub target: TargetParams,
}

impl LocalizeConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.filter.validate()?;
        self.target.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Sensor to sweep; defaults to the first one in the dataset.
    pub sensor: Option<String>,
    pub sweep: SweepConfig,
}

impl EvaluateConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.sweep.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub window_ms: f64,
    pub horizon_windows: usize,
    pub polygon_step: f64,
    /// Finalization lag of the streaming aggregator used with `--realtime`.
    pub lag: usize,
    pub filters: AssignFilters,
    pub style: RenderStyle,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_WINDOW_MS,
            horizon_windows: DEFAULT_HORIZON_WINDOWS,
            polygon_step: DEFAULT_POLYGON_STEP,
            lag: DEFAULT_FINALIZATION_LAG,
            // static returns on the road surface are not occupancy
            filters: AssignFilters {
                min_radial_speed: Some(DEFAULT_MIN_RADIAL_SPEED),
                ..AssignFilters::default()
            },
            style: RenderStyle::default(),
        }
    }
}

impl HeatmapConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        window_len_ns(self.window_ms)?;
        if self.horizon_windows < 1 {
            bail!("horizon_windows must be at least 1");
        }
        if !(self.polygon_step > 0.0) {
            bail!("polygon_step must be positive");
        }
        if !(self.style.pixels_per_meter > 0.0) || !(self.style.margin_m >= 0.0) {
            bail!("pixels_per_meter must be positive and margin_m non-negative");
        }
        Ok(())
    }
}
