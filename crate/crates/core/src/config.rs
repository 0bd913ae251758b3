//! Experiment configuration as one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrast::TrainConfig;
use crate::error::{Error, Result};
use crate::pairing::PairingMode;
use crate::probe::ProbeConfig;
use crate::render::RenderConfig;
use crate::scene::SceneConfig;
use crate::trajectory::{LightingSchedule, MotionParams, WalkPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Poses in the pretraining trajectory.
    pub steps: usize,
    pub seed: u64,
    /// Poses in the held-out trajectory used as the probe test split.
    pub test_steps: usize,
    pub test_seed: u64,
    pub lighting: LightingSchedule,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: 1,
            test_steps: 1000,
            test_seed: 2,
            lighting: LightingSchedule::Cycle {
                period: 250,
                presets: 2,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingThresholds {
    pub t_max: f64,
    pub d_max: f64,
    pub a_max: f64,
}

impl Default for PairingThresholds {
    fn default() -> Self {
        Self {
            t_max: PairingMode::TIME_DEFAULT,
            d_max: PairingMode::DISTANCE_DEFAULT,
            a_max: PairingMode::ANGLE_DEFAULT,
        }
    }
}

impl PairingThresholds {
    pub fn mode(&self, name: &str) -> Result<PairingMode> {
        let mode = match name {
            "standard" => PairingMode::Standard,
            "time" => PairingMode::Time { t_max: self.t_max },
            "space" => PairingMode::Space {
                d_max: self.d_max,
                a_max: self.a_max,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown pairing mode {other:?} (expected standard, time or space)"
                )))
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub modes: Vec<String>,
    pub runs: usize,
    pub base_seed: u64,
    /// Independent runs executed at once.
    pub jobs: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            modes: vec!["standard".into(), "time".into(), "space".into()],
            runs: 3,
            base_seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene_seed: u64,
    pub output_dir: String,
    pub scene: SceneConfig,
    pub motion: MotionParams,
    pub walk: WalkPolicy,
    pub trajectory: TrajectoryConfig,
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub pairing: PairingThresholds,
    pub compare: CompareConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene_seed: 3,
            output_dir: "out".into(),
            scene: SceneConfig::default(),
            motion: MotionParams::default(),
            walk: WalkPolicy::default(),
            trajectory: TrajectoryConfig::default(),
            render: RenderConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            pairing: PairingThresholds::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.motion.validate()?;
        self.walk.validate()?;
        self.render.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        let t = &self.trajectory;
        if t.steps < 2 || t.test_steps < 1 {
            return Err(Error::Config("trajectory: steps must be at least 2 and test_steps at least 1".into()));
        }
        if t.seed == t.test_seed {
            return Err(Error::Config("trajectory: test_seed must differ from seed".into()));
        }
        match &t.lighting {
            LightingSchedule::Constant { id } if *id as usize >= self.scene.lighting_presets => {
                return Err(Error::Config(format!("trajectory: lighting preset {id} does not exist")))
            }
            LightingSchedule::Cycle { period, presets } => {
                if *period == 0 || *presets == 0 {
                    return Err(Error::Config("trajectory: lighting cycle needs a period and presets".into()));
                }
                if *presets as usize > self.scene.lighting_presets {
                    return Err(Error::Config(format!(
                        "trajectory: cycle over {presets} presets but the scene has {}",
                        self.scene.lighting_presets
                    )));
                }
            }
            _ => {}
        }
        for name in ["time", "space"] {
            self.pairing.mode(name)?;
        }
        if self.train.mode != PairingMode::Standard && self.pairing.mode(self.train.mode.name())? != self.train.mode {
            return Err(Error::Config("train.mode thresholds differ from [pairing]".into()));
        }
        if self.compare.runs == 0 || self.compare.jobs == 0 || self.compare.modes.is_empty() {
            return Err(Error::Config("compare: modes, runs and jobs must be non-empty".into()));
        }
        for m in &self.compare.modes {
            self.pairing.mode(m)?;
        }
        if self.train.encoder.in_channels != 3 {
            return Err(Error::Config("train.encoder.in_channels must be 3 for RGB frames".into()));
        }
        Ok(())
    }

    /// Copy with `train.mode` set to the named mode under `[pairing]`.
    pub fn with_mode(&self, name: &str) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.train.mode = self.pairing.mode(name)?;
        Ok(cfg)
    }
}
