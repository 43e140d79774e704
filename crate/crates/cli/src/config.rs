//! Scenario configuration: one JSON file, every section optional, unknown
//! keys rejected. Command-line flags override file values.

use std::path::{Path, PathBuf};

use eskin_core::classifier::tsne::TsneConfig;
use eskin_core::classifier::TrainConfig;
use eskin_core::interference::InterferenceConfig;
use eskin_core::sensing::{NoiseModel, DEFAULT_PER_CLASS};
use eskin_core::skin::{MotorModel, SkinGeometry};
use eskin_core::weighing::Material;
use eskin_protocol::{GestureConfig, SessionConfig};
use serde::{Deserialize, Serialize};

use crate::robot::RobotConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryOverrides {
    pub width: f64,
    pub height: f64,
    pub film_thickness: f64,
    pub elastomer_thickness: f64,
}

impl Default for GeometryOverrides {
    fn default() -> Self {
        let g = SkinGeometry::default();
        Self { width: g.width, height: g.height, film_thickness: g.film_thickness, elastomer_thickness: g.elastomer_thickness }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    /// Operator WebSocket gateway.
    pub gateway: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self { gateway: "127.0.0.1:7701".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub geometry: GeometryOverrides,
    pub noise: NoiseModel,
    pub motor: MotorModel,
    /// Replace built-in materials of the same name, or add new ones.
    pub materials: Vec<Material>,
    pub per_class: usize,
    pub train: TrainConfig,
    pub tsne: TsneConfig,
    pub interference: InterferenceConfig,
    pub session: SessionConfig,
    pub gesture: GestureConfig,
    pub robot: RobotConfig,
    pub endpoints: Endpoints,
    pub output_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            geometry: GeometryOverrides::default(),
            noise: NoiseModel::default(),
            motor: MotorModel::default(),
            materials: Vec::new(),
            per_class: DEFAULT_PER_CLASS,
            train: TrainConfig::default(),
            tsne: TsneConfig::default(),
            interference: InterferenceConfig::default(),
            session: SessionConfig::default(),
            gesture: GestureConfig::default(),
            robot: RobotConfig::default(),
            endpoints: Endpoints::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn geometry(&self) -> Result<SkinGeometry, CliError> {
        let o = &self.geometry;
        let g = SkinGeometry::staggered(o.width, o.height, o.film_thickness, o.elastomer_thickness);
        g.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(g)
    }

    pub fn material(&self, name: &str) -> Result<Material, CliError> {
        self.materials
            .iter()
            .find(|m| m.name == name)
            .cloned()
            .or_else(|| Material::by_name(name))
            .ok_or_else(|| CliError::Config(format!("unknown material {name:?}")))
    }
}
