use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sarstereo::accuracy::{GridSpec, StereoConfig, StereoMode};
use sarstereo::evaluation::DEFAULT_NEIGHBOURS;
use sarstereo::intersection::{ObservationWeights, SolverOptions};
use sarstereo::matching::MatchConfig;
use sarstereo::scene_sim::{RenderNoise, SceneSpec, SensorSetup};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    pub sar: Option<PathBuf>,
    pub optical: Option<PathBuf>,
    /// Coarse DEM used as height prior; a plane at `prior_height` otherwise.
    pub dem: Option<PathBuf>,
    /// Reference point cloud (`x y z` per line).
    pub reference: Option<PathBuf>,
    /// Tie-point CSV or `x y z` points, for `intersect` and `evaluate`.
    pub points: Option<PathBuf>,
}

/// One accuracy-model configuration with angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCase {
    pub name: String,
    pub mode: StereoMode,
    pub theta_deg: f64,
    pub alpha_deg: f64,
    pub hs: f64,
    pub ho: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(default = "one")]
    pub sigma0: f64,
    #[serde(default = "micro")]
    pub sigma_alpha_factor: f64,
}

fn one() -> f64 {
    1.0
}

fn micro() -> f64 {
    1e-6
}

impl AccuracyCase {
    fn new(name: &str, mode: StereoMode, theta_deg: f64, alpha_deg: f64, hs: f64, ho: f64) -> Self {
        Self { name: name.into(), mode, theta_deg, alpha_deg, hs, ho, h: 0.0, sigma0: 1.0, sigma_alpha_factor: 1e-6 }
    }

    pub fn stereo_config(&self) -> StereoConfig {
        StereoConfig {
            h: self.h,
            sigma0: self.sigma0,
            sigma_alpha_factor: self.sigma_alpha_factor,
            ..StereoConfig::from_degrees(self.mode, self.theta_deg, self.alpha_deg, self.hs, self.ho)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccuracyConfig {
    pub cases: Vec<AccuracyCase>,
    pub grids: Vec<GridSpec>,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self {
            cases: vec![
                AccuracyCase::new("opposite_54_12", StereoMode::OppositeSide, 54.0, 12.0, 760.0, 770_000.0),
                AccuracyCase::new("same_21_8", StereoMode::SameSide, 21.0, 8.0, 515_000.0, 770_000.0),
                AccuracyCase::new("same_33_10.3", StereoMode::SameSide, 33.0, 10.3, 515_000.0, 770_000.0),
            ],
            grids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SarChannel {
    Intensity,
    LowSpeckle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Explicit scene; the seeded standard layout when absent.
    pub scene: Option<SceneSpec>,
    pub setup: SensorSetup,
    pub noise: RenderNoise,
    /// SAR channel fed to matching by `pipeline`.
    pub sar_channel: SarChannel,
    /// Reference cloud keeps one DEM cell in `reference_stride` per axis.
    pub reference_stride: usize,
    /// Spacing in meters of the points listed in the truth CSV.
    pub truth_spacing: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scene: None,
            setup: SensorSetup::default(),
            noise: RenderNoise::default(),
            sar_channel: SarChannel::LowSpeckle,
            reference_stride: 4,
            truth_spacing: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub neighbours: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { neighbours: DEFAULT_NEIGHBOURS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    pub prior_height: f64,
    pub matching: MatchConfig,
    /// Weights of `intersect`; half a pixel of the SAR model when absent.
    pub weights: Option<ObservationWeights>,
    pub solver: SolverOptions,
    pub accuracy: AccuracyConfig,
    pub simulation: SimulationConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            inputs: Inputs::default(),
            prior_height: 0.0,
            matching: MatchConfig::default(),
            weights: None,
            solver: SolverOptions::default(),
            accuracy: AccuracyConfig::default(),
            simulation: SimulationConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Recursively overlays `user` onto `base`; objects merge key by key, every
/// other value replaces.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("`{key}`: empty key segment")));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| config_err(format!("`{key}`: `{part}` is not an index of a list")))?;
                let n = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| config_err(format!("`{key}`: index {idx} out of range (list has {n})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(config_err(format!("`{key}`: `{}` is not a table", parts[..i].join("."))));
            }
        };
    }
    Ok(())
}

/// Reports the first key in `given` that does not survive a round trip
/// through the typed config (serde ignores unknown fields silently).
fn unknown_key(given: &Value, typed: &Value, path: &str) -> Option<String> {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (given, typed) {
        (Value::Object(g), Value::Object(t)) => g.iter().find_map(|(k, v)| match t.get(k) {
            None => Some(join(k)),
            Some(tv) => unknown_key(v, tv, &join(k)),
        }),
        (Value::Object(g), _) => g.keys().next().map(|k| join(k)),
        (Value::Array(g), Value::Array(t)) => {
            g.iter().zip(t).enumerate().find_map(|(i, (a, b))| unknown_key(a, b, &join(&i.to_string())))
        }
        _ => None,
    }
}

/// Defaults, overlaid by the config file, overlaid by `--set` assignments.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Config, CliError> {
    let mut value = serde_json::to_value(Config::default()).expect("config serializes");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let user: Value =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: invalid JSON: {e}", path.display())))?;
        if !user.is_object() {
            return Err(config_err(format!("{}: top level must be a JSON object", path.display())));
        }
        merge(&mut value, user);
    }
    for s in sets {
        let (key, raw) = s.split_once('=').ok_or_else(|| config_err(format!("`{s}`: expected key=value")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key.trim(), v)?;
    }
    let cfg: Config = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        config_err(format!("`{path}`: {}", e.into_inner()))
    })?;
    let typed = serde_json::to_value(&cfg).expect("config serializes");
    if let Some(k) = unknown_key(&value, &typed, "") {
        return Err(config_err(format!("`{k}`: unknown key")));
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &Config) -> Result<(), CliError> {
    cfg.matching.validate().map_err(|e| config_err(format!("`matching`: {e}")))?;
    if let Some(w) = &cfg.weights {
        w.validate().map_err(|e| config_err(format!("`weights`: {e}")))?;
    }
    if cfg.solver.max_iterations == 0 || !(cfg.solver.tol > 0.0) {
        return Err(config_err("`solver`: max_iterations and tol must be positive"));
    }
    for (i, c) in cfg.accuracy.cases.iter().enumerate() {
        c.stereo_config().validate().map_err(|e| config_err(format!("`accuracy.cases.{i}`: {e}")))?;
    }
    for (i, g) in cfg.accuracy.grids.iter().enumerate() {
        if g.steps.0 == 0 || g.steps.1 == 0 {
            return Err(config_err(format!("`accuracy.grids.{i}.steps`: must be positive")));
        }
    }
    let sim = &cfg.simulation;
    if let Some(spec) = &sim.scene {
        spec.validate().map_err(|e| config_err(format!("`simulation.scene`: {e}")))?;
    }
    sim.noise.validate().map_err(|e| config_err(format!("`simulation.noise`: {e}")))?;
    if sim.reference_stride == 0 {
        return Err(config_err("`simulation.reference_stride`: must be positive"));
    }
    if !(sim.truth_spacing > 0.0) {
        return Err(config_err("`simulation.truth_spacing`: must be positive"));
    }
    if cfg.evaluation.neighbours < 3 {
        return Err(config_err("`evaluation.neighbours`: a plane needs at least 3 neighbours"));
    }
    if !cfg.prior_height.is_finite() {
        return Err(config_err("`prior_height`: must be finite"));
    }
    Ok(())
}
