//! TOML schemas for the `simulate`, `label`, and `train` stages.
//!
//! Override tables are sparse: any key left out keeps the built-in value for
//! the bundled rig. Unknown keys inside a table are rejected so typos
//! surface instead of silently doing nothing. One file may carry the tables
//! for several stages (`simulate` and `label` both accept a file that has
//! `[scenario]`, `[geometry]`, and `[label]` sections).

use std::path::Path;

use anyhow::{bail, Context, Result};
use fricest_core::hybrid::HybridConfig;
use fricest_core::plant::{CylinderGeometry, InjectedFriction, NoiseConfig, ScenarioConfig};
use serde::{Deserialize, Serialize};

/// Copies every `Some` field of an override table onto the target struct.
macro_rules! apply_overrides {
    ($src:expr => $dst:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

/// Reads and deserializes one TOML file.
pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Everything `simulate` reads from its `--config` file.
///
/// The unused `[label]` table is accepted here so the same file can later be
/// handed to `label --geom`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub geometry: GeometryOverrides,
    #[serde(default)]
    pub friction: FrictionOverrides,
    /// Present (even empty) means the recording passes through the modeled
    /// acquisition chain; absent keeps it clean.
    #[serde(default)]
    pub noise: Option<NoiseOverrides>,
    /// Accepted and ignored, so one file can also serve `label --geom`.
    #[serde(rename = "label", default)]
    _label: serde::de::IgnoredAny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Valve-driven duty cycle against one of the four benchmark outlet
    /// restrictions (`level` 1 = lightest, 4 = heaviest).
    LoadLevel,
    /// Prescribed chamber pressures with a sinusoidal net force.
    Prescribed,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    /// Recording length, s.
    pub duration: f64,
    /// Benchmark load level 1..=4 (`kind = "load-level"` only).
    pub level: Option<u8>,
    /// Net force amplitude, N (`kind = "prescribed"` only).
    pub amplitude: Option<f64>,
    /// Drive frequency, Hz (`kind = "prescribed"` only).
    pub frequency_hz: Option<f64>,
    /// Sample interval override, s.
    pub dt: Option<f64>,
    /// Initial piston position override, m.
    pub x0: Option<f64>,
}

impl SimulateFile {
    /// Resolves the file into a full scenario plus the optional noise chain.
    pub fn build(&self) -> Result<(ScenarioConfig<f64>, Option<NoiseConfig<f64>>)> {
        let s = &self.scenario;
        let mut scenario = match s.kind {
            ScenarioKind::LoadLevel => {
                if s.amplitude.is_some() || s.frequency_hz.is_some() {
                    bail!("`amplitude` and `frequency_hz` only apply to prescribed scenarios");
                }
                let level = s
                    .level
                    .context("load-level scenarios need `level` (1..=4)")?;
                ScenarioConfig::load_level(level, s.duration)?
            }
            ScenarioKind::Prescribed => {
                if s.level.is_some() {
                    bail!("`level` only applies to load-level scenarios");
                }
                let amplitude = s
                    .amplitude
                    .context("prescribed scenarios need `amplitude` (N)")?;
                let frequency = s
                    .frequency_hz
                    .context("prescribed scenarios need `frequency_hz`")?;
                ScenarioConfig::prescribed(amplitude, frequency, s.duration)
            }
        };
        if let Some(dt) = s.dt {
            scenario.dt = dt;
        }
        if let Some(x0) = s.x0 {
            scenario.x0 = x0;
        }
        self.geometry.apply(&mut scenario.geometry);
        self.friction.apply(&mut scenario.friction);
        let noise = self.noise.as_ref().map(NoiseOverrides::build);
        Ok((scenario, noise))
    }
}

/// Sparse overrides for [`CylinderGeometry`]. SI units throughout.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryOverrides {
    pub bore: Option<f64>,
    pub rod_diameter: Option<f64>,
    pub stroke: Option<f64>,
    pub moving_mass: Option<f64>,
    pub bulk_modulus: Option<f64>,
    pub dead_length_1: Option<f64>,
    pub dead_length_2: Option<f64>,
}

impl GeometryOverrides {
    pub fn apply(&self, geom: &mut CylinderGeometry<f64>) {
        apply_overrides!(self => geom;
            bore, rod_diameter, stroke, moving_mass, bulk_modulus,
            dead_length_1, dead_length_2);
    }
}

/// Sparse overrides for the injected ground-truth friction: the base
/// friction parameters plus the pressure coupling.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrictionOverrides {
    pub sigma0: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub f_c: Option<f64>,
    pub f_s: Option<f64>,
    pub v_s: Option<f64>,
    pub stribeck_exponent: Option<f64>,
    pub pressure_gain: Option<f64>,
    pub reference_pressure: Option<f64>,
}

impl FrictionOverrides {
    pub fn apply(&self, friction: &mut InjectedFriction<f64>) {
        let base = &mut friction.base;
        apply_overrides!(self => base;
            sigma0, sigma1, sigma2, f_c, f_s, v_s, stribeck_exponent);
        apply_overrides!(self => friction; pressure_gain, reference_pressure);
    }
}

/// Sparse overrides for the acquisition chain. Ranges are `[lo, hi]` pairs;
/// `quantization_bits = 0` turns quantization off.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseOverrides {
    pub position_std: Option<f64>,
    pub pressure_std: Option<f64>,
    pub quantization_bits: Option<u32>,
    pub position_range: Option<(f64, f64)>,
    pub pressure_range: Option<(f64, f64)>,
}

impl NoiseOverrides {
    pub fn build(&self) -> NoiseConfig<f64> {
        let mut cfg = NoiseConfig::default();
        apply_overrides!(self => cfg;
            position_std, pressure_std, position_range, pressure_range);
        if let Some(bits) = self.quantization_bits {
            cfg.quantization_bits = (bits > 0).then_some(bits);
        }
        cfg
    }
}

/// What `label --geom` reads. Top level is deliberately lenient so a
/// simulate config (with its `[scenario]`, `[friction]`, and `[noise]`
/// tables) can be reused unchanged; only these two tables are consulted.
#[derive(Debug, Default, Deserialize)]
pub struct LabelFile {
    #[serde(default)]
    pub geometry: GeometryOverrides,
    #[serde(default)]
    pub label: LabelSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    /// Speed below which a row's label is marked unreliable, m/s.
    pub eps_v: Option<f64>,
    /// Correct the force balance for trapped-oil compliance. Leave off for
    /// recordings with in-chamber pressure transducers (including everything
    /// `simulate` writes); turn on when the pressures were measured at the
    /// valve manifold and miss the column deflection.
    pub oil_spring: Option<bool>,
}

/// What `train --config` reads.
#[derive(Debug, Default, Deserialize)]
pub struct TrainFile {
    #[serde(default)]
    pub train: TrainSection,
}

/// Sparse overrides for [`HybridConfig`]; see its docs for the meanings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub window: Option<usize>,
    pub window_stride: Option<usize>,
    pub warmup_frames: Option<usize>,
    pub lstm_hidden: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub dropout: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub n_trees: Option<usize>,
    pub tree_depth: Option<usize>,
    pub seed: Option<u64>,
}

impl TrainSection {
    /// Lays the file's overrides over the defaults; an explicit `--seed`
    /// flag wins over a seed from the file.
    pub fn build(&self, seed_flag: Option<u64>) -> HybridConfig<f64> {
        let mut cfg = HybridConfig::default();
        apply_overrides!(self => cfg;
            window, window_stride, warmup_frames, lstm_hidden, lstm_layers,
            dropout, learning_rate, batch_size, max_epochs, patience,
            n_trees, tree_depth, seed);
        if let Some(seed) = seed_flag {
            cfg.seed = seed;
        }
        cfg
    }
}
