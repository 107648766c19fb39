//! Experiment configuration: TOML files, built-in presets and command-line
//! overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nystrom_fit::datagen::LongRunConfig;
use nystrom_fit::integrators::{NystromParams, SchemeSpec};
use nystrom_fit::models::{FpuModel, LangevinParams, LinearOscillator, Model};

use crate::error::CliError;

pub const PRESETS: [(&str, &str); 3] = [
    ("fpu-det", include_str!("../presets/fpu-det.toml")),
    ("fpu-langevin", include_str!("../presets/fpu-langevin.toml")),
    ("linear", include_str!("../presets/linear.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub langevin: Option<LangevinParams>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_run: Option<LongRunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Fpu { springs: usize, omega: f64 },
    Linear { omega_sq: f64 },
}

/// `"verlet"`, `"baoab"` or explicit Nyström parameters `[b1, beta1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeChoice {
    Named(SchemeName),
    Params([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Verlet,
    Baoab,
    /// Nyström with the parameters from `simulate.theta`, `--theta` or `--fit`.
    Nystrom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// Near-harmonic FPU states.
    Harmonic,
    /// Draws from a long BAOAB run (Langevin only).
    Stationary,
    /// `q ~ N(0, 1/Omega)`, `p ~ N(0, 1)` (linear model).
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub generator: SchemeChoice,
    pub h: f64,
    pub gap: usize,
    pub t_train: f64,
    pub trajectories: usize,
    pub initial: InitialKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            generator: SchemeChoice::Named(SchemeName::Verlet),
            h: 1e-4,
            gap: 100,
            t_train: 0.5,
            trajectories: 100,
            initial: InitialKind::Harmonic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub theta0: [f64; 2],
    pub multistart: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            theta0: [0.5, 0.5],
            multistart: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scheme: SchemeChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<[f64; 2]>,
    /// Coarse step in units of `data.h`.
    pub gap: usize,
    /// Keep every this many coarse steps.
    pub record_every: usize,
    pub t_test: f64,
    pub trajectories: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            scheme: SchemeChoice::Named(SchemeName::Nystrom),
            theta: None,
            gap: 100,
            record_every: 1,
            t_test: 0.5,
            trajectories: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub max_lag: f64,
    pub bins: usize,
    pub range: [f64; 2],
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            max_lag: 1.0,
            bins: 100,
            range: [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    /// Steps given as `delta omega`.
    pub delta_omega: Vec<f64>,
    pub gammas: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                bad(format!("unknown preset {name:?}; available: {}", names.join(", ")))
            })?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model()?;
        if let Some(l) = self.langevin {
            LangevinParams::new(l.gamma, l.sigma).map_err(|e| bad(e.to_string()))?;
        }
        let d = &self.data;
        if !(d.h > 0.0 && d.t_train > 0.0) || d.gap == 0 || d.trajectories == 0 {
            return Err(bad("data: h, gap, t_train and trajectories must be positive"));
        }
        let s = &self.simulate;
        if s.gap == 0 || s.record_every == 0 || s.trajectories == 0 || !(s.t_test > 0.0) {
            return Err(bad("simulate: gap, record_every, t_test and trajectories must be positive"));
        }
        if let Some(t) = s.theta {
            NystromParams::new(t[0], t[1]).map_err(|e| bad(format!("simulate.theta: {e}")))?;
        }
        NystromParams::new(self.fit.theta0[0], self.fit.theta0[1]).map_err(|e| bad(format!("fit.theta0: {e}")))?;
        let a = &self.analysis;
        if a.bins == 0 || !(a.range[1] > a.range[0]) || !(a.max_lag >= 0.0) {
            return Err(bad("analysis: need bins >= 1, range[1] > range[0] and max_lag >= 0"));
        }
        if let Some(l) = &self.linear {
            if l.delta_omega.iter().any(|x| !(*x > 0.0)) || l.gammas.iter().any(|g| !(*g >= 0.0)) {
                return Err(bad("linear: delta_omega must be positive and gammas non-negative"));
            }
        }
        let stochastic_gen = matches!(self.data.generator, SchemeChoice::Named(SchemeName::Baoab));
        if stochastic_gen && self.langevin.is_none() {
            return Err(bad("the BAOAB generator needs a [langevin] section"));
        }
        if self.data.initial == InitialKind::Stationary && self.langevin.is_none() {
            return Err(bad("stationary initial states need a [langevin] section"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model, CliError> {
        match self.model {
            ModelConfig::Fpu { springs, omega } => FpuModel::new(springs, omega).map(Model::Fpu),
            ModelConfig::Linear { omega_sq } => LinearOscillator::new(omega_sq, 1).map(Model::Linear),
        }
        .map_err(|e| bad(format!("model: {e}")))
    }

    pub fn is_stochastic(&self) -> bool {
        self.langevin.is_some()
    }

    pub fn langevin(&self) -> Result<LangevinParams, CliError> {
        self.langevin.ok_or_else(|| bad("this command needs a [langevin] section"))
    }

    /// Fine-step data generator.
    pub fn generator(&self) -> Result<SchemeSpec, CliError> {
        self.scheme_spec(self.data.generator, None, self.data.h)
    }

    /// A scheme at `step`; Nyström members pick up the Langevin splitting
    /// when the config has friction and noise.
    pub fn scheme_spec(&self, choice: SchemeChoice, theta: Option<NystromParams>, step: f64) -> Result<SchemeSpec, CliError> {
        let params = match choice {
            SchemeChoice::Named(SchemeName::Baoab) => {
                return Ok(SchemeSpec::baoab(self.langevin()?, step));
            }
            SchemeChoice::Named(SchemeName::Verlet) => NystromParams::VERLET,
            SchemeChoice::Named(SchemeName::Nystrom) => theta.unwrap_or(NystromParams::VERLET),
            SchemeChoice::Params([b1, beta1]) => NystromParams::new(b1, beta1).map_err(|e| bad(e.to_string()))?,
        };
        let spec = match self.langevin {
            Some(l) => SchemeSpec::stochastic_nystrom(params, l, step),
            None => SchemeSpec::nystrom(params, step),
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        Ok(spec)
    }

    pub fn long_run_config(&self) -> LongRunConfig {
        self.long_run.unwrap_or_default()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Values given on the command line take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// `dotted.key=value` pairs; values are TOML, bare words are strings.
    pub set: Vec<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &ExperimentConfig) -> Result<ExperimentConfig, CliError> {
        let mut root = toml::Value::try_from(cfg).map_err(|e| bad(e.to_string()))?;
        for item in &self.set {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| bad(format!("--set expects key=value, got {item:?}")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields at least one item");
            let mut node = &mut root;
            for p in parents {
                let table = node.as_table_mut().ok_or_else(|| bad(format!("{key}: {p} is not a table")))?;
                node = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            node.as_table_mut()
                .ok_or_else(|| bad(format!("{key}: parent is not a table")))?
                .insert(last.to_string(), value);
        }
        if let Some(s) = self.seed {
            let s = i64::try_from(s).map_err(|_| bad(format!("seed {s} does not fit in a TOML integer")))?;
            root.as_table_mut()
                .expect("config serializes to a table")
                .insert("seed".into(), toml::Value::Integer(s));
        }
        let text = toml::to_string(&root).map_err(|e| bad(e.to_string()))?;
        ExperimentConfig::from_toml(&text)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
