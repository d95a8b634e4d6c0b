//! Experiment configuration: a TOML file with defaults for everything except
//! the plant.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use deepc_attack::plant::{self, ContinuousLti, DiscreteLti};
use deepc_attack::Method;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}parse error{}: {message}", location_prefix(.path), line_suffix(*.line))]
    Parse {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn location_prefix(path: &Option<PathBuf>) -> String {
    path.as_ref().map_or(String::new(), |p| format!("{}: ", p.display()))
}

fn line_suffix(line: Option<usize>) -> String {
    line.map_or(String::new(), |l| format!(" at line {l}"))
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    #[serde(default)]
    pub dpc: DpcConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantConfig {
    /// Two unit masses coupled by unit springs, each mass actuated.
    OscillatingMasses {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
    /// Continuous-time `(A, B, C)` discretized with a zero-order hold.
    Continuous {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        delta: f64,
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
    Discrete {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpcConfig {
    pub sigma: usize,
    pub ell: usize,
    pub ng: usize,
    pub lambda_g: f64,
    pub lambda_s: f64,
    /// Per-output-channel tracking weights; defaults to 10 for every channel.
    pub q: Option<Vec<f64>>,
    /// Per-input-channel weights; defaults to 1 for every channel.
    pub r: Option<Vec<f64>>,
    /// Per-channel input box; defaults to `[-1, 1]`.
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    /// Per-channel output box; defaults to `[-5, 5]`.
    pub y_min: Option<Vec<f64>>,
    pub y_max: Option<Vec<f64>>,
}

impl Default for DpcConfig {
    fn default() -> Self {
        Self {
            sigma: 6,
            ell: 25,
            ng: 500,
            lambda_g: 100.0,
            lambda_s: 1e6,
            q: None,
            r: None,
            u_min: None,
            u_max: None,
            y_min: None,
            y_max: None,
        }
    }
}

/// Offline excitation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// Constant output set-point.
    Setpoint {
        y: Vec<f64>,
        #[serde(default)]
        u: InputReference,
    },
    /// `offset + amplitude · sin(frequency · t + phase)` per output channel.
    Sinusoid {
        amplitude: Vec<f64>,
        #[serde(default = "unit")]
        frequency: f64,
        #[serde(default)]
        phase: Option<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
        #[serde(default)]
        u: InputReference,
    },
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self::Setpoint {
            y: vec![1.0, 1.0, 0.0, 0.0],
            u: InputReference::default(),
        }
    }
}

/// Input reference: the equilibrium input holding a set-point (computed from
/// the plant), or an explicit constant per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputReference {
    Named(NamedInput),
    Constant(Vec<f64>),
}

impl Default for InputReference {
    fn default() -> Self {
        Self::Named(NamedInput::Equilibrium)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedInput {
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    #[default]
    None,
    Random,
    #[serde(alias = "algorithm1")]
    Implicit,
    Oracle,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::None => "none",
            AttackMode::Random => "random",
            AttackMode::Implicit => "implicit",
            AttackMode::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub rho: f64,
    pub seed: u64,
    pub target: TargetConfig,
    /// Sphere samples per oracle evaluation.
    pub oracle_samples: usize,
    /// Replanning instant (0-based) at which the `oracle` command evaluates.
    pub oracle_replan: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mode: AttackMode::None,
            rho: 0.05,
            seed: 1,
            target: TargetConfig::default(),
            oracle_samples: 500,
            oracle_replan: 1,
        }
    }
}

/// Attacker's desired input `ũ_i(t) = amplitude_i · sin(frequency · t + phase_i)`
/// at absolute time `t = kΔ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub amplitude: Option<Vec<f64>>,
    pub frequency: f64,
    pub phase: Option<Vec<f64>>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            amplitude: None,
            frequency: 1.0,
            phase: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    #[default]
    Admm,
    Pipg,
}

impl From<SolverMethod> for Method {
    fn from(m: SolverMethod) -> Self {
        match m {
            SolverMethod::Admm => Method::Admm,
            SolverMethod::Pipg => Method::Pipg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Total closed-loop steps, warmup included.
    pub steps: usize,
    pub replan_interval: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverMethod,
    /// First step of the metric window; defaults to the end of the warmup.
    pub metric_start: Option<usize>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            replan_interval: 10,
            tol: 1e-9,
            max_iter: 200_000,
            solver: SolverMethod::Admm,
            metric_start: None,
            out: PathBuf::from("out"),
        }
    }
}

fn unit() -> f64 {
    1.0
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

impl ExperimentConfig {
    /// Parse and validate TOML text.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: None,
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// The plant after discretization, if needed.
    pub fn discrete_plant(&self) -> Result<DiscreteLti, ConfigError> {
        match &self.plant {
            PlantConfig::OscillatingMasses { delta, .. } => {
                plant::discretize(&plant::oscillating_masses(*delta)).map_err(|e| invalid("plant.delta", e.to_string()))
            }
            PlantConfig::Continuous { a, b, c, delta, .. } => {
                let sys = ContinuousLti::new(
                    matrix("plant.a", a)?,
                    matrix("plant.b", b)?,
                    matrix("plant.c", c)?,
                    *delta,
                )
                .map_err(|e| invalid("plant", e.to_string()))?;
                plant::discretize(&sys).map_err(|e| invalid("plant", e.to_string()))
            }
            PlantConfig::Discrete { a, b, c, .. } => {
                DiscreteLti::new(matrix("plant.a", a)?, matrix("plant.b", b)?, matrix("plant.c", c)?)
                    .map_err(|e| invalid("plant", e.to_string()))
            }
        }
    }

    /// Sampling period; discrete plants use a unit period.
    pub fn delta(&self) -> f64 {
        match &self.plant {
            PlantConfig::OscillatingMasses { delta, .. } | PlantConfig::Continuous { delta, .. } => *delta,
            PlantConfig::Discrete { .. } => 1.0,
        }
    }

    pub fn initial_state(&self, nx: usize) -> DVector<f64> {
        let x0 = match &self.plant {
            PlantConfig::OscillatingMasses { x0, .. }
            | PlantConfig::Continuous { x0, .. }
            | PlantConfig::Discrete { x0, .. } => x0,
        };
        x0.as_ref()
            .map_or_else(|| DVector::zeros(nx), |v| DVector::from_column_slice(v))
    }

    pub fn output_weights(&self, ny: usize) -> Vec<f64> {
        self.dpc.q.clone().unwrap_or_else(|| vec![10.0; ny])
    }

    pub fn input_weights(&self, nu: usize) -> Vec<f64> {
        self.dpc.r.clone().unwrap_or_else(|| vec![1.0; nu])
    }

    pub fn input_box(&self, nu: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.dpc.u_min.clone().unwrap_or_else(|| vec![-1.0; nu]),
            self.dpc.u_max.clone().unwrap_or_else(|| vec![1.0; nu]),
        )
    }

    pub fn output_box(&self, ny: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.dpc.y_min.clone().unwrap_or_else(|| vec![-5.0; ny]),
            self.dpc.y_max.clone().unwrap_or_else(|| vec![5.0; ny]),
        )
    }

    pub fn target_amplitude(&self, nu: usize) -> Vec<f64> {
        self.attack.target.amplitude.clone().unwrap_or_else(|| vec![1.0; nu])
    }

    pub fn target_phase(&self, nu: usize) -> Vec<f64> {
        self.attack.target.phase.clone().unwrap_or_else(|| vec![0.0; nu])
    }

    pub fn metric_start(&self) -> usize {
        self.run.metric_start.unwrap_or(self.dpc.sigma)
    }

    /// Overrides the offline-data and attack seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.attack.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sys = self.discrete_plant()?;
        let (nx, nu, ny) = (sys.nx(), sys.nu(), sys.ny());
        if let PlantConfig::OscillatingMasses { delta, .. } | PlantConfig::Continuous { delta, .. } = &self.plant {
            positive("plant.delta", *delta)?;
        }
        let x0 = self.initial_state(nx);
        length("plant.x0", nx, x0.len())?;
        finite("plant.x0", x0.as_slice())?;

        let d = &self.dpc;
        at_least_one("dpc.sigma", d.sigma)?;
        at_least_one("dpc.ell", d.ell)?;
        at_least_one("dpc.ng", d.ng)?;
        non_negative("dpc.lambda_g", d.lambda_g)?;
        non_negative("dpc.lambda_s", d.lambda_s)?;
        let q = self.output_weights(ny);
        length("dpc.q", ny, q.len())?;
        q.iter().try_for_each(|v| non_negative("dpc.q", *v))?;
        let r = self.input_weights(nu);
        length("dpc.r", nu, r.len())?;
        r.iter().try_for_each(|v| non_negative("dpc.r", *v))?;
        let (lo, hi) = self.input_box(nu);
        length("dpc.u_min", nu, lo.len())?;
        length("dpc.u_max", nu, hi.len())?;
        ordered("dpc.u_min", &lo, &hi)?;
        let (lo, hi) = self.output_box(ny);
        length("dpc.y_min", ny, lo.len())?;
        length("dpc.y_max", ny, hi.len())?;
        ordered("dpc.y_min", &lo, &hi)?;

        non_negative("data.amplitude", self.data.amplitude)?;

        match &self.reference {
            ReferenceConfig::Setpoint { y, u } => {
                length("reference.y", ny, y.len())?;
                finite("reference.y", y)?;
                if let InputReference::Constant(u) = u {
                    length("reference.u", nu, u.len())?;
                    finite("reference.u", u)?;
                }
            }
            ReferenceConfig::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
                u,
            } => {
                length("reference.amplitude", ny, amplitude.len())?;
                finite("reference.amplitude", amplitude)?;
                finite("reference.frequency", &[*frequency])?;
                if let Some(p) = phase {
                    length("reference.phase", ny, p.len())?;
                }
                if let Some(o) = offset {
                    length("reference.offset", ny, o.len())?;
                }
                match u {
                    InputReference::Constant(u) => length("reference.u", nu, u.len())?,
                    InputReference::Named(NamedInput::Equilibrium) => {
                        return Err(invalid(
                            "reference.u",
                            "a sinusoidal reference has no equilibrium input; give a constant list",
                        ))
                    }
                }
            }
        }

        let a = &self.attack;
        if !(a.rho >= 0.0) || !a.rho.is_finite() {
            return Err(invalid(
                "attack.rho",
                format!("must be a non-negative number, got {}", a.rho),
            ));
        }
        at_least_one("attack.oracle_samples", a.oracle_samples)?;
        length("attack.target.amplitude", nu, self.target_amplitude(nu).len())?;
        length("attack.target.phase", nu, self.target_phase(nu).len())?;
        finite("attack.target.frequency", &[a.target.frequency])?;

        let run = &self.run;
        at_least_one("run.replan_interval", run.replan_interval)?;
        if run.steps <= d.sigma {
            return Err(invalid(
                "run.steps",
                format!("must exceed the warmup length {} to leave room for control", d.sigma),
            ));
        }
        positive("run.tol", run.tol)?;
        at_least_one("run.max_iter", run.max_iter)?;
        if self.metric_start() >= run.steps {
            return Err(invalid("run.metric_start", "must be smaller than run.steps"));
        }
        Ok(())
    }
}

/// Read, parse and validate a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        ConfigError::Parse { line, message, .. } => ConfigError::Parse {
            path: Some(path.to_path_buf()),
            line,
            message,
        },
        other => other,
    })
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return Err(invalid(field, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != nc) {
        return Err(invalid(field, "rows have different lengths"));
    }
    finite(field, &rows.concat())?;
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn length(field: &str, expected: usize, found: usize) -> Result<(), ConfigError> {
    if expected != found {
        return Err(invalid(field, format!("expected {expected} entries, found {found}")));
    }
    Ok(())
}

fn finite(field: &str, values: &[f64]) -> Result<(), ConfigError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(field, format!("must be positive, got {v}")));
    }
    Ok(())
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(invalid(field, format!("must be non-negative, got {v}")));
    }
    Ok(())
}

fn at_least_one(field: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(invalid(field, "must be at least 1"));
    }
    Ok(())
}

fn ordered(field: &str, lo: &[f64], hi: &[f64]) -> Result<(), ConfigError> {
    if lo.iter().zip(hi).any(|(l, h)| l > h || l.is_nan() || h.is_nan()) {
        return Err(invalid(field, "lower bounds must not exceed upper bounds"));
    }
    Ok(())
}
