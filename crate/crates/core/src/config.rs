//! Experiment configuration: a single TOML file with sections for the model,
//! grid, solver, particle engine, and per-experiment settings, plus dotted-key
//! overrides from the command line. Reruns of the same resolved config are
//! byte-reproducible, so the config hash stamped into every CSV identifies
//! the run.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelSpec, Profile};
use crate::mesh::Mesh;
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}`: {problem}")]
    Invalid { field: String, problem: String },
    #[error("override `{0}` is not of the form section.key=value")]
    BadOverride(String),
}

fn invalid(field: &str, problem: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        problem: problem.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Evolve,
    Converge,
    McCompare,
    Asymptotic,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::Converge => "converge",
            ExperimentKind::McCompare => "mc-compare",
            ExperimentKind::Asymptotic => "asymptotic",
        }
    }
}

/// Tumbling-rate registry: the constant kernels the experiments use. The
/// library API accepts arbitrary rate closures; the config file exposes the
/// named entries only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateConfig {
    /// One constant rate everywhere.
    Constant { k: f64 },
    /// Constant bulk rate with distinct wall rates.
    Split { bulk: f64, top: f64, bottom: f64 },
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig::Constant { k: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileConfig {
    Triangular,
    CosineSquared,
}

impl From<ProfileConfig> for Profile {
    fn from(p: ProfileConfig) -> Profile {
        match p {
            ProfileConfig::Triangular => Profile::Triangular,
            ProfileConfig::CosineSquared => Profile::CosineSquared,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub v: f64,
    pub l: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub rate: RateConfig,
    #[serde(default = "default_profile")]
    pub profile: ProfileConfig,
}

fn default_profile() -> ProfileConfig {
    ProfileConfig::Triangular
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            v: 20.0,
            l: 10.0,
            epsilon: 0.05,
            rate: RateConfig::default(),
            profile: default_profile(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Half-count in y: the full grid is 2*n_y rows.
    pub n_y: usize,
    pub n_theta: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { n_y: 100, n_theta: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
    pub t_end: f64,
    pub steady_tol: f64,
    pub cfl_guard: bool,
    /// Times at which state snapshots are written (multiples of dt).
    pub snapshot_times: Vec<f64>,
    /// Steps between diagnostics samples.
    pub diag_stride: usize,
    /// Compute the steady state first and include entropy/sup-gap columns.
    pub entropy_reference: bool,
    /// Step budget (in time units) for steady-state searches.
    pub steady_budget: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            dt: 1e-3,
            t_end: 4.0,
            steady_tol: 1e-10,
            cfl_guard: true,
            snapshot_times: vec![],
            diag_stride: 10,
            entropy_reference: false,
            steady_budget: 200.0,
        }
    }
}

impl SolverSection {
    pub fn to_solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            t_end: self.t_end,
            steady_tol: self.steady_tol,
            cfl_guard: self.cfl_guard,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_cell: usize,
    pub seed: u64,
    /// Worker threads for the particle engine; 0 uses the global default.
    pub workers: usize,
    /// Particle time step; defaults to the solver dt.
    pub dt: Option<f64>,
    pub bootstrap_reps: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            n_cell: 1_000_000,
            seed: 0,
            workers: 0,
            dt: None,
            bootstrap_reps: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSection {
    /// Half-count pairs `[n_y, n_theta]` to solve and compare.
    pub resolutions: Vec<[usize; 2]>,
    /// Reference half-count (square grid).
    pub reference: usize,
    /// Comparison time.
    pub t: f64,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        ConvergeSection {
            resolutions: vec![[8, 8], [16, 16], [32, 32], [64, 64], [128, 128]],
            reference: 256,
            t: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymptoticSection {
    /// Scaling-parameter ladder, descending.
    pub epsilons: Vec<f64>,
    /// Per-rung time step; when absent each rung uses
    /// `min(solver.dt, 0.9 / (V/dy + k_max/eps^2))`.
    pub dt: Option<f64>,
}

impl Default for AsymptoticSection {
    fn default() -> Self {
        AsymptoticSection {
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            dt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Default experiment when the CLI subcommand does not override it.
    pub experiment: Option<ExperimentKind>,
    pub model: ModelSection,
    pub mesh: MeshSection,
    pub solver: SolverSection,
    pub mc: McSection,
    pub converge: ConvergeSection,
    pub asymptotic: AsymptoticSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Parse with dotted-key overrides (`section.key=value`) applied before
    /// validation.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: toml::Value = toml::from_str(text)?;
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let cfg: ExperimentConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |field: &str, v: f64| -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive and finite, got {v}")))
            }
        };
        pos("model.v", self.model.v)?;
        pos("model.l", self.model.l)?;
        pos("model.epsilon", self.model.epsilon)?;
        match self.model.rate {
            RateConfig::Constant { k } => pos("model.rate.k", k)?,
            RateConfig::Split { bulk, top, bottom } => {
                pos("model.rate.bulk", bulk)?;
                pos("model.rate.top", top)?;
                pos("model.rate.bottom", bottom)?;
            }
        }
        if self.mesh.n_y < 2 || self.mesh.n_theta < 2 {
            return Err(invalid("mesh", "half-counts must be >= 2"));
        }
        pos("solver.dt", self.solver.dt)?;
        pos("solver.steady_tol", self.solver.steady_tol)?;
        if self.solver.t_end < 0.0 {
            return Err(invalid("solver.t_end", "must be >= 0"));
        }
        for &t in &self.solver.snapshot_times {
            if t < 0.0 || t > self.solver.t_end {
                return Err(invalid(
                    "solver.snapshot_times",
                    format!("time {t} outside [0, t_end]"),
                ));
            }
        }
        if self.solver.diag_stride == 0 {
            return Err(invalid("solver.diag_stride", "must be >= 1"));
        }
        if self.mc.n_cell == 0 {
            return Err(invalid("mc.n_cell", "must be >= 1"));
        }
        if self.mc.bootstrap_reps == 0 {
            return Err(invalid("mc.bootstrap_reps", "must be >= 1"));
        }
        if let Some(dt) = self.mc.dt {
            pos("mc.dt", dt)?;
        }
        if self.converge.resolutions.is_empty() {
            return Err(invalid("converge.resolutions", "need at least one pair"));
        }
        for pair in &self.converge.resolutions {
            if pair[0] < 2 || pair[1] < 2 {
                return Err(invalid("converge.resolutions", "half-counts must be >= 2"));
            }
            if pair[0] > self.converge.reference || pair[1] > self.converge.reference {
                return Err(invalid(
                    "converge.reference",
                    format!(
                        "reference {} is coarser than test grid {}x{}",
                        self.converge.reference, pair[0], pair[1]
                    ),
                ));
            }
        }
        pos("converge.t", self.converge.t)?;
        if self.asymptotic.epsilons.is_empty() {
            return Err(invalid("asymptotic.epsilons", "need at least one value"));
        }
        for pair in self.asymptotic.epsilons.windows(2) {
            if pair[1] >= pair[0] {
                return Err(invalid("asymptotic.epsilons", "must be strictly descending"));
            }
        }
        for &eps in &self.asymptotic.epsilons {
            pos("asymptotic.epsilons", eps)?;
        }
        if let Some(dt) = self.asymptotic.dt {
            pos("asymptotic.dt", dt)?;
        }
        Ok(())
    }

    /// Kernel specification from the named rate registry.
    pub fn kernel_spec(&self) -> Result<KernelSpec, crate::kernel::KernelError> {
        self.kernel_spec_with_epsilon(self.model.epsilon)
    }

    /// Same rates and profile with a substituted scaling parameter (used by
    /// the asymptotic ladder).
    pub fn kernel_spec_with_epsilon(
        &self,
        epsilon: f64,
    ) -> Result<KernelSpec, crate::kernel::KernelError> {
        let profile: Profile = self.model.profile.into();
        match self.model.rate {
            RateConfig::Constant { k } => KernelSpec::constant(k, profile, epsilon),
            RateConfig::Split { bulk, top, bottom } => {
                KernelSpec::with_wall_rates(bulk, top, bottom, profile, epsilon)
            }
        }
    }

    /// Largest named rate; enters the CFL bound.
    pub fn max_rate(&self) -> f64 {
        match self.model.rate {
            RateConfig::Constant { k } => k,
            RateConfig::Split { bulk, top, bottom } => bulk.max(top).max(bottom),
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh, crate::mesh::MeshError> {
        Mesh::new(self.mesh.n_y, self.mesh.n_theta, self.model.l, self.model.v)
    }

    /// Canonical serialization hash; stamped into CSV provenance lines.
    /// Worker count is execution machinery, not experiment identity, so it
    /// is excluded and reruns on different pools hash identically.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut canonical_cfg = self.clone();
        canonical_cfg.mc.workers = 0;
        let canonical = toml::to_string(&canonical_cfg).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Arc-able rate closures for custom kernels built outside the registry.
pub type BulkRateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

fn apply_override(root: &mut toml::Value, entry: &str) -> Result<(), ConfigError> {
    let (path, raw_value) = entry
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(entry.to_string()))?;
    let parsed: toml::Value = match raw_value.parse::<i64>() {
        Ok(i) => toml::Value::Integer(i),
        Err(_) => match raw_value.parse::<f64>() {
            Ok(f) => toml::Value::Float(f),
            Err(_) => match raw_value {
                "true" => toml::Value::Boolean(true),
                "false" => toml::Value::Boolean(false),
                other => {
                    // Arrays and quoted strings parse as TOML fragments.
                    let fragment = format!("v = {other}");
                    match toml::from_str::<toml::Value>(&fragment) {
                        Ok(toml::Value::Table(mut t)) => t.remove("v").unwrap(),
                        _ => toml::Value::String(other.to_string()),
                    }
                }
            },
        },
    };
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::BadOverride(entry.to_string()));
    }
    for segment in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(entry.to_string()))?;
        node = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError::BadOverride(entry.to_string()))?;
    table.insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}
