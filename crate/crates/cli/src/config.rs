//! Experiment configuration: the TOML file schema, command-line overrides,
//! and resolution into a fully explicit configuration.
//!
//! Precedence is built-in defaults < config file < command-line flags. The
//! resolved configuration has every field filled in and is written next to
//! the results, so any run can be repeated from its own echo.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use simplex_reduction::diffusion::CrossingRule;
use simplex_reduction::harness::Regime;

pub const DEFAULT_TRAJECTORIES: u64 = 100_000;
pub const DEFAULT_SCALING_TRAJECTORIES: u64 = 10_000;
pub const DEFAULT_EPISODES: u64 = 100;
pub const DEFAULT_ORACLE_POINTS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Oracle,
    TheoremSuite,
    Scaling,
    QuantumDemo,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Oracle => "oracle",
            Mode::TheoremSuite => "theorem-suite",
            Mode::Scaling => "scaling",
            Mode::QuantumDemo => "quantum-demo",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Report,
    #[default]
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn report(self) -> bool {
        matches!(self, Format::Report | Format::Both)
    }
}

/// Named motion presets shared by `simulate`, `quantum-demo` and the suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeName {
    Isotropic,
    Anisotropic,
    Inhomogeneous,
    Drifted,
}

impl From<RegimeName> for Regime {
    fn from(r: RegimeName) -> Self {
        match r {
            RegimeName::Isotropic => Regime::Isotropic,
            RegimeName::Anisotropic => Regime::Anisotropic,
            RegimeName::Inhomogeneous => Regime::Inhomogeneous,
            RegimeName::Drifted => Regime::Drifted,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Constant,
    Linear,
    Sinusoidal,
    Tabulated,
}

/// Diffusion profile on the unit interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub kind: ProfileKind,
    /// `D` for `constant`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Coefficient `c` of `1 + cξ` or `1 + c sin(πξ)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ds: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

/// What the absorption counts are compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpectedSpec {
    /// `"start"`, `"oracle"` or `"none"`.
    Named(String),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Preset motion; exclusive with `correlation` and `profile`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeName>,
    /// Constant chart correlation matrix, rows of length `n − 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Constant chart drift; only with `correlation`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    /// Two-state motion given by an interval profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_dt_convergence: Option<bool>,
    /// `"bridge"` (default) or `"endpoint"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossing: Option<CrossingRule>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_dt_convergence: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumSection {
    /// Fixture with the density matrix and projector family; relative paths
    /// are taken from the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Replace the fixture state by its block-diagonal part first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decohere: Option<bool>,
}

/// The configuration document. Only the section of the selected mode is read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(rename = "theorem-suite", skip_serializing_if = "Option::is_none")]
    pub theorem_suite: Option<SuiteSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSection>,
    #[serde(rename = "quantum-demo", skip_serializing_if = "Option::is_none")]
    pub quantum_demo: Option<QuantumSection>,
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trajectories: Option<u64>,
    pub dt: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub start: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg = Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(q) = cfg.quantum_demo.as_mut() {
            if let Some(f) = q.fixture.as_mut() {
                if f.is_relative() {
                    let base = path.parent().unwrap_or_else(|| Path::new("."));
                    *f = base.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies overrides and defaults for `mode`, validates, and returns a
    /// configuration with every field of that mode set.
    pub fn resolve(mut self, mode: Mode, flags: &Overrides) -> Result<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                bail!("mode: config file selects `{m}` but the command is `{mode}`");
            }
        }
        let mut out = ExperimentConfig {
            mode: Some(mode),
            out: Some(flags.out.clone().or(self.out.take()).unwrap_or_else(|| PathBuf::from("results"))),
            format: Some(flags.format.or(self.format).unwrap_or_default()),
            seed: Some(flags.seed.or(self.seed).unwrap_or(0)),
            workers: Some(flags.workers.or(self.workers).unwrap_or(0)),
            ..Default::default()
        };
        match mode {
            Mode::Simulate => out.simulate = Some(resolve_simulate(self.simulate.unwrap_or_default(), flags)?),
            Mode::Oracle => out.oracle = Some(resolve_oracle(self.oracle.unwrap_or_default())?),
            Mode::TheoremSuite => {
                out.theorem_suite = Some(resolve_suite(self.theorem_suite.unwrap_or_default(), flags)?)
            }
            Mode::Scaling => out.scaling = Some(resolve_scaling(self.scaling.unwrap_or_default(), flags)?),
            Mode::QuantumDemo => {
                out.quantum_demo = Some(resolve_quantum(self.quantum_demo.unwrap_or_default(), flags)?)
            }
        }
        Ok(out)
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        bail!("{field}: must be a positive number, got {v}");
    }
    Ok(())
}

fn check_start(field: &str, start: &[f64]) -> Result<()> {
    if start.len() < 2 {
        bail!("{field}: needs at least two entries, got {}", start.len());
    }
    if let Some(p) = start.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        bail!("{field}: entries must be non-negative, found {p}");
    }
    let sum: f64 = start.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        let shown = format!("{sum:.12}");
        let shown = shown.trim_end_matches('0').trim_end_matches('.');
        bail!("{field}: entries sum to {shown}, expected 1");
    }
    Ok(())
}

fn check_profile(field: &str, p: &ProfileSection) -> Result<()> {
    let need = |name: &str, present: bool| -> Result<()> {
        if !present {
            bail!("{field}.{name}: required for kind {:?}", p.kind);
        }
        Ok(())
    };
    let forbid = |name: &str, present: bool| -> Result<()> {
        if present {
            bail!("{field}.{name}: not used by kind {:?}", p.kind);
        }
        Ok(())
    };
    match p.kind {
        ProfileKind::Constant => {
            need("value", p.value.is_some())?;
            forbid("c", p.c.is_some())?;
            forbid("xs", p.xs.is_some() || p.ds.is_some())?;
        }
        ProfileKind::Linear | ProfileKind::Sinusoidal => {
            need("c", p.c.is_some())?;
            forbid("value", p.value.is_some())?;
            forbid("xs", p.xs.is_some() || p.ds.is_some())?;
        }
        ProfileKind::Tabulated => {
            need("xs", p.xs.is_some())?;
            need("ds", p.ds.is_some())?;
            forbid("value", p.value.is_some())?;
            forbid("c", p.c.is_some())?;
        }
    }
    let profile = crate::run::build_profile(&resolve_profile(p.clone()))
        .map_err(|e| anyhow::anyhow!("{field}: {e}"))?;
    profile.validate().map_err(|e| anyhow::anyhow!("{field}: {e}"))?;
    Ok(())
}

fn resolve_profile(mut p: ProfileSection) -> ProfileSection {
    p.nu = Some(p.nu.unwrap_or(0.0));
    p.grid = Some(p.grid.unwrap_or(simplex_reduction::oracle::DEFAULT_GRID));
    p
}

fn resolve_simulate(mut s: SimulateSection, flags: &Overrides) -> Result<SimulateSection> {
    if let Some(start) = &flags.start {
        s.start = Some(start.clone());
    }
    let start = s.start.clone().context("simulate.start: required (or pass --start)")?;
    check_start("simulate.start", &start)?;
    let n = start.len();
    let chosen = [s.regime.is_some(), s.correlation.is_some(), s.profile.is_some()];
    if chosen.iter().filter(|c| **c).count() > 1 {
        bail!("simulate: give at most one of `regime`, `correlation` and `profile`");
    }
    if s.drift.is_some() && s.correlation.is_none() {
        bail!("simulate.drift: only allowed together with `correlation`");
    }
    if let Some(c) = &s.correlation {
        if c.len() != n - 1 || c.iter().any(|r| r.len() != n - 1) {
            bail!("simulate.correlation: must be {0}×{0} for a start of length {n}", n - 1);
        }
        s.drift = Some(s.drift.take().unwrap_or_else(|| vec![0.0; n - 1]));
        if s.drift.as_ref().map_or(0, |d| d.len()) != n - 1 {
            bail!("simulate.drift: must have {} entries", n - 1);
        }
    }
    if let Some(p) = s.profile.take() {
        if n != 2 {
            bail!("simulate.profile: interval profiles need a start of length 2, got {n}");
        }
        check_profile("simulate.profile", &p)?;
        s.profile = Some(resolve_profile(p));
    }
    if !chosen.iter().any(|c| *c) {
        s.regime = Some(RegimeName::Isotropic);
    }
    s.trajectories = Some(flags.trajectories.or(s.trajectories).unwrap_or(DEFAULT_TRAJECTORIES));
    if s.trajectories == Some(0) {
        bail!("simulate.trajectories: must be at least 1");
    }
    let tau = s.tau.unwrap_or(1.0);
    check_positive("simulate.tau", tau)?;
    s.tau = Some(tau);
    s.max_steps = Some(s.max_steps.unwrap_or(simplex_reduction::harness::DEFAULT_MAX_STEPS));
    s.check_dt_convergence = Some(s.check_dt_convergence.unwrap_or(false));
    s.crossing = Some(s.crossing.unwrap_or_default());
    match s.expected.take().unwrap_or_else(|| ExpectedSpec::Named("start".into())) {
        ExpectedSpec::Named(name) => match name.as_str() {
            "start" | "none" => s.expected = Some(ExpectedSpec::Named(name)),
            "oracle" => {
                if n != 2 {
                    bail!("simulate.expected: `oracle` is only available for two-state runs");
                }
                s.expected = Some(ExpectedSpec::Named(name));
            }
            other => bail!("simulate.expected: unknown value `{other}` (start, oracle, none or a list)"),
        },
        ExpectedSpec::Values(v) => {
            if v.len() != n {
                bail!("simulate.expected: needs {n} entries, got {}", v.len());
            }
            check_start("simulate.expected", &v)?;
            s.expected = Some(ExpectedSpec::Values(v));
        }
    }
    // The step size is fixed here so that the echo pins it exactly.
    let dt = match flags.dt.or(s.dt) {
        Some(dt) => dt,
        None => crate::run::simulate_spec(&s)?.default_dt()?,
    };
    check_positive("simulate.dt", dt)?;
    s.dt = Some(dt);
    Ok(s)
}

fn resolve_oracle(mut o: OracleSection) -> Result<OracleSection> {
    let p = o.profile.take().context("oracle.profile: required")?;
    check_profile("oracle.profile", &p)?;
    o.profile = Some(resolve_profile(p));
    let alphas = o.alphas.take().unwrap_or_else(|| {
        (0..DEFAULT_ORACLE_POINTS)
            .map(|i| i as f64 / (DEFAULT_ORACLE_POINTS - 1) as f64)
            .collect()
    });
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        bail!("oracle.alphas: {a} is outside [0, 1]");
    }
    o.alphas = Some(alphas);
    let modes = o.modes.unwrap_or(simplex_reduction::oracle::DEFAULT_MODES);
    let grid = o.profile.as_ref().and_then(|p| p.grid).unwrap_or_default();
    if modes == 0 || modes > grid / 4 {
        bail!("oracle.modes: must be between 1 and grid/4 = {}", grid / 4);
    }
    o.modes = Some(modes);
    Ok(o)
}

fn resolve_suite(mut s: SuiteSection, flags: &Overrides) -> Result<SuiteSection> {
    let n_values = s.n_values.take().unwrap_or_else(|| vec![2, 3, 4]);
    if n_values.is_empty() {
        bail!("theorem-suite.n_values: must not be empty");
    }
    if let Some(n) = n_values.iter().find(|n| **n < 2) {
        bail!("theorem-suite.n_values: every n must be at least 2, got {n}");
    }
    let starts = s.starts.take().unwrap_or_default();
    for (i, st) in starts.iter().enumerate() {
        check_start(&format!("theorem-suite.starts[{i}]"), st)?;
    }
    s.n_values = Some(n_values);
    s.starts = Some(starts);
    s.trajectories = Some(flags.trajectories.or(s.trajectories).unwrap_or(DEFAULT_TRAJECTORIES));
    if s.trajectories == Some(0) {
        bail!("theorem-suite.trajectories: must be at least 1");
    }
    let tau = s.tau.unwrap_or(1.0);
    check_positive("theorem-suite.tau", tau)?;
    s.tau = Some(tau);
    s.max_steps = Some(s.max_steps.unwrap_or(simplex_reduction::harness::DEFAULT_MAX_STEPS));
    s.check_dt_convergence = Some(s.check_dt_convergence.unwrap_or(false));
    Ok(s)
}

fn resolve_scaling(mut s: ScalingSection, flags: &Overrides) -> Result<ScalingSection> {
    let n_values = s.n_values.take().unwrap_or_else(|| vec![2, 3, 4, 5]);
    if n_values.is_empty() || n_values.iter().any(|n| *n < 2) {
        bail!("scaling.n_values: needs at least one n, each at least 2");
    }
    s.n_values = Some(n_values);
    s.trajectories = Some(flags.trajectories.or(s.trajectories).unwrap_or(DEFAULT_SCALING_TRAJECTORIES));
    if s.trajectories == Some(0) {
        bail!("scaling.trajectories: must be at least 1");
    }
    for (field, v) in [("scaling.tau", &mut s.tau), ("scaling.sigma2", &mut s.sigma2)] {
        let x = v.unwrap_or(1.0);
        check_positive(field, x)?;
        *v = Some(x);
    }
    s.max_steps = Some(s.max_steps.unwrap_or(simplex_reduction::harness::DEFAULT_MAX_STEPS));
    Ok(s)
}

fn resolve_quantum(mut q: QuantumSection, flags: &Overrides) -> Result<QuantumSection> {
    let fixture = q.fixture.clone().context("quantum-demo.fixture: required")?;
    // Absolute, so the resolved echo works from any directory.
    let fixture = std::fs::canonicalize(&fixture)
        .with_context(|| format!("quantum-demo.fixture: cannot open {}", fixture.display()))?;
    q.fixture = Some(fixture.clone());
    let fx = simplex_reduction::quantum::fixture::Fixture::load(&fixture)
        .map_err(|e| anyhow::anyhow!("quantum-demo.fixture: {e}"))?;
    let family = fx.family().map_err(|e| anyhow::anyhow!("quantum-demo.fixture: {e}"))?;
    fx.density_matrix().map_err(|e| anyhow::anyhow!("quantum-demo.fixture: {e}"))?;
    q.episodes = Some(flags.trajectories.or(q.episodes).unwrap_or(DEFAULT_EPISODES));
    if q.episodes == Some(0) {
        bail!("quantum-demo.episodes: must be at least 1");
    }
    q.regime = Some(q.regime.unwrap_or(RegimeName::Isotropic));
    let tau = q.tau.unwrap_or(1.0);
    check_positive("quantum-demo.tau", tau)?;
    q.tau = Some(tau);
    q.max_steps = Some(q.max_steps.unwrap_or(simplex_reduction::harness::DEFAULT_MAX_STEPS));
    q.decohere = Some(q.decohere.unwrap_or(true));
    let dt = match flags.dt.or(q.dt) {
        Some(dt) => dt,
        None => Regime::from(q.regime.expect("set above"))
            .spec(family.len(), tau)?
            .default_dt()?,
    };
    check_positive("quantum-demo.dt", dt)?;
    q.dt = Some(dt);
    Ok(q)
}
