//! JSON run configuration. Every struct rejects unknown keys.

use std::path::{Path, PathBuf};

use aplat_core::forcing::{AmplitudeRule, ForcingTerm, FrequencyRule, QuasiPeriodicForcing};
use aplat_core::{IntegratorConfig, LatticeSystem, LatticeWindow, MonotoneScalarFunction, SeededRng, SemiflowParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: SemiflowParams,
    pub nonlinearity: NonlinearitySpec,
    pub forcing: ForcingSpec,
    pub window_halfwidth: usize,
    #[serde(default)]
    pub integrator: Tolerances,
    pub seed: u64,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    /// `F(u) = -u(1 + u²)`. Unit-like variants are written as empty
    /// structs so that unknown keys next to the tag are still rejected.
    Cubic {},
    /// `F(u) = -c·u`.
    Linear { c: f64 },
    /// Odd polynomial `Σ_k coefficients[k]·u^{2k+1}`.
    Custom { coefficients: Vec<f64> },
}

impl NonlinearitySpec {
    pub fn build(&self) -> Result<MonotoneScalarFunction, CliError> {
        let f = match self {
            Self::Cubic {} => MonotoneScalarFunction::cubic(),
            Self::Linear { c } => MonotoneScalarFunction::linear(*c)?,
            Self::Custom { coefficients } => MonotoneScalarFunction::odd_polynomial(coefficients.clone())?,
        };
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub i: i64,
    pub omega: f64,
    #[serde(default)]
    pub amp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingKind {
    QuasiPeriodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSpec {
    pub kind: ForcingKind,
    #[serde(default)]
    pub sites: Vec<SiteSpec>,
    pub amp_rule: AmplitudeRule,
    pub active_halfwidth: usize,
    #[serde(default)]
    pub phase: f64,
    /// Frequencies for dyadic sites not listed in `sites`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_rule: Option<FrequencyRule>,
}

impl ForcingSpec {
    pub fn build(&self) -> Result<QuasiPeriodicForcing, CliError> {
        let terms: Vec<ForcingTerm> = self
            .sites
            .iter()
            .map(|s| ForcingTerm { site: s.i, omega: s.omega, amp: s.amp })
            .collect();
        Ok(QuasiPeriodicForcing::from_parts(
            self.amp_rule,
            &terms,
            self.omega_rule,
            self.active_halfwidth,
            self.phase,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub initial_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        Self {
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
            max_step: d.max_step,
            initial_step: d.initial_step,
        }
    }
}

/// Initial state on the truncation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Zero {},
    Unit { site: i64 },
    Window { offset: i64, values: Vec<f64> },
    /// Entries drawn from `U[-amplitude, amplitude]`.
    Random { amplitude: f64 },
    /// Random direction rescaled to the given ℓ₂ norm.
    RandomNorm { norm: f64 },
    /// Pull-back of the zero state over `horizon`, i.e. a point close to
    /// the almost periodic solution. Only `simulate` accepts it.
    Pullback { horizon: f64 },
}

impl InitialSpec {
    /// Materializes the state on `[-h, h]`. Random kinds draw from
    /// `rng`, so the caller controls which stream they consume.
    pub fn build(&self, halfwidth: usize, rng: &mut SeededRng) -> Result<LatticeWindow, CliError> {
        let len = 2 * halfwidth + 1;
        let offset = -(halfwidth as i64);
        let state = match self {
            Self::Zero {} => LatticeWindow::centered_zeros(halfwidth),
            Self::Unit { site } => LatticeWindow::unit(*site),
            Self::Window { offset, values } => LatticeWindow::new(*offset, values.clone())?,
            Self::Random { amplitude } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(CliError::config("initial.amplitude must be finite and >= 0"));
                }
                rng.window(offset, len, *amplitude)
            }
            Self::RandomNorm { norm } => {
                if !(norm.is_finite() && *norm >= 0.0) {
                    return Err(CliError::config("initial.norm must be finite and >= 0"));
                }
                let raw = rng.window(offset, len, 1.0);
                let n = aplat_core::lattice::norm(&raw)?;
                if n == 0.0 {
                    raw
                } else {
                    aplat_core::lattice::scale(norm / n, &raw)
                }
            }
            Self::Pullback { .. } => {
                return Err(CliError::config("initial state of kind \"pullback\" is only accepted by simulate"))
            }
        };
        Ok(state)
    }
}

/// Grid axes of a sweep. Cells run in the order nonlinearity, λ, ν
/// (ν varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub nu: Vec<f64>,
    #[serde(default)]
    pub nonlinearity: Vec<NonlinearitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Simulate {
        t0: f64,
        t1: f64,
        sample_step: f64,
        initial: InitialSpec,
        /// Inclusive site range written to the CSV; defaults to the window.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sites: Option<[i64; 2]>,
    },
    Pullback {
        anchor: f64,
        /// Explicit horizon `T`; exclusive with `tolerance`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
        /// Target error bound used to choose `T`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
        initial: InitialSpec,
    },
    Apscan {
        /// Trajectory CSV; relative paths resolve against the config file.
        trajectory: PathBuf,
        epsilon: f64,
        tau_step: f64,
        tau_max: f64,
        #[serde(default)]
        exhaustive: bool,
    },
    Contraction {
        pairs: usize,
        t_end: f64,
        sample_step: f64,
        amplitude: f64,
    },
    Sweep {
        grid: SweepGrid,
        t_end: f64,
        sample_step: f64,
        amplitude: f64,
        /// Norm of the initial state used for the absorbing entry time.
        absorbing_norm: f64,
        pullback_horizon: f64,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Simulate { .. } => "simulate",
            Self::Pullback { .. } => "pullback",
            Self::Apscan { .. } => "apscan",
            Self::Contraction { .. } => "contraction",
            Self::Sweep { .. } => "sweep",
        }
    }
}

/// A parsed config together with the raw bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub path: PathBuf,
}

impl LoadedConfig {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or_else(|| Path::new("."))
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&raw).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig { config, raw, path: path.to_path_buf() })
}

pub fn parse(raw: &[u8]) -> Result<RunConfig, CliError> {
    let config: RunConfig = serde_json::from_slice(raw).map_err(|e| CliError::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.params.validate()?;
        self.integrator_config().validate()?;
        self.nonlinearity.build()?;
        self.forcing.build()?;
        Ok(())
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            rel_tol: self.integrator.rel_tol,
            abs_tol: self.integrator.abs_tol,
            max_step: self.integrator.max_step,
            initial_step: self.integrator.initial_step,
            window_halfwidth: self.window_halfwidth,
        }
    }

    pub fn system(&self) -> Result<LatticeSystem<QuasiPeriodicForcing>, CliError> {
        Ok(LatticeSystem::new(self.params, self.nonlinearity.build()?, self.forcing.build()?))
    }
}
