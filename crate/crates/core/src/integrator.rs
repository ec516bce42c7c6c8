//! Cocycle `φ(t, v, g)` of the lattice system
//!
//! ```text
//! u' = ν Λu - λu + F̃(u) + g(t)
//! ```
//!
//! integrated on a fixed window `[-n, n]` with Dirichlet truncation (sites
//! outside the window are pinned to zero). Time stepping uses the
//! Dormand–Prince 5(4) pair with PI step control and its fourth-order
//! continuous extension for dense output.

use alloc::vec;
use alloc::vec::Vec;

use crate::forcing::ForcingModel;
use crate::lattice::{self, laplacian_clipped, LatticeError, LatticeWindow};
use crate::math;
use crate::nonlinearity::{nemytskii, MonotoneScalarFunction, NonlinearityError};

/// Multiple of the step tolerance allowed on the cocycle identity.
pub const COCYCLE_TOLERANCE_FACTOR: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntegrationError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("initial state has mass outside the integration window [-{halfwidth}, {halfwidth}]")]
    InitialOutsideWindow { halfwidth: usize },
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size {h:e} underflowed at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("component {value} exceeded the Lipschitz budget radius {bound} at t = {t}")]
    BoundExceeded { t: f64, bound: f64, value: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("contraction rate λ+α = {0} must be positive")]
    NoContraction(f64),
    #[error("time span must be ordered and finite")]
    BadSpan,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
}

/// Coupling `ν` and linear decay `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct SemiflowParams {
    pub nu: f64,
    pub lambda: f64,
}

impl SemiflowParams {
    /// Both parameters must be finite and nonnegative. The contraction and
    /// pull-back estimates additionally need `λ + α > 0`, which is checked
    /// where they are used.
    pub fn new(nu: f64, lambda: f64) -> Result<Self, IntegrationError> {
        let p = Self { nu, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return Err(IntegrationError::InvalidParams("nu must be finite and >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(IntegrationError::InvalidParams("lambda must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Step control and truncation window.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub initial_step: f64,
    pub window_halfwidth: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: 0.1,
            initial_step: 1e-3,
            window_halfwidth: 32,
        }
    }
}

impl IntegratorConfig {
    pub fn with_halfwidth(self, window_halfwidth: usize) -> Self {
        Self { window_halfwidth, ..self }
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.rel_tol) || !positive(self.abs_tol) {
            return Err(IntegrationError::InvalidConfig("tolerances must be positive and finite"));
        }
        if !positive(self.max_step) || !positive(self.initial_step) {
            return Err(IntegrationError::InvalidConfig("step sizes must be positive and finite"));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        2 * self.window_halfwidth + 1
    }

    pub fn window_offset(&self) -> i64 {
        -(self.window_halfwidth as i64)
    }

    /// Step tolerance `abs_tol + rel_tol·scale` at state norm `scale`.
    pub fn tolerance_at(&self, scale: f64) -> f64 {
        self.abs_tol + self.rel_tol * scale
    }
}

/// Parameters, nonlinearity and forcing of one nonautonomous lattice system.
#[derive(Debug, Clone)]
pub struct LatticeSystem<G> {
    pub params: SemiflowParams,
    pub nonlinearity: MonotoneScalarFunction,
    pub forcing: G,
}

impl<G: ForcingModel> LatticeSystem<G> {
    pub fn new(params: SemiflowParams, nonlinearity: MonotoneScalarFunction, forcing: G) -> Self {
        Self {
            params,
            nonlinearity,
            forcing,
        }
    }

    /// Same system driven by `g`.
    pub fn with_forcing<H: ForcingModel>(&self, forcing: H) -> LatticeSystem<H> {
        LatticeSystem {
            params: self.params,
            nonlinearity: self.nonlinearity.clone(),
            forcing,
        }
    }

    /// Same system driven by the shift `g^h`.
    pub fn shifted(&self, h: f64) -> Self {
        self.with_forcing(self.forcing.shift(h))
    }

    /// `λ + α`, the contraction rate of the cocycle.
    pub fn contraction_rate(&self) -> f64 {
        self.params.lambda + self.nonlinearity.alpha()
    }

    /// `M = sup ‖g(t)‖`.
    pub fn forcing_bound(&self) -> f64 {
        self.forcing.sup_norm()
    }

    /// Radius `M/(λ+α)` of the absorbing ball (up to the `ε` margin).
    pub fn absorbing_radius(&self) -> f64 {
        self.forcing_bound() / self.contraction_rate()
    }

    /// Sharper radius `M/(2(λ+α))` from the Gronwall estimate for `‖u‖`.
    pub fn sharp_absorbing_radius(&self) -> f64 {
        self.absorbing_radius() / 2.0
    }

    /// Right-hand side on the fixed window: `νΛu - λu + F̃(u) + g(t)`, clipped.
    pub fn rhs_into(&self, t: f64, offset: i64, u: &[f64], out: &mut [f64]) {
        self.forcing.eval_into(t, offset, out);
        let SemiflowParams { nu, lambda } = self.params;
        let n = u.len();
        for k in 0..n {
            let left = if k > 0 { u[k - 1] } else { 0.0 };
            let right = if k + 1 < n { u[k + 1] } else { 0.0 };
            out[k] += nu * (left - 2.0 * u[k] + right) - lambda * u[k] + self.nonlinearity.eval(u[k]);
        }
    }

    fn lipschitz_radius(&self, initial_norm: f64, span: f64) -> f64 {
        let m = self.forcing_bound();
        let rate = self.contraction_rate();
        let reach = if m == 0.0 {
            0.0
        } else if rate > 0.0 {
            m / rate
        } else {
            m * span
        };
        2.0 * (reach + initial_norm)
    }
}

/// `ν·Λu - λu + F̃(u) + g(t)` on the window of `config`, clipped to it.
pub fn rhs<G: ForcingModel>(
    system: &LatticeSystem<G>,
    t: f64,
    u: &LatticeWindow,
    config: &IntegratorConfig,
) -> Result<LatticeWindow, IntegrationError> {
    let (offset, len) = (config.window_offset(), config.window_len());
    let clipped = u.clip_to(offset, len);
    let mut out = vec![0.0; len];
    system.forcing.eval_into(t, offset, &mut out);
    let mut lap = vec![0.0; len];
    laplacian_clipped(clipped.values(), &mut lap);
    let nonlinear = nemytskii(&system.nonlinearity, &clipped)?;
    let SemiflowParams { nu, lambda } = system.params;
    for k in 0..len {
        out[k] += nu * lap[k] - lambda * clipped.values()[k] + nonlinear.values()[k];
        if !out[k].is_finite() {
            return Err(IntegrationError::NonFinite { t });
        }
    }
    Ok(LatticeWindow::new(offset, out)?)
}

/// Which output times a trajectory records.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// Initial and final state only.
    Endpoints,
    /// Every accepted step.
    Steps,
    /// Uniform grid `t0 + k·dt`, plus `t1` when it is off the grid.
    Every(f64),
    /// Explicit increasing times inside `[t0, t1]`.
    Times(Vec<f64>),
}

/// Parameters recorded alongside a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub nu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub forcing_bound: f64,
    pub t0: f64,
}

/// Time grid plus states on a shared window, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    times: Vec<f64>,
    offset: i64,
    width: usize,
    data: Vec<f64>,
    pub provenance: Option<Provenance>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl TrajectorySample {
    /// Builds a trajectory from explicit data, checking shapes and ordering.
    pub fn from_rows(times: Vec<f64>, offset: i64, width: usize, data: Vec<f64>) -> Result<Self, IntegrationError> {
        if width == 0 || data.len() != times.len() * width || times.is_empty() {
            return Err(IntegrationError::InvalidConfig("trajectory rows do not match the time grid"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(IntegrationError::BadSpan);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IntegrationError::NonFinite { t: f64::NAN });
        }
        Ok(Self {
            times,
            offset,
            width,
            data,
            provenance: None,
            accepted_steps: 0,
            rejected_steps: 0,
        })
    }

    /// Scalar time series as a one-site trajectory.
    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self, IntegrationError> {
        Self::from_rows(times, 0, 1, values)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn state(&self, k: usize) -> LatticeWindow {
        LatticeWindow::from_parts_unchecked(self.offset, self.row(k).to_vec())
    }

    pub fn states(&self) -> impl Iterator<Item = LatticeWindow> + '_ {
        (0..self.len()).map(|k| self.state(k))
    }

    pub fn final_state(&self) -> LatticeWindow {
        self.state(self.len() - 1)
    }

    pub fn final_time(&self) -> f64 {
        self.times[self.len() - 1]
    }

    /// `‖u(t_k)‖` for every sample.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.len()).map(|k| lattice::slice_norm(self.row(k))).collect()
    }

    /// `‖u(t_k) - w(t_k)‖` for two trajectories on the same grid and window.
    pub fn distances(&self, other: &Self) -> Result<Vec<f64>, IntegrationError> {
        if self.times != other.times || self.offset != other.offset || self.width != other.width {
            return Err(IntegrationError::InvalidConfig("trajectories do not share grid and window"));
        }
        Ok((0..self.len())
            .map(|k| lattice::slice_distance(self.row(k), other.row(k)))
            .collect())
    }

    fn push(&mut self, t: f64, state: &[f64]) {
        self.times.push(t);
        self.data.extend_from_slice(state);
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const MAX_STEPS: usize = 50_000_000;

struct Workspace {
    k: [Vec<f64>; 7],
    y_new: Vec<f64>,
    y_stage: Vec<f64>,
    err: Vec<f64>,
    dense: [Vec<f64>; 5],
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: core::array::from_fn(|_| vec![0.0; n]),
            y_new: vec![0.0; n],
            y_stage: vec![0.0; n],
            err: vec![0.0; n],
            dense: core::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

/// Largest step keeping the explicit pair inside its stability region:
/// `1 / (4ν + λ + Lip_B)`.
pub fn stable_step_bound<G: ForcingModel>(system: &LatticeSystem<G>, lipschitz_radius: f64) -> f64 {
    let stiffness = 4.0 * system.params.nu + system.params.lambda + system.nonlinearity.lip_on(lipschitz_radius);
    if stiffness > 0.0 {
        1.0 / stiffness
    } else {
        f64::INFINITY
    }
}

/// Integrates from `t0` to `t1` starting at `v0`, so that the final state is
/// `φ(t1 - t0, v0, g^{t0})`.
///
/// Each accepted step satisfies `‖err‖ ≤ abs_tol + rel_tol·max(‖y‖, ‖y_new‖)`.
pub fn integrate<G: ForcingModel>(
    system: &LatticeSystem<G>,
    v0: &LatticeWindow,
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
    sampling: &Sampling,
) -> Result<TrajectorySample, IntegrationError> {
    system.params.validate()?;
    config.validate()?;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(IntegrationError::BadSpan);
    }
    let (offset, n) = (config.window_offset(), config.window_len());
    if !v0.supported_in(offset, n) {
        return Err(IntegrationError::InitialOutsideWindow {
            halfwidth: config.window_halfwidth,
        });
    }
    let mut y = v0.clip_to(offset, n).into_values();
    let initial_norm = lattice::slice_norm(&y);
    let bound = system.lipschitz_radius(initial_norm, t1 - t0);
    let max_step = config.max_step.min(stable_step_bound(system, bound));

    let output_times = output_grid(sampling, t0, t1)?;
    let mut out = TrajectorySample {
        times: Vec::with_capacity(output_times.as_ref().map_or(2, Vec::len)),
        offset,
        width: n,
        data: Vec::new(),
        provenance: Some(Provenance {
            nu: system.params.nu,
            lambda: system.params.lambda,
            alpha: system.nonlinearity.alpha(),
            forcing_bound: system.forcing_bound(),
            t0,
        }),
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut next_out = 0usize;
    if let Some(grid) = &output_times {
        while next_out < grid.len() && grid[next_out] <= t0 {
            out.push(grid[next_out], &y);
            next_out += 1;
        }
    } else {
        out.push(t0, &y);
    }
    if t1 == t0 {
        if out.is_empty() {
            out.push(t0, &y);
        }
        return Ok(out);
    }

    let mut ws = Workspace::new(n);
    let mut t = t0;
    let mut h = config.initial_step.min(max_step).min(t1 - t0);
    let mut err_old = 1e-4f64;
    let mut last_rejected = false;
    system.rhs_into(t, offset, &y, &mut ws.k[0]);

    for _ in 0..MAX_STEPS {
        if t >= t1 {
            break;
        }
        let remaining = t1 - t;
        if h >= remaining || t + h >= t1 {
            h = remaining;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(IntegrationError::StepUnderflow { t, h });
        }

        let err_ratio = dopri_step(system, t, h, offset, &y, &mut ws, config);
        if !err_ratio.is_finite() {
            // treat overflow inside a trial step as a rejection
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(IntegrationError::NonFinite { t });
            }
            h *= FAC_MIN;
            out.rejected_steps += 1;
            last_rejected = true;
            continue;
        }

        if err_ratio <= 1.0 {
            let t_new = if h == remaining { t1 } else { t + h };
            if let Some(grid) = &output_times {
                if next_out < grid.len() && grid[next_out] <= t_new {
                    prepare_dense(h, &y, &mut ws);
                    while next_out < grid.len() && grid[next_out] <= t_new {
                        let theta = (grid[next_out] - t) / h;
                        let row = if grid[next_out] == t_new {
                            ws.y_new.clone()
                        } else {
                            dense_eval(&ws.dense, theta)
                        };
                        out.push(grid[next_out], &row);
                        next_out += 1;
                    }
                }
            } else if matches!(sampling, Sampling::Steps) || t_new == t1 {
                out.push(t_new, &ws.y_new);
            }

            core::mem::swap(&mut y, &mut ws.y_new);
            // FSAL: the last stage is the derivative at the new point
            ws.k.swap(0, 6);
            t = t_new;
            out.accepted_steps += 1;

            if y.iter().any(|v| !v.is_finite()) {
                return Err(IntegrationError::NonFinite { t });
            }
            let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > bound && bound > 0.0 {
                return Err(IntegrationError::BoundExceeded { t, bound, value: peak });
            }

            let expo = 0.2 - PI_BETA * 0.75;
            let mut fac = math::exp(expo * math::ln(err_ratio.max(1e-300))) / math::exp(PI_BETA * math::ln(err_old));
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            err_old = err_ratio.max(1e-4);
            h = h_new.min(max_step);
            last_rejected = false;
        } else {
            let fac = math::exp(0.2 * math::ln(err_ratio)) / SAFETY;
            h /= fac.min(1.0 / FAC_MIN);
            out.rejected_steps += 1;
            last_rejected = true;
        }
    }
    if t < t1 {
        return Err(IntegrationError::TooManySteps(MAX_STEPS));
    }
    Ok(out)
}

fn output_grid(sampling: &Sampling, t0: f64, t1: f64) -> Result<Option<Vec<f64>>, IntegrationError> {
    match sampling {
        Sampling::Endpoints | Sampling::Steps => Ok(None),
        Sampling::Every(dt) => {
            if !(dt.is_finite() && *dt > 0.0) {
                return Err(IntegrationError::InvalidConfig("sample step must be positive"));
            }
            let count = math::floor((t1 - t0) / dt + 1e-9) as usize;
            let mut grid: Vec<f64> = (0..=count).map(|k| t0 + k as f64 * dt).collect();
            let last = grid.last_mut().expect("grid holds t0");
            if (*last - t1).abs() <= 1e-9 * dt {
                *last = t1;
            } else if *last < t1 {
                grid.push(t1);
            }
            Ok(Some(grid))
        }
        Sampling::Times(times) => {
            if times.is_empty()
                || times.windows(2).any(|w| !(w[1] > w[0]))
                || times[0] < t0
                || times[times.len() - 1] > t1
            {
                return Err(IntegrationError::InvalidConfig(
                    "sample times must be increasing and inside the integration span",
                ));
            }
            Ok(Some(times.clone()))
        }
    }
}

/// One trial step from `(t, y)`; fills `ws.y_new`, all stages, and returns the
/// scaled error `‖err‖ / (abs_tol + rel_tol·max(‖y‖, ‖y_new‖))`.
fn dopri_step<G: ForcingModel>(
    system: &LatticeSystem<G>,
    t: f64,
    h: f64,
    offset: i64,
    y: &[f64],
    ws: &mut Workspace,
    config: &IntegratorConfig,
) -> f64 {
    let n = y.len();
    let Workspace { k, y_new, y_stage, err, .. } = ws;
    let [k1, k2, k3, k4, k5, k6, k7] = k;

    for i in 0..n {
        y_stage[i] = y[i] + h * A21 * k1[i];
    }
    system.rhs_into(t + C2 * h, offset, y_stage, k2);
    for i in 0..n {
        y_stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    system.rhs_into(t + C3 * h, offset, y_stage, k3);
    for i in 0..n {
        y_stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    system.rhs_into(t + C4 * h, offset, y_stage, k4);
    for i in 0..n {
        y_stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    system.rhs_into(t + C5 * h, offset, y_stage, k5);
    for i in 0..n {
        y_stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    system.rhs_into(t + h, offset, y_stage, k6);
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    system.rhs_into(t + h, offset, y_new, k7);
    for i in 0..n {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    let scale = lattice::slice_norm(y).max(lattice::slice_norm(y_new));
    lattice::slice_norm(err) / config.tolerance_at(scale)
}

fn prepare_dense(h: f64, y: &[f64], ws: &mut Workspace) {
    let Workspace { k, y_new, dense, .. } = ws;
    let [r1, r2, r3, r4, r5] = dense;
    for i in 0..y.len() {
        let dy = y_new[i] - y[i];
        let bspl = h * k[0][i] - dy;
        r1[i] = y[i];
        r2[i] = dy;
        r3[i] = bspl;
        r4[i] = dy - h * k[6][i] - bspl;
        r5[i] = h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
    }
}

fn dense_eval(dense: &[Vec<f64>; 5], theta: f64) -> Vec<f64> {
    let theta1 = 1.0 - theta;
    (0..dense[0].len())
        .map(|i| {
            dense[0][i] + theta * (dense[1][i] + theta1 * (dense[2][i] + theta * (dense[3][i] + theta1 * dense[4][i])))
        })
        .collect()
}

/// Final state of [`integrate`] without intermediate samples.
pub fn flow<G: ForcingModel>(
    system: &LatticeSystem<G>,
    v0: &LatticeWindow,
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
) -> Result<LatticeWindow, IntegrationError> {
    Ok(integrate(system, v0, t0, t1, config, &Sampling::Endpoints)?.final_state())
}

/// Defect of the cocycle identity `φ(t+τ, v, g) = φ(t, φ(τ, v, g), g^τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CocycleReport {
    pub defect: f64,
    /// `20·(abs_tol + rel_tol·scale)` with `scale` the largest state norm seen.
    pub threshold: f64,
    pub passes: bool,
}

/// Compares one integration over `t + τ` against an integration over `τ`
/// followed by a fresh integration over `t` under the shifted forcing `g^τ`.
pub fn cocycle_check<G: ForcingModel>(
    system: &LatticeSystem<G>,
    v0: &LatticeWindow,
    t: f64,
    tau: f64,
    config: &IntegratorConfig,
) -> Result<CocycleReport, IntegrationError> {
    if !(t >= 0.0 && tau >= 0.0) {
        return Err(IntegrationError::BadSpan);
    }
    let direct = flow(system, v0, 0.0, t + tau, config)?;
    let midway = flow(system, v0, 0.0, tau, config)?;
    let composed = flow(&system.shifted(tau), &midway, 0.0, t, config)?;
    let defect = lattice::norm(&lattice::difference(&direct, &composed))?;
    let scale = [v0, &direct, &midway, &composed]
        .iter()
        .map(|w| lattice::norm(w))
        .try_fold(0.0f64, |m, n| n.map(|n| m.max(n)))?;
    let threshold = COCYCLE_TOLERANCE_FACTOR * config.tolerance_at(scale);
    Ok(CocycleReport {
        defect,
        threshold,
        passes: defect <= threshold,
    })
}

/// Difference between final states computed on windows of halfwidth `n`
/// and `2n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowReport {
    pub halfwidth: usize,
    pub discrepancy: f64,
    /// `10·(abs_tol + rel_tol·‖u(t1)‖)`.
    pub tolerance: f64,
    pub converged: bool,
}

pub fn window_convergence_check<G: ForcingModel>(
    system: &LatticeSystem<G>,
    v0: &LatticeWindow,
    t1: f64,
    config: &IntegratorConfig,
    halfwidth: usize,
) -> Result<WindowReport, IntegrationError> {
    let narrow = config.with_halfwidth(halfwidth);
    let wide = config.with_halfwidth(2 * halfwidth);
    let small = flow(system, v0, 0.0, t1, &narrow)?;
    let large = flow(system, v0, 0.0, t1, &wide)?;
    let discrepancy = lattice::norm(&lattice::difference(&small, &large))?;
    let tolerance = 10.0 * config.tolerance_at(lattice::norm(&large)?);
    Ok(WindowReport {
        halfwidth,
        discrepancy,
        tolerance,
        converged: discrepancy <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::{ForcingTerm, QuasiPeriodicForcing};

    fn zero_forcing() -> QuasiPeriodicForcing {
        QuasiPeriodicForcing::explicit(vec![], 0).unwrap()
    }

    fn sine_at_origin() -> QuasiPeriodicForcing {
        QuasiPeriodicForcing::explicit(vec![ForcingTerm { site: 0, omega: 1.0, amp: 1.0 }], 0).unwrap()
    }

    fn small_config(halfwidth: usize) -> IntegratorConfig {
        IntegratorConfig::default().with_halfwidth(halfwidth)
    }

    #[test]
    fn rhs_examples() {
        let cfg = small_config(3);
        let cubic = LatticeSystem::new(
            SemiflowParams::new(1.0, 1.0).unwrap(),
            MonotoneScalarFunction::cubic(),
            zero_forcing(),
        );
        assert!(rhs(&cubic, 0.3, &LatticeWindow::zeros(-3, 7), &cfg).unwrap().is_zero());

        let uncoupled = LatticeSystem::new(
            SemiflowParams::new(0.0, 1.0).unwrap(),
            MonotoneScalarFunction::cubic(),
            zero_forcing(),
        );
        let r = rhs(&uncoupled, 0.0, &LatticeWindow::unit(0), &cfg).unwrap();
        assert_eq!(r, LatticeWindow::new(0, vec![-3.0]).unwrap());

        let diffusion = LatticeSystem::new(
            SemiflowParams::new(1.0, 0.0).unwrap(),
            MonotoneScalarFunction::zero(),
            zero_forcing(),
        );
        let r = rhs(&diffusion, 0.0, &LatticeWindow::unit(0), &cfg).unwrap();
        assert_eq!(r, lattice::laplacian(&LatticeWindow::unit(0)));
        // at the window edge the stencil is clipped
        let r = rhs(&diffusion, 0.0, &LatticeWindow::unit(3), &cfg).unwrap();
        assert_eq!((r.get(2), r.get(3), r.get(4)), (1.0, -2.0, 0.0));
    }

    #[test]
    fn zero_length_span_returns_initial_state() {
        let sys = LatticeSystem::new(
            SemiflowParams::new(1.0, 1.0).unwrap(),
            MonotoneScalarFunction::cubic(),
            sine_at_origin(),
        );
        let v0 = LatticeWindow::new(-1, vec![0.5, -0.25, 2.0]).unwrap();
        let traj = integrate(&sys, &v0, 1.5, 1.5, &small_config(4), &Sampling::Steps).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.final_state(), v0);
    }

    #[test]
    fn scalar_forced_decay_matches_closed_form() {
        let sys = LatticeSystem::new(
            SemiflowParams::new(0.0, 1.0).unwrap(),
            MonotoneScalarFunction::zero(),
            sine_at_origin(),
        );
        let cfg = small_config(2);
        let traj = integrate(&sys, &LatticeWindow::zeros(-2, 5), 0.0, 30.0, &cfg, &Sampling::Every(0.5)).unwrap();
        // u(t) = (sin t - cos t)/2 + e^{-t}/2 from u(0) = 0
        for (k, &t) in traj.times().iter().enumerate() {
            let exact = 0.5 * (t.sin() - t.cos()) + 0.5 * (-t).exp();
            assert!((traj.row(k)[2] - exact).abs() < 1e-8, "t = {t}");
        }
        let last = traj.final_time();
        assert_eq!(last, 30.0);
        assert!((traj.final_state().get(0) - 0.5 * (last.sin() - last.cos())).abs() < 10.0 * 1e-8);
    }

    #[test]
    fn unforced_linear_flow_decays_at_lambda() {
        let sys = LatticeSystem::new(
            SemiflowParams::new(1.0, 0.7).unwrap(),
            MonotoneScalarFunction::zero(),
            zero_forcing(),
        );
        let cfg = small_config(8);
        let v0 = LatticeWindow::from_fn(-8, 17, |i| ((i * 7) % 5) as f64 - 2.0).unwrap();
        let n0 = lattice::norm(&v0).unwrap();
        let traj = integrate(&sys, &v0, 0.0, 6.0, &cfg, &Sampling::Every(0.1)).unwrap();
        for (t, n) in traj.times().iter().zip(traj.norms()) {
            assert!(n <= (-0.7 * t).exp() * n0 * (1.0 + 10.0 * cfg.rel_tol), "t = {t}");
        }
    }

    #[test]
    fn dense_output_agrees_with_step_endpoints() {
        let sys = LatticeSystem::new(
            SemiflowParams::new(1.0, 1.0).unwrap(),
            MonotoneScalarFunction::cubic(),
            QuasiPeriodicForcing::dyadic(3, |i| 1.0 + 0.1 * i.unsigned_abs() as f64).unwrap(),
        );
        let cfg = small_config(6);
        let v0 = LatticeWindow::from_fn(-6, 13, |i| 0.1 * i as f64).unwrap();
        let dense = integrate(&sys, &v0, 0.0, 3.0, &cfg, &Sampling::Every(0.01)).unwrap();
        for t_end in [0.37, 1.0, 2.29] {
            let direct = flow(&sys, &v0, 0.0, t_end, &cfg).unwrap();
            let k = (t_end / 0.01f64).round() as usize;
            assert!((dense.times()[k] - t_end).abs() < 1e-12);
            let gap = lattice::slice_distance(dense.row(k), direct.values());
            assert!(gap < 1e-7, "t = {t_end}: {gap}");
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let sys = LatticeSystem::new(
            SemiflowParams::new(1.0, 1.0).unwrap(),
            MonotoneScalarFunction::cubic(),
            zero_forcing(),
        );
        let cfg = small_config(2);
        assert_eq!(
            integrate(&sys, &LatticeWindow::unit(5), 0.0, 1.0, &cfg, &Sampling::Endpoints).unwrap_err(),
            IntegrationError::InitialOutsideWindow { halfwidth: 2 }
        );
        assert_eq!(
            integrate(&sys, &LatticeWindow::unit(0), 1.0, 0.0, &cfg, &Sampling::Endpoints).unwrap_err(),
            IntegrationError::BadSpan
        );
        let bad = IntegratorConfig { rel_tol: 0.0, ..cfg };
        assert!(integrate(&sys, &LatticeWindow::unit(0), 0.0, 1.0, &bad, &Sampling::Endpoints).is_err());
        assert!(SemiflowParams::new(-1.0, 1.0).is_err());
        assert!(SemiflowParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn growth_beyond_lipschitz_budget_aborts() {
        // F(u) = +u with a false monotonicity claim: solutions grow like e^{t}
        let sys = LatticeSystem::new(
            SemiflowParams::new(0.0, 0.0).unwrap(),
            MonotoneScalarFunction::from_fn("unstable", 0.0, |x| x).unwrap(),
            zero_forcing(),
        );
        let err = integrate(&sys, &LatticeWindow::unit(0), 0.0, 5.0, &small_config(1), &Sampling::Endpoints)
            .unwrap_err();
        assert!(matches!(err, IntegrationError::BoundExceeded { .. }), "{err:?}");
    }

    #[test]
    fn uniform_sampling_grid() {
        assert_eq!(output_grid(&Sampling::Every(0.5), 0.0, 2.0).unwrap().unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(output_grid(&Sampling::Every(0.75), 0.0, 2.0).unwrap().unwrap(), vec![0.0, 0.75, 1.5, 2.0]);
        assert!(output_grid(&Sampling::Times(vec![0.5, 0.2]), 0.0, 1.0).is_err());
    }

    #[test]
    fn trivial_cocycle_splits() {
        let sys = LatticeSystem::new(
            SemiflowParams::new(1.0, 1.0).unwrap(),
            MonotoneScalarFunction::cubic(),
            QuasiPeriodicForcing::dyadic(5, |i| 1.0 + 0.1 * i.unsigned_abs() as f64).unwrap(),
        );
        let cfg = small_config(8);
        let v0 = LatticeWindow::from_fn(-3, 7, |i| 0.2 * i as f64).unwrap();
        for (t, tau) in [(0.0, 1.3), (1.3, 0.0)] {
            let r = cocycle_check(&sys, &v0, t, tau, &cfg).unwrap();
            assert!(r.defect <= 1e-12, "({t}, {tau}): {}", r.defect);
        }
    }

    #[test]
    fn window_check_trivial_and_failing_cases() {
        let cfg = IntegratorConfig::default();
        let quiet = LatticeSystem::new(
            SemiflowParams::new(1.0, 1.0).unwrap(),
            MonotoneScalarFunction::cubic(),
            zero_forcing(),
        );
        let r = window_convergence_check(&quiet, &LatticeWindow::zeros(0, 1), 2.0, &cfg, 4).unwrap();
        assert_eq!(r.discrepancy, 0.0);

        let point = LatticeSystem::new(quiet.params, MonotoneScalarFunction::cubic(), sine_at_origin());
        let r = window_convergence_check(&point, &LatticeWindow::zeros(0, 1), 3.0, &cfg, 16).unwrap();
        assert!(r.converged, "{r:?}");

        // forcing reaches site 10 but the narrow window stops at 2
        let wide = point.with_forcing(
            QuasiPeriodicForcing::explicit((-10..=10).map(|i| ForcingTerm { site: i, omega: 1.0, amp: 1.0 }).collect(), 10)
                .unwrap(),
        );
        let r = window_convergence_check(&wide, &LatticeWindow::zeros(0, 1), 3.0, &cfg, 2).unwrap();
        assert!(!r.converged);
        assert!(r.discrepancy > 0.1, "{r:?}");
    }
}
