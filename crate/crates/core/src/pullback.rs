//! Pull-back construction of the unique almost periodic solution.
//!
//! For `t > 0` the map `ψ ↦ φ(t, ψ(σ(-t, ·)), σ(-t, ·))` contracts with rate
//! `e^{-(λ+α)t}`, so integrating from `s - T` up to `s` along the forcing
//! timeline approximates the invariant section `ν(f^s)` to within
//! `e^{-(λ+α)T}·‖v0 - ν(f^{s-T})‖`.
//!
//! The unknown distance `‖v0 - ν‖` is bounded by `R₀ = ‖v0‖ + M/(λ+α) + 1`,
//! since the section lies inside the absorbing ball.

use crate::forcing::ForcingModel;
use crate::integrator::{flow, integrate, IntegrationError, IntegratorConfig, LatticeSystem, Sampling, TrajectorySample};
use crate::lattice::{self, LatticeWindow};
use crate::math;

/// Estimate of `ν(σ(s, f))` with its certified error bound.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PullbackResult {
    #[cfg_attr(feature = "serde", serde(rename = "s"))]
    pub anchor: f64,
    #[cfg_attr(feature = "serde", serde(rename = "T"))]
    pub horizon: f64,
    /// `e^{-(λ+α)T}·R₀`.
    pub error_bound: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub initial_radius: f64,
    pub state: LatticeWindow,
}

fn rate_of<G: ForcingModel>(system: &LatticeSystem<G>) -> Result<f64, IntegrationError> {
    let rate = system.contraction_rate();
    if rate > 0.0 && rate.is_finite() {
        Ok(rate)
    } else {
        Err(IntegrationError::NoContraction(rate))
    }
}

/// Certified bound `R₀ = ‖v0‖ + M/(λ+α) + 1` on `‖v0 - ν(g)‖`.
pub fn initial_radius<G: ForcingModel>(system: &LatticeSystem<G>, v0: &LatticeWindow) -> Result<f64, IntegrationError> {
    let rate = rate_of(system)?;
    Ok(lattice::norm(v0)? + system.forcing_bound() / rate + 1.0)
}

/// Integrates from `s - T` to `s` starting at `v0`.
pub fn pullback_solution<G: ForcingModel>(
    system: &LatticeSystem<G>,
    anchor: f64,
    horizon: f64,
    v0: &LatticeWindow,
    config: &IntegratorConfig,
) -> Result<PullbackResult, IntegrationError> {
    if !(horizon >= 0.0 && horizon.is_finite() && anchor.is_finite()) {
        return Err(IntegrationError::BadSpan);
    }
    let rate = rate_of(system)?;
    let r0 = initial_radius(system, v0)?;
    let state = if horizon == 0.0 {
        v0.clone()
    } else {
        flow(system, v0, anchor - horizon, anchor, config)?
    };
    Ok(PullbackResult {
        anchor,
        horizon,
        error_bound: math::exp(-rate * horizon) * r0,
        initial_radius: r0,
        state,
    })
}

/// Smallest horizon with `e^{-(λ+α)T}·R₀ ≤ tol`: `max(0, ln(R₀/tol)/(λ+α))`.
pub fn horizon_for_tolerance(rate: f64, tol: f64, r0: f64) -> Result<f64, IntegrationError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(IntegrationError::NoContraction(rate));
    }
    if !(tol > 0.0 && r0 > 0.0) {
        return Err(IntegrationError::InvalidConfig("tolerance and radius must be positive"));
    }
    Ok((math::ln(r0 / tol) / rate).max(0.0))
}

/// Pull-back anchor plus the forward sweep along the almost periodic solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ApTrajectory {
    pub pullback: PullbackResult,
    pub trajectory: TrajectorySample,
}

/// Approximates the almost periodic solution on `[s0, s1]`: one pull-back from
/// `v0 = 0` to `s0` with horizon chosen so the section error is below
/// `target_tol`, then a single forward integration sampled every
/// `sample_step`.
pub fn ap_trajectory<G: ForcingModel>(
    system: &LatticeSystem<G>,
    s0: f64,
    s1: f64,
    sample_step: f64,
    target_tol: f64,
    config: &IntegratorConfig,
) -> Result<ApTrajectory, IntegrationError> {
    if !(s1 > s0) {
        return Err(IntegrationError::BadSpan);
    }
    let v0 = LatticeWindow::centered_zeros(config.window_halfwidth);
    let r0 = initial_radius(system, &v0)?;
    let horizon = horizon_for_tolerance(rate_of(system)?, target_tol, r0)?;
    let pullback = pullback_solution(system, s0, horizon, &v0, config)?;
    let trajectory = integrate(system, &pullback.state, s0, s1, config, &Sampling::Every(sample_step))?;
    Ok(ApTrajectory { pullback, trajectory })
}

/// Consistency of two section estimates along the same forcing timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionReport {
    /// `‖φ(Δ, state_s, f^s) - state_{s+Δ}‖`.
    pub defect: f64,
    /// Propagated error bounds of both estimates plus `20·tol`.
    pub threshold: f64,
    pub passes: bool,
}

/// Transports `first` forward to the anchor of `second` and compares.
pub fn section_consistency_check<G: ForcingModel>(
    system: &LatticeSystem<G>,
    first: &PullbackResult,
    second: &PullbackResult,
    config: &IntegratorConfig,
) -> Result<SectionReport, IntegrationError> {
    let delta = second.anchor - first.anchor;
    if !(delta >= 0.0) {
        return Err(IntegrationError::BadSpan);
    }
    let rate = rate_of(system)?;
    let transported = if delta == 0.0 {
        first.state.clone()
    } else {
        flow(system, &first.state, first.anchor, second.anchor, config)?
    };
    let defect = lattice::norm(&lattice::difference(&transported, &second.state))?;
    let scale = lattice::norm(&second.state)?;
    let threshold = first.error_bound * math::exp(-rate * delta)
        + second.error_bound
        + crate::integrator::COCYCLE_TOLERANCE_FACTOR * config.tolerance_at(scale);
    Ok(SectionReport {
        defect,
        threshold,
        passes: defect <= threshold,
    })
}
