//! Post-hoc metrics on sampled trajectories: decay-rate fits, absorbing-ball
//! entry, ε-almost-period scans and the Bebutov distance.
//!
//! Almost periodicity is only ever witnessed on a finite scan range: the
//! scanner reports every grid shift `τ` whose sampled sup-defect stays below
//! `ε`, and the largest gap between consecutive accepted shifts.

use alloc::vec::Vec;

use crate::forcing::ForcingModel;
use crate::integrator::{flow, IntegrationError, IntegratorConfig, LatticeSystem, TrajectorySample};
use crate::lattice::{self, LatticeWindow};
use crate::math;

/// Fits truncate once `‖w‖` falls to this multiple of `abs_tol`.
pub const DECAY_FIT_FLOOR_FACTOR: f64 = 100.0;
/// Multiplicative slack on the contraction bound in singleton checks.
pub const SINGLETON_SLACK: f64 = 50.0;
/// Relative slack on staying inside the absorbing ball.
const BALL_STAY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("fewer than two samples remain above the fit floor")]
    EmptyFit,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("trajectory spans {have}, scanning τ up to {tau_max} needs at least {need}")]
    TooShort { have: f64, need: f64, tau_max: f64 },
    #[error("trajectory is not sampled on a uniform grid")]
    NonUniformGrid,
    #[error("τ step {tau_step} is not a positive multiple of the sample step {dt}")]
    IncompatibleStep { tau_step: f64, dt: f64 },
    #[error("trajectories are not sampled on a common grid and window")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("initial states coincide; the singleton check needs v1 ≠ v2")]
    IdenticalStates,
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// Least-squares slope of `ln‖w(t)‖` against `t`.
///
/// The series is cut at the first sample with `norm ≤ floor`; pass
/// `100·abs_tol` to avoid fitting integrator noise.
pub fn fit_decay_rate(times: &[f64], norms: &[f64], floor: f64) -> Result<f64, AnalysisError> {
    if times.len() != norms.len() {
        return Err(AnalysisError::LengthMismatch(times.len(), norms.len()));
    }
    let cut = norms.iter().position(|&n| !(n > floor)).unwrap_or(norms.len());
    if cut < 2 {
        return Err(AnalysisError::EmptyFit);
    }
    let count = cut as f64;
    let t_mean = times[..cut].iter().sum::<f64>() / count;
    // centred on the first sample so constant series give an exact zero
    let base = math::ln(norms[0]);
    let logs: Vec<f64> = norms[..cut].iter().map(|&n| math::ln(n) - base).collect();
    let y_mean = logs.iter().sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in times[..cut].iter().zip(&logs) {
        sxy += (t - t_mean) * (y - y_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    if sxx == 0.0 {
        return Err(AnalysisError::EmptyFit);
    }
    Ok(sxy / sxx)
}

/// First entry into a ball and whether the trajectory stays there.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AbsorbingReport {
    pub radius: f64,
    pub entered_at: Option<f64>,
    /// All samples after entry satisfy `‖u‖ ≤ radius·(1 + 1e-6)`.
    pub stays: bool,
}

pub fn absorbing_ball_check(traj: &TrajectorySample, radius: f64) -> AbsorbingReport {
    let norms = traj.norms();
    match norms.iter().position(|&n| n <= radius) {
        Some(k) => AbsorbingReport {
            radius,
            entered_at: Some(traj.times()[k]),
            stays: norms[k..].iter().all(|&n| n <= radius * (1.0 + BALL_STAY_SLACK)),
        },
        None => AbsorbingReport {
            radius,
            entered_at: None,
            stays: false,
        },
    }
}

/// Sup-defect of one scanned shift.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TauDefect {
    pub tau: f64,
    /// Exact sampled sup for accepted shifts; for rejected shifts in a
    /// non-exhaustive scan, the first sample at or above `ε`.
    pub defect: f64,
    pub accepted: bool,
}

/// ε-almost periods detected on a finite scan range.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AlmostPeriodReport {
    pub epsilon: f64,
    pub tau_step: f64,
    pub tau_max: f64,
    /// Sample spacing of the scanned trajectory.
    pub grid_step: f64,
    pub scan_start: f64,
    pub scan_end: f64,
    pub taus: Vec<f64>,
    /// Largest gap between consecutive accepted shifts in `[0, tau_max]`,
    /// counting the range endpoints.
    pub max_gap: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub defects: Vec<TauDefect>,
}

/// Lag layout of a scan: trajectory spacing and the shift grid in samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPlan {
    pub dt: f64,
    /// Samples per τ step.
    pub lag_stride: usize,
    /// Number of τ values after `τ = 0`.
    pub tau_count: usize,
}

/// Checks the scan preconditions and lays out the shift grid.
pub fn plan_scan(traj: &TrajectorySample, tau_step: f64, tau_max: f64) -> Result<ScanPlan, AnalysisError> {
    if !(tau_step > 0.0 && tau_step.is_finite() && tau_max >= 0.0 && tau_max.is_finite()) {
        return Err(AnalysisError::InvalidArgument("τ step must be positive and τ max nonnegative"));
    }
    let times = traj.times();
    if times.len() < 2 {
        return Err(AnalysisError::TooShort {
            have: 0.0,
            need: 4.0 * tau_max,
            tau_max,
        });
    }
    let span = times[times.len() - 1] - times[0];
    let dt = span / (times.len() - 1) as f64;
    let uniform = times
        .iter()
        .enumerate()
        .all(|(k, &t)| (t - (times[0] + k as f64 * dt)).abs() <= 1e-9 * dt.max(span * 1e-6));
    if !uniform {
        return Err(AnalysisError::NonUniformGrid);
    }
    let ratio = tau_step / dt;
    let lag_stride = math::round(ratio) as usize;
    if lag_stride == 0 || (ratio - lag_stride as f64).abs() > 1e-6 * ratio.max(1.0) {
        return Err(AnalysisError::IncompatibleStep { tau_step, dt });
    }
    if span < 4.0 * tau_max * (1.0 - 1e-12) {
        return Err(AnalysisError::TooShort {
            have: span,
            need: 4.0 * tau_max,
            tau_max,
        });
    }
    let tau_count = math::floor(tau_max / tau_step + 1e-9) as usize;
    Ok(ScanPlan { dt, lag_stride, tau_count })
}

/// Sampled `sup_t ‖u(t + τ) - u(t)‖` for the shift of `lag` samples.
///
/// A non-exhaustive scan stops at the first sample reaching `epsilon`.
pub fn tau_defect(traj: &TrajectorySample, lag: usize, epsilon: f64, exhaustive: bool) -> f64 {
    let mut sup = 0.0f64;
    for k in 0..traj.len().saturating_sub(lag) {
        let d = lattice::slice_distance(traj.row(k + lag), traj.row(k));
        if d > sup {
            sup = d;
            if !exhaustive && sup >= epsilon {
                break;
            }
        }
    }
    sup
}

/// Assembles a report from per-shift defects (in increasing `τ` order).
pub fn assemble_report(
    traj: &TrajectorySample,
    plan: ScanPlan,
    epsilon: f64,
    tau_step: f64,
    tau_max: f64,
    sups: &[f64],
) -> AlmostPeriodReport {
    let defects: Vec<TauDefect> = sups
        .iter()
        .enumerate()
        .map(|(j, &defect)| TauDefect {
            tau: j as f64 * tau_step,
            defect,
            accepted: defect < epsilon,
        })
        .collect();
    let taus: Vec<f64> = defects.iter().filter(|d| d.accepted).map(|d| d.tau).collect();
    let mut max_gap = 0.0f64;
    let mut prev = 0.0;
    for &tau in taus.iter().chain(core::iter::once(&tau_max)) {
        max_gap = max_gap.max(tau - prev);
        prev = tau;
    }
    AlmostPeriodReport {
        epsilon,
        tau_step,
        tau_max,
        grid_step: plan.dt,
        scan_start: traj.times()[0],
        scan_end: traj.final_time(),
        taus,
        max_gap,
        defects,
    }
}

/// Accepts `τ = k·tau_step ≤ tau_max` iff the sampled sup over the overlap of
/// `‖u(t + τ) - u(t)‖` is below `epsilon`.
///
/// `tau_step` must be a multiple of the sample spacing, and the trajectory
/// must span at least `4·tau_max`. The grid should resolve the fastest
/// oscillation (step at most half its period); the sup is not refined
/// between samples.
pub fn almost_period_scan(
    traj: &TrajectorySample,
    epsilon: f64,
    tau_step: f64,
    tau_max: f64,
    exhaustive: bool,
) -> Result<AlmostPeriodReport, AnalysisError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(AnalysisError::InvalidArgument("epsilon must be positive"));
    }
    let plan = plan_scan(traj, tau_step, tau_max)?;
    let sups: Vec<f64> = (0..=plan.tau_count)
        .map(|j| tau_defect(traj, j * plan.lag_stride, epsilon, exhaustive))
        .collect();
    Ok(assemble_report(traj, plan, epsilon, tau_step, tau_max, &sups))
}

/// Bebutov distance `sup_L min(max_{t ≤ L} ‖u₁(t) - u₂(t)‖, 1/L)` over the
/// supplied `L` values.
///
/// Both trajectories must share their time grid. One-sided data is anchored
/// at its first sample: `t` runs over `[t_start, t_start + L]`.
pub fn bebutov_distance(a: &TrajectorySample, b: &TrajectorySample, l_grid: &[f64]) -> Result<f64, AnalysisError> {
    if a.times() != b.times() || a.width() != b.width() || a.offset() != b.offset() {
        return Err(AnalysisError::GridMismatch);
    }
    if l_grid.iter().any(|&l| !(l > 0.0)) {
        return Err(AnalysisError::InvalidArgument("every L must be positive"));
    }
    let gaps = a.distances(b)?;
    let mut running = Vec::with_capacity(gaps.len());
    let mut m = 0.0f64;
    for g in gaps {
        m = m.max(g);
        running.push(m);
    }
    let start = a.times()[0];
    let mut best = 0.0f64;
    for &l in l_grid {
        let within = a.times().partition_point(|&t| t - start <= l);
        let local = if within == 0 { 0.0 } else { running[within - 1] };
        best = best.max(local.min(1.0 / l));
    }
    Ok(best)
}

/// Gap between two forward trajectories under the same forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SingletonReport {
    pub initial_gap: f64,
    pub final_gap: f64,
    /// `e^{-(λ+α)t_end}·‖v1 - v2‖·(1 + 50·rel_tol)`.
    pub bound: f64,
    pub passes: bool,
}

pub fn attractor_singleton_check<G: ForcingModel>(
    system: &LatticeSystem<G>,
    v1: &LatticeWindow,
    v2: &LatticeWindow,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<SingletonReport, AnalysisError> {
    if v1 == v2 {
        return Err(AnalysisError::IdenticalStates);
    }
    let initial_gap = lattice::norm(&lattice::difference(v1, v2)).map_err(IntegrationError::from)?;
    let u1 = flow(system, v1, 0.0, t_end, config)?;
    let u2 = flow(system, v2, 0.0, t_end, config)?;
    let final_gap = lattice::norm(&lattice::difference(&u1, &u2)).map_err(IntegrationError::from)?;
    let bound = math::exp(-system.contraction_rate() * t_end) * initial_gap * (1.0 + SINGLETON_SLACK * config.rel_tol);
    Ok(SingletonReport {
        initial_gap,
        final_gap,
        bound,
        passes: final_gap <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar(times: &[f64], f: impl Fn(f64) -> f64) -> TrajectorySample {
        TrajectorySample::scalar(times.to_vec(), times.iter().map(|&t| f(t)).collect()).unwrap()
    }

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn decay_fit_examples() {
        let t = grid(501, 0.01);
        let n: Vec<f64> = t.iter().map(|&t| (-2.0 * t).exp()).collect();
        assert!((fit_decay_rate(&t, &n, 0.0).unwrap() + 2.0).abs() < 1e-9);
        assert_eq!(fit_decay_rate(&t, &vec![0.3; t.len()], 0.0).unwrap(), 0.0);
        // truncation at the floor keeps the fit on the clean part
        let mut noisy = n.clone();
        for v in noisy.iter_mut().skip(300) {
            *v = 1e-20;
        }
        assert!((fit_decay_rate(&t, &noisy, 1e-8).unwrap() + 2.0).abs() < 1e-9);
        assert_eq!(fit_decay_rate(&t, &vec![1e-12; t.len()], 1e-8), Err(AnalysisError::EmptyFit));
    }

    #[test]
    fn absorbing_examples() {
        let t = grid(10, 0.5);
        let zero = scalar(&t, |_| 0.0);
        let r = absorbing_ball_check(&zero, 1.0);
        assert_eq!((r.entered_at, r.stays), (Some(0.0), true));
        let decaying = scalar(&t, |t| 3.0 * (-t).exp());
        let r = absorbing_ball_check(&decaying, 1.0);
        assert_eq!((r.entered_at, r.stays), (Some(1.5), true));
        let r = absorbing_ball_check(&decaying, 0.0);
        assert_eq!(r.entered_at, None);
        let bouncing = scalar(&t, |t| if t > 3.0 { 2.0 } else { 0.5 });
        assert!(!absorbing_ball_check(&bouncing, 1.0).stays);
    }

    #[test]
    fn constant_trajectory_accepts_every_shift() {
        let t = grid(401, 0.01);
        let r = almost_period_scan(&scalar(&t, |_| 1.0), 0.1, 0.02, 1.0, false).unwrap();
        assert_eq!(r.taus.len(), 51);
        assert!((r.max_gap - 0.02).abs() < 1e-12);
    }

    #[test]
    fn sine_almost_periods() {
        let t = grid(40_001, 1e-3);
        let traj = scalar(&t, f64::sin);
        let r = almost_period_scan(&traj, 0.1, 1e-3, 10.0, false).unwrap();
        for d in &r.defects {
            let analytic = 2.0 * (d.tau / 2.0).sin().abs() < 0.1;
            assert_eq!(d.accepted, analytic, "τ = {}", d.tau);
        }
        assert!((r.max_gap - 2.0 * core::f64::consts::PI).abs() < 0.2);
    }

    #[test]
    fn scan_preconditions() {
        let t = grid(101, 0.1);
        let traj = scalar(&t, f64::sin);
        assert!(matches!(almost_period_scan(&traj, 0.1, 0.1, 5.0, false), Err(AnalysisError::TooShort { .. })));
        assert!(matches!(
            almost_period_scan(&traj, 0.1, 0.15, 1.0, false),
            Err(AnalysisError::IncompatibleStep { .. })
        ));
        assert!(almost_period_scan(&traj, 0.0, 0.1, 1.0, false).is_err());
        let uneven = TrajectorySample::scalar(vec![0.0, 0.1, 0.3, 0.4], vec![0.0; 4]).unwrap();
        assert_eq!(plan_scan(&uneven, 0.1, 0.05), Err(AnalysisError::NonUniformGrid));
    }

    #[test]
    fn bebutov_examples() {
        let t: Vec<f64> = grid(301, 0.01);
        let a = scalar(&t, f64::sin);
        let l_grid: Vec<f64> = (1..=400).map(|k| k as f64 * 0.05).collect();
        assert_eq!(bebutov_distance(&a, &a, &l_grid).unwrap(), 0.0);

        let b = scalar(&t, |s| s.sin() + 0.4);
        assert!((bebutov_distance(&a, &b, &l_grid).unwrap() - 0.4).abs() < 1e-12);

        let c = scalar(&t, |s| if s <= 1.0 { s.sin() } else { 1e6 });
        assert!(bebutov_distance(&a, &c, &l_grid).unwrap() <= 1.0);

        let short = scalar(&t[..10], f64::sin);
        assert_eq!(bebutov_distance(&a, &short, &l_grid), Err(AnalysisError::GridMismatch));
    }
}
