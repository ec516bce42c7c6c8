//! Subcommand bodies. Each one computes every output in memory and returns
//! it as a [`RunOutput`]; nothing touches the output directory until the
//! whole run has succeeded.

use std::path::Path;

use aplat_core::analysis::{absorbing_ball_check, assemble_report, fit_decay_rate, plan_scan, tau_defect, DECAY_FIT_FLOOR_FACTOR};
use aplat_core::forcing::QuasiPeriodicForcing;
use aplat_core::integrator::{integrate, Sampling};
use aplat_core::lattice::{self, norm};
use aplat_core::pullback::{horizon_for_tolerance, initial_radius, pullback_solution};
use aplat_core::{IntegratorConfig, LatticeSystem, LatticeWindow, SeededRng, SemiflowParams};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, InitialSpec, LoadedConfig, NonlinearitySpec, RunConfig};
use crate::error::CliError;
use crate::output::{blob_hash, fmt_f64, read_trajectory_csv, to_json, trajectory_csv};

/// Stream reserved for the initial state; contraction pairs use `1 + k`.
const INITIAL_STREAM: u64 = 0;

/// Slope slack in the contraction check: fitted slope ≤ -(λ+α)(1 - 0.05).
pub const SLOPE_SLACK: f64 = 0.05;
/// Pointwise slack in `‖w(t)‖ ≤ e^{-(λ+α)t}‖w(0)‖·(1 + slack)`.
pub const RATIO_SLACK: f64 = 1e-3;
/// Margin added to `M/(λ+α)` when testing absorption.
pub const ABSORBING_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Pullback,
    Apscan,
    Contraction,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Pullback => "pullback",
            Self::Apscan => "apscan",
            Self::Contraction => "contraction",
            Self::Sweep => "sweep",
        }
    }
}

/// Files to persist plus the summaries shown to the user.
#[derive(Debug)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
    pub human: String,
    /// Set when a property check failed (exit code 1).
    pub check_failure: Option<String>,
}

#[derive(Serialize)]
struct InputHash {
    name: String,
    hash: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    config_hash: String,
    inputs: Vec<InputHash>,
    seed: u64,
    #[serde(rename = "M")]
    forcing_bound: f64,
    alpha: f64,
    #[serde(rename = "lambda_plus_alpha")]
    rate: f64,
    absorbing_radius: f64,
    outputs: Vec<&'a str>,
    summary: &'a Value,
    config: &'a RunConfig,
}

pub fn run(command: Command, loaded: &LoadedConfig) -> Result<RunOutput, CliError> {
    let config = &loaded.config;
    if config.experiment.kind() != command.name() {
        return Err(CliError::config(format!(
            "subcommand `{}` needs an experiment of kind \"{}\", config has \"{}\"",
            command.name(),
            command.name(),
            config.experiment.kind()
        )));
    }
    let system = config.system()?;
    let cfg = config.integrator_config();
    let mut inputs = Vec::new();
    let mut out = match &config.experiment {
        Experiment::Simulate { t0, t1, sample_step, initial, sites } => {
            simulate(config, &system, &cfg, *t0, *t1, *sample_step, initial, *sites)?
        }
        Experiment::Pullback { anchor, horizon, tolerance, initial } => {
            pullback(config, &system, &cfg, *anchor, *horizon, *tolerance, initial)?
        }
        Experiment::Apscan { trajectory, epsilon, tau_step, tau_max, exhaustive } => {
            let (out, hash) = apscan(loaded.base_dir(), trajectory, *epsilon, *tau_step, *tau_max, *exhaustive)?;
            inputs.push(InputHash { name: trajectory.display().to_string(), hash });
            out
        }
        Experiment::Contraction { pairs, t_end, sample_step, amplitude } => {
            contraction(config, &system, &cfg, *pairs, *t_end, *sample_step, *amplitude)?
        }
        Experiment::Sweep { grid, t_end, sample_step, amplitude, absorbing_norm, pullback_horizon } => {
            let plan = SweepPlan {
                t_end: *t_end,
                sample_step: *sample_step,
                amplitude: *amplitude,
                absorbing_norm: *absorbing_norm,
                pullback_horizon: *pullback_horizon,
            };
            sweep(config, &cfg, &grid.nonlinearity, &grid.lambda, &grid.nu, &plan)?
        }
    };

    let names: Vec<String> = out.files.iter().map(|(n, _)| n.clone()).collect();
    let manifest = Manifest {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: blob_hash(&loaded.raw),
        inputs,
        seed: config.seed,
        forcing_bound: system.forcing_bound(),
        alpha: system.nonlinearity.alpha(),
        rate: system.contraction_rate(),
        absorbing_radius: system.absorbing_radius(),
        outputs: names.iter().map(String::as_str).collect(),
        summary: &out.summary,
        config,
    };
    let manifest = to_json(&manifest)?;
    out.files.push(("manifest.json".into(), manifest));
    Ok(out)
}

fn initial_state(config: &RunConfig, spec: &InitialSpec) -> Result<LatticeWindow, CliError> {
    let mut rng = SeededRng::stream(config.seed, INITIAL_STREAM);
    spec.build(config.window_halfwidth, &mut rng)
}

fn check_sampling(t0: f64, t1: f64, sample_step: f64) -> Result<(), CliError> {
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(CliError::config("time span must satisfy t0 < t1"));
    }
    if !(sample_step.is_finite() && sample_step > 0.0) {
        return Err(CliError::config("sample_step must be positive"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: &RunConfig,
    system: &LatticeSystem<QuasiPeriodicForcing>,
    cfg: &IntegratorConfig,
    t0: f64,
    t1: f64,
    sample_step: f64,
    initial: &InitialSpec,
    sites: Option<[i64; 2]>,
) -> Result<RunOutput, CliError> {
    check_sampling(t0, t1, sample_step)?;
    let v0 = match initial {
        InitialSpec::Pullback { horizon } => {
            let zero = LatticeWindow::centered_zeros(config.window_halfwidth);
            pullback_solution(system, t0, *horizon, &zero, cfg)?.state
        }
        other => initial_state(config, other)?,
    };
    let traj = integrate(system, &v0, t0, t1, cfg, &Sampling::Every(sample_step))?;
    let h = config.window_halfwidth as i64;
    let [lo, hi] = sites.unwrap_or([-h, h]);
    let csv = trajectory_csv(&traj, (lo, hi))?;
    let norms = traj.norms();
    let absorbing = absorbing_ball_check(&traj, system.absorbing_radius() + ABSORBING_MARGIN);
    let summary = json!({
        "samples": traj.len(),
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
        "initial_norm": norms[0],
        "final_norm": norms[norms.len() - 1],
        "absorbing_radius": absorbing.radius,
        "absorbing_entered_at": absorbing.entered_at,
        "absorbing_stays": absorbing.stays,
    });
    let human = format!(
        "simulate: {} samples on [{t0}, {t1}], ‖u(t0)‖ = {:.6}, ‖u(t1)‖ = {:.6}, {} accepted / {} rejected steps",
        traj.len(),
        norms[0],
        norms[norms.len() - 1],
        traj.accepted_steps,
        traj.rejected_steps
    );
    Ok(RunOutput {
        files: vec![("trajectory.csv".into(), csv)],
        summary,
        human,
        check_failure: None,
    })
}

fn pullback(
    config: &RunConfig,
    system: &LatticeSystem<QuasiPeriodicForcing>,
    cfg: &IntegratorConfig,
    anchor: f64,
    horizon: Option<f64>,
    tolerance: Option<f64>,
    initial: &InitialSpec,
) -> Result<RunOutput, CliError> {
    let v0 = initial_state(config, initial)?;
    let horizon = match (horizon, tolerance) {
        (Some(t), None) => t,
        (None, Some(tol)) => horizon_for_tolerance(system.contraction_rate(), tol, initial_radius(system, &v0)?)?,
        _ => return Err(CliError::config("pullback needs exactly one of `horizon` and `tolerance`")),
    };
    let result = pullback_solution(system, anchor, horizon, &v0, cfg)?;
    let body = to_json(&result)?;
    let summary = json!({
        "s": result.anchor,
        "T": result.horizon,
        "error_bound": result.error_bound,
        "initial_radius": result.initial_radius,
        "state_norm": norm(&result.state)?,
    });
    let human = format!(
        "pullback: s = {anchor}, T = {:.6}, error bound {:.3e}, ‖ν‖ ≈ {:.6}",
        result.horizon,
        result.error_bound,
        norm(&result.state)?
    );
    Ok(RunOutput {
        files: vec![("pullback.json".into(), body)],
        summary,
        human,
        check_failure: None,
    })
}

fn apscan(
    base: &Path,
    trajectory: &Path,
    epsilon: f64,
    tau_step: f64,
    tau_max: f64,
    exhaustive: bool,
) -> Result<(RunOutput, String), CliError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CliError::config("epsilon must be positive"));
    }
    let path = base.join(trajectory);
    let raw = std::fs::read(&path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let traj = read_trajectory_csv(&raw)?;
    let plan = plan_scan(&traj, tau_step, tau_max)?;
    let sups: Vec<f64> = (0..=plan.tau_count)
        .into_par_iter()
        .map(|j| tau_defect(&traj, j * plan.lag_stride, epsilon, exhaustive))
        .collect();
    let report = assemble_report(&traj, plan, epsilon, tau_step, tau_max, &sups);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau", "defect", "accepted"]).map_err(|e| CliError::numerical(e.to_string()))?;
    for d in &report.defects {
        w.write_record([fmt_f64(d.tau), fmt_f64(d.defect), d.accepted.to_string()])
            .map_err(|e| CliError::numerical(e.to_string()))?;
    }
    let defects_csv = w.into_inner().map_err(|e| CliError::numerical(e.to_string()))?;

    // Tiny shifts are always accepted on a continuous trajectory, so
    // relative density counts as witnessed only when the accepted set
    // returns at least twice within the range.
    let witnessed = report.max_gap <= tau_max / 2.0;
    let check_failure = (!witnessed).then(|| {
        format!(
            "relative density not witnessed: max gap {} exceeds tau_max/2 = {} for ε = {epsilon}",
            report.max_gap,
            tau_max / 2.0
        )
    });
    let positive = report.taus.iter().filter(|&&t| t > 0.0).count();
    let summary = json!({
        "epsilon": epsilon,
        "accepted": report.taus.len(),
        "accepted_positive": positive,
        "max_gap": report.max_gap,
        "witnessed": witnessed,
        "scan_start": report.scan_start,
        "scan_end": report.scan_end,
    });
    let human = format!(
        "apscan: ε = {epsilon}, {} of {} shifts accepted ({positive} positive), max gap {:.6} on [0, {tau_max}]",
        report.taus.len(),
        report.defects.len(),
        report.max_gap
    );
    let out = RunOutput {
        files: vec![
            ("apscan_report.json".into(), to_json(&report)?),
            ("apscan_defects.csv".into(), defects_csv),
        ],
        summary,
        human,
        check_failure,
    };
    Ok((out, blob_hash(&raw)))
}

/// Contraction statistics of one pair of random initial states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub slope: f64,
    pub slope_limit: f64,
    pub initial_gap: f64,
    pub final_gap: f64,
    /// `max_t ‖w(t)‖ / (e^{-(λ+α)t}‖w(0)‖)`.
    pub max_ratio: f64,
    pub passes: bool,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub gaps: Vec<f64>,
}

pub fn contraction_pair(
    system: &LatticeSystem<QuasiPeriodicForcing>,
    cfg: &IntegratorConfig,
    rng: &mut SeededRng,
    t_end: f64,
    sample_step: f64,
    amplitude: f64,
) -> Result<PairReport, CliError> {
    check_sampling(0.0, t_end, sample_step)?;
    let spec = InitialSpec::Random { amplitude };
    let v1 = spec.build(cfg.window_halfwidth, rng)?;
    let v2 = spec.build(cfg.window_halfwidth, rng)?;
    let sampling = Sampling::Every(sample_step);
    let a = integrate(system, &v1, 0.0, t_end, cfg, &sampling)?;
    let b = integrate(system, &v2, 0.0, t_end, cfg, &sampling)?;
    let gaps = a.distances(&b)?;
    let rate = system.contraction_rate();
    let slope = fit_decay_rate(a.times(), &gaps, DECAY_FIT_FLOOR_FACTOR * cfg.abs_tol)?;
    let max_ratio = a
        .times()
        .iter()
        .zip(&gaps)
        .map(|(t, g)| g / ((-rate * t).exp() * gaps[0]))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max);
    let slope_limit = -rate * (1.0 - SLOPE_SLACK);
    Ok(PairReport {
        slope,
        slope_limit,
        initial_gap: gaps[0],
        final_gap: gaps[gaps.len() - 1],
        max_ratio,
        passes: slope <= slope_limit && max_ratio <= 1.0 + RATIO_SLACK,
        times: a.times().to_vec(),
        gaps,
    })
}

fn pair_stream(seed: u64, pair: usize) -> SeededRng {
    SeededRng::stream(seed, 1 + pair as u64)
}

fn contraction(
    config: &RunConfig,
    system: &LatticeSystem<QuasiPeriodicForcing>,
    cfg: &IntegratorConfig,
    pairs: usize,
    t_end: f64,
    sample_step: f64,
    amplitude: f64,
) -> Result<RunOutput, CliError> {
    if pairs == 0 {
        return Err(CliError::config("pairs must be at least 1"));
    }
    let reports = (0..pairs)
        .into_par_iter()
        .map(|p| contraction_pair(system, cfg, &mut pair_stream(config.seed, p), t_end, sample_step, amplitude))
        .collect::<Result<Vec<_>, _>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((0..pairs).map(|p| format!("gap_{p}")));
    w.write_record(&header).map_err(|e| CliError::numerical(e.to_string()))?;
    for (k, t) in reports[0].times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        row.extend(reports.iter().map(|r| fmt_f64(r.gaps[k])));
        w.write_record(&row).map_err(|e| CliError::numerical(e.to_string()))?;
    }
    let gaps_csv = w.into_inner().map_err(|e| CliError::numerical(e.to_string()))?;

    let rate = system.contraction_rate();
    let failed = reports.iter().filter(|r| !r.passes).count();
    let worst_slope = reports.iter().map(|r| r.slope).fold(f64::NEG_INFINITY, f64::max);
    let worst_ratio = reports.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    let summary = json!({
        "rate": rate,
        "slope_limit": -rate * (1.0 - SLOPE_SLACK),
        "worst_slope": worst_slope,
        "worst_ratio": worst_ratio,
        "failed_pairs": failed,
        "pairs": reports,
    });
    let human = format!(
        "contraction: λ+α = {rate}, {pairs} pairs, worst fitted slope {worst_slope:.6} (limit {:.6}), worst ratio {worst_ratio:.6}",
        -rate * (1.0 - SLOPE_SLACK)
    );
    let check_failure = (failed > 0).then(|| format!("{failed} of {pairs} pairs violate the contraction estimate"));
    Ok(RunOutput {
        files: vec![
            ("contraction.json".into(), to_json(&summary)?),
            ("contraction.csv".into(), gaps_csv),
        ],
        summary,
        human,
        check_failure,
    })
}

struct SweepPlan {
    t_end: f64,
    sample_step: f64,
    amplitude: f64,
    absorbing_norm: f64,
    pullback_horizon: f64,
}

/// One sweep row. Numeric fields are NaN when the cell failed early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub nonlinearity: String,
    pub alpha: f64,
    pub nu: f64,
    pub lambda: f64,
    pub rate: f64,
    pub seed: u64,
    pub slope: f64,
    pub slope_limit: f64,
    pub max_ratio: f64,
    pub absorbing_radius: f64,
    pub entered_at: f64,
    pub pullback_bound: f64,
    pub pullback_drift: f64,
    pub status: String,
}

fn sweep_cell(
    config: &RunConfig,
    cfg: &IntegratorConfig,
    plan: &SweepPlan,
    row: &mut SweepRow,
    nonlinearity: &NonlinearitySpec,
) -> Result<bool, CliError> {
    let f = nonlinearity.build()?;
    row.nonlinearity = f.name().to_string();
    row.alpha = f.alpha();
    let params = SemiflowParams::new(row.nu, row.lambda)?;
    let system = LatticeSystem::new(params, f, config.forcing.build()?);
    row.rate = system.contraction_rate();

    let pair = contraction_pair(&system, cfg, &mut pair_stream(row.seed, 0), plan.t_end, plan.sample_step, plan.amplitude)?;
    row.slope = pair.slope;
    row.slope_limit = pair.slope_limit;
    row.max_ratio = pair.max_ratio;

    let v0 = InitialSpec::RandomNorm { norm: plan.absorbing_norm }
        .build(cfg.window_halfwidth, &mut SeededRng::stream(row.seed, INITIAL_STREAM))?;
    let traj = integrate(&system, &v0, 0.0, plan.t_end, cfg, &Sampling::Every(plan.sample_step))?;
    let absorbing = absorbing_ball_check(&traj, system.absorbing_radius() + ABSORBING_MARGIN);
    row.absorbing_radius = absorbing.radius;
    row.entered_at = absorbing.entered_at.unwrap_or(f64::NAN);

    let zero = LatticeWindow::centered_zeros(cfg.window_halfwidth);
    let near = pullback_solution(&system, 0.0, plan.pullback_horizon, &zero, cfg)?;
    let far = pullback_solution(&system, 0.0, plan.pullback_horizon + 1.0, &zero, cfg)?;
    row.pullback_bound = near.error_bound;
    row.pullback_drift = norm(&lattice::difference(&near.state, &far.state))?;

    Ok(pair.passes && absorbing.entered_at.is_some() && absorbing.stays)
}

fn sweep(
    config: &RunConfig,
    cfg: &IntegratorConfig,
    nonlinearities: &[NonlinearitySpec],
    lambdas: &[f64],
    nus: &[f64],
    plan: &SweepPlan,
) -> Result<RunOutput, CliError> {
    check_sampling(0.0, plan.t_end, plan.sample_step)?;
    if !(plan.pullback_horizon >= 0.0 && plan.pullback_horizon.is_finite()) {
        return Err(CliError::config("pullback_horizon must be finite and >= 0"));
    }
    let default_f = std::slice::from_ref(&config.nonlinearity);
    let nonlinearities = if nonlinearities.is_empty() { default_f } else { nonlinearities };
    let lambdas = if lambdas.is_empty() { &[config.params.lambda][..] } else { lambdas };
    let nus = if nus.is_empty() { &[config.params.nu][..] } else { nus };

    let mut cells = Vec::new();
    for f in nonlinearities {
        for &lambda in lambdas {
            for &nu in nus {
                cells.push((f, lambda, nu));
            }
        }
    }
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .enumerate()
        .map(|(cell, &(f, lambda, nu))| {
            let mut row = SweepRow {
                cell,
                nonlinearity: String::new(),
                alpha: f64::NAN,
                nu,
                lambda,
                rate: f64::NAN,
                seed: config.seed.wrapping_add(cell as u64),
                slope: f64::NAN,
                slope_limit: f64::NAN,
                max_ratio: f64::NAN,
                absorbing_radius: f64::NAN,
                entered_at: f64::NAN,
                pullback_bound: f64::NAN,
                pullback_drift: f64::NAN,
                status: String::new(),
            };
            row.status = match sweep_cell(config, cfg, plan, &mut row, f) {
                Ok(true) => "ok".into(),
                Ok(false) => "check_failed".into(),
                Err(e) => format!("error: {e}"),
            };
            row
        })
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell",
        "nonlinearity",
        "alpha",
        "nu",
        "lambda",
        "rate",
        "seed",
        "slope",
        "slope_limit",
        "max_ratio",
        "absorbing_radius",
        "entered_at",
        "pullback_bound",
        "pullback_drift",
        "status",
    ])
    .map_err(|e| CliError::numerical(e.to_string()))?;
    for r in &rows {
        let record = [
            r.cell.to_string(),
            r.nonlinearity.clone(),
            fmt_f64(r.alpha),
            fmt_f64(r.nu),
            fmt_f64(r.lambda),
            fmt_f64(r.rate),
            r.seed.to_string(),
            fmt_f64(r.slope),
            fmt_f64(r.slope_limit),
            fmt_f64(r.max_ratio),
            fmt_f64(r.absorbing_radius),
            fmt_f64(r.entered_at),
            fmt_f64(r.pullback_bound),
            fmt_f64(r.pullback_drift),
            r.status.clone(),
        ];
        w.write_record(&record).map_err(|e| CliError::numerical(e.to_string()))?;
    }
    let csv = w.into_inner().map_err(|e| CliError::numerical(e.to_string()))?;

    let flagged = rows.iter().filter(|r| r.status != "ok").count();
    let summary = json!({ "cells": rows.len(), "flagged": flagged });
    let mut human = format!("sweep: {} cells, {flagged} flagged", rows.len());
    for r in rows.iter().filter(|r| r.status != "ok") {
        human.push_str(&format!("\n  cell {} (ν = {}, λ = {}, {}): {}", r.cell, r.nu, r.lambda, r.nonlinearity, r.status));
    }
    let check_failure = (flagged > 0).then(|| format!("{flagged} of {} sweep cells flagged", rows.len()));
    Ok(RunOutput {
        files: vec![("sweep.csv".into(), csv)],
        summary,
        human,
        check_failure,
    })
}
