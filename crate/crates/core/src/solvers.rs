//! Deterministic probability-flow integrators.
//!
//! The ODE is `dx/dσ = (x − D_σ(x))/σ`. A run walks the schedule from its
//! largest level to its smallest and then jumps to σ = 0 with one DDIM step,
//! so a schedule of `T` levels costs exactly `T` updates.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::guidance::Denoiser;
use crate::io::{coordinate_columns, float, CsvWriter};
use crate::schedule::NoiseSchedule;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SolverMethod {
    #[serde(rename = "euler", alias = "ddim", alias = "euler_ddim")]
    EulerDdim,
    #[default]
    #[serde(rename = "heun")]
    Heun,
}

impl SolverMethod {
    /// Denoiser evaluations for a schedule of `levels` levels.
    pub fn denoiser_calls(self, levels: usize) -> usize {
        match self {
            SolverMethod::EulerDdim => levels,
            SolverMethod::Heun => 2 * (levels - 1) + 1,
        }
    }
}

/// `(1 − σ_to/σ_from)·D(x, σ_from) + (σ_to/σ_from)·x`.
pub fn ddim_step(x: &Point, sigma_from: f64, sigma_to: f64, denoiser: &dyn Denoiser) -> Result<Point> {
    if !(sigma_from > 0.0 && sigma_to >= 0.0 && sigma_to <= sigma_from) {
        return Err(invalid(format!("DDIM needs 0 <= sigma_to <= sigma_from, got {sigma_from} -> {sigma_to}")));
    }
    if sigma_to == sigma_from {
        return Ok(x.clone());
    }
    let d = denoiser.denoise_in_step(x, sigma_from, sigma_from, sigma_to)?;
    let r = sigma_to / sigma_from;
    Ok(d * (1.0 - r) + x * r)
}

/// DDIM predictor followed by a trapezoidal corrector.
pub fn heun_step(x: &Point, sigma_from: f64, sigma_to: f64, denoiser: &dyn Denoiser) -> Result<Point> {
    if !(sigma_to > 0.0 && sigma_to < sigma_from) {
        return Err(invalid(format!("Heun needs 0 < sigma_to < sigma_from, got {sigma_from} -> {sigma_to}")));
    }
    let d = denoiser.denoise_in_step(x, sigma_from, sigma_from, sigma_to)?;
    let r = sigma_to / sigma_from;
    let predicted = &d * (1.0 - r) + x * r;
    let d_pred = denoiser.denoise_in_step(&predicted, sigma_to, sigma_from, sigma_to)?;
    let slope_from = (x - &d) / sigma_from;
    let slope_to = (&predicted - d_pred) / sigma_to;
    Ok(x + (slope_from + slope_to) * (0.5 * (sigma_to - sigma_from)))
}

/// Default bound on recorded trajectory points per run.
pub const DEFAULT_TRAJECTORY_CAP: usize = 100_000;

/// A schedule, a denoiser and a stepping method.
#[derive(Clone)]
pub struct SolverRun {
    pub schedule: NoiseSchedule,
    pub denoiser: Arc<dyn Denoiser>,
    pub method: SolverMethod,
    pub record_trajectory: bool,
    pub trajectory_cap: usize,
}

impl std::fmt::Debug for SolverRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverRun")
            .field("schedule", &self.schedule)
            .field("method", &self.method)
            .field("record_trajectory", &self.record_trajectory)
            .finish_non_exhaustive()
    }
}

impl SolverRun {
    pub fn new(schedule: NoiseSchedule, denoiser: Arc<dyn Denoiser>, method: SolverMethod) -> Self {
        Self { schedule, denoiser, method, record_trajectory: false, trajectory_cap: DEFAULT_TRAJECTORY_CAP }
    }

    pub fn with_trajectory(mut self, cap: usize) -> Self {
        self.record_trajectory = true;
        self.trajectory_cap = cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step_index: usize,
    pub sigma: f64,
    pub state: Point,
}

/// Result of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub state: Point,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Set when recording stopped at the cap.
    pub truncated: bool,
    /// Solver updates performed, including the final jump to zero.
    pub steps: usize,
}

fn check_finite(x: &Point, step: usize, sigma: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step, sigma })
    }
}

/// Integrates from `σ_max` down to zero starting at `x_init`.
pub fn integrate_flow(x_init: &Point, run: &SolverRun) -> Result<Flow> {
    if x_init.len() != run.denoiser.dim() {
        return Err(Error::DimensionMismatch { expected: run.denoiser.dim(), got: x_init.len() });
    }
    if x_init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut trajectory = Vec::new();
    let mut truncated = false;
    let mut record = |step_index: usize, sigma: f64, state: &Point| {
        if !run.record_trajectory {
            return;
        }
        if trajectory.len() < run.trajectory_cap {
            trajectory.push(TrajectoryPoint { step_index, sigma, state: state.clone() });
        } else {
            truncated = true;
        }
    };
    let mut x = x_init.clone();
    record(0, run.schedule.sigma_max(), &x);
    let denoiser = run.denoiser.as_ref();
    let mut steps = 0;
    for (from, to) in run.schedule.transitions() {
        x = match run.method {
            SolverMethod::EulerDdim => ddim_step(&x, from, to, denoiser)?,
            SolverMethod::Heun => heun_step(&x, from, to, denoiser)?,
        };
        steps += 1;
        check_finite(&x, steps, to)?;
        record(steps, to, &x);
    }
    x = ddim_step(&x, run.schedule.sigma_min(), 0.0, denoiser)?;
    steps += 1;
    check_finite(&x, steps, 0.0)?;
    record(steps, 0.0, &x);
    Ok(Flow { state: x, trajectory, truncated, steps })
}

/// Integrates every initial state in parallel; output order follows input.
pub fn integrate_ensemble(initial: &[Point], run: &SolverRun) -> Result<Vec<Flow>> {
    initial.par_iter().map(|x| integrate_flow(x, run)).collect()
}

/// Writes `chain_id, step_index, sigma, x_1..x_d` rows.
pub fn write_trajectories<W: Write>(out: W, chains: &[(usize, &[TrajectoryPoint])]) -> Result<W> {
    let dim = chains.iter().flat_map(|c| c.1.first()).map(|p| p.state.len()).next().unwrap_or(1);
    let mut header = vec!["chain_id".to_string(), "step_index".into(), "sigma".into()];
    header.extend(coordinate_columns(dim));
    let mut csv = CsvWriter::new(out, &header)?;
    for (chain, points) in chains {
        for p in points.iter() {
            let mut cells = vec![chain.to_string(), p.step_index.to_string(), float(p.sigma)];
            cells.extend(p.state.iter().map(|v| float(*v)));
            csv.row(cells)?;
        }
    }
    csv.finish()
}
