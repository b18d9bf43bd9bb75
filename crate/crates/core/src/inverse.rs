//! The inverse source problem `F f = U_data`: exact discrete adjoint,
//! least-squares objective, gradient and a CGLS solver.
//!
//! Inner products are the discrete `L2` ones: cell-area weighted on fields,
//! `dt` weighted on receiver data. With those weights the adjoint is
//! `F* = dt / (dx dy) F^T`.

use std::time::Instant;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::acoustics::{forward_with_solver, WaveSolver};
use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid, ReceiverData, ReceiverLayout};
use crate::signal::SourceSignal;

pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Residual growth over the initial residual that aborts the solve.
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub grid: Grid,
    pub signal: SourceSignal,
    pub layout: ReceiverLayout,
    pub observed: ReceiverData,
    pub max_iterations: usize,
    pub tolerance: f64,
    solver: WaveSolver,
}

impl InverseProblem {
    pub fn new(grid: &Grid, signal: &SourceSignal, layout: &ReceiverLayout, observed: ReceiverData) -> Result<Self> {
        signal.validate()?;
        layout.validate(grid)?;
        observed.check_shape(layout, grid)?;
        if !observed.is_finite() {
            return Err(Error::config("observed data contain non-finite samples"));
        }
        Ok(Self {
            grid: grid.clone(),
            signal: signal.clone(),
            layout: layout.clone(),
            observed,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            solver: WaveSolver::new(grid)?,
        })
    }

    pub fn with_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn forward(&self, f: &DensityField) -> Result<ReceiverData> {
        forward_with_solver(&self.solver, f, &self.signal, &self.layout)
    }

    pub fn adjoint(&self, v: &ReceiverData) -> Result<DensityField> {
        adjoint_with_solver(&self.solver, v, &self.signal, &self.layout)
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub field: DensityField,
    /// `J` at the start and after each iteration.
    pub objective: Vec<f64>,
    /// `||F f - U|| / ||U||` at the start and after each iteration.
    pub residuals: Vec<f64>,
    pub final_relative_residual: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub iterations: usize,
    pub final_residual: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_l2_error_vs_truth: Option<f64>,
}

impl ReconstructionReport {
    pub fn summary(&self, truth: Option<&DensityField>) -> ReportSummary {
        ReportSummary {
            iterations: self.iterations,
            final_residual: self.final_relative_residual,
            wall_time_s: self.wall_time_s,
            rel_l2_error_vs_truth: truth
                .and_then(|t| crate::grid::relative_l2_error(&self.field.values, &t.values).ok()),
        }
    }
}

/// `lambda(x, t)` on every domain cell; `None` when it vanishes everywhere.
fn signal_on_cells(signal: &SourceSignal, grid: &Grid, t: f64, out: &mut [f64]) -> bool {
    if signal.is_spatially_uniform() {
        let lam = signal.eval([0.0, 0.0], t);
        out.iter_mut().for_each(|v| *v = lam);
        return lam != 0.0;
    }
    let mut any = false;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let lam = signal.eval(grid.cell_center(i, j), t);
            any |= lam != 0.0;
            out[j * grid.nx + i] = lam;
        }
    }
    any
}

/// `F* V`: the time-reversed transposed recurrence driven by `V` at the
/// receivers, correlated with `lambda` over the domain.
pub fn apply_adjoint(v: &ReceiverData, signal: &SourceSignal, grid: &Grid, layout: &ReceiverLayout) -> Result<DensityField> {
    let solver = WaveSolver::new(grid)?;
    adjoint_with_solver(&solver, v, signal, layout)
}

pub fn adjoint_with_solver(
    solver: &WaveSolver,
    v: &ReceiverData,
    signal: &SourceSignal,
    layout: &ReceiverLayout,
) -> Result<DensityField> {
    let grid = solver.grid();
    layout.validate(grid)?;
    v.check_shape(layout, grid)?;
    let mut out = DensityField::zeros(grid);
    let mut state = solver.zero_state();
    state.step = grid.nt;
    // reversed running sum of the source readout
    let mut sens = vec![0.0; grid.len()];
    let mut lam = vec![0.0; grid.len()];
    for m in (1..=grid.nt).rev() {
        solver.adjoint_step(&mut state, layout, |r| v.get(r, m - 1))?;
        solver.accumulate_readout(&state, &mut sens);
        if signal_on_cells(signal, grid, (m - 1) as f64 * grid.dt, &mut lam) {
            for ((o, l), s) in out.values.iter_mut().zip(&lam).zip(&sens) {
                *o += l * s;
            }
        }
    }
    out.scale(grid.dt / grid.cell_area());
    Ok(out)
}

/// `J(f) = 1/2 ||F f - U||^2`.
pub fn objective(f: &DensityField, problem: &InverseProblem) -> Result<f64> {
    let r = problem.forward(f)?.difference(&problem.observed)?;
    Ok(0.5 * r.inner(&r))
}

/// `DJ(f) = F*(F f - U)`, supported on the domain.
pub fn gradient(f: &DensityField, problem: &InverseProblem) -> Result<DensityField> {
    let r = problem.forward(f)?.difference(&problem.observed)?;
    problem.adjoint(&r)
}

/// CGLS on `F f = U` from `f = 0`.
pub fn cgls_solve(problem: &InverseProblem) -> Result<ReconstructionReport> {
    if problem.max_iterations == 0 {
        return Err(Error::config("iteration cap must be at least 1"));
    }
    let start = Instant::now();
    let grid = &problem.grid;
    let data_norm = problem.observed.norm();
    let mut x = DensityField::zeros(grid);
    let mut objective = vec![0.5 * data_norm * data_norm];
    let mut residuals = vec![if data_norm > 0.0 { 1.0 } else { 0.0 }];
    if data_norm == 0.0 {
        return Ok(ReconstructionReport {
            field: x,
            objective,
            residuals,
            final_relative_residual: 0.0,
            iterations: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let mut r = problem.observed.clone();
    let mut s = problem.adjoint(&r)?;
    let mut p = s.clone();
    let mut gamma = s.inner(&s, grid);
    let mut iterations = 0;
    let mut rnorm = data_norm;
    while iterations < problem.max_iterations {
        if gamma == 0.0 || rnorm / data_norm < problem.tolerance {
            break;
        }
        let q = problem.forward(&p)?;
        let qq = q.inner(&q);
        if !(qq > 0.0) {
            break;
        }
        let alpha = gamma / qq;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &q);
        let new_norm = r.norm();
        iterations += 1;
        if !new_norm.is_finite() || new_norm > DIVERGENCE_FACTOR * data_norm {
            return Err(Error::Solver(format!(
                "CGLS diverged at iteration {iterations}: residual {new_norm:.3e} vs initial {data_norm:.3e}"
            )));
        }
        if new_norm > rnorm * (1.0 + 1e-9) {
            warn!("CGLS residual rose at iteration {iterations}: {rnorm:.6e} -> {new_norm:.6e}");
        }
        rnorm = new_norm;
        objective.push(0.5 * rnorm * rnorm);
        residuals.push(rnorm / data_norm);
        debug!("CGLS iteration {iterations}: relative residual {:.3e}", rnorm / data_norm);
        s = problem.adjoint(&r)?;
        let gamma_new = s.inner(&s, grid);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pv, sv) in p.values.iter_mut().zip(&s.values) {
            *pv = sv + beta * *pv;
        }
    }
    Ok(ReconstructionReport {
        field: x,
        objective,
        residuals,
        final_relative_residual: rnorm / data_norm,
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// `U + max|U| sigma N(0, 1)` elementwise, reproducible for a given seed.
pub fn add_noise(data: &ReceiverData, sigma: f64, seed: u64) -> Result<ReceiverData> {
    if !(sigma >= 0.0) {
        return Err(Error::config(format!("noise level must be non-negative, got {sigma}")));
    }
    let mut out = data.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let scale = data.max_abs() * sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.samples.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += scale * z;
    }
    Ok(out)
}
