//! Explicit time integration of the discretized scaled model: first-order
//! upwind in `y`, forward Euler in `t`, boundary exchange through inflow
//! ghost values. The stiff `1/eps^2` tumbling term is handled by a CFL guard
//! rather than implicit solves.

use thiserror::Error;

use crate::diagnostics::total_mass;
use crate::kernel::DiscreteKernel;
use crate::mesh::{Mesh, StateField};

/// Consecutive quiet steps required before a state counts as steady.
pub const STEADY_WINDOW: usize = 100;
/// Round-off band clamped to zero once per diagnostic stride.
pub const ROUNDOFF_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("CFL violation: dt = {dt} but the positivity bound needs dt <= {max_dt:.6e}")]
    CflViolation { dt: f64, max_dt: f64 },
    #[error("solution blew up at step {step} (t = {t}): {detail}")]
    BlowUp { step: usize, t: f64, detail: String },
    #[error("no steady state within {steps} steps (relative update {residual:.3e})")]
    NotSteady { residual: f64, steps: usize },
    #[error("kernel was assembled on a different mesh")]
    MeshMismatch,
}

/// Time-stepping parameters.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Relative max-norm update threshold for steady-state detection.
    pub steady_tol: f64,
    /// Refuse runs violating the explicit positivity bound.
    pub cfl_guard: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-3,
            t_end: 4.0,
            steady_tol: 1e-10,
            cfl_guard: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.steady_tol > 0.0) || self.t_end < 0.0
        {
            return Err(SolverError::CflViolation {
                dt: self.dt,
                max_dt: f64::NAN,
            });
        }
        Ok(())
    }
}

/// `dt * (V/dy + k_max/eps^2)`; the explicit update keeps positivity while
/// this stays at or below 1.
pub fn cfl_number(kernel: &DiscreteKernel, mesh: &Mesh, dt: f64) -> f64 {
    dt * (mesh.v / mesh.dy + kernel.max_rate() / (kernel.epsilon * kernel.epsilon))
}

/// Suggested time step: 90% of the positivity bound.
pub fn suggest_dt(kernel: &DiscreteKernel, mesh: &Mesh) -> f64 {
    0.9 / (mesh.v / mesh.dy + kernel.max_rate() / (kernel.epsilon * kernel.epsilon))
}

/// Inflow ghost densities obtained from the wall populations.
///
/// `bottom[p]` is the ghost below the first row for the upward angle
/// `j = n_theta + p`; `top[j]` is the ghost above the last row for the
/// downward angle `j`.
#[derive(Debug, Clone)]
pub struct GhostValues {
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

/// Scatter of the wall kernels over all target angles:
/// `top[j] = sum_{j' in I_theta+} K_{+,j',j} n_{+,j'}` and the bottom analogue.
fn boundary_scatter(
    state: &StateField,
    kernel: &DiscreteKernel,
    mesh: &Mesh,
    top: &mut [f64],
    bot: &mut [f64],
) {
    let cols = mesh.cols();
    let (d_lo, weights) = kernel.stencil();
    top.fill(0.0);
    bot.fill(0.0);
    let rate_top = kernel.rate_top_slice();
    for (p, j_src) in mesh.upward_range().enumerate() {
        let c = rate_top[p] * state.n_plus[p];
        if c != 0.0 {
            scatter_add(top, j_src, d_lo, weights, cols, c);
        }
    }
    let rate_bot = kernel.rate_bot_slice();
    for j_src in mesh.downward_range() {
        let c = rate_bot[j_src] * state.n_minus[j_src];
        if c != 0.0 {
            scatter_add(bot, j_src, d_lo, weights, cols, c);
        }
    }
}

/// Add `c * weights` into `gains` at circular offsets `d_lo..` from `j_src`.
#[inline]
fn scatter_add(gains: &mut [f64], j_src: usize, d_lo: i64, weights: &[f64], cols: usize, c: f64) {
    let start = (j_src as i64 + d_lo).rem_euclid(cols as i64) as usize;
    let head = (cols - start).min(weights.len());
    for (g, &w) in gains[start..start + head].iter_mut().zip(&weights[..head]) {
        *g += c * w;
    }
    for (g, &w) in gains[..weights.len() - head]
        .iter_mut()
        .zip(&weights[head..])
    {
        *g += c * w;
    }
}

/// Inflow ghost values from the discrete boundary conditions. Nonnegative
/// because `sin(theta_j)` carries the inflow sign.
pub fn ghost_values(state: &StateField, kernel: &DiscreteKernel, mesh: &Mesh) -> GhostValues {
    let cols = mesh.cols();
    let mut top_scatter = vec![0.0; cols];
    let mut bot_scatter = vec![0.0; cols];
    boundary_scatter(state, kernel, mesh, &mut top_scatter, &mut bot_scatter);
    ghosts_from_scatter(&top_scatter, &bot_scatter, mesh, kernel.epsilon)
}

fn ghosts_from_scatter(
    top_scatter: &[f64],
    bot_scatter: &[f64],
    mesh: &Mesh,
    epsilon: f64,
) -> GhostValues {
    let inv_e3 = 1.0 / (epsilon * epsilon * epsilon);
    let bottom = mesh
        .upward_range()
        .map(|j| inv_e3 * bot_scatter[j] / (mesh.v * mesh.sin_theta(j)))
        .collect();
    let top = mesh
        .downward_range()
        .map(|j| -inv_e3 * top_scatter[j] / (mesh.v * mesh.sin_theta(j)))
        .collect();
    GhostValues { bottom, top }
}

/// Work buffers reused across steps.
pub struct Scratch {
    gains: Vec<f64>,
    top_scatter: Vec<f64>,
    bot_scatter: Vec<f64>,
}

impl Scratch {
    pub fn new(mesh: &Mesh) -> Self {
        Scratch {
            gains: vec![0.0; mesh.cols()],
            top_scatter: vec![0.0; mesh.cols()],
            bot_scatter: vec![0.0; mesh.cols()],
        }
    }
}

fn step_into(
    state: &StateField,
    kernel: &DiscreteKernel,
    mesh: &Mesh,
    dt: f64,
    next: &mut StateField,
    scratch: &mut Scratch,
) {
    let cols = mesh.cols();
    let rows = mesh.rows();
    let n_theta = mesh.n_theta;
    let eps = kernel.epsilon;
    let inv_e2 = 1.0 / (eps * eps);
    let inv_e3 = inv_e2 / eps;
    let inv_dy = 1.0 / mesh.dy;
    let v = mesh.v;
    let (d_lo, weights) = kernel.stencil();

    boundary_scatter(
        state,
        kernel,
        mesh,
        &mut scratch.top_scatter,
        &mut scratch.bot_scatter,
    );
    let ghosts = ghosts_from_scatter(&scratch.top_scatter, &scratch.bot_scatter, mesh, eps);

    for i in 0..rows {
        let row = &state.n[i * cols..(i + 1) * cols];
        let rates = kernel.rates_row(i);
        let ks = kernel.k_row(i);
        scratch.gains.fill(0.0);
        for (j_src, (&r, &n)) in rates.iter().zip(row.iter()).enumerate() {
            let c = r * n;
            if c != 0.0 {
                scatter_add(&mut scratch.gains, j_src, d_lo, weights, cols, c);
            }
        }
        let out = &mut next.n[i * cols..(i + 1) * cols];
        for j in 0..cols {
            let sin = mesh.sin_theta(j);
            // Upwind: backward difference for upward movers, forward for
            // downward; inflow rows read the ghost value.
            let grad = if j >= n_theta {
                let behind = if i == 0 {
                    ghosts.bottom[j - n_theta]
                } else {
                    state.n[(i - 1) * cols + j]
                };
                (row[j] - behind) * inv_dy
            } else {
                let ahead = if i + 1 == rows {
                    ghosts.top[j]
                } else {
                    state.n[(i + 1) * cols + j]
                };
                (ahead - row[j]) * inv_dy
            };
            out[j] =
                row[j] - dt * (v * sin * grad + inv_e2 * ks[j] * row[j] - inv_e3 * scratch.gains[j]);
        }
    }

    // Wall ODEs: source from the adjacent bulk row, loss at the row-sum
    // rate, gain from the wall kernel restricted to in-wall targets.
    let last_row = &state.n[(rows - 1) * cols..rows * cols];
    for (p, j) in mesh.upward_range().enumerate() {
        let sin = mesh.sin_theta(j);
        next.n_plus[p] = state.n_plus[p]
            + dt * (v * sin * last_row[j] - inv_e2 * kernel.k_top(j) * state.n_plus[p]
                + inv_e3 * scratch.top_scatter[j]);
    }
    let first_row = &state.n[0..cols];
    for j in mesh.downward_range() {
        let sin = mesh.sin_theta(j);
        next.n_minus[j] = state.n_minus[j]
            + dt * (-v * sin * first_row[j] - inv_e2 * kernel.k_bot(j) * state.n_minus[j]
                + inv_e3 * scratch.bot_scatter[j]);
    }

    next.t = state.t + dt;
}

fn check_health(state: &StateField, step: usize) -> Result<(), SolverError> {
    if state.has_nan() {
        return Err(SolverError::BlowUp {
            step,
            t: state.t,
            detail: "non-finite value".to_string(),
        });
    }
    let min = state.min_value();
    let floor = -1e-9 * state.max_abs().max(1.0);
    if min < floor {
        return Err(SolverError::BlowUp {
            step,
            t: state.t,
            detail: format!("negative density {min:.3e}"),
        });
    }
    Ok(())
}

fn guard_cfl(kernel: &DiscreteKernel, mesh: &Mesh, cfg: &SolverConfig) -> Result<(), SolverError> {
    if cfg.cfl_guard {
        let cfl = cfl_number(kernel, mesh, cfg.dt);
        if cfl > 1.0 + 1e-12 {
            return Err(SolverError::CflViolation {
                dt: cfg.dt,
                max_dt: cfg.dt / cfl,
            });
        }
    }
    Ok(())
}

/// One forward-Euler update of all unknowns.
pub fn step(
    state: &StateField,
    kernel: &DiscreteKernel,
    mesh: &Mesh,
    cfg: &SolverConfig,
) -> Result<StateField, SolverError> {
    if state.n.len() != mesh.rows() * mesh.cols() || state.n_plus.len() != mesh.n_theta {
        return Err(SolverError::MeshMismatch);
    }
    guard_cfl(kernel, mesh, cfg)?;
    let mut next = StateField::zeros(mesh);
    let mut scratch = Scratch::new(mesh);
    step_into(state, kernel, mesh, cfg.dt, &mut next, &mut scratch);
    check_health(&next, 1)?;
    Ok(next)
}

/// Relative per-step update in max norm: `max|step(m) - m| / (max|m|)`.
/// A numerically steady state keeps this below the solver tolerance.
pub fn steady_residual(
    state: &StateField,
    kernel: &DiscreteKernel,
    mesh: &Mesh,
    cfg: &SolverConfig,
) -> Result<f64, SolverError> {
    let next = step(state, kernel, mesh, cfg)?;
    Ok(rel_update(state, &next))
}

fn rel_update(old: &StateField, new: &StateField) -> f64 {
    let scale = old.max_abs();
    if scale == 0.0 {
        return if new.max_abs() == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let mut worst = 0.0_f64;
    for (a, b) in old
        .n
        .iter()
        .chain(old.n_plus.iter())
        .chain(old.n_minus.iter())
        .zip(new.n.iter().chain(new.n_plus.iter()).chain(new.n_minus.iter()))
    {
        worst = worst.max((b - a).abs());
    }
    worst / scale
}

/// Result of a time-marching run.
#[derive(Debug)]
pub struct RunOutcome {
    pub state: StateField,
    pub steps: usize,
    pub reached_steady: bool,
    /// Relative max-norm update of the last step taken.
    pub last_rel_update: f64,
}

/// Advance to `t_end`, or stop early once the relative update stays below
/// `steady_tol` for [`STEADY_WINDOW`] consecutive steps. The observer sees
/// the initial state, every `stride`-th state, and the final state; round-off
/// negatives are clamped just before each observation.
pub fn run(
    state: StateField,
    kernel: &DiscreteKernel,
    mesh: &Mesh,
    cfg: &SolverConfig,
    stride: usize,
    mut observer: impl FnMut(&StateField),
) -> Result<RunOutcome, SolverError> {
    cfg.validate()?;
    if state.n.len() != mesh.rows() * mesh.cols() || state.n_plus.len() != mesh.n_theta {
        return Err(SolverError::MeshMismatch);
    }
    guard_cfl(kernel, mesh, cfg)?;
    let stride = stride.max(1);
    let t0 = state.t;
    let total_steps = ((cfg.t_end - t0) / cfg.dt).round().max(0.0) as usize;

    let mut current = state;
    let mut next = StateField::zeros(mesh);
    let mut scratch = Scratch::new(mesh);
    current.clamp_roundoff(ROUNDOFF_CLAMP);
    observer(&current);

    let mut quiet = 0usize;
    let mut last_update = f64::INFINITY;
    let mut steps_taken = 0usize;
    for k in 1..=total_steps {
        step_into(&current, kernel, mesh, cfg.dt, &mut next, &mut scratch);
        next.t = t0 + k as f64 * cfg.dt;
        last_update = rel_update(&current, &next);
        std::mem::swap(&mut current, &mut next);
        steps_taken = k;
        if k % stride == 0 || k == total_steps {
            check_health(&current, k)?;
            current.clamp_roundoff(ROUNDOFF_CLAMP);
            observer(&current);
        }
        if last_update < cfg.steady_tol {
            quiet += 1;
            if quiet >= STEADY_WINDOW {
                if steps_taken % stride != 0 && steps_taken != total_steps {
                    current.clamp_roundoff(ROUNDOFF_CLAMP);
                    observer(&current);
                }
                return Ok(RunOutcome {
                    state: current,
                    steps: steps_taken,
                    reached_steady: true,
                    last_rel_update: last_update,
                });
            }
        } else {
            quiet = 0;
        }
    }
    Ok(RunOutcome {
        state: current,
        steps: steps_taken,
        reached_steady: false,
        last_rel_update: last_update,
    })
}

/// Numerical steady state: long-time limit from the uniform initial
/// condition, renormalized to unit mass. `cfg.t_end` acts as the step
/// budget; exhausting it without steadiness is an error.
pub fn steady_state(
    kernel: &DiscreteKernel,
    mesh: &Mesh,
    cfg: &SolverConfig,
) -> Result<StateField, SolverError> {
    let outcome = run(
        StateField::uniform(mesh),
        kernel,
        mesh,
        cfg,
        usize::MAX,
        |_| {},
    )?;
    if !outcome.reached_steady {
        return Err(SolverError::NotSteady {
            residual: outcome.last_rel_update,
            steps: outcome.steps,
        });
    }
    let mut state = outcome.state;
    let mass = total_mass(&state, mesh);
    state.scale(1.0 / mass);
    state.clamp_roundoff(ROUNDOFF_CLAMP);
    Ok(state)
}
