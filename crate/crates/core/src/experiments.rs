//! The four config-driven experiments behind the CLI: time evolution with
//! diagnostics, the grid-convergence table, the solver-vs-particle
//! comparison, and the scaling-parameter ladder. Each writes CSV artifacts
//! into the output directory and returns them for inspection.

use std::path::{Path, PathBuf};

use crate::config::{ConfigError, ExperimentConfig};
use crate::diagnostics::{
    relative_entropy, linf_gap, split_mass, weighted_l2_error, well_contrast, DiagnosticsRecord,
    DiagnosticsReport, ErrorTableEntry,
};
use crate::error::Error;
use crate::io::{
    write_compare_csv, write_error_table_csv, write_histogram_csv, write_ladder_csv,
    write_report_csv, write_state_csv, CompareRow, LadderRung, Provenance,
};
use crate::kernel::{assemble, diffusion_coeff};
use crate::mc::{bootstrap_noise_floor, simulate, Histogram2D, McParams};
use crate::mesh::{Mesh, StateField};
use crate::solver::{run, steady_state, suggest_dt, SolverConfig};

/// Fraction of near-wall rows treated as the depletion-well band.
pub const WELL_BAND_FRACTION: f64 = 0.1;

fn snapshot_steps(times: &[f64], dt: f64, field: &str) -> Result<Vec<(usize, f64)>, ConfigError> {
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        let k = (t / dt).round();
        if (k * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(ConfigError::Invalid {
                field: field.to_string(),
                problem: format!("time {t} is not a multiple of dt = {dt}"),
            });
        }
        steps.push((k as usize, t));
    }
    Ok(steps)
}

fn time_tag(t: f64) -> String {
    format!("{t}").replace('.', "p").replace('-', "m")
}

pub struct EvolveOutput {
    pub report: DiagnosticsReport,
    pub final_state: StateField,
    pub snapshots: Vec<(f64, StateField)>,
    pub files: Vec<PathBuf>,
}

/// Run the solver to `t_end`, writing snapshot CSVs and the diagnostics
/// series. With `solver.entropy_reference` enabled the steady state is
/// computed first and the entropy / sup-gap columns are filled against it.
pub fn cmd_evolve(config: &ExperimentConfig, out_dir: &Path) -> Result<EvolveOutput, Error> {
    config.validate()?;
    let mesh = config.build_mesh()?;
    let spec = config.kernel_spec()?;
    let kernel = assemble(&spec, &mesh)?;
    let solver_cfg = config.solver.to_solver_config();
    let snaps = snapshot_steps(
        &config.solver.snapshot_times,
        config.solver.dt,
        "solver.snapshot_times",
    )?;

    let steady = if config.solver.entropy_reference {
        let steady_cfg = SolverConfig {
            t_end: config.solver.steady_budget,
            ..solver_cfg.clone()
        };
        Some(steady_state(&kernel, &mesh, &steady_cfg)?)
    } else {
        None
    };

    let meta = Provenance::new("evolve", &config.hash(), None);
    let mut report = DiagnosticsReport::default();
    let mut snapshots: Vec<(f64, StateField)> = Vec::new();
    let mut files = Vec::new();
    let mut io_error: Option<std::io::Error> = None;
    let stride = config.solver.diag_stride;
    let dt = config.solver.dt;
    let total_steps = (config.solver.t_end / dt).round() as usize;

    let outcome = run(
        StateField::uniform(&mesh),
        &kernel,
        &mesh,
        &solver_cfg,
        1,
        |state| {
            let k = (state.t / dt).round() as usize;
            if k % stride == 0 || k == total_steps {
                let (m_i, m_b) = split_mass(state, &mesh);
                let (entropy, gap) = match &steady {
                    Some(m) => (
                        relative_entropy(state, m, &mesh, |x| x * x)
                            .ok()
                            .map(|g| g.value),
                        linf_gap(state, m, &mesh).ok().map(|g| g.value),
                    ),
                    None => (None, None),
                };
                report.series.push(DiagnosticsRecord {
                    t: state.t,
                    m_total: m_i + m_b,
                    m_i,
                    m_b,
                    entropy,
                    linf_gap: gap,
                });
            }
            if let Some(&(_, t)) = snaps.iter().find(|(step, _)| *step == k) {
                if snapshots.last().map(|(last, _)| *last != t).unwrap_or(true) {
                    let path = out_dir.join(format!("snapshot_t{}.csv", time_tag(t)));
                    if let Err(e) = write_state_csv(&path, state, &mesh, &meta) {
                        io_error.get_or_insert(e);
                    }
                    files.push(path);
                    snapshots.push((t, state.clone()));
                }
            }
        },
    )?;
    if let Some(e) = io_error {
        return Err(Error::Io(e));
    }

    let report_path = out_dir.join("report.csv");
    write_report_csv(&report_path, &report, &meta)?;
    files.push(report_path);
    Ok(EvolveOutput {
        report,
        final_state: outcome.state,
        snapshots,
        files,
    })
}

fn solve_to(
    config: &ExperimentConfig,
    n_y: usize,
    n_theta: usize,
    t_end: f64,
) -> Result<(Mesh, StateField), Error> {
    let mesh = Mesh::new(n_y, n_theta, config.model.l, config.model.v)?;
    let spec = config.kernel_spec()?;
    let kernel = assemble(&spec, &mesh)?;
    let cfg = SolverConfig {
        dt: config.solver.dt,
        t_end,
        // Fixed-horizon solve: disable early steady exit.
        steady_tol: f64::MIN_POSITIVE,
        cfl_guard: config.solver.cfl_guard,
    };
    let out = run(StateField::uniform(&mesh), &kernel, &mesh, &cfg, usize::MAX, |_| {})?;
    Ok((mesh, out.state))
}

pub struct ConvergeOutput {
    pub entries: Vec<ErrorTableEntry>,
    pub files: Vec<PathBuf>,
}

/// Grid-refinement error table against a fine reference run, all solves at
/// the shared `solver.dt` and compared at `converge.t`.
pub fn cmd_converge(config: &ExperimentConfig, out_dir: &Path) -> Result<ConvergeOutput, Error> {
    config.validate()?;
    let t = config.converge.t;
    let n_ref = config.converge.reference;
    let (ref_mesh, ref_state) = solve_to(config, n_ref, n_ref, t)?;

    let mut entries = Vec::new();
    for &[n_y, n_theta] in &config.converge.resolutions {
        let (mesh, state) = solve_to(config, n_y, n_theta, t)?;
        let err2 = weighted_l2_error(&state, &mesh, &ref_state, &ref_mesh)?;
        entries.push(ErrorTableEntry {
            dy: mesh.dy,
            dtheta: mesh.dtheta,
            err2,
        });
    }

    let meta = Provenance::new("converge", &config.hash(), None);
    let path = out_dir.join("error_table.csv");
    write_error_table_csv(&path, &entries, &meta)?;
    Ok(ConvergeOutput {
        entries,
        files: vec![path],
    })
}

pub struct CompareOutput {
    pub rows: Vec<CompareRow>,
    pub pde: Vec<(f64, StateField)>,
    pub mc: Vec<(f64, Histogram2D)>,
    pub files: Vec<PathBuf>,
}

/// Solver and particle engine on identical physical parameters; emits both
/// fields per snapshot time plus their weighted-L2 distance against the
/// bootstrap sampling-noise floor.
pub fn cmd_mc_compare(config: &ExperimentConfig, out_dir: &Path) -> Result<CompareOutput, Error> {
    config.validate()?;
    let mesh = config.build_mesh()?;
    let spec = config.kernel_spec()?;
    let kernel = assemble(&spec, &mesh)?;
    let solver_cfg = SolverConfig {
        steady_tol: f64::MIN_POSITIVE,
        ..config.solver.to_solver_config()
    };
    let times = if config.solver.snapshot_times.is_empty() {
        vec![config.solver.t_end]
    } else {
        config.solver.snapshot_times.clone()
    };
    let snaps = snapshot_steps(&times, config.solver.dt, "solver.snapshot_times")?;

    // Solver side: capture states at the snapshot times.
    let mut pde: Vec<(f64, StateField)> = Vec::new();
    run(
        StateField::uniform(&mesh),
        &kernel,
        &mesh,
        &solver_cfg,
        1,
        |state| {
            let k = (state.t / config.solver.dt).round() as usize;
            if let Some(&(_, t)) = snaps.iter().find(|(step, _)| *step == k) {
                if pde.last().map(|(last, _)| *last != t).unwrap_or(true) {
                    pde.push((t, state.clone()));
                }
            }
        },
    )?;

    // Particle side: same physics, same grid for binning.
    let mc_params = McParams {
        n_cell: config.mc.n_cell,
        seed: config.mc.seed,
        dt: config.mc.dt.unwrap_or(config.solver.dt),
        l: config.model.l,
        v: config.model.v,
    };
    let sim = if config.mc.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.mc.workers)
            .build()
            .map_err(|e| McError::BadParams(format!("thread pool: {e}")))?;
        pool.install(|| simulate(&spec, &mc_params, &times, &mesh))?
    } else {
        simulate(&spec, &mc_params, &times, &mesh)?
    };

    let meta = Provenance::new("mc-compare", &config.hash(), Some(config.mc.seed));
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for ((t, hist), (t_pde, state)) in sim.snapshots.iter().zip(&pde) {
        debug_assert_eq!(t, t_pde);
        let mc_state = hist.to_state_field(&mesh, *t)?;
        let distance = weighted_l2_error(&mc_state, &mesh, state, &mesh)?.sqrt();
        let noise_floor =
            bootstrap_noise_floor(hist, &mesh, config.mc.bootstrap_reps, config.mc.seed)?;
        let wells_pde = well_contrast(state, &mesh, WELL_BAND_FRACTION).wells_present();
        let wells_mc = well_contrast(&mc_state, &mesh, WELL_BAND_FRACTION).wells_present();
        rows.push(CompareRow {
            t: *t,
            distance,
            noise_floor,
            wells_pde,
            wells_mc,
        });

        let pde_path = out_dir.join(format!("pde_t{}.csv", time_tag(*t)));
        write_state_csv(&pde_path, state, &mesh, &meta)?;
        files.push(pde_path);
        let mc_path = out_dir.join(format!("mc_t{}.csv", time_tag(*t)));
        write_histogram_csv(&mc_path, hist, &meta)?;
        files.push(mc_path);
    }
    let compare_path = out_dir.join("compare.csv");
    write_compare_csv(&compare_path, &rows, &meta)?;
    files.push(compare_path);

    Ok(CompareOutput {
        rows,
        pde,
        mc: sim.snapshots,
        files,
    })
}

use crate::mc::McError;

pub struct AsymptoticOutput {
    pub rungs: Vec<LadderRung>,
    pub files: Vec<PathBuf>,
}

/// Long-time state per scaling parameter; reports the bulk/wall mass ratio
/// and its successive differences along the descending ladder.
pub fn cmd_asymptotic(config: &ExperimentConfig, out_dir: &Path) -> Result<AsymptoticOutput, Error> {
    config.validate()?;
    let mesh = config.build_mesh()?;
    let mut rungs: Vec<LadderRung> = Vec::new();
    for &epsilon in &config.asymptotic.epsilons {
        let rung = (|| -> Result<LadderRung, Error> {
            let spec = config.kernel_spec_with_epsilon(epsilon)?;
            let kernel = assemble(&spec, &mesh)?;
            let dt = config
                .asymptotic
                .dt
                .unwrap_or_else(|| config.solver.dt.min(suggest_dt(&kernel, &mesh)));
            let cfg = SolverConfig {
                dt,
                t_end: config.solver.t_end,
                steady_tol: config.solver.steady_tol,
                cfl_guard: config.solver.cfl_guard,
            };
            let out = run(StateField::uniform(&mesh), &kernel, &mesh, &cfg, usize::MAX, |_| {})?;
            let (m_i, m_b) = split_mass(&out.state, &mesh);
            let diffusion = diffusion_coeff(&spec, 0.0, 0.0)?;
            Ok(LadderRung {
                epsilon,
                m_i,
                m_b,
                ratio: m_i / m_b,
                ratio_diff: rungs.last().map(|prev| (m_i / m_b - prev.ratio).abs()),
                diffusion,
            })
        })()
        .map_err(|source| Error::Rung {
            epsilon,
            source: Box::new(source),
        })?;
        rungs.push(rung);
    }

    let meta = Provenance::new("asymptotic", &config.hash(), None);
    let path = out_dir.join("ladder.csv");
    write_ladder_csv(&path, &rungs, &meta)?;
    Ok(AsymptoticOutput {
        rungs,
        files: vec![path],
    })
}
