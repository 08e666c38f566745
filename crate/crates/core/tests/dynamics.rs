//! Cross-module behavior at desk scale: entropy structure along solver
//! trajectories, uniqueness of the long-time state, and solver/particle
//! agreement on a coarse grid.

use crtm_core::diagnostics::{linf_gap, relative_entropy, total_mass, weighted_l2_error};
use crtm_core::mc::{bootstrap_noise_floor, simulate, McParams};
use crtm_core::mesh::{Mesh, StateField};
use crtm_core::solver::{run, steady_state, SolverConfig};
use crtm_core::{assemble, KernelSpec, Profile};

fn setup(n: usize, eps: f64) -> (Mesh, KernelSpec, crtm_core::DiscreteKernel) {
    let mesh = Mesh::new(n, n, 10.0, 20.0).unwrap();
    let spec = KernelSpec::constant(1.0, Profile::Triangular, eps).unwrap();
    let kernel = assemble(&spec, &mesh).unwrap();
    (mesh, spec, kernel)
}

/// Positive, non-uniform, unit-mass initial state.
fn bump_state(mesh: &Mesh) -> StateField {
    let mut s = StateField::zeros(mesh);
    for i in 0..mesh.rows() {
        for j in 0..mesh.cols() {
            let y = mesh.y(i);
            let theta = mesh.theta(j);
            s.n[mesh.idx(i, j)] =
                1.0 + 0.4 * theta.cos() + 0.3 * (std::f64::consts::PI * y / mesh.l).sin();
        }
    }
    let mass = total_mass(&s, mesh);
    s.scale(1.0 / mass);
    s
}

#[test]
fn entropy_families_decay_along_trajectories() {
    let (mesh, _, kernel) = setup(16, 0.3);
    let steady_cfg = SolverConfig {
        dt: 1e-3,
        t_end: 300.0,
        steady_tol: 1e-13,
        cfl_guard: true,
    };
    let steady = steady_state(&kernel, &mesh, &steady_cfg).unwrap();

    let run_cfg = SolverConfig {
        dt: 1e-3,
        t_end: 2.0,
        steady_tol: f64::MIN_POSITIVE,
        cfl_guard: true,
    };
    let gamma = linf_gap(&bump_state(&mesh), &steady, &mesh).unwrap().value;

    let square = |x: f64| x * x;
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    let quartic = move |x: f64| {
        let d = (x - gamma).max(0.0);
        d.powi(4)
    };

    let mut prev: Option<(f64, f64, f64)> = None;
    let mut worst_increase = f64::NEG_INFINITY;
    run(bump_state(&mesh), &kernel, &mesh, &run_cfg, 1, |state| {
        let i2 = relative_entropy(state, &steady, &mesh, square).unwrap().value;
        let ix = relative_entropy(state, &steady, &mesh, xlogx).unwrap().value;
        let i4 = relative_entropy(state, &steady, &mesh, quartic).unwrap().value;
        assert!(
            i4 <= 1e-12,
            "truncated quartic entropy must stay at zero, got {i4:.3e} at t = {}",
            state.t
        );
        if let Some((p2, px, _)) = prev {
            worst_increase = worst_increase.max(i2 - p2).max(ix - px);
        }
        prev = Some((i2, ix, i4));
    })
    .unwrap();
    assert!(
        worst_increase <= 1e-9,
        "entropy increased by {worst_increase:.3e} in one step"
    );
}

#[test]
fn distinct_initial_states_share_the_long_time_limit() {
    let (mesh, _, kernel) = setup(12, 0.4);
    // Fixed horizon far past steadiness. The slow mode is the angular
    // diffusion (rate ~ k/12), so contraction to the bound below needs a
    // few hundred time units regardless of eps.
    let steady_tol = 1e-12;
    let cfg = SolverConfig {
        dt: 1e-3,
        t_end: 300.0,
        steady_tol: f64::MIN_POSITIVE,
        cfl_guard: true,
    };
    let from_uniform = run(
        StateField::uniform(&mesh),
        &kernel,
        &mesh,
        &cfg,
        usize::MAX,
        |_| {},
    )
    .unwrap();
    let from_bump = run(bump_state(&mesh), &kernel, &mesh, &cfg, usize::MAX, |_| {}).unwrap();
    let distance = weighted_l2_error(
        &from_bump.state,
        &mesh,
        &from_uniform.state,
        &mesh,
    )
    .unwrap()
    .sqrt();
    assert!(
        distance <= 10.0 * steady_tol,
        "steady states differ by {distance:.3e} in the weighted norm"
    );
}

#[test]
fn wall_mass_grows_then_plateaus() {
    // Desk-scale version of the time-evolution experiment: wall mass is
    // strictly positive and stable to 1% over the last tenth of the run.
    let (mesh, _, kernel) = setup(32, 0.05);
    let cfg = SolverConfig {
        dt: 1e-3,
        t_end: 4.0,
        steady_tol: f64::MIN_POSITIVE,
        cfl_guard: true,
    };
    let mut series: Vec<(f64, f64)> = Vec::new();
    run(StateField::uniform(&mesh), &kernel, &mesh, &cfg, 10, |s| {
        series.push((s.t, crtm_core::split_mass(s, &mesh).1));
    })
    .unwrap();
    let final_mb = series.last().unwrap().1;
    assert!(final_mb > 0.0);
    for &(t, mb) in series.iter().filter(|(t, _)| *t >= 0.9 * cfg.t_end) {
        assert!(
            (mb - final_mb).abs() <= 0.01 * final_mb,
            "wall mass moved {:.3}% at t = {t}",
            100.0 * (mb - final_mb).abs() / final_mb
        );
    }
}

#[test]
fn particle_histogram_tracks_solver_density() {
    let (mesh, spec, kernel) = setup(10, 0.1);
    let t_compare = 0.1;
    let cfg = SolverConfig {
        dt: 1e-3,
        t_end: t_compare,
        steady_tol: f64::MIN_POSITIVE,
        cfl_guard: true,
    };
    let pde = run(
        StateField::uniform(&mesh),
        &kernel,
        &mesh,
        &cfg,
        usize::MAX,
        |_| {},
    )
    .unwrap()
    .state;

    let params = McParams {
        n_cell: 200_000,
        seed: 11,
        dt: 1e-3,
        l: mesh.l,
        v: mesh.v,
    };
    let out = simulate(&spec, &params, &[t_compare], &mesh).unwrap();
    let hist = &out.snapshots[0].1;
    assert_eq!(hist.misplaced_wall_counts(), 0);
    let mc_state = hist.to_state_field(&mesh, t_compare).unwrap();
    let distance = weighted_l2_error(&mc_state, &mesh, &pde, &mesh).unwrap().sqrt();
    let floor = bootstrap_noise_floor(hist, &mesh, 16, params.seed).unwrap();
    assert!(
        distance <= 3.0 * floor,
        "distance {distance:.3e} vs noise floor {floor:.3e}"
    );
}

#[test]
fn monte_carlo_error_shrinks_at_the_sampling_rate() {
    // Quadrupling the ensemble should roughly halve the distance to the
    // solver field.
    let (mesh, spec, kernel) = setup(16, 0.1);
    let t_compare = 0.04;
    let cfg = SolverConfig {
        dt: 1e-3,
        t_end: t_compare,
        steady_tol: f64::MIN_POSITIVE,
        cfl_guard: true,
    };
    let pde = run(
        StateField::uniform(&mesh),
        &kernel,
        &mesh,
        &cfg,
        usize::MAX,
        |_| {},
    )
    .unwrap()
    .state;
    let dist_for = |n_cell: usize| {
        let params = McParams {
            n_cell,
            seed: 5,
            dt: 1e-3,
            l: mesh.l,
            v: mesh.v,
        };
        let out = simulate(&spec, &params, &[t_compare], &mesh).unwrap();
        let mc_state = out.snapshots[0].1.to_state_field(&mesh, t_compare).unwrap();
        weighted_l2_error(&mc_state, &mesh, &pde, &mesh).unwrap().sqrt()
    };
    let d1 = dist_for(50_000);
    let d4 = dist_for(200_000);
    let ratio = d4 / d1;
    assert!(
        (0.35..=0.65).contains(&ratio),
        "sampling-rate ratio {ratio:.3} (d1 = {d1:.3e}, d4 = {d4:.3e})"
    );
}
