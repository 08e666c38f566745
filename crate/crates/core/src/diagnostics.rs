//! Scalar observables: discrete mass and its bulk/wall split, the weighted
//! L2 error norm used for grid-convergence tables, relative entropy, and the
//! relative-gap sup norm.

use thiserror::Error;

use crate::mesh::{Mesh, StateField};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("incompatible domains: {0}")]
    IncompatibleDomains(String),
    #[error("steady state vanishes on cells carrying state mass {mass:.3e} ({cells} cells)")]
    ExcludedMass { cells: usize, mass: f64 },
    #[error("invalid diagnostics series: {0}")]
    BadSeries(String),
}

/// Near-zero steady-state cells below `threshold * max(m)` are excluded from
/// gap-based observables and reported instead.
pub const EXCLUSION_THRESHOLD: f64 = 1e-14;
/// Largest state mass the excluded cells may carry.
pub const EXCLUDED_MASS_TOL: f64 = 1e-8;

/// Bulk and wall partial masses `(M_i, M_b)`; their sum is the exact
/// discrete total mass.
pub fn split_mass(state: &StateField, mesh: &Mesh) -> (f64, f64) {
    let bulk: f64 = state.n.iter().sum();
    let walls: f64 = state.n_plus.iter().sum::<f64>() + state.n_minus.iter().sum::<f64>();
    (
        mesh.dy * mesh.dtheta * bulk,
        mesh.dtheta * walls,
    )
}

/// Discrete total mass `dy*dtheta*sum n + dtheta*sum n_+ + dtheta*sum n_-`.
pub fn total_mass(state: &StateField, mesh: &Mesh) -> f64 {
    let (m_i, m_b) = split_mass(state, mesh);
    m_i + m_b
}

/// Cubic Lagrange weights on four uniformly spaced nodes at offsets
/// `0, 1, 2, 3`, evaluated at normalized position `s`.
#[inline]
fn lagrange4(s: f64) -> [f64; 4] {
    [
        -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0,
        s * (s - 2.0) * (s - 3.0) / 2.0,
        -s * (s - 1.0) * (s - 3.0) / 2.0,
        s * (s - 1.0) * (s - 2.0) / 6.0,
    ]
}

/// Bicubic interpolation of the reference bulk field at `(y, theta)`:
/// Lagrange windows shifted to fit at the `y` edges, periodic in `theta`.
fn bicubic_bulk(reference: &StateField, mesh: &Mesh, y: f64, theta: f64) -> f64 {
    let rows = mesh.rows();
    let cols = mesh.cols();
    let uy = (y - mesh.y(0)) / mesh.dy;
    let base_y = ((uy.floor() as i64) - 1).clamp(0, rows as i64 - 4) as usize;
    let sy = uy - base_y as f64;
    let wy = lagrange4(sy);

    let ut = (theta - mesh.theta(0)) / mesh.dtheta;
    let base_t = (ut.floor() as i64) - 1;
    let st = ut - base_t as f64;
    let wt = lagrange4(st);

    let mut acc = 0.0;
    for (a, &wya) in wy.iter().enumerate() {
        let i = base_y + a;
        let row = &reference.n[i * cols..(i + 1) * cols];
        let mut line = 0.0;
        for (b, &wtb) in wt.iter().enumerate() {
            let j = (base_t + b as i64).rem_euclid(cols as i64) as usize;
            line += wtb * row[j];
        }
        acc += wya * line;
    }
    acc
}

/// Cubic interpolation of a wall vector sampled at `theta = (p + 0.5) * dtheta`
/// on its half-range (non-periodic; windows shift at the ends).
fn cubic_wall(values: &[f64], dtheta: f64, theta_local: f64) -> f64 {
    let n = values.len();
    let u = theta_local / dtheta - 0.5;
    let base = ((u.floor() as i64) - 1).clamp(0, n as i64 - 4) as usize;
    let s = u - base as f64;
    let w = lagrange4(s);
    (0..4).map(|a| w[a] * values[base + a]).sum()
}

/// Squared weighted L2 error between a coarse solution and a finer reference:
/// `sum dtheta^2 dy^2 e_{ij}^2 + sum dtheta^2 (e_+^2 + e_-^2)` with the
/// coarse mesh sizes as weights. The reference is restricted to coarse cell
/// centers bicubically (bulk) and cubically (walls).
///
/// Note the squared mesh weights: this reproduces the error norm behind the
/// published convergence table, not the plain quadrature norm; see
/// [`plain_l2_error`] for the latter.
pub fn weighted_l2_error(
    coarse: &StateField,
    coarse_mesh: &Mesh,
    reference: &StateField,
    reference_mesh: &Mesh,
) -> Result<f64, DiagnosticsError> {
    l2_error_impl(coarse, coarse_mesh, reference, reference_mesh, true)
}

/// Same restriction protocol with ordinary quadrature weights
/// (`dy*dtheta` bulk, `dtheta` walls); used as a sanity-check norm.
pub fn plain_l2_error(
    coarse: &StateField,
    coarse_mesh: &Mesh,
    reference: &StateField,
    reference_mesh: &Mesh,
) -> Result<f64, DiagnosticsError> {
    l2_error_impl(coarse, coarse_mesh, reference, reference_mesh, false)
}

fn l2_error_impl(
    coarse: &StateField,
    coarse_mesh: &Mesh,
    reference: &StateField,
    reference_mesh: &Mesh,
    squared_weights: bool,
) -> Result<f64, DiagnosticsError> {
    if (coarse_mesh.l - reference_mesh.l).abs() > 1e-12 * coarse_mesh.l {
        return Err(DiagnosticsError::IncompatibleDomains(format!(
            "half-gaps differ: {} vs {}",
            coarse_mesh.l, reference_mesh.l
        )));
    }
    if reference_mesh.n_y < coarse_mesh.n_y || reference_mesh.n_theta < coarse_mesh.n_theta {
        return Err(DiagnosticsError::IncompatibleDomains(format!(
            "reference {}x{} coarser than solution {}x{}",
            reference_mesh.n_y, reference_mesh.n_theta, coarse_mesh.n_y, coarse_mesh.n_theta
        )));
    }
    let same_grid = coarse_mesh.same_grid(reference_mesh);

    let (w_bulk, w_wall) = if squared_weights {
        (
            coarse_mesh.dtheta * coarse_mesh.dtheta * coarse_mesh.dy * coarse_mesh.dy,
            coarse_mesh.dtheta * coarse_mesh.dtheta,
        )
    } else {
        (coarse_mesh.dy * coarse_mesh.dtheta, coarse_mesh.dtheta)
    };

    let mut bulk_sq = 0.0;
    for i in 0..coarse_mesh.rows() {
        for j in 0..coarse_mesh.cols() {
            let reference_value = if same_grid {
                reference.n[reference_mesh.idx(i, j)]
            } else {
                bicubic_bulk(
                    reference,
                    reference_mesh,
                    coarse_mesh.y(i),
                    coarse_mesh.theta(j),
                )
            };
            let e = coarse.n[coarse_mesh.idx(i, j)] - reference_value;
            bulk_sq += e * e;
        }
    }

    let mut wall_sq = 0.0;
    for p in 0..coarse_mesh.n_theta {
        let theta_local = (p as f64 + 0.5) * coarse_mesh.dtheta;
        let ref_plus = if same_grid {
            reference.n_plus[p]
        } else {
            cubic_wall(&reference.n_plus, reference_mesh.dtheta, theta_local)
        };
        let ref_minus = if same_grid {
            reference.n_minus[p]
        } else {
            // n_minus spans (-pi, 0); measure the offset from its left edge.
            cubic_wall(&reference.n_minus, reference_mesh.dtheta, theta_local)
        };
        let ep = coarse.n_plus[p] - ref_plus;
        let em = coarse.n_minus[p] - ref_minus;
        wall_sq += ep * ep + em * em;
    }

    Ok(w_bulk * bulk_sq + w_wall * wall_sq)
}

/// Relative-entropy evaluation result.
#[derive(Debug, Clone, Copy)]
pub struct GapObservable {
    pub value: f64,
    pub excluded_cells: usize,
    pub excluded_mass: f64,
}

fn gap_fold(
    state: &StateField,
    steady: &StateField,
    mesh: &Mesh,
    mut fold: impl FnMut(f64, f64, f64),
) -> Result<(usize, f64), DiagnosticsError> {
    let threshold = EXCLUSION_THRESHOLD * steady.max_abs();
    let mut excluded_cells = 0usize;
    let mut excluded_mass = 0.0;
    let w_bulk = mesh.dy * mesh.dtheta;
    for (n, m) in state.n.iter().zip(steady.n.iter()) {
        if *m > threshold {
            fold(*n, *m, w_bulk);
        } else {
            excluded_cells += 1;
            excluded_mass += w_bulk * n;
        }
    }
    let w_wall = mesh.dtheta;
    for (n, m) in state
        .n_plus
        .iter()
        .zip(steady.n_plus.iter())
        .chain(state.n_minus.iter().zip(steady.n_minus.iter()))
    {
        if *m > threshold {
            fold(*n, *m, w_wall);
        } else {
            excluded_cells += 1;
            excluded_mass += w_wall * n;
        }
    }
    if excluded_mass > EXCLUDED_MASS_TOL {
        return Err(DiagnosticsError::ExcludedMass {
            cells: excluded_cells,
            mass: excluded_mass,
        });
    }
    Ok((excluded_cells, excluded_mass))
}

/// Relative entropy `int m H(n/m)` by discrete quadrature over bulk and
/// walls. Cells where the steady state is numerically zero are excluded and
/// reported; they may not carry significant state mass.
pub fn relative_entropy(
    state: &StateField,
    steady: &StateField,
    mesh: &Mesh,
    h: impl Fn(f64) -> f64,
) -> Result<GapObservable, DiagnosticsError> {
    let mut value = 0.0;
    let (excluded_cells, excluded_mass) = gap_fold(state, steady, mesh, |n, m, w| {
        value += w * m * h(n / m);
    })?;
    Ok(GapObservable {
        value,
        excluded_cells,
        excluded_mass,
    })
}

/// Sup norm of the relative gap `n/m` over non-excluded cells.
pub fn linf_gap(
    state: &StateField,
    steady: &StateField,
    mesh: &Mesh,
) -> Result<GapObservable, DiagnosticsError> {
    let mut value = 0.0_f64;
    let (excluded_cells, excluded_mass) = gap_fold(state, steady, mesh, |n, m, _| {
        value = value.max(n / m);
    })?;
    Ok(GapObservable {
        value,
        excluded_cells,
        excluded_mass,
    })
}

/// Mean bulk density inside the two depletion wells against the domain mean.
/// The wells sit at `(y = -L, theta in (0, pi))` and `(y = L, theta in
/// (-pi, 0))`; `band_fraction` sets how many near-wall rows count as the well
/// region.
#[derive(Debug, Clone, Copy)]
pub struct WellContrast {
    pub bottom_well_mean: f64,
    pub top_well_mean: f64,
    pub domain_mean: f64,
}

impl WellContrast {
    pub fn wells_present(&self) -> bool {
        self.bottom_well_mean < self.domain_mean && self.top_well_mean < self.domain_mean
    }
}

pub fn well_contrast(state: &StateField, mesh: &Mesh, band_fraction: f64) -> WellContrast {
    let band = ((band_fraction * mesh.rows() as f64).round() as usize).clamp(1, mesh.rows());
    let mut bottom = 0.0;
    let mut top = 0.0;
    for di in 0..band {
        for j in mesh.upward_range() {
            bottom += state.bulk(mesh, di, j);
        }
        for j in mesh.downward_range() {
            top += state.bulk(mesh, mesh.rows() - 1 - di, j);
        }
    }
    let count = (band * mesh.n_theta) as f64;
    let domain_mean = state.n.iter().sum::<f64>() / state.n.len() as f64;
    WellContrast {
        bottom_well_mean: bottom / count,
        top_well_mean: top / count,
        domain_mean,
    }
}

/// One sampled diagnostics record along a run.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub m_total: f64,
    pub m_i: f64,
    pub m_b: f64,
    pub entropy: Option<f64>,
    pub linf_gap: Option<f64>,
}

/// Grid-refinement error table entry.
#[derive(Debug, Clone, Copy)]
pub struct ErrorTableEntry {
    pub dy: f64,
    pub dtheta: f64,
    pub err2: f64,
}

/// Time series of observables plus an optional refinement error table.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsReport {
    pub series: Vec<DiagnosticsRecord>,
    pub errors: Vec<ErrorTableEntry>,
}

impl DiagnosticsReport {
    /// Checks the report invariants: strictly increasing timestamps and
    /// total mass pinned to the initial value within 1e-12.
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        for pair in self.series.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(DiagnosticsError::BadSeries(format!(
                    "timestamps not increasing: {} then {}",
                    pair[0].t, pair[1].t
                )));
            }
        }
        if let Some(first) = self.series.first() {
            for r in &self.series {
                if (r.m_total - first.m_total).abs() > 1e-12 {
                    return Err(DiagnosticsError::BadSeries(format!(
                        "mass drift at t = {}: {} vs {}",
                        r.t, r.m_total, first.m_total
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mesh(n_y: usize, n_theta: usize) -> Mesh {
        Mesh::new(n_y, n_theta, 10.0, 20.0).unwrap()
    }

    // Smooth periodic-in-theta field used as an interpolation oracle.
    fn smooth(y: f64, theta: f64) -> f64 {
        0.01 * (1.0 + 0.5 * (PI * y / 10.0).sin() + 0.3 * (2.0 * theta).cos())
    }

    fn sample_smooth(mesh: &Mesh) -> StateField {
        let mut s = StateField::zeros(mesh);
        for i in 0..mesh.rows() {
            for j in 0..mesh.cols() {
                s.n[mesh.idx(i, j)] = smooth(mesh.y(i), mesh.theta(j));
            }
        }
        for p in 0..mesh.n_theta {
            let theta = (p as f64 + 0.5) * mesh.dtheta;
            s.n_plus[p] = 0.02 * (1.0 + theta.sin());
            s.n_minus[p] = 0.02 * (1.0 + (theta - PI).cos());
        }
        s
    }

    #[test]
    fn uniform_mass_and_split() {
        let mesh = mesh(6, 8);
        let state = StateField::uniform(&mesh);
        let (m_i, m_b) = split_mass(&state, &mesh);
        assert!((m_i - 1.0).abs() < 1e-14);
        assert_eq!(m_b, 0.0);
        assert_eq!(total_mass(&state, &mesh), m_i + m_b);

        let mut scaled = state.clone();
        scaled.scale(3.0);
        assert!((total_mass(&scaled, &mesh) - 3.0).abs() < 1e-13);
    }

    #[test]
    fn split_sums_exactly_to_total() {
        let mesh = mesh(5, 7);
        let mut s = sample_smooth(&mesh);
        s.n_plus[2] = 0.4;
        let (m_i, m_b) = split_mass(&s, &mesh);
        // Same summation order means bitwise agreement, not just closeness.
        assert_eq!(m_i + m_b, total_mass(&s, &mesh));
    }

    #[test]
    fn error_is_zero_on_the_same_grid() {
        let m = mesh(8, 8);
        let s = sample_smooth(&m);
        let err = weighted_l2_error(&s, &m, &s, &m).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn error_is_squared_homogeneous_in_the_gap() {
        let m = mesh(8, 8);
        let a = sample_smooth(&m);
        let mut b = a.clone();
        for x in b.n.iter_mut() {
            *x += 0.001;
        }
        let e1 = weighted_l2_error(&b, &m, &a, &m).unwrap();
        let mut c = a.clone();
        for x in c.n.iter_mut() {
            *x += 0.003;
        }
        let e3 = weighted_l2_error(&c, &m, &a, &m).unwrap();
        assert!((e3 / e1 - 9.0).abs() < 1e-9, "ratio {}", e3 / e1);
    }

    #[test]
    fn restriction_error_shrinks_with_reference_refinement() {
        // Coarse field sampled exactly from a smooth function: the measured
        // error is pure interpolation error, which must drop fast under
        // reference refinement (cubic: about two orders per doubling).
        let coarse_mesh = mesh(8, 8);
        let coarse = sample_smooth(&coarse_mesh);
        let fine1 = mesh(32, 32);
        let fine2 = mesh(64, 64);
        let e1 =
            weighted_l2_error(&coarse, &coarse_mesh, &sample_smooth(&fine1), &fine1).unwrap();
        let e2 =
            weighted_l2_error(&coarse, &coarse_mesh, &sample_smooth(&fine2), &fine2).unwrap();
        assert!(e1 < 1e-10, "interpolation error e1 = {e1:.3e}");
        assert!(e2 < e1 / 16.0, "e1 = {e1:.3e}, e2 = {e2:.3e}");
    }

    #[test]
    fn rejects_coarser_reference() {
        let fine = mesh(16, 16);
        let coarse = mesh(8, 8);
        let sf = sample_smooth(&fine);
        let sc = sample_smooth(&coarse);
        assert!(matches!(
            weighted_l2_error(&sf, &fine, &sc, &coarse),
            Err(DiagnosticsError::IncompatibleDomains(_))
        ));
    }

    #[test]
    fn plain_norm_uses_quadrature_weights() {
        let m = mesh(4, 4);
        let a = StateField::uniform(&m);
        let mut b = a.clone();
        for x in b.n.iter_mut() {
            *x += 1.0;
        }
        // Bulk gap of 1 everywhere: plain norm^2 = area = 4*pi*L, weighted
        // norm^2 = dtheta*dy*area.
        let plain = plain_l2_error(&b, &m, &a, &m).unwrap();
        let weighted = weighted_l2_error(&b, &m, &a, &m).unwrap();
        assert!((plain - 4.0 * PI * 10.0).abs() < 1e-10);
        assert!((weighted - m.dy * m.dtheta * plain).abs() < 1e-12);
    }

    #[test]
    fn entropy_at_steady_equals_mass_and_gap_is_one() {
        let m = mesh(6, 6);
        let steady = sample_smooth(&m);
        let i = relative_entropy(&steady, &steady, &m, |x| x * x).unwrap();
        assert!((i.value - total_mass(&steady, &m)).abs() < 1e-14);
        assert_eq!(i.excluded_cells, 0);

        let gap = linf_gap(&steady, &steady, &m).unwrap();
        assert!((gap.value - 1.0).abs() < 1e-14);

        let mut doubled = steady.clone();
        doubled.scale(2.0);
        let gap2 = linf_gap(&doubled, &steady, &m).unwrap();
        assert!((gap2.value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn truncated_quartic_entropy_stays_zero_below_the_bound() {
        let m = mesh(6, 6);
        let steady = sample_smooth(&m);
        let mut state = steady.clone();
        state.scale(1.5);
        let gamma = linf_gap(&state, &steady, &m).unwrap().value;
        let h = move |x: f64| {
            let d = (x - gamma).max(0.0);
            d.powi(4)
        };
        let i = relative_entropy(&state, &steady, &m, h).unwrap();
        assert_eq!(i.value, 0.0);
    }

    #[test]
    fn excluded_cells_with_mass_fail() {
        let m = mesh(4, 4);
        let mut steady = sample_smooth(&m);
        let state = StateField::uniform(&m);
        steady.n[m.idx(1, 1)] = 0.0; // uniform state has mass there
        match relative_entropy(&state, &steady, &m, |x| x * x) {
            Err(DiagnosticsError::ExcludedMass { cells, mass }) => {
                assert_eq!(cells, 1);
                assert!(mass > EXCLUDED_MASS_TOL);
            }
            other => panic!("expected ExcludedMass, got {other:?}"),
        }
    }

    #[test]
    fn report_validation_catches_drift_and_order() {
        let mut report = DiagnosticsReport::default();
        let record = |t: f64, m: f64| DiagnosticsRecord {
            t,
            m_total: m,
            m_i: m,
            m_b: 0.0,
            entropy: None,
            linf_gap: None,
        };
        report.series.push(record(0.0, 1.0));
        report.series.push(record(0.1, 1.0));
        assert!(report.validate().is_ok());
        report.series.push(record(0.05, 1.0));
        assert!(report.validate().is_err());
        report.series.pop();
        report.series.push(record(0.2, 1.0 + 1e-10));
        assert!(report.validate().is_err());
    }

    #[test]
    fn well_contrast_sees_depleted_bands() {
        let m = mesh(10, 6);
        let mut s = StateField::uniform(&m);
        // Deplete the two well regions by hand.
        for di in 0..2 {
            for j in m.upward_range() {
                s.n[m.idx(di, j)] = 1e-4;
            }
            for j in m.downward_range() {
                s.n[m.idx(m.rows() - 1 - di, j)] = 1e-4;
            }
        }
        let wc = well_contrast(&s, &m, 0.1);
        assert!(wc.wells_present(), "{wc:?}");
    }
}
