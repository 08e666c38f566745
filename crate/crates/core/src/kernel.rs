//! Tumbling kernels: angular jump profiles, their scaled/periodic evaluation,
//! discretization onto the angular grid, and the limiting diffusion
//! coefficient.
//!
//! The kernel has the product form `K_eps(y, theta, z) = rate(y, theta) * f(z)`
//! with `f` an even unit-mass profile supported on `[-1, 1]` and extended
//! `2*pi/eps`-periodically in `z`. Discrete kernels integrate the profile over
//! target cells once (the stencil is shift-invariant on a uniform grid) and
//! scale by the local rate. Total rates `k` are *defined* as stencil row sums,
//! which is what makes the solver conserve mass exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("epsilon = {0} out of range: need 0 < epsilon < pi (jump support must fit in a half-period)")]
    EpsilonOutOfRange(f64),
    #[error("tumbling rate must be positive and finite: {context} gave {value}")]
    BadRate { context: String, value: f64 },
    #[error("quadrature did not converge: error estimate {achieved:.3e} > tolerance {tol:.3e}")]
    Quadrature { achieved: f64, tol: f64 },
}

/// Relative tolerance for kernel cell integrals.
pub const CELL_QUAD_TOL: f64 = 1e-8;
/// Relative tolerance for the diffusion-coefficient integral.
pub const DIFFUSION_QUAD_TOL: f64 = 1e-10;

/// Angular jump profile on the base branch `z in [-1, 1]`; zero outside
/// (up to the periodic extension applied by callers).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// `1 - |z|` (the default triangular profile).
    Triangular,
    /// `cos^2(pi z / 2)`; smooth, also even with unit mass.
    CosineSquared,
}

impl Profile {
    /// Base-branch value; even, nonnegative, integrates to 1 over `[-1, 1]`.
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        let a = z.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            Profile::Triangular => 1.0 - a,
            Profile::CosineSquared => {
                let c = (0.5 * PI * z).cos();
                c * c
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Triangular => "triangular",
            Profile::CosineSquared => "cosine-squared",
        }
    }
}

/// Periodic triangular profile `f_eps`: `1 - |z - 2k*pi/eps|` on the branch
/// nearest to `z`, zero elsewhere in the period.
pub fn f_eps(z: f64, epsilon: f64) -> f64 {
    assert!(epsilon > 0.0, "f_eps needs epsilon > 0");
    profile_eps(Profile::Triangular, z, epsilon)
}

/// Periodic evaluation of any profile: wrap `z` by the period `2*pi/eps`
/// onto the base branch.
pub fn profile_eps(profile: Profile, z: f64, epsilon: f64) -> f64 {
    let period = 2.0 * PI / epsilon;
    let z0 = z - period * (z / period).round();
    profile.value(z0)
}

type BulkRate = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type WallRate = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Continuous kernel specification: tumbling rates, angular profile, and the
/// forward-peaked scaling parameter.
///
/// `epsilon = 1` recovers the unscaled model; smaller values shrink jumps to
/// `O(eps)` while the solver raises the frequency to `O(1/eps^2)`.
#[derive(Clone)]
pub struct KernelSpec {
    pub bulk_rate: BulkRate,
    pub top_rate: WallRate,
    pub bottom_rate: WallRate,
    pub shape: Profile,
    pub epsilon: f64,
}

impl std::fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelSpec")
            .field("shape", &self.shape)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl KernelSpec {
    pub fn new(
        bulk_rate: BulkRate,
        top_rate: WallRate,
        bottom_rate: WallRate,
        shape: Profile,
        epsilon: f64,
    ) -> Result<Self, KernelError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(KernelError::EpsilonOutOfRange(epsilon));
        }
        Ok(KernelSpec {
            bulk_rate,
            top_rate,
            bottom_rate,
            shape,
            epsilon,
        })
    }

    /// Constant tumbling rate `k` everywhere (the paper's `k = 1` setup).
    pub fn constant(k: f64, shape: Profile, epsilon: f64) -> Result<Self, KernelError> {
        Self::with_wall_rates(k, k, k, shape, epsilon)
    }

    /// Constant bulk rate with distinct constant wall rates.
    pub fn with_wall_rates(
        k_bulk: f64,
        k_top: f64,
        k_bottom: f64,
        shape: Profile,
        epsilon: f64,
    ) -> Result<Self, KernelError> {
        for (context, value) in [("bulk", k_bulk), ("top", k_top), ("bottom", k_bottom)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(KernelError::BadRate {
                    context: format!("constant {context} rate"),
                    value,
                });
            }
        }
        Self::new(
            Arc::new(move |_, _| k_bulk),
            Arc::new(move |_| k_top),
            Arc::new(move |_| k_bottom),
            shape,
            epsilon,
        )
    }

    /// Kernel value on the base branch: `rate(y, theta) * f(z)`.
    pub fn bulk_value(&self, y: f64, theta: f64, z: f64) -> f64 {
        (self.bulk_rate)(y, theta) * self.shape.value(z)
    }

    /// Periodic-in-`z` evaluation of the bulk kernel.
    pub fn bulk_value_periodic(&self, y: f64, theta: f64, z: f64) -> f64 {
        (self.bulk_rate)(y, theta) * profile_eps(self.shape, z, self.epsilon)
    }
}

/// Limiting angular diffusion coefficient `D(y, theta) = (1/2) int z^2 K dz`
/// over the base branch `[-1, 1]`.
pub fn diffusion_coeff(spec: &KernelSpec, y: f64, theta: f64) -> Result<f64, KernelError> {
    let rate = (spec.bulk_rate)(y, theta);
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(KernelError::BadRate {
            context: format!("bulk rate at (y={y}, theta={theta})"),
            value: rate,
        });
    }
    let shape = spec.shape;
    let half_second_moment = refine_trapezoid(
        |z| z * z * rate * shape.value(z),
        -1.0,
        1.0,
        DIFFUSION_QUAD_TOL,
    )
    .map_err(|(_, achieved)| KernelError::Quadrature {
        achieved,
        tol: DIFFUSION_QUAD_TOL,
    })?;
    Ok(0.5 * half_second_moment)
}

/// Discrete kernel tables on a mesh.
///
/// The angular stencil `weights[d]` holds the integral of the periodic
/// profile over the target cell at circular offset `d_lo + d` from the source
/// angle; it is the same for every source row on the uniform grid. Rates are
/// tabulated at cell centers. Total rates are defined as stencil row sums
/// (`row_sum_gap` is identically zero by construction).
#[derive(Debug, Clone)]
pub struct DiscreteKernel {
    pub epsilon: f64,
    d_lo: i64,
    weights: Vec<f64>,
    rate_bulk: Vec<f64>,
    rate_top: Vec<f64>,
    rate_bot: Vec<f64>,
    k_bulk: Vec<f64>,
    k_top: Vec<f64>,
    k_bot: Vec<f64>,
    cols: usize,
    n_theta: usize,
}

/// Integrate the periodic profile over every angular cell offset and return
/// the contiguous nonzero band `(d_lo, weights)`.
fn profile_stencil(
    shape: Profile,
    epsilon: f64,
    mesh: &Mesh,
) -> Result<(i64, Vec<f64>), KernelError> {
    let n_theta = mesh.n_theta as i64;
    let dtheta = mesh.dtheta;
    let mut all = Vec::with_capacity(mesh.cols());
    for d in -n_theta..n_theta {
        let a = d as f64 * dtheta - 0.5 * dtheta;
        let b = a + dtheta;
        // u is the angular displacement; wrap by 2*pi before descaling so the
        // periodic images near theta = +/-pi are picked up.
        let g = |u: f64| {
            let wrapped = u - 2.0 * PI * (u / (2.0 * PI)).round();
            shape.value(wrapped / epsilon)
        };
        let w = refine_trapezoid(g, a, b, CELL_QUAD_TOL).map_err(|(_, achieved)| {
            KernelError::Quadrature {
                achieved,
                tol: CELL_QUAD_TOL,
            }
        })?;
        all.push(w.max(0.0));
    }
    let first = all.iter().position(|&w| w > 0.0).unwrap_or(0);
    let last = all.iter().rposition(|&w| w > 0.0).unwrap_or(all.len() - 1);
    Ok((first as i64 - n_theta, all[first..=last].to_vec()))
}

/// Assemble the discrete kernel: profile cell integrals, rate tables, and the
/// row-sum total rates.
pub fn assemble(spec: &KernelSpec, mesh: &Mesh) -> Result<DiscreteKernel, KernelError> {
    if !(spec.epsilon > 0.0 && spec.epsilon < PI) {
        return Err(KernelError::EpsilonOutOfRange(spec.epsilon));
    }
    let (d_lo, weights) = profile_stencil(spec.shape, spec.epsilon, mesh)?;

    let sample_rate = |value: f64, context: String| -> Result<f64, KernelError> {
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(KernelError::BadRate { context, value })
        }
    };

    let rows = mesh.rows();
    let cols = mesh.cols();
    let mut rate_bulk = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let r = (spec.bulk_rate)(mesh.y(i), mesh.theta(j));
            rate_bulk.push(sample_rate(r, format!("bulk rate at cell ({i}, {j})"))?);
        }
    }
    let mut rate_top = Vec::with_capacity(mesh.n_theta);
    for j in mesh.upward_range() {
        let r = (spec.top_rate)(mesh.theta(j));
        rate_top.push(sample_rate(r, format!("top rate at angle index {j}"))?);
    }
    let mut rate_bot = Vec::with_capacity(mesh.n_theta);
    for j in mesh.downward_range() {
        let r = (spec.bottom_rate)(mesh.theta(j));
        rate_bot.push(sample_rate(r, format!("bottom rate at angle index {j}"))?);
    }

    // Total rates are row sums of the discrete kernel, not samples of the
    // continuous rate; the two agree to quadrature tolerance but only the
    // former conserves mass exactly.
    let row_sum = |rate: f64, weights: &[f64], epsilon: f64| -> f64 {
        let mut acc = 0.0;
        for &w in weights {
            acc += rate * w;
        }
        acc / epsilon
    };
    let k_bulk: Vec<f64> = rate_bulk
        .iter()
        .map(|&r| row_sum(r, &weights, spec.epsilon))
        .collect();
    let k_top: Vec<f64> = rate_top
        .iter()
        .map(|&r| row_sum(r, &weights, spec.epsilon))
        .collect();
    let k_bot: Vec<f64> = rate_bot
        .iter()
        .map(|&r| row_sum(r, &weights, spec.epsilon))
        .collect();

    Ok(DiscreteKernel {
        epsilon: spec.epsilon,
        d_lo,
        weights,
        rate_bulk,
        rate_top,
        rate_bot,
        k_bulk,
        k_top,
        k_bot,
        cols,
        n_theta: mesh.n_theta,
    })
}

impl DiscreteKernel {
    /// All-zero kernel (no tumbling). Only reachable through this test
    /// constructor; `assemble` rejects non-positive rates.
    pub fn zero(mesh: &Mesh, epsilon: f64) -> Self {
        DiscreteKernel {
            epsilon,
            d_lo: 0,
            weights: vec![0.0],
            rate_bulk: vec![0.0; mesh.rows() * mesh.cols()],
            rate_top: vec![0.0; mesh.n_theta],
            rate_bot: vec![0.0; mesh.n_theta],
            k_bulk: vec![0.0; mesh.rows() * mesh.cols()],
            k_top: vec![0.0; mesh.n_theta],
            k_bot: vec![0.0; mesh.n_theta],
            cols: mesh.cols(),
            n_theta: mesh.n_theta,
        }
    }

    /// Stencil band: first offset and the per-offset profile cell integrals.
    #[inline]
    pub fn stencil(&self) -> (i64, &[f64]) {
        (self.d_lo, &self.weights)
    }

    /// Signed circular offset from source `j` to target `jp`, in
    /// `[-n_theta, n_theta)`.
    #[inline]
    fn circ_offset(&self, j: usize, jp: usize) -> i64 {
        let n = self.n_theta as i64;
        let mut d = jp as i64 - j as i64;
        if d < -n {
            d += 2 * n;
        } else if d >= n {
            d -= 2 * n;
        }
        d
    }

    #[inline]
    fn weight_at(&self, j: usize, jp: usize) -> f64 {
        let d = self.circ_offset(j, jp);
        let rel = d - self.d_lo;
        if rel >= 0 && (rel as usize) < self.weights.len() {
            self.weights[rel as usize]
        } else {
            0.0
        }
    }

    /// `K_{i,j,j'}`: rate per target cell from source angle `j` at row `i`.
    #[inline]
    pub fn bulk(&self, i: usize, j: usize, jp: usize) -> f64 {
        self.rate_bulk[i * self.cols + j] * self.weight_at(j, jp)
    }

    /// `K_{+,j,j'}`; source `j` must lie in `I_theta+`, target ranges over
    /// the whole circle.
    #[inline]
    pub fn top(&self, j: usize, jp: usize) -> f64 {
        debug_assert!(j >= self.n_theta);
        self.rate_top[j - self.n_theta] * self.weight_at(j, jp)
    }

    /// `K_{-,j,j'}`; source `j` must lie in `I_theta-`.
    #[inline]
    pub fn bot(&self, j: usize, jp: usize) -> f64 {
        debug_assert!(j < self.n_theta);
        self.rate_bot[j] * self.weight_at(j, jp)
    }

    #[inline]
    pub fn k_bulk(&self, i: usize, j: usize) -> f64 {
        self.k_bulk[i * self.cols + j]
    }

    /// Total top-wall rate at global angular index `j in I_theta+`.
    #[inline]
    pub fn k_top(&self, j: usize) -> f64 {
        self.k_top[j - self.n_theta]
    }

    /// Total bottom-wall rate at global angular index `j in I_theta-`.
    #[inline]
    pub fn k_bot(&self, j: usize) -> f64 {
        self.k_bot[j]
    }

    #[inline]
    pub fn rates_row(&self, i: usize) -> &[f64] {
        &self.rate_bulk[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn k_row(&self, i: usize) -> &[f64] {
        &self.k_bulk[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn rate_top_slice(&self) -> &[f64] {
        &self.rate_top
    }

    #[inline]
    pub fn rate_bot_slice(&self) -> &[f64] {
        &self.rate_bot
    }

    #[inline]
    pub fn k_top_slice(&self) -> &[f64] {
        &self.k_top
    }

    #[inline]
    pub fn k_bot_slice(&self) -> &[f64] {
        &self.k_bot
    }

    /// Largest total rate over bulk and walls; sets the stiff part of the
    /// CFL bound.
    pub fn max_rate(&self) -> f64 {
        self.k_bulk
            .iter()
            .chain(self.k_top.iter())
            .chain(self.k_bot.iter())
            .fold(0.0_f64, |m, &k| m.max(k))
    }

    /// `(1/eps) * sum_{j'} K_{i,j,j'} - k_{i,j}` summed in stencil order;
    /// identically zero because `k` is defined as that sum.
    pub fn row_sum_gap(&self, i: usize, j: usize) -> f64 {
        let rate = self.rate_bulk[i * self.cols + j];
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += rate * w;
        }
        acc / self.epsilon - self.k_bulk(i, j)
    }
}

/// Composite trapezoid with Richardson extrapolation.
///
/// Refines until two successive extrapolations agree to `rel_tol`; on budget
/// exhaustion returns the best value with its error estimate.
pub(crate) fn refine_trapezoid(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<f64, (f64, f64)> {
    const START_PANELS: usize = 8;
    const MAX_LEVELS: usize = 20;

    let width = b - a;
    let mut panels = START_PANELS;
    let mut h = width / panels as f64;
    let f_max = std::cell::Cell::new(0.0_f64);
    let eval = |x: f64| {
        let y = f(x);
        f_max.set(f_max.get().max(y.abs()));
        y
    };
    let mut t = {
        let mut acc = 0.5 * (eval(a) + eval(b));
        for k in 1..panels {
            acc += eval(a + k as f64 * h);
        }
        acc * h
    };
    let mut richardson_prev = t;
    let mut have_prev = false;
    for _ in 0..MAX_LEVELS {
        // T(h/2) reuses T(h) and adds the midpoints.
        let mut mid_sum = 0.0;
        for k in 0..panels {
            mid_sum += eval(a + (k as f64 + 0.5) * h);
        }
        let t_half = 0.5 * t + 0.5 * h * mid_sum;
        let richardson = (4.0 * t_half - t) / 3.0;
        if have_prev {
            let err = (richardson - richardson_prev).abs();
            // Absolute floor covers integrals that cancel to numerical zero.
            let floor = 1e-13 * f_max.get() * width.abs();
            if err <= rel_tol * richardson.abs() || err <= floor {
                return Ok(richardson);
            }
        }
        richardson_prev = richardson;
        have_prev = true;
        t = t_half;
        panels *= 2;
        h *= 0.5;
    }
    let err = (4.0 * t - richardson_prev).abs() / 3.0;
    Err((richardson_prev, err / richardson_prev.abs().max(1e-300)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mesh(n_y: usize, n_theta: usize) -> Mesh {
        Mesh::new(n_y, n_theta, 10.0, 20.0).unwrap()
    }

    #[test]
    fn f_eps_matches_branch_values() {
        assert!((f_eps(0.5, 0.05) - 0.5).abs() < 1e-15);
        assert_eq!(f_eps(1.0, 0.05), 0.0);
        assert_eq!(f_eps(1.0, 1.3), 0.0);
        // Periodic image: z = 2*pi/eps - 0.3 lands on the 1-|z| branch at -0.3.
        let eps = 0.05;
        let z = 2.0 * PI / eps - 0.3;
        let direct = f_eps(z, eps);
        let shifted = f_eps(-0.3, eps);
        assert!((direct - 0.7).abs() < 1e-9, "direct = {direct}");
        assert!((direct - shifted).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn f_eps_even_and_periodic(z in -50.0_f64..50.0, eps in 0.01_f64..3.0) {
            let period = 2.0 * PI / eps;
            prop_assert!((f_eps(z, eps) - f_eps(-z, eps)).abs() < 1e-9);
            prop_assert!((f_eps(z, eps) - f_eps(z + period, eps)).abs() < 1e-6);
            prop_assert!(f_eps(z, eps) >= 0.0 && f_eps(z, eps) <= 1.0);
        }
    }

    #[test]
    fn profiles_have_unit_mass() {
        for profile in [Profile::Triangular, Profile::CosineSquared] {
            let mass = refine_trapezoid(|z| profile.value(z), -1.0, 1.0, 1e-10).unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "{profile:?} mass = {mass}");
        }
    }

    #[test]
    fn stencil_row_mass_matches_profile_mass() {
        // sum_d w_d = eps * int f = eps, so the quadrature row sum over eps
        // should sit within quadrature tolerance of 1.
        for eps in [0.05, 0.2, 1.0] {
            let m = mesh(2, 50);
            let spec = KernelSpec::constant(1.0, Profile::Triangular, eps).unwrap();
            let dk = assemble(&spec, &m).unwrap();
            let (_, w) = dk.stencil();
            let s: f64 = w.iter().sum::<f64>() / eps;
            assert!((s - 1.0).abs() < 1e-6, "eps={eps}: row mass {s}");
        }
    }

    #[test]
    fn row_sum_gap_is_exactly_zero() {
        let m = mesh(3, 16);
        let spec = KernelSpec::new(
            Arc::new(|y: f64, theta: f64| 1.0 + 0.1 * (y / 10.0) + 0.05 * theta.cos()),
            Arc::new(|theta: f64| 1.5 + 0.1 * theta.sin().abs()),
            Arc::new(|_| 2.0),
            Profile::Triangular,
            0.3,
        )
        .unwrap();
        let dk = assemble(&spec, &m).unwrap();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                assert_eq!(dk.row_sum_gap(i, j), 0.0, "cell ({i}, {j})");
            }
        }
    }

    #[test]
    fn wrapped_band_keeps_row_mass() {
        // Support crossing theta = pi: periodic images must account for the
        // full mass. Oracle: brute-force image sum per target cell.
        let m = mesh(2, 8);
        let eps = 0.9;
        let spec = KernelSpec::constant(1.0, Profile::Triangular, eps).unwrap();
        let dk = assemble(&spec, &m).unwrap();
        let j_src = m.cols() - 1; // theta just below pi
        let mut brute = 0.0;
        let mut banded = 0.0;
        for jp in 0..m.cols() {
            // brute-force: integrate the unwrapped profile image sum over the cell
            let a = m.theta(jp) - 0.5 * m.dtheta;
            let b = m.theta(jp) + 0.5 * m.dtheta;
            let theta_src = m.theta(j_src);
            let g = |tp: f64| {
                let mut acc = 0.0;
                for img in [-1.0, 0.0, 1.0] {
                    acc += Profile::Triangular.value((tp + 2.0 * PI * img - theta_src) / eps);
                }
                acc
            };
            let w_oracle = refine_trapezoid(g, a, b, 1e-9).unwrap();
            let w_band = dk.bulk(0, j_src, jp);
            assert!(
                (w_oracle - w_band).abs() < 1e-7,
                "target {jp}: oracle {w_oracle} vs band {w_band}"
            );
            brute += w_oracle;
            banded += w_band;
        }
        assert!((brute - banded).abs() < 1e-6);
        assert!((banded / eps - 1.0).abs() < 1e-6, "wrapped row mass");
    }

    #[test]
    fn rejects_bad_epsilon_and_rates() {
        let m = mesh(2, 8);
        let spec = KernelSpec::constant(1.0, Profile::Triangular, 3.5).unwrap();
        assert!(matches!(
            assemble(&spec, &m),
            Err(KernelError::EpsilonOutOfRange(_))
        ));
        assert!(KernelSpec::constant(0.0, Profile::Triangular, 0.1).is_err());
        let negative = KernelSpec::new(
            Arc::new(|_, theta: f64| theta),
            Arc::new(|_| 1.0),
            Arc::new(|_| 1.0),
            Profile::Triangular,
            0.1,
        )
        .unwrap();
        assert!(matches!(
            assemble(&negative, &m),
            Err(KernelError::BadRate { .. })
        ));
    }

    #[test]
    fn diffusion_coefficient_triangular() {
        // (1/2) int z^2 (1-|z|) dz = 1/12; linear in the rate prefactor.
        let spec = KernelSpec::constant(1.0, Profile::Triangular, 0.05).unwrap();
        let d = diffusion_coeff(&spec, 0.0, 0.3).unwrap();
        assert!((d - 1.0 / 12.0).abs() < 1e-9, "D = {d}");

        let spec3 = KernelSpec::constant(3.0, Profile::Triangular, 0.05).unwrap();
        let d3 = diffusion_coeff(&spec3, 0.0, 0.3).unwrap();
        assert!((d3 - 3.0 * d).abs() < 1e-9);
        assert!(d >= 0.0);
    }

    #[test]
    fn diffusion_coefficient_cosine_squared() {
        // (1/2) int z^2 cos^2(pi z/2) dz = 1/6 - 1/pi^2.
        let spec = KernelSpec::constant(1.0, Profile::CosineSquared, 0.1).unwrap();
        let d = diffusion_coeff(&spec, 0.0, 0.0).unwrap();
        let exact = 1.0 / 6.0 - 1.0 / (PI * PI);
        assert!((d - exact).abs() < 1e-9, "D = {d}, exact = {exact}");
    }

    #[test]
    fn first_moment_vanishes_by_evenness() {
        for profile in [Profile::Triangular, Profile::CosineSquared] {
            let m1 = refine_trapezoid(|z| z * profile.value(z), -1.0, 1.0, 1e-10).unwrap();
            assert!(m1.abs() < 1e-12, "{profile:?}: first moment {m1}");
        }
    }

    #[test]
    fn stencil_is_source_independent() {
        // Uniform grid: K depends on the source only through the rate factor.
        let m = mesh(2, 12);
        let spec = KernelSpec::constant(2.0, Profile::Triangular, 0.4).unwrap();
        let dk = assemble(&spec, &m).unwrap();
        for j in 0..m.cols() {
            for jp in 0..m.cols() {
                let d = dk.circ_offset(j, jp);
                let j2 = (j + 5) % m.cols();
                let jp2 = (jp + 5) % m.cols();
                assert_eq!(dk.circ_offset(j2, jp2), d);
                assert_eq!(dk.bulk(0, j, jp), dk.bulk(1, j2, jp2));
            }
        }
    }
}
