//! Uniform cell-centered grid over `(-L, L) x (-pi, pi)` and the density state.
//!
//! The grid stores half-counts: `n_y` cells on each side of `y = 0` and
//! `n_theta` cells on each side of `theta = 0`, so the full grid is
//! `2*n_y x 2*n_theta`. Cell centers never sit on a plate or on
//! `theta in {-pi, 0, pi}`, which keeps `sin(theta_j)` nonzero and the upwind
//! direction well-defined.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh half-counts must be >= 2 (got n_y={n_y}, n_theta={n_theta})")]
    TooCoarse { n_y: usize, n_theta: usize },
    #[error("physical parameters must be positive and finite (L={l}, V={v})")]
    BadPhysical { l: f64, v: f64 },
}

/// Uniform `(y, theta)` grid. Immutable once built; cheap to share.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Half-count in `y`: `dy = L / n_y`, full grid has `2*n_y` rows.
    pub n_y: usize,
    /// Half-count in `theta`: `dtheta = pi / n_theta`.
    pub n_theta: usize,
    /// Half-gap between the plates.
    pub l: f64,
    /// Swimming speed.
    pub v: f64,
    pub dy: f64,
    pub dtheta: f64,
    sin_theta: Vec<f64>,
}

impl Mesh {
    pub fn new(n_y: usize, n_theta: usize, l: f64, v: f64) -> Result<Self, MeshError> {
        if n_y < 2 || n_theta < 2 {
            return Err(MeshError::TooCoarse { n_y, n_theta });
        }
        if !(l > 0.0 && v > 0.0 && l.is_finite() && v.is_finite()) {
            return Err(MeshError::BadPhysical { l, v });
        }
        let dtheta = PI / n_theta as f64;
        let mut mesh = Mesh {
            n_y,
            n_theta,
            l,
            v,
            dy: l / n_y as f64,
            dtheta,
            sin_theta: Vec::new(),
        };
        mesh.sin_theta = (0..2 * n_theta).map(|j| mesh.theta(j).sin()).collect();
        Ok(mesh)
    }

    /// Number of bulk rows (`2*n_y`).
    #[inline]
    pub fn rows(&self) -> usize {
        2 * self.n_y
    }

    /// Number of angular cells (`2*n_theta`).
    #[inline]
    pub fn cols(&self) -> usize {
        2 * self.n_theta
    }

    /// Cell center `y_i`, `i` in `0..2*n_y` (maps to the 1-based index `i+1`).
    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        (i as f64 + 0.5 - self.n_y as f64) * self.dy
    }

    /// Cell center `theta_j`, `j` in `0..2*n_theta`.
    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - self.n_theta as f64) * self.dtheta
    }

    #[inline]
    pub fn sin_theta(&self, j: usize) -> f64 {
        self.sin_theta[j]
    }

    /// `true` for the upward-moving half `I_theta+` (`sin(theta_j) > 0`).
    #[inline]
    pub fn is_upward(&self, j: usize) -> bool {
        j >= self.n_theta
    }

    /// Global angular indices of `I_theta+` (top-boundary sources).
    pub fn upward_range(&self) -> std::ops::Range<usize> {
        self.n_theta..2 * self.n_theta
    }

    /// Global angular indices of `I_theta-`.
    pub fn downward_range(&self) -> std::ops::Range<usize> {
        0..self.n_theta
    }

    /// Flat index of bulk cell `(i, j)`; rows are `j`-contiguous.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.cols() + j
    }

    /// Index pair reflected through `(y, theta) -> (-y, -theta)`.
    #[inline]
    pub fn reflect(&self, i: usize, j: usize) -> (usize, usize) {
        (self.rows() - 1 - i, self.cols() - 1 - j)
    }

    /// `true` when both meshes share grid geometry (physical speed may differ).
    pub fn same_grid(&self, other: &Mesh) -> bool {
        self.n_y == other.n_y && self.n_theta == other.n_theta && self.l == other.l
    }
}

/// Bulk density `n_{i,j}` plus the two wall populations at one time instant.
///
/// `n_plus[p]` holds the top-wall density at `theta_{n_theta + p}` (the
/// `I_theta+` half); `n_minus[m]` the bottom-wall density at `theta_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub n: Vec<f64>,
    pub n_plus: Vec<f64>,
    pub n_minus: Vec<f64>,
    pub t: f64,
}

impl StateField {
    pub fn zeros(mesh: &Mesh) -> Self {
        StateField {
            n: vec![0.0; mesh.rows() * mesh.cols()],
            n_plus: vec![0.0; mesh.n_theta],
            n_minus: vec![0.0; mesh.n_theta],
            t: 0.0,
        }
    }

    /// Uniform bulk density `1/(4 pi L)` with empty walls; discrete total
    /// mass is exactly 1.
    pub fn uniform(mesh: &Mesh) -> Self {
        let mut s = Self::zeros(mesh);
        let value = 1.0 / (4.0 * PI * mesh.l);
        s.n.fill(value);
        s
    }

    /// Bulk value at `(i, j)`.
    #[inline]
    pub fn bulk(&self, mesh: &Mesh, i: usize, j: usize) -> f64 {
        self.n[mesh.idx(i, j)]
    }

    /// Top-wall density at global angular index `j` (must lie in `I_theta+`).
    #[inline]
    pub fn plus(&self, mesh: &Mesh, j: usize) -> f64 {
        debug_assert!(mesh.is_upward(j));
        self.n_plus[j - mesh.n_theta]
    }

    /// Bottom-wall density at global angular index `j` (must lie in `I_theta-`).
    #[inline]
    pub fn minus(&self, mesh: &Mesh, j: usize) -> f64 {
        debug_assert!(!mesh.is_upward(j));
        self.n_minus[j]
    }

    /// Largest magnitude over all unknowns.
    pub fn max_abs(&self) -> f64 {
        self.n
            .iter()
            .chain(self.n_plus.iter())
            .chain(self.n_minus.iter())
            .fold(0.0_f64, |m, &x| m.max(x.abs()))
    }

    /// Most negative unknown (0 when none are negative).
    pub fn min_value(&self) -> f64 {
        self.n
            .iter()
            .chain(self.n_plus.iter())
            .chain(self.n_minus.iter())
            .fold(f64::INFINITY, |m, &x| m.min(x))
    }

    pub fn has_nan(&self) -> bool {
        self.n
            .iter()
            .chain(self.n_plus.iter())
            .chain(self.n_minus.iter())
            .any(|x| !x.is_finite())
    }

    /// Scale every unknown by `c`.
    pub fn scale(&mut self, c: f64) {
        for x in self
            .n
            .iter_mut()
            .chain(self.n_plus.iter_mut())
            .chain(self.n_minus.iter_mut())
        {
            *x *= c;
        }
    }

    /// Clamp tiny negative round-off (values in `[-tol, 0)`) to zero.
    /// Leaves genuinely negative values alone so blow-ups stay visible.
    pub fn clamp_roundoff(&mut self, tol: f64) {
        for x in self
            .n
            .iter_mut()
            .chain(self.n_plus.iter_mut())
            .chain(self.n_minus.iter_mut())
        {
            if *x < 0.0 && *x >= -tol {
                *x = 0.0;
            }
        }
    }
}
