//! Stochastic particle engine for the confined run-and-tumble jump process:
//! Poisson-timed reorientations of size `O(eps)`, straight runs between
//! them, wall sticking by position clamping, and histogram binning of the
//! ensemble onto the solver grid.
//!
//! Randomness is counter-based: every `(seed, particle, step)` triple keys an
//! independent splitmix64 stream, so results are bit-identical for any
//! parallel chunking or worker count.

use std::f64::consts::{PI, TAU};

use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::{KernelSpec, Profile};
use crate::mesh::{Mesh, StateField};

#[derive(Debug, Error)]
pub enum McError {
    #[error("snapshot time {t} is not a multiple of dt = {dt}")]
    SnapshotOffGrid { t: f64, dt: f64 },
    #[error("invalid particle parameters: {0}")]
    BadParams(String),
    #[error("histogram/mesh mismatch: {0}")]
    GridMismatch(String),
}

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const PARTICLE_SALT: u64 = 0xD1B54A32D192ED03;
const STEP_SALT: u64 = 0x8CB92BA72F3D8DD7;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Splitmix64 stream keyed by `(seed, particle, step)`.
///
/// The key schedule hashes the triple into the stream seed; draws then walk
/// the Weyl sequence. Streams for distinct triples are independent for Monte
/// Carlo purposes and require no carried state between steps.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(seed: u64, particle: u64, step: u64) -> Self {
        let k1 = mix(seed ^ particle.wrapping_mul(PARTICLE_SALT));
        let k2 = mix(k1 ^ step.wrapping_mul(STEP_SALT));
        CounterRng { state: k2 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (CounterRng::next_u64(self) >> 32) as u32
    }
    fn next_u64(&mut self) -> u64 {
        CounterRng::next_u64(self)
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&CounterRng::next_u64(self).to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = CounterRng::next_u64(self).to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }
}

/// Poisson sample with mean `rate * dt`. Exact inversion for small means
/// (the simulation regime), library sampler for large ones.
pub fn poisson_count(rate: f64, dt: f64, rng: &mut CounterRng) -> u64 {
    let lambda = rate * dt;
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < 30.0 {
        poisson_inversion(lambda.exp().recip(), rng)
    } else {
        use rand_distr::Distribution;
        let sampler = rand_distr::Poisson::new(lambda).expect("finite positive lambda");
        sampler.sample(rng) as u64
    }
}

#[inline]
fn poisson_inversion(exp_neg_lambda: f64, rng: &mut CounterRng) -> u64 {
    let mut k = 0u64;
    let mut p = rng.uniform();
    while p > exp_neg_lambda {
        k += 1;
        p *= rng.uniform();
    }
    k
}

/// Caches `exp(-lambda)` between calls; tumbling rates are piecewise
/// constant in the paper's setups, so the cache almost always hits.
#[derive(Debug, Clone)]
struct PoissonCache {
    lambda: f64,
    exp_neg: f64,
}

impl PoissonCache {
    fn new() -> Self {
        PoissonCache {
            lambda: f64::NAN,
            exp_neg: f64::NAN,
        }
    }

    #[inline]
    fn sample(&mut self, lambda: f64, rng: &mut CounterRng) -> u64 {
        if lambda <= 0.0 {
            return 0;
        }
        if lambda >= 30.0 {
            return poisson_count(lambda, 1.0, rng);
        }
        if lambda != self.lambda {
            self.lambda = lambda;
            self.exp_neg = (-lambda).exp();
        }
        poisson_inversion(self.exp_neg, rng)
    }
}

/// Where a particle sits when its tumbling intensity is frozen for a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpSite {
    Interior,
    TopWall,
    BottomWall,
}

/// Samples angular increments from the jump law `K_eps / k`.
///
/// For the product-form kernels used here the law is `eps * Z` with `Z`
/// drawn from the angular profile, independent of the site and current
/// angle (those arguments select the intensity, not the shape). The
/// triangular profile is sampled exactly as a difference of uniforms; other
/// profiles go through an inverse-CDF table.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    epsilon: f64,
    table: Option<Vec<f64>>,
}

/// Inverse-CDF knot count for tabulated profiles.
const JUMP_TABLE_KNOTS: usize = 1024;

impl JumpSampler {
    pub fn new(spec: &KernelSpec) -> Self {
        let table = match spec.shape {
            Profile::Triangular => None,
            profile => Some(build_inverse_cdf(profile)),
        };
        JumpSampler {
            epsilon: spec.epsilon,
            table,
        }
    }

    /// Draw one increment; `_site` and `_theta` do not affect product-form
    /// jump laws but are part of the sampling contract.
    #[inline]
    pub fn sample(&self, _site: JumpSite, _theta: f64, rng: &mut CounterRng) -> f64 {
        let z = match &self.table {
            None => rng.uniform() - rng.uniform(),
            Some(table) => {
                let u = rng.uniform() * JUMP_TABLE_KNOTS as f64;
                let i = (u as usize).min(JUMP_TABLE_KNOTS - 1);
                let frac = u - i as f64;
                table[i] + frac * (table[i + 1] - table[i])
            }
        };
        self.epsilon * z
    }
}

/// Tabulate the inverse CDF of a profile at equiprobable knots.
fn build_inverse_cdf(profile: Profile) -> Vec<f64> {
    // Cumulative trapezoid of the density on a fine grid, then linear
    // inversion onto uniform probability knots.
    const PANELS: usize = 1 << 14;
    let h = 2.0 / PANELS as f64;
    let mut z_grid = Vec::with_capacity(PANELS + 1);
    let mut cdf = Vec::with_capacity(PANELS + 1);
    let mut acc = 0.0;
    let mut prev = profile.value(-1.0);
    z_grid.push(-1.0);
    cdf.push(0.0);
    for k in 1..=PANELS {
        let z = -1.0 + k as f64 * h;
        let f = profile.value(z);
        acc += 0.5 * (prev + f) * h;
        prev = f;
        z_grid.push(z);
        cdf.push(acc);
    }
    let total = acc;
    let mut table = Vec::with_capacity(JUMP_TABLE_KNOTS + 1);
    let mut k = 0usize;
    for knot in 0..=JUMP_TABLE_KNOTS {
        let target = total * knot as f64 / JUMP_TABLE_KNOTS as f64;
        while k + 1 < cdf.len() && cdf[k + 1] < target {
            k += 1;
        }
        let span = cdf[k + 1] - cdf[k];
        let frac = if span > 0.0 { (target - cdf[k]) / span } else { 0.0 };
        table.push(z_grid[k] + frac * (z_grid[k + 1] - z_grid[k]));
    }
    table
}

#[inline]
fn wrap_angle(theta: f64) -> f64 {
    let mut w = (theta + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w = -PI;
    }
    w
}

/// Particle positions and orientations of one ensemble.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Physical and numerical parameters of a particle simulation.
#[derive(Debug, Clone)]
pub struct McParams {
    pub n_cell: usize,
    pub seed: u64,
    pub dt: f64,
    pub l: f64,
    pub v: f64,
}

/// The particle engine: frozen-rate Poisson tumbling with sorted event
/// times, drift-and-clamp between events, and a trailing drift to the end
/// of the step so each step advances exactly `dt`.
pub struct McEngine<'a> {
    spec: &'a KernelSpec,
    sampler: JumpSampler,
    params: McParams,
}

impl<'a> McEngine<'a> {
    pub fn new(spec: &'a KernelSpec, params: McParams) -> Result<Self, McError> {
        if params.n_cell == 0 {
            return Err(McError::BadParams("n_cell must be >= 1".into()));
        }
        if !(params.dt > 0.0 && params.l > 0.0 && params.v > 0.0) {
            return Err(McError::BadParams(format!(
                "dt = {}, L = {}, V = {} must be positive",
                params.dt, params.l, params.v
            )));
        }
        Ok(McEngine {
            spec,
            sampler: JumpSampler::new(spec),
            params,
        })
    }

    #[inline]
    fn drift(&self, y: f64, sin_theta: f64, duration: f64) -> f64 {
        let moved = y + self.params.v * sin_theta * duration;
        // Clamp onto the plates: a particle pushing outward sticks there.
        moved.clamp(-self.params.l, self.params.l)
    }

    /// Advance one particle by one step of `dt`.
    pub fn step_particle(&self, y: f64, theta: f64, rng: &mut CounterRng) -> (f64, f64) {
        let mut cache = PoissonCache::new();
        let mut y = y;
        let mut theta = theta;
        let mut sin_theta = theta.sin();
        self.advance(&mut y, &mut theta, &mut sin_theta, rng, &mut cache);
        (y, theta)
    }

    #[inline]
    fn site_of(&self, y: f64) -> JumpSite {
        if y == self.params.l {
            JumpSite::TopWall
        } else if y == -self.params.l {
            JumpSite::BottomWall
        } else {
            JumpSite::Interior
        }
    }

    fn advance(
        &self,
        y: &mut f64,
        theta: &mut f64,
        sin_theta: &mut f64,
        rng: &mut CounterRng,
        cache: &mut PoissonCache,
    ) {
        // Intensity and jump law are frozen at the start-of-step state.
        let site = self.site_of(*y);
        let rate = match site {
            JumpSite::Interior => (self.spec.bulk_rate)(*y, *theta),
            JumpSite::TopWall => (self.spec.top_rate)(*theta),
            JumpSite::BottomWall => (self.spec.bottom_rate)(*theta),
        };
        let jumps = cache.sample(rate * self.params.dt, rng);
        if jumps == 0 {
            *y = self.drift(*y, *sin_theta, self.params.dt);
            return;
        }

        // Uniform event times, sorted ascending so inter-event durations are
        // the uniform order-statistic gaps of the Poisson process.
        let mut t_prev = 0.0;
        if jumps == 1 {
            let t1 = rng.uniform();
            *y = self.drift(*y, *sin_theta, t1 * self.params.dt);
            let dtheta = self.sampler.sample(site, *theta, rng);
            *theta = wrap_angle(*theta + dtheta);
            *sin_theta = theta.sin();
            t_prev = t1;
        } else {
            let mut times: Vec<f64> = (0..jumps).map(|_| rng.uniform()).collect();
            times.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            for &t_j in &times {
                *y = self.drift(*y, *sin_theta, (t_j - t_prev) * self.params.dt);
                let dtheta = self.sampler.sample(site, *theta, rng);
                *theta = wrap_angle(*theta + dtheta);
                *sin_theta = theta.sin();
                t_prev = t_j;
            }
        }
        // Trailing drift to the end of the step.
        *y = self.drift(*y, *sin_theta, (1.0 - t_prev) * self.params.dt);
    }
}

/// Integer-count histogram on the solver grid: interior bins plus per-plate
/// angular bins for wall-resident particles (`|Y| = L` exactly).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub bins_y: usize,
    pub bins_theta: usize,
    pub counts: Vec<u64>,
    pub top: Vec<u64>,
    pub bottom: Vec<u64>,
    pub total: u64,
    l: f64,
}

impl Histogram2D {
    pub fn new(bins_y: usize, bins_theta: usize, l: f64) -> Self {
        Histogram2D {
            bins_y,
            bins_theta,
            counts: vec![0; bins_y * bins_theta],
            top: vec![0; bins_theta],
            bottom: vec![0; bins_theta],
            total: 0,
            l,
        }
    }

    #[inline]
    fn theta_bin(&self, theta: f64) -> usize {
        (((theta + PI) / TAU * self.bins_theta as f64) as usize).min(self.bins_theta - 1)
    }

    #[inline]
    pub fn add(&mut self, y: f64, theta: f64) {
        let jt = self.theta_bin(theta);
        if y == self.l {
            self.top[jt] += 1;
        } else if y == -self.l {
            self.bottom[jt] += 1;
        } else {
            let iy = (((y + self.l) / (2.0 * self.l) * self.bins_y as f64) as usize)
                .min(self.bins_y - 1);
            self.counts[iy * self.bins_theta + jt] += 1;
        }
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Histogram2D) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.top.iter_mut().zip(&other.top) {
            *a += b;
        }
        for (a, b) in self.bottom.iter_mut().zip(&other.bottom) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.l / self.bins_y as f64
    }

    pub fn dtheta(&self) -> f64 {
        TAU / self.bins_theta as f64
    }

    /// Interior probability density (per length per radian).
    pub fn bulk_density(&self, iy: usize, jt: usize) -> f64 {
        self.counts[iy * self.bins_theta + jt] as f64
            / (self.total as f64 * self.dy() * self.dtheta())
    }

    /// Normalized mass: 1 exactly up to float division round-off.
    pub fn normalized_mass(&self) -> f64 {
        let n = self.total as f64;
        let bulk: u64 = self.counts.iter().sum();
        let walls: u64 = self.top.iter().sum::<u64>() + self.bottom.iter().sum::<u64>();
        (bulk + walls) as f64 / n
    }

    /// Wall counts binned outside the physically reachable half-circle
    /// (`sin(theta) <= 0` on the top plate and vice versa). Almost surely
    /// zero: the trailing drift moves freshly reoriented particles off the
    /// wall within the same step.
    pub fn misplaced_wall_counts(&self) -> u64 {
        let half = self.bins_theta / 2;
        self.top[..half].iter().sum::<u64>() + self.bottom[half..].iter().sum::<u64>()
    }

    /// Density view on the solver grid, comparable with a solver state.
    /// Wall bins outside the physical half-circle are dropped (see
    /// [`Self::misplaced_wall_counts`]).
    pub fn to_state_field(&self, mesh: &Mesh, t: f64) -> Result<StateField, McError> {
        if self.bins_y != mesh.rows() || self.bins_theta != mesh.cols() {
            return Err(McError::GridMismatch(format!(
                "histogram {}x{} vs mesh {}x{}",
                self.bins_y,
                self.bins_theta,
                mesh.rows(),
                mesh.cols()
            )));
        }
        if (self.l - mesh.l).abs() > 1e-12 * mesh.l {
            return Err(McError::GridMismatch(format!(
                "histogram half-gap {} vs mesh {}",
                self.l, mesh.l
            )));
        }
        let mut state = StateField::zeros(mesh);
        state.t = t;
        let n = self.total as f64;
        let bulk_norm = 1.0 / (n * self.dy() * self.dtheta());
        for (dst, &c) in state.n.iter_mut().zip(&self.counts) {
            *dst = c as f64 * bulk_norm;
        }
        let wall_norm = 1.0 / (n * self.dtheta());
        for (p, j) in mesh.upward_range().enumerate() {
            state.n_plus[p] = self.top[j] as f64 * wall_norm;
        }
        for j in mesh.downward_range() {
            state.n_minus[j] = self.bottom[j] as f64 * wall_norm;
        }
        Ok(state)
    }
}

/// Multinomial bootstrap resample of the binned ensemble: equivalent to
/// resampling particles with replacement and re-binning, since the histogram
/// is a sufficient statistic of the binned positions.
pub fn bootstrap_resample(hist: &Histogram2D, rng: &mut CounterRng) -> Histogram2D {
    use rand_distr::Distribution;
    let mut out = Histogram2D::new(hist.bins_y, hist.bins_theta, hist.l);
    let mut remaining_n = hist.total;
    let mut remaining_mass = hist.total;

    let draw = |count: u64, remaining_n: &mut u64, remaining_mass: &mut u64, rng: &mut CounterRng| -> u64 {
        if *remaining_mass == 0 || *remaining_n == 0 {
            return 0;
        }
        if count == *remaining_mass {
            let all = *remaining_n;
            *remaining_n = 0;
            *remaining_mass = 0;
            return all;
        }
        let p = (count as f64 / *remaining_mass as f64).clamp(0.0, 1.0);
        let k = if count == 0 {
            0
        } else {
            rand_distr::Binomial::new(*remaining_n, p)
                .expect("valid binomial")
                .sample(rng)
        };
        *remaining_n -= k;
        *remaining_mass -= count;
        k
    };

    for (dst, &c) in out.counts.iter_mut().zip(&hist.counts) {
        *dst = draw(c, &mut remaining_n, &mut remaining_mass, rng);
    }
    for (dst, &c) in out.top.iter_mut().zip(&hist.top) {
        *dst = draw(c, &mut remaining_n, &mut remaining_mass, rng);
    }
    for (dst, &c) in out.bottom.iter_mut().zip(&hist.bottom) {
        *dst = draw(c, &mut remaining_n, &mut remaining_mass, rng);
    }
    out.total = hist.total;
    debug_assert_eq!(out.normalized_mass(), 1.0);
    out
}

/// Snapshots plus the final ensemble of one simulation.
pub struct SimulationOutput {
    pub snapshots: Vec<(f64, Histogram2D)>,
    pub ensemble: ParticleEnsemble,
}

/// Particles processed per parallel work item; fixed so that chunk
/// boundaries never influence per-particle randomness.
const CHUNK: usize = 4096;

/// Evolve an ensemble of independent particles from the uniform law and bin
/// snapshots at the requested times (multiples of `dt`). Deterministic for a
/// given `(seed, n_cell, dt, snapshot schedule)` under any worker count.
pub fn simulate(
    spec: &KernelSpec,
    params: &McParams,
    snapshot_times: &[f64],
    grid: &Mesh,
) -> Result<SimulationOutput, McError> {
    let engine = McEngine::new(spec, params.clone())?;
    let mut snap_steps = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        let k = (t / params.dt).round();
        if (k * params.dt - t).abs() > 1e-9 * t.abs().max(1.0) || t < 0.0 {
            return Err(McError::SnapshotOffGrid { t, dt: params.dt });
        }
        snap_steps.push(k as u64);
    }
    let mut order: Vec<usize> = (0..snap_steps.len()).collect();
    order.sort_by_key(|&i| snap_steps[i]);
    let sorted_steps: Vec<u64> = order.iter().map(|&i| snap_steps[i]).collect();
    let last_step = sorted_steps.last().copied().unwrap_or(0);

    let n = params.n_cell;
    let mut ys = vec![0.0f64; n];
    let mut thetas = vec![0.0f64; n];
    let n_snaps = sorted_steps.len();
    let empty = || -> Vec<Histogram2D> {
        (0..n_snaps)
            .map(|_| Histogram2D::new(grid.rows(), grid.cols(), params.l))
            .collect()
    };

    let sorted_hists: Vec<Histogram2D> = ys
        .par_chunks_mut(CHUNK)
        .zip(thetas.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(chunk_idx, (yc, tc))| {
            let mut local = empty();
            let mut cache = PoissonCache::new();
            for (local_idx, (y_slot, t_slot)) in yc.iter_mut().zip(tc.iter_mut()).enumerate() {
                let particle = (chunk_idx * CHUNK + local_idx) as u64;
                // Step 0 keys the initial condition draws.
                let mut rng = CounterRng::new(params.seed, particle, 0);
                let mut y = params.l * (2.0 * rng.uniform() - 1.0);
                let mut theta = PI * (2.0 * rng.uniform() - 1.0);
                let mut sin_theta = theta.sin();
                let mut next_snap = 0usize;
                while next_snap < n_snaps && sorted_steps[next_snap] == 0 {
                    local[next_snap].add(y, theta);
                    next_snap += 1;
                }
                for step in 1..=last_step {
                    let mut rng = CounterRng::new(params.seed, particle, step);
                    engine.advance(&mut y, &mut theta, &mut sin_theta, &mut rng, &mut cache);
                    while next_snap < n_snaps && sorted_steps[next_snap] == step {
                        local[next_snap].add(y, theta);
                        next_snap += 1;
                    }
                }
                *y_slot = y;
                *t_slot = theta;
            }
            local
        })
        .reduce(empty, |mut a, b| {
            for (ha, hb) in a.iter_mut().zip(&b) {
                ha.merge(hb);
            }
            a
        });

    // Undo the sort so snapshots come back in request order.
    let mut snapshots: Vec<Option<(f64, Histogram2D)>> = (0..n_snaps).map(|_| None).collect();
    for (sorted_pos, &orig) in order.iter().enumerate() {
        snapshots[orig] = Some((
            snapshot_times[orig],
            sorted_hists[sorted_pos].clone(),
        ));
    }
    Ok(SimulationOutput {
        snapshots: snapshots.into_iter().map(|s| s.unwrap()).collect(),
        ensemble: ParticleEnsemble {
            y: ys,
            theta: thetas,
            seed: params.seed,
        },
    })
}

/// RMS weighted-L2 distance between bootstrap resamples and the original
/// histogram: the sampling-noise scale of the binned ensemble.
pub fn bootstrap_noise_floor(
    hist: &Histogram2D,
    mesh: &Mesh,
    replicates: usize,
    seed: u64,
) -> Result<f64, crate::diagnostics::DiagnosticsError> {
    let base = hist
        .to_state_field(mesh, 0.0)
        .expect("histogram built on this mesh");
    let mut acc = 0.0;
    for rep in 0..replicates {
        // A reserved step index keys the bootstrap streams.
        let mut rng = CounterRng::new(seed, rep as u64, u64::MAX);
        let resampled = bootstrap_resample(hist, &mut rng)
            .to_state_field(mesh, 0.0)
            .expect("same grid");
        acc += crate::diagnostics::weighted_l2_error(&resampled, mesh, &base, mesh)?;
    }
    Ok((acc / replicates as f64).sqrt())
}
