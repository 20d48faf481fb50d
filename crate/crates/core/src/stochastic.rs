//! Correlated Brownian motion in `R^N`, stopped when it leaves the box
//! `[-h, h]^N` (`h = 1/2` by default) or reaches the horizon `ε`.
//!
//! Paths are simulated with exact Gaussian increments on a uniform grid of
//! spacing `δ` and the exit condition is only checked at grid points.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::wht::{self, HadamardKernel};

/// Half-width of the stopping box.
pub const BOX_HALF_WIDTH: f64 = 0.5;
/// Default number of Euler steps per horizon.
pub const DEFAULT_STEPS: usize = 64;
const PSD_TOLERANCE: f64 = 1e-10;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// `ε = 1 / (28 k² ln N)`.
pub fn default_epsilon(n_dim: f64, k: u32) -> Result<f64> {
    if !(n_dim >= 2.0) {
        return Err(Error::invalid(format!("dimension {n_dim} must be at least 2")));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let k = k as f64;
    Ok(1.0 / (28.0 * k * k * n_dim.ln()))
}

/// Covariance `Σ` of each Brownian block.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    /// `Σ = [[I_n, H_n], [H_n, I_n]]` on `N = 2n` coordinates.
    HadamardBlock { n: usize },
    /// Small explicit covariance, used for oracle tests.
    Dense(DenseCovariance),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCovariance {
    dim: usize,
    matrix: Vec<f64>,
    /// Symmetric square root `F` with `F Fᵀ = Σ`, row-major.
    factor: Vec<f64>,
}

impl CovarianceSpec {
    pub fn hadamard_block(n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        Ok(CovarianceSpec::HadamardBlock { n })
    }

    /// Validates symmetry, unit diagonal and positive semidefiniteness, then
    /// factors `Σ` spectrally.
    pub fn dense(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::invalid("empty covariance"));
        }
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        let matrix: Vec<f64> = rows.iter().flatten().copied().collect();
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("non-finite entry".into()));
        }
        for i in 0..dim {
            if (matrix[i * dim + i] - 1.0).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::Factorization(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                if (matrix[i * dim + j] - matrix[j * dim + i]).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::Factorization(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &matrix));
        let min = eig.eigenvalues.min();
        if min < -PSD_TOLERANCE {
            return Err(Error::Factorization(format!(
                "not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose();
        let factor = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| factor[(i, j)])
            .collect();
        Ok(CovarianceSpec::Dense(DenseCovariance { dim, matrix, factor }))
    }

    /// `N`.
    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::HadamardBlock { n } => 2 * n,
            CovarianceSpec::Dense(d) => d.dim,
        }
    }

    /// `n` for the Hadamard form.
    pub fn half_dim(&self) -> Option<usize> {
        match self {
            CovarianceSpec::HadamardBlock { n } => Some(*n),
            CovarianceSpec::Dense(_) => None,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            CovarianceSpec::HadamardBlock { n } => {
                let n = *n;
                match (i < n, j < n) {
                    (true, true) | (false, false) => f64::from(u8::from(i == j)),
                    (true, false) => wht::hadamard_entry(n, i, j - n),
                    (false, true) => wht::hadamard_entry(n, i - n, j),
                }
            }
            CovarianceSpec::Dense(d) => d.matrix[i * d.dim + j],
        }
    }

    /// Largest off-diagonal magnitude `γ`.
    pub fn gamma(&self) -> f64 {
        match self {
            CovarianceSpec::HadamardBlock { n } => 1.0 / (*n as f64).sqrt(),
            CovarianceSpec::Dense(d) => (0..d.dim)
                .flat_map(|i| (0..d.dim).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| d.matrix[i * d.dim + j].abs())
                .fold(0.0, f64::max),
        }
    }
}

/// Horizon, step and box for the path simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub epsilon: f64,
    pub delta: f64,
    pub half_width: f64,
}

impl SimParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::invalid(format!("epsilon {epsilon} must lie in (0, 1]")));
        }
        if !(delta > 0.0 && delta <= epsilon) {
            return Err(Error::invalid(format!("delta {delta} must lie in (0, epsilon]")));
        }
        Ok(Self {
            epsilon,
            delta,
            half_width: BOX_HALF_WIDTH,
        })
    }

    /// `δ = ε / 64`.
    pub fn with_default_delta(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, epsilon / DEFAULT_STEPS as f64)
    }

    pub fn with_half_width(mut self, half_width: f64) -> Self {
        self.half_width = half_width;
        self
    }

    /// Disables the box so paths always run to `ε`.
    pub fn unbounded(self) -> Self {
        self.with_half_width(f64::INFINITY)
    }

    /// Same horizon and box with `δ/2`.
    pub fn refined(self) -> Self {
        Self {
            delta: self.delta / 2.0,
            ..self
        }
    }

    /// Number of full `δ` steps and the length of the trailing partial step
    /// (zero when `δ` divides `ε`).
    pub fn grid(&self) -> (usize, f64) {
        let ratio = self.epsilon / self.delta;
        let full = (ratio * (1.0 + 1e-12)).floor() as usize;
        let rem = self.epsilon - full as f64 * self.delta;
        if rem <= self.epsilon * 1e-12 {
            (full, 0.0)
        } else {
            (full, rem)
        }
    }

    /// Grid times `0 = t_0 < t_1 < … < t_K = ε`.
    pub fn grid_times(&self) -> Vec<f64> {
        let (full, rem) = self.grid();
        let mut times: Vec<f64> = (0..=full).map(|j| j as f64 * self.delta).collect();
        if rem > 0.0 {
            times.push(self.epsilon);
        } else if let Some(last) = times.last_mut() {
            *last = self.epsilon;
        }
        times
    }
}

/// One discretized path with its stopping time.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppedPath {
    dim: usize,
    /// Grid times up to and including `tau`.
    pub times: Vec<f64>,
    points: Vec<f64>,
    pub tau: f64,
    pub hit_boundary: bool,
}

impl StoppedPath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// `X_τ`.
    pub fn endpoint(&self) -> &[f64] {
        self.point(self.len() - 1)
    }
}

/// Left-endpoint Riemann sum `Σ_j g(X_{t_j}) (t_{j+1} - t_j)` over `[0, τ]`.
pub fn integrate_along_path<G: FnMut(&[f64]) -> f64>(path: &StoppedPath, mut integrand: G) -> f64 {
    path.times
        .windows(2)
        .enumerate()
        .map(|(j, w)| integrand(path.point(j)) * (w[1] - w[0]))
        .sum()
}

/// Incremental Brownian state. For the Hadamard form only the `n`-dimensional
/// driving motion `X` is integrated and the exposed state is `(X, H_n X)`.
#[derive(Debug, Clone)]
pub(crate) struct Walker<'a> {
    cov: &'a CovarianceSpec,
    kernel: HadamardKernel,
    base: Vec<f64>,
    noise: Vec<f64>,
    state: Vec<f64>,
}

impl<'a> Walker<'a> {
    pub(crate) fn new(cov: &'a CovarianceSpec, kernel: HadamardKernel) -> Self {
        let dim = cov.dim();
        let base_dim = cov.half_dim().unwrap_or(dim);
        Self {
            cov,
            kernel,
            base: vec![0.0; base_dim],
            noise: vec![0.0; base_dim],
            state: vec![0.0; dim],
        }
    }

    pub(crate) fn reset(&mut self) {
        self.base.iter_mut().for_each(|v| *v = 0.0);
        self.state.iter_mut().for_each(|v| *v = 0.0);
    }

    pub(crate) fn state(&self) -> &[f64] {
        &self.state
    }

    pub(crate) fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Result<()> {
        let scale = dt.sqrt();
        for g in self.noise.iter_mut() {
            *g = rng.sample::<f64, _>(StandardNormal) * scale;
        }
        match self.cov {
            CovarianceSpec::HadamardBlock { n } => {
                let n = *n;
                for (b, g) in self.base.iter_mut().zip(&self.noise) {
                    *b += g;
                }
                let (x, y) = self.state.split_at_mut(n);
                x.copy_from_slice(&self.base);
                y.copy_from_slice(&self.base);
                (self.kernel)(y)?;
            }
            CovarianceSpec::Dense(d) => {
                for (row, s) in d.factor.chunks_exact(d.dim).zip(self.state.iter_mut()) {
                    *s += wht::dot(row, &self.noise);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn in_box(&self, half_width: f64) -> bool {
        self.state.iter().all(|v| v.abs() <= half_width)
    }
}

/// How a simulated path ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEnd {
    pub tau: f64,
    pub hit_boundary: bool,
}

/// Reusable stopped-path simulator for one covariance and parameter set.
#[derive(Debug, Clone)]
pub struct PathSampler<'a> {
    params: SimParams,
    walker: Walker<'a>,
}

impl<'a> PathSampler<'a> {
    pub fn new(cov: &'a CovarianceSpec, params: SimParams) -> Self {
        Self::with_kernel(cov, params, wht::fwht_in_place)
    }

    /// Uses `kernel` in place of the normalized Hadamard transform.
    pub fn with_kernel(cov: &'a CovarianceSpec, params: SimParams, kernel: HadamardKernel) -> Self {
        Self {
            params,
            walker: Walker::new(cov, kernel),
        }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Simulates one path. `on_step(x, dt)` sees the state at the left end of
    /// every step taken before stopping; afterwards [`Self::state`] is `X_τ`.
    pub fn run<R, F>(&mut self, rng: &mut R, mut on_step: F) -> Result<PathEnd>
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64], f64),
    {
        self.walker.reset();
        let (full, rem) = self.params.grid();
        let steps = full + usize::from(rem > 0.0);
        for j in 0..steps {
            let dt = if j < full { self.params.delta } else { rem };
            on_step(self.walker.state(), dt);
            self.walker.step(dt, rng)?;
            if !self.walker.in_box(self.params.half_width) {
                let tau = if j + 1 == steps {
                    self.params.epsilon
                } else {
                    (j + 1) as f64 * self.params.delta
                };
                return Ok(PathEnd {
                    tau,
                    hit_boundary: true,
                });
            }
        }
        Ok(PathEnd {
            tau: self.params.epsilon,
            hit_boundary: false,
        })
    }

    pub fn state(&self) -> &[f64] {
        self.walker.state()
    }
}

/// Samples one stopped path and records every grid point.
pub fn sample_path<R: Rng + ?Sized>(cov: &CovarianceSpec, params: SimParams, rng: &mut R) -> Result<StoppedPath> {
    let mut sampler = PathSampler::new(cov, params);
    let dim = cov.dim();
    let mut points = Vec::new();
    let end = sampler.run(rng, |x, _| points.extend_from_slice(x))?;
    points.extend_from_slice(sampler.state());
    let times: Vec<f64> = params
        .grid_times()
        .into_iter()
        .take(points.len() / dim)
        .collect();
    Ok(StoppedPath {
        dim,
        times,
        points,
        tau: end.tau,
        hit_boundary: end.hit_boundary,
    })
}

/// Draws `X_ε ~ N(0, εΣ)` directly without checking intermediate exits.
/// `hit_boundary` only reports whether the endpoint lies outside the box.
pub fn sample_endpoint<R: Rng + ?Sized>(cov: &CovarianceSpec, epsilon: f64, rng: &mut R) -> Result<(Vec<f64>, bool)> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be non-negative")));
    }
    let mut walker = Walker::new(cov, wht::fwht_in_place);
    walker.step(epsilon, rng)?;
    let hit = !walker.in_box(BOX_HALF_WIDTH);
    Ok((walker.state, hit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RunningStats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_epsilon_values() {
        let e = default_epsilon(std::f64::consts::E.powi(2), 1).unwrap();
        assert!((e - 1.0 / 56.0).abs() < 1e-15);
        let n20 = (1u64 << 20) as f64;
        let e1 = default_epsilon(n20, 1).unwrap();
        assert!((e1 - 0.002_576).abs() < 1e-6);
        assert!((default_epsilon(n20, 2).unwrap() - e1 / 4.0).abs() < 1e-15);
        assert!(default_epsilon(1.0, 1).is_err());
        assert!(default_epsilon(8.0, 0).is_err());
    }

    #[test]
    fn hadamard_block_entries() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        assert_eq!(cov.dim(), 8);
        assert_eq!(cov.entry(1, 1), 1.0);
        assert_eq!(cov.entry(1, 2), 0.0);
        assert_eq!(cov.entry(0, 4), 0.5);
        assert_eq!(cov.entry(7, 2), -0.5);
        assert_eq!(cov.entry(5, 1), cov.entry(1, 5));
        assert_eq!(cov.gamma(), 0.5);
        assert!(CovarianceSpec::hadamard_block(3).is_err());
    }

    #[test]
    fn dense_validation() {
        let ok = CovarianceSpec::dense(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        assert_eq!(ok.gamma(), 0.3);
        assert!(CovarianceSpec::dense(&[vec![1.0, 1.5], vec![1.5, 1.0]]).is_err());
        assert!(CovarianceSpec::dense(&[vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        assert!(CovarianceSpec::dense(&[vec![2.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(CovarianceSpec::dense(&[vec![1.0, 0.0]]).is_err());
        // Singular but PSD.
        assert!(CovarianceSpec::dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_ok());
        if let CovarianceSpec::Dense(d) = ok {
            // F Fᵀ = Σ
            let f = &d.factor;
            let s01 = f[0] * f[2] + f[1] * f[3];
            assert!((s01 - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_path() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let params = SimParams::new(0.01, 0.01).unwrap();
        let path = sample_path(&cov, params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(path.times, vec![0.0, 0.01]);
        assert!(path.point(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grid_with_partial_step() {
        let params = SimParams::new(1.0, 0.3).unwrap();
        let times = params.grid_times();
        assert_eq!(times.len(), 5);
        assert_eq!(*times.last().unwrap(), 1.0);
        assert!((times[3] - 0.9).abs() < 1e-15);
        let exact = SimParams::with_default_delta(0.01).unwrap();
        assert_eq!(exact.grid(), (64, 0.0));
        assert_eq!(exact.grid_times().len(), 65);
    }

    #[test]
    fn path_invariants() {
        let cov = CovarianceSpec::hadamard_block(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = SimParams::new(0.2, 0.01).unwrap();
        let mut hits = 0;
        for _ in 0..300 {
            let path = sample_path(&cov, params, &mut rng).unwrap();
            assert!(path.tau <= params.epsilon);
            assert_eq!(*path.times.last().unwrap(), path.tau);
            let n_inside = path.len() - 1;
            for j in 0..n_inside {
                assert!(path.point(j).iter().all(|v| v.abs() <= 0.5));
            }
            if path.hit_boundary {
                hits += 1;
                assert!(path.endpoint().iter().any(|v| v.abs() > 0.5));
            } else {
                assert_eq!(path.tau, params.epsilon);
                assert!(path.endpoint().iter().all(|v| v.abs() <= 0.5));
            }
            // Exposed second half is H_n applied to the first half.
            let y = wht::fwht(&path.endpoint()[..8]).unwrap();
            for (a, b) in y.iter().zip(&path.endpoint()[8..]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(hits > 0 && hits < 300);
    }

    #[test]
    fn shrinking_the_box_never_delays_stopping() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let params = SimParams::new(0.3, 0.005).unwrap();
        for seed in 0..200 {
            let wide = sample_path(&cov, params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let narrow = sample_path(&cov, params.with_half_width(0.3), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(narrow.tau <= wide.tau);
        }
    }

    #[test]
    fn longer_horizon_never_lowers_exit_indicator() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        for seed in 0..200 {
            let short = SimParams::new(0.05, 0.005).unwrap();
            let long = SimParams::new(0.2, 0.005).unwrap();
            let a = sample_path(&cov, short, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = sample_path(&cov, long, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(!a.hit_boundary || b.hit_boundary);
        }
    }

    #[test]
    fn integrate_examples() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let params = SimParams::new(0.3, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let path = sample_path(&cov, params, &mut rng).unwrap();
            assert!((integrate_along_path(&path, |_| 1.0) - path.tau).abs() < 1e-12);
            assert!((integrate_along_path(&path, |_| 2.5) - 2.5 * path.tau).abs() < 1e-12);
            // ½⟨Σ, Hess(x_0 y_0)⟩ = Σ_{0,n}, a constant.
            let s = cov.entry(0, 4);
            assert!((integrate_along_path(&path, |_| s) - s * path.tau).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoint_sampler_small_horizon() {
        let cov = CovarianceSpec::hadamard_block(16).unwrap();
        let (x, hit) = sample_endpoint(&cov, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
        assert!(!hit);
    }

    #[test]
    fn endpoint_chi_square_mean() {
        let n = 64;
        let eps = 0.01;
        let cov = CovarianceSpec::hadamard_block(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stats: RunningStats = (0..10_000)
            .map(|_| {
                let (z, _) = sample_endpoint(&cov, eps, &mut rng).unwrap();
                z[..n].iter().map(|v| v * v).sum::<f64>() / n as f64
            })
            .collect();
        assert!((stats.mean() - eps).abs() < 4.0 * stats.std_error());
    }

    #[test]
    fn dense_increments_have_requested_covariance() {
        let cov = CovarianceSpec::dense(&[
            vec![1.0, 0.3, -0.2],
            vec![0.3, 1.0, 0.1],
            vec![-0.2, 0.1, 1.0],
        ])
        .unwrap();
        let eps = 0.04;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let samples: Vec<Vec<f64>> = (0..20_000).map(|_| sample_endpoint(&cov, eps, &mut rng).unwrap().0).collect();
        for i in 0..3 {
            let mean: RunningStats = samples.iter().map(|z| z[i]).collect();
            assert!(mean.mean().abs() < 4.0 * mean.std_error());
            for j in 0..3 {
                let s: RunningStats = samples.iter().map(|z| z[i] * z[j]).collect();
                assert!((s.mean() - eps * cov.entry(i, j)).abs() < 4.0 * s.std_error(), "({i},{j})");
            }
        }
    }
}
