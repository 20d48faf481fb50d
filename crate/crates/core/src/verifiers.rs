//! Monte Carlo verification of the stochastic identities behind the
//! Forrelation advantage bound.
//!
//! * [`dynkin_check`]: `E[f(X_τ)] - f(0) = E ∫_0^τ ½⟨Σ, ∇²f(X_s)⟩ ds`.
//! * [`second_moment_check`]: the bilinear special case `E[X_τ X_τᵀ] = Σ E[τ]`.
//! * [`difference_identity_check`]: `E f(D_even) - E f(D_odd) = 2 E_S[(-1)^{|S|} f(D_S)]`.
//! * [`advantage_estimate`]: `|E_S[(-1)^{|S|} f(D_S)]| ≤ (εγ)^k L`.
//! * [`product_monomial_closed_form`]: exact advantage of block-product monomials.
//!
//! All estimators reuse shared samples across the quantities they compare.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forrelation::{self, BlockSampler, Parity};
use crate::polynomial::{DenseEvaluator, MultilinearPoly, Subset};
use crate::stats::{stream_id, Estimate, RunContext};
use crate::stochastic::{CovarianceSpec, SimParams, Walker};
use crate::wht::{self, HadamardKernel};

/// Tolerance predicate of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    /// Pass iff `|lhs - rhs| ≤ tolerance`.
    Equal { tolerance: f64 },
    /// Pass iff `|lhs| ≤ rhs + slack`.
    AbsAtMost { slack: f64 },
}

impl Check {
    pub fn holds(&self, lhs: f64, rhs: f64) -> bool {
        match *self {
            Check::Equal { tolerance } => (lhs - rhs).abs() <= tolerance,
            Check::AbsAtMost { slack } => lhs.abs() <= rhs + slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportParams {
    pub seed: u64,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub n_dim: usize,
    pub k: usize,
}

/// Outcome of one verification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifierReport {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub check: Check,
    pub trials: u64,
    pub verdict: bool,
    pub params: ReportParams,
    /// Auxiliary quantities (refinement shifts, bounds, level weights).
    pub notes: Vec<(String, f64)>,
}

impl VerifierReport {
    fn new(name: String, lhs: Estimate, rhs: Estimate, check: Check, trials: u64, params: ReportParams) -> Self {
        Self {
            verdict: check.holds(lhs.value, rhs.value),
            name,
            lhs,
            rhs,
            check,
            trials,
            params,
            notes: Vec::new(),
        }
    }

    pub fn note(&self, key: &str) -> Option<f64> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// A multilinear polynomial acting on selected coordinates of `R^N`:
/// variable `i` of `poly` reads coordinate `coords[i]`.
///
/// This keeps subset algebra on small bitmasks while letting test
/// polynomials live in high-dimensional state spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPoly {
    poly: MultilinearPoly,
    coords: Vec<usize>,
}

impl EmbeddedPoly {
    pub fn new(poly: MultilinearPoly, coords: Vec<usize>) -> Result<Self> {
        if coords.len() != poly.num_vars() {
            return Err(Error::DimensionMismatch {
                expected: poly.num_vars(),
                found: coords.len(),
            });
        }
        let mut sorted = coords.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("embedding coordinates must be distinct"));
        }
        Ok(Self { poly, coords })
    }

    /// Variable `i` reads coordinate `i`.
    pub fn identity(poly: MultilinearPoly) -> Self {
        let coords = (0..poly.num_vars()).collect();
        Self { poly, coords }
    }

    /// `c · ∏_i z_{coords[i]}`.
    pub fn monomial(coords: Vec<usize>, c: f64) -> Result<Self> {
        let m = coords.len();
        Self::new(MultilinearPoly::monomial(m, Subset::full(m), c)?, coords)
    }

    pub fn poly(&self) -> &MultilinearPoly {
        &self.poly
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    /// Smallest ambient dimension that contains every coordinate.
    pub fn min_dim(&self) -> usize {
        self.coords.iter().max().map_or(0, |c| c + 1)
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        if z.len() < self.min_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.min_dim(),
                found: z.len(),
            });
        }
        let local: Vec<f64> = self.coords.iter().map(|&c| z[c]).collect();
        self.poly.evaluate(&local)
    }

    /// `z ↦ ½⟨Σ, ∇²f(z)⟩ = Σ_{i<j} Σ_{ij} ∂_{ij} f(z)`, assembled from exact
    /// second partial derivatives (the diagonal of `∇²f` vanishes).
    pub fn generator(&self, cov: &CovarianceSpec) -> Result<Generator> {
        if self.min_dim() > cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                found: self.min_dim(),
            });
        }
        let m = self.poly.num_vars();
        let mut terms: Vec<(Subset, f64)> = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                let sigma = cov.entry(self.coords[i], self.coords[j]);
                if sigma == 0.0 {
                    continue;
                }
                let d = self.poly.partial_derivative(Subset::from_indices([i, j]));
                terms.extend(d.terms().map(|(s, c)| (s, sigma * c)));
            }
        }
        Ok(Generator {
            poly: EmbeddedPoly {
                poly: MultilinearPoly::from_coeffs(m, terms)?,
                coords: self.coords.clone(),
            },
        })
    }

    fn evaluator(&self) -> Result<LocalEvaluator> {
        LocalEvaluator::new(self)
    }
}

/// `½⟨Σ, ∇²f⟩` as a multilinear polynomial on the same coordinates as `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    poly: EmbeddedPoly,
}

impl Generator {
    pub fn as_poly(&self) -> &EmbeddedPoly {
        &self.poly
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        self.poly.evaluate(z)
    }
}

/// Sparse evaluation with a reusable gather buffer.
#[derive(Debug, Clone)]
struct LocalEvaluator {
    terms: Vec<(Subset, f64)>,
    coords: Vec<usize>,
    local: Vec<f64>,
}

impl LocalEvaluator {
    fn new(p: &EmbeddedPoly) -> Result<Self> {
        Ok(Self {
            terms: p.poly.terms().collect(),
            coords: p.coords.clone(),
            local: vec![0.0; p.coords.len()],
        })
    }

    fn eval(&mut self, z: &[f64]) -> f64 {
        for (l, &c) in self.local.iter_mut().zip(&self.coords) {
            *l = z[c];
        }
        self.terms.iter().map(|(s, c)| c * s.monomial(&self.local)).sum()
    }
}

fn check_dims(polys: &[EmbeddedPoly], dim: usize) -> Result<()> {
    for p in polys {
        if p.min_dim() > dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.min_dim(),
            });
        }
    }
    Ok(())
}

/// [`dynkin_check`] with the default Hadamard kernel.
pub fn dynkin_check(
    polys: &[EmbeddedPoly],
    cov: &CovarianceSpec,
    params: SimParams,
    trials: u64,
    ctx: &RunContext,
) -> Result<Vec<VerifierReport>> {
    dynkin_check_with_kernel(polys, cov, params, trials, ctx, wht::fwht_in_place)
}

/// Estimates both sides of Dynkin's formula for each polynomial on shared
/// stopped paths.
///
/// Every path is simulated on the `δ/2` grid and observed on both the `δ`
/// and `δ/2` grids, so the two resolutions share their Brownian increments.
/// The verdict at resolution `δ` is
/// `|LHS - RHS| ≤ 3 (SE_LHS + SE_RHS) + 2 |shift|`, where `shift` is the
/// change of `LHS - RHS` under halving `δ` (first-order bias extrapolation).
pub fn dynkin_check_with_kernel(
    polys: &[EmbeddedPoly],
    cov: &CovarianceSpec,
    params: SimParams,
    trials: u64,
    ctx: &RunContext,
    kernel: HadamardKernel,
) -> Result<Vec<VerifierReport>> {
    check_dims(polys, cov.dim())?;
    let generators: Vec<Generator> = polys.iter().map(|p| p.generator(cov)).collect::<Result<_>>()?;
    let p_count = polys.len();
    // Per polynomial: L_c, R_c, L_f, R_f, (L-R)_c, (L-R)_f. Then τ_c, τ_f.
    const PER: usize = 6;
    let metrics = PER * p_count + 2;
    let (full, rem) = params.grid();
    let steps = full + usize::from(rem > 0.0);

    let stats = ctx.run_trials(stream_id("dynkin"), trials, metrics, |rng, _, out| {
        let mut walker = Walker::new(cov, kernel);
        let mut fs: Vec<LocalEvaluator> = polys.iter().map(|p| p.evaluator()).collect::<Result<_>>()?;
        let mut gs: Vec<LocalEvaluator> = generators.iter().map(|g| g.poly.evaluator()).collect::<Result<_>>()?;
        let origin = vec![0.0; cov.dim()];
        let f0: Vec<f64> = fs.iter_mut().map(|f| f.eval(&origin)).collect();
        let mut rc = vec![0.0; p_count];
        let mut rf = vec![0.0; p_count];
        let mut lc = vec![0.0; p_count];
        let mut lf = vec![0.0; p_count];
        let mut coarse_alive = true;
        let mut fine_alive = true;
        let mut tau_c = params.epsilon;
        let mut tau_f = params.epsilon;
        let mut t = 0.0;
        let mut gvals = vec![0.0; p_count];

        for j in 0..steps {
            let dt = if j < full { params.delta } else { rem };
            for half in 0..2 {
                if fine_alive || (coarse_alive && half == 0) {
                    for (g, v) in gs.iter_mut().zip(gvals.iter_mut()) {
                        *v = g.eval(walker.state());
                    }
                }
                if half == 0 && coarse_alive {
                    for (r, v) in rc.iter_mut().zip(&gvals) {
                        *r += v * dt;
                    }
                }
                if fine_alive {
                    for (r, v) in rf.iter_mut().zip(&gvals) {
                        *r += v * dt / 2.0;
                    }
                }
                walker.step(dt / 2.0, rng)?;
                t += dt / 2.0;
                if fine_alive && !walker.in_box(params.half_width) {
                    fine_alive = false;
                    tau_f = if j + 1 == steps && half == 1 { params.epsilon } else { t };
                    for (l, f) in lf.iter_mut().zip(fs.iter_mut()) {
                        *l = f.eval(walker.state());
                    }
                }
            }
            if coarse_alive && !walker.in_box(params.half_width) {
                coarse_alive = false;
                tau_c = if j + 1 == steps { params.epsilon } else { t };
                for (l, f) in lc.iter_mut().zip(fs.iter_mut()) {
                    *l = f.eval(walker.state());
                }
            }
            if !coarse_alive {
                break;
            }
        }
        if coarse_alive {
            for (l, f) in lc.iter_mut().zip(fs.iter_mut()) {
                *l = f.eval(walker.state());
            }
        }
        if fine_alive {
            for (l, f) in lf.iter_mut().zip(fs.iter_mut()) {
                *l = f.eval(walker.state());
            }
        }
        for i in 0..p_count {
            let o = &mut out[PER * i..PER * (i + 1)];
            o[0] = lc[i] - f0[i];
            o[1] = rc[i];
            o[2] = lf[i] - f0[i];
            o[3] = rf[i];
            o[4] = o[0] - o[1];
            o[5] = o[2] - o[3];
        }
        out[PER * p_count] = tau_c;
        out[PER * p_count + 1] = tau_f;
        Ok(())
    })?;

    let tau = stats[PER * p_count];
    let report_params = ReportParams {
        seed: ctx.seed,
        epsilon: params.epsilon,
        delta: Some(params.delta),
        n_dim: cov.dim(),
        k: 1,
    };
    Ok((0..p_count)
        .map(|i| {
            let s = &stats[PER * i..PER * (i + 1)];
            let (lhs, rhs) = (s[0].estimate(), s[1].estimate());
            let shift = s[4].mean() - s[5].mean();
            let allowance = 2.0 * shift.abs();
            let check = Check::Equal {
                tolerance: 3.0 * (lhs.se + rhs.se) + allowance,
            };
            let mut r = VerifierReport::new(format!("dynkin[{i}]"), lhs, rhs, check, trials, report_params);
            r.notes = vec![
                ("lhs_refined".into(), s[2].mean()),
                ("rhs_refined".into(), s[3].mean()),
                ("lhs_shift".into(), s[0].mean() - s[2].mean()),
                ("rhs_shift".into(), s[1].mean() - s[3].mean()),
                ("bias_allowance".into(), allowance),
                ("mean_tau".into(), tau.mean()),
                ("mean_tau_se".into(), tau.std_error()),
            ];
            r
        })
        .collect())
}

/// `E[X_i X_j]` at `τ` against `Σ_ij E[τ]` for each `(i, j)`, within four
/// standard errors of the per-path difference.
pub fn second_moment_check(
    cov: &CovarianceSpec,
    params: SimParams,
    entries: &[(usize, usize)],
    trials: u64,
    ctx: &RunContext,
) -> Result<Vec<VerifierReport>> {
    let dim = cov.dim();
    if let Some(&(i, j)) = entries.iter().find(|(i, j)| *i >= dim || *j >= dim) {
        return Err(Error::invalid(format!("entry ({i}, {j}) outside dimension {dim}")));
    }
    let sigma: Vec<f64> = entries.iter().map(|&(i, j)| cov.entry(i, j)).collect();
    let e = entries.len();
    let stats = ctx.run_trials(stream_id("second-moment"), trials, 3 * e, |rng, _, out| {
        let mut sampler = crate::stochastic::PathSampler::new(cov, params);
        let end = sampler.run(rng, |_, _| {})?;
        let x = sampler.state();
        for (q, &(i, j)) in entries.iter().enumerate() {
            out[3 * q] = x[i] * x[j];
            out[3 * q + 1] = sigma[q] * end.tau;
            out[3 * q + 2] = out[3 * q] - out[3 * q + 1];
        }
        Ok(())
    })?;
    let report_params = ReportParams {
        seed: ctx.seed,
        epsilon: params.epsilon,
        delta: Some(params.delta),
        n_dim: dim,
        k: 1,
    };
    Ok(entries
        .iter()
        .enumerate()
        .map(|(q, &(i, j))| {
            let diff = stats[3 * q + 2];
            let check = Check::Equal {
                tolerance: 4.0 * diff.std_error(),
            };
            let mut r = VerifierReport::new(
                format!("second-moment[{i},{j}]"),
                stats[3 * q].estimate(),
                stats[3 * q + 1].estimate(),
                check,
                trials,
                report_params,
            );
            r.notes = vec![("sigma".into(), sigma[q]), ("diff_se".into(), diff.std_error())];
            r
        })
        .collect())
}

/// Per-trial state for estimators that evaluate `f(X^S)` for every `S ⊆ [k]`.
struct SubsetEvaluator {
    dense: DenseEvaluator,
    coords: Vec<usize>,
    /// Block index of each local variable.
    blocks: Vec<usize>,
    local: Vec<f64>,
    masked: Vec<f64>,
}

impl SubsetEvaluator {
    fn new(f: &EmbeddedPoly, block_dim: usize) -> Result<Self> {
        Ok(Self {
            dense: DenseEvaluator::new(&f.poly)?,
            coords: f.coords.clone(),
            blocks: f.coords.iter().map(|c| c / block_dim).collect(),
            local: vec![0.0; f.coords.len()],
            masked: vec![0.0; f.coords.len()],
        })
    }

    fn load(&mut self, z: &[f64]) {
        for (l, &c) in self.local.iter_mut().zip(&self.coords) {
            *l = z[c];
        }
    }

    /// `f(X^S)` for the loaded full sample.
    fn eval_on(&mut self, s: Subset) -> f64 {
        for ((m, l), b) in self.masked.iter_mut().zip(&self.local).zip(&self.blocks) {
            *m = if s.contains(*b) { *l } else { 0.0 };
        }
        self.dense.evaluate(&self.masked)
    }

    /// `2^{-k} Σ_S (-1)^{|S|} f(X^S)` and the even and odd means.
    fn stratified(&mut self, k: usize) -> (f64, f64, f64) {
        let mut even = 0.0;
        let mut odd = 0.0;
        for s in 0..1u64 << k {
            let v = self.eval_on(Subset(s));
            if s.count_ones() % 2 == 0 {
                even += v;
            } else {
                odd += v;
            }
        }
        let half = (1u64 << (k - 1)) as f64;
        ((even - odd) / (2.0 * half), even / half, odd / half)
    }
}

fn full_sample<R: Rng + ?Sized>(
    k: usize,
    cov: &CovarianceSpec,
    sampler: &BlockSampler,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let sample = forrelation::sample_d_s(k, Subset::full(k), cov, sampler, rng)?;
    let mean_tau = (0..k).map(|i| sample.tau(i)).sum::<f64>() / k as f64;
    Ok((sample.values().to_vec(), mean_tau))
}

fn check_block_polys(fs: &[EmbeddedPoly], k: usize, cov: &CovarianceSpec) -> Result<()> {
    if k == 0 || k > 16 {
        return Err(Error::invalid(format!("k = {k} must lie in 1..=16")));
    }
    check_dims(fs, k * cov.dim())
}

/// Stratified estimate of the advantage `E_{S~[k]}[(-1)^{|S|} f(D_S)]`.
///
/// Each trial draws one stopped endpoint per block and evaluates `f` on all
/// `2^k` masked copies `X^S`. The verdict is `|advantage| ≤ (εγ)^k L + 3 SE`,
/// with `L` the largest level-`2k` weight over all restrictions of `f`
/// unless `l_override` supplies it.
pub fn advantage_estimate(
    fs: &[EmbeddedPoly],
    k: usize,
    cov: &CovarianceSpec,
    sampler: &BlockSampler,
    trials: u64,
    ctx: &RunContext,
    l_override: Option<f64>,
) -> Result<Vec<VerifierReport>> {
    check_block_polys(fs, k, cov)?;
    let ls: Vec<f64> = match l_override {
        Some(l) => vec![l; fs.len()],
        None => fs
            .iter()
            .map(|f| f.poly.sup_restricted_level_weight(2 * k))
            .collect::<Result<_>>()?,
    };
    let dim = cov.dim();
    let count = fs.len();
    let stats = ctx.run_trials(stream_id("advantage"), trials, count + 1, |rng, _, out| {
        let mut evals: Vec<SubsetEvaluator> = fs.iter().map(|f| SubsetEvaluator::new(f, dim)).collect::<Result<_>>()?;
        let (z, mean_tau) = full_sample(k, cov, sampler, rng)?;
        for (o, e) in out.iter_mut().zip(evals.iter_mut()) {
            e.load(&z);
            *o = e.stratified(k).0;
        }
        out[count] = mean_tau;
        Ok(())
    })?;
    let epsilon = sampler.epsilon();
    let scale = (epsilon * cov.gamma()).powi(k as i32);
    let report_params = ReportParams {
        seed: ctx.seed,
        epsilon,
        delta: match sampler {
            BlockSampler::Path(p) => Some(p.delta),
            BlockSampler::Endpoint { .. } => None,
        },
        n_dim: dim,
        k,
    };
    let tau = stats[count];
    Ok((0..count)
        .map(|i| {
            let adv = stats[i].estimate();
            let bound = scale * ls[i];
            let check = Check::AbsAtMost { slack: 3.0 * adv.se };
            let mut r = VerifierReport::new(
                format!("advantage[{i}]"),
                adv,
                Estimate::exact(bound),
                check,
                trials,
                report_params,
            );
            r.notes = vec![
                ("level_weight_sup".into(), ls[i]),
                ("eps_gamma_pow_k".into(), scale),
                ("mean_tau".into(), tau.mean()),
                ("mean_tau_se".into(), tau.std_error()),
            ];
            r
        })
        .collect())
}

/// Checks `E f(D_even^k) - E f(D_odd^k) = 2 E_{S~[k]}[(-1)^{|S|} f(D_S)]`.
///
/// The left side is estimated from independent draws of `D_even^k` and
/// `D_odd^k`; the right side from the stratified all-subsets estimator. The
/// stratified version of the left side is also computed on the same samples,
/// where the identity must hold per sample to rounding error (note
/// `stratified_max_abs_gap`).
pub fn difference_identity_check(
    fs: &[EmbeddedPoly],
    k: usize,
    cov: &CovarianceSpec,
    sampler: &BlockSampler,
    trials: u64,
    ctx: &RunContext,
) -> Result<Vec<VerifierReport>> {
    check_block_polys(fs, k, cov)?;
    let dim = cov.dim();
    let count = fs.len();
    const PER: usize = 3;
    let stats = ctx.run_trials(stream_id("difference-identity"), trials, PER * count, |rng, _, out| {
        let mut evals: Vec<SubsetEvaluator> = fs.iter().map(|f| SubsetEvaluator::new(f, dim)).collect::<Result<_>>()?;
        let (z, _) = full_sample(k, cov, sampler, rng)?;
        let even = forrelation::sample_d_parity(k, Parity::Even, cov, sampler, rng)?;
        let odd = forrelation::sample_d_parity(k, Parity::Odd, cov, sampler, rng)?;
        for (i, e) in evals.iter_mut().enumerate() {
            e.load(&z);
            let (adv, even_mean, odd_mean) = e.stratified(k);
            e.load(even.values());
            let f_even = e.eval_on(Subset::full(k));
            e.load(odd.values());
            let f_odd = e.eval_on(Subset::full(k));
            out[PER * i] = f_even - f_odd;
            out[PER * i + 1] = 2.0 * adv;
            out[PER * i + 2] = (even_mean - odd_mean) - 2.0 * adv;
        }
        Ok(())
    })?;
    let report_params = ReportParams {
        seed: ctx.seed,
        epsilon: sampler.epsilon(),
        delta: match sampler {
            BlockSampler::Path(p) => Some(p.delta),
            BlockSampler::Endpoint { .. } => None,
        },
        n_dim: dim,
        k,
    };
    Ok((0..count)
        .map(|i| {
            let s = &stats[PER * i..PER * (i + 1)];
            let (lhs, rhs) = (s[0].estimate(), s[1].estimate());
            let gap = s[2].mean().abs() + s[2].variance().sqrt();
            let check = Check::Equal {
                tolerance: 3.0 * (lhs.se + rhs.se),
            };
            let mut r = VerifierReport::new(format!("difference-identity[{i}]"), lhs, rhs, check, trials, report_params);
            r.verdict &= gap <= 1e-12;
            r.notes = vec![("stratified_max_abs_gap".into(), gap)];
            r
        })
        .collect())
}

/// `∏_i x^{(i)}_{a_i} y^{(i)}_{b_i}` over `k` blocks of width `2n`, as an
/// embedded polynomial on `kN` coordinates.
pub fn product_monomial(pairs: &[(usize, usize)], n: usize) -> Result<EmbeddedPoly> {
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= n || *b >= n) {
        return Err(Error::invalid(format!("pair ({a}, {b}) outside half-dimension {n}")));
    }
    let coords = pairs
        .iter()
        .enumerate()
        .flat_map(|(i, &(a, b))| [2 * n * i + a, 2 * n * i + n + b])
        .collect();
    EmbeddedPoly::monomial(coords, 1.0)
}

/// `(-1/2)^k ∏_i Σ_{a_i, n+b_i} · E[τ]^k` for the product monomial of
/// [`product_monomial`]. Only `S = [k]` contributes because the monomial
/// vanishes whenever a block is zero, and each block contributes
/// `E[x_a y_b] = Σ_{a,n+b} E[τ]`. The standard error of `E[τ]` is carried
/// through to first order.
pub fn product_monomial_closed_form(pairs: &[(usize, usize)], cov: &CovarianceSpec, expected_tau: Estimate) -> Result<Estimate> {
    let n = cov
        .half_dim()
        .ok_or_else(|| Error::invalid("product monomials need the Hadamard-block covariance"))?;
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= n || *b >= n) {
        return Err(Error::invalid(format!("pair ({a}, {b}) outside half-dimension {n}")));
    }
    let k = pairs.len() as i32;
    let sigma: f64 = pairs.iter().map(|&(a, b)| cov.entry(a, n + b)).product();
    let value = (-0.5f64).powi(k) * sigma * expected_tau.value.powi(k);
    let se = if k == 0 {
        0.0
    } else {
        ((-0.5f64).powi(k) * sigma * k as f64 * expected_tau.value.powi(k - 1)).abs() * expected_tau.se
    };
    Ok(Estimate { value, se })
}

/// Stratified advantage of a product monomial compared with its closed form,
/// using the same trials' `E[τ]`. Passes within three combined standard errors.
pub fn product_monomial_check(
    pairs: &[(usize, usize)],
    cov: &CovarianceSpec,
    sampler: &BlockSampler,
    trials: u64,
    ctx: &RunContext,
) -> Result<VerifierReport> {
    let n = cov
        .half_dim()
        .ok_or_else(|| Error::invalid("product monomials need the Hadamard-block covariance"))?;
    let k = pairs.len();
    let f = product_monomial(pairs, n)?;
    let adv = advantage_estimate(std::slice::from_ref(&f), k, cov, sampler, trials, ctx, Some(1.0))?
        .pop()
        .expect("one report per polynomial");
    let tau = Estimate {
        value: adv.note("mean_tau").unwrap_or(f64::NAN),
        se: adv.note("mean_tau_se").unwrap_or(f64::NAN),
    };
    let closed = product_monomial_closed_form(pairs, cov, tau)?;
    let check = Check::Equal {
        tolerance: 3.0 * (adv.lhs.se + closed.se),
    };
    let mut r = VerifierReport::new(format!("product-monomial[k={k}]"), adv.lhs, closed, check, trials, adv.params);
    r.notes = vec![("mean_tau".into(), tau.value), ("advantage_bound".into(), adv.rhs.value)];
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> RunContext {
        RunContext::sequential(7)
    }

    #[test]
    fn generator_of_bilinear_monomial_is_constant() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let p = EmbeddedPoly::monomial(vec![1, 4 + 3], 2.0).unwrap();
        let g = p.generator(&cov).unwrap();
        let z = [0.1, -0.3, 0.2, 0.05, 0.4, -0.1, 0.0, 0.3];
        assert!((g.evaluate(&z).unwrap() - 2.0 * cov.entry(1, 7)).abs() < 1e-15);
    }

    #[test]
    fn generator_matches_finite_differences() {
        let cov = CovarianceSpec::dense(&[
            vec![1.0, 0.3, -0.2, 0.1],
            vec![0.3, 1.0, 0.25, 0.0],
            vec![-0.2, 0.25, 1.0, 0.15],
            vec![0.1, 0.0, 0.15, 1.0],
        ])
        .unwrap();
        let poly = MultilinearPoly::from_coeffs(
            4,
            [
                (Subset::from_indices([0, 1, 2, 3]), 1.5),
                (Subset::from_indices([0, 2]), -0.7),
                (Subset::from_indices([1]), 0.3),
            ],
        )
        .unwrap();
        let p = EmbeddedPoly::identity(poly);
        let g = p.generator(&cov).unwrap();
        let z = [0.2, -0.1, 0.35, 0.4];
        let h = 1e-4;
        let mut fd = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let at = |di: f64, dj: f64| {
                    let mut w = z;
                    w[i] += di;
                    w[j] += dj;
                    p.evaluate(&w).unwrap()
                };
                let d2 = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
                fd += 0.5 * cov.entry(i, j) * d2;
            }
        }
        assert!((g.evaluate(&z).unwrap() - fd).abs() < 1e-6);
    }

    #[test]
    fn embedding_rejects_bad_coords() {
        let poly = MultilinearPoly::monomial(2, Subset::full(2), 1.0).unwrap();
        assert!(EmbeddedPoly::new(poly.clone(), vec![3]).is_err());
        assert!(EmbeddedPoly::new(poly, vec![3, 3]).is_err());
        let cov = CovarianceSpec::hadamard_block(2).unwrap();
        let far = EmbeddedPoly::monomial(vec![0, 9], 1.0).unwrap();
        assert!(far.generator(&cov).is_err());
    }

    #[test]
    fn dynkin_linear_polynomial_is_a_martingale() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let params = SimParams::with_default_delta(0.2).unwrap();
        let p = EmbeddedPoly::new(
            MultilinearPoly::from_coeffs(3, [(Subset::singleton(0), 1.0), (Subset::singleton(2), -2.0)]).unwrap(),
            vec![0, 3, 6],
        )
        .unwrap();
        let r = dynkin_check(&[p], &cov, params, 4000, &ctx()).unwrap().pop().unwrap();
        assert_eq!(r.rhs.value, 0.0);
        assert!(r.lhs.value.abs() < 4.0 * r.lhs.se);
        assert!(r.verdict, "{r:?}");
    }

    #[test]
    fn dynkin_dense_bilinear_closed_form() {
        let cov = CovarianceSpec::dense(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let params = SimParams::with_default_delta(0.02).unwrap();
        let p = EmbeddedPoly::monomial(vec![0, 1], 1.0).unwrap();
        let r = dynkin_check(&[p], &cov, params, 20_000, &ctx()).unwrap().pop().unwrap();
        assert!(r.verdict, "{r:?}");
        // The generator is the constant Σ_12, so RHS = 0.3 E[τ] ≤ 0.3 ε.
        let mean_tau = r.note("mean_tau").unwrap();
        assert!((r.rhs.value - 0.3 * mean_tau).abs() < 1e-12);
        assert!(mean_tau <= 0.02 + 1e-15);
        assert!((r.lhs.value - 0.006).abs() < 0.006 - 0.3 * mean_tau + 3.0 * (r.lhs.se + r.rhs.se));
    }

    #[test]
    fn second_moment_small() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let params = SimParams::with_default_delta(0.05).unwrap();
        let reports = second_moment_check(&cov, params, &[(0, 4), (1, 1), (2, 7), (3, 5)], 5000, &ctx()).unwrap();
        for r in reports {
            assert!(r.verdict, "{r:?}");
        }
    }

    #[test]
    fn constant_polynomial_has_zero_advantage() {
        let cov = CovarianceSpec::hadamard_block(2).unwrap();
        let sampler = BlockSampler::Path(SimParams::with_default_delta(0.05).unwrap());
        for k in 1..=3 {
            let f = EmbeddedPoly::identity(MultilinearPoly::constant(4 * k, 0.7).unwrap());
            let r = advantage_estimate(&[f], k, &cov, &sampler, 300, &ctx(), None).unwrap().pop().unwrap();
            assert!(r.lhs.value.abs() < 1e-15);
            assert_eq!(r.rhs.value, 0.0);
            assert!(r.verdict);
        }
    }

    #[test]
    fn closed_form_examples() {
        let cov = CovarianceSpec::hadamard_block(2).unwrap();
        let tau = Estimate { value: 0.05, se: 0.0 };
        let v = product_monomial_closed_form(&[(0, 0)], &cov, tau).unwrap();
        assert!((v.value + 0.5 * 0.05 / 2f64.sqrt()).abs() < 1e-15);
        // Blocks are independent, so the closed form factors over k.
        let one = product_monomial_closed_form(&[(1, 1)], &cov, tau).unwrap().value;
        let two = product_monomial_closed_form(&[(1, 1), (1, 1)], &cov, tau).unwrap().value;
        assert!((two - one * one).abs() < 1e-15);
        let dense = CovarianceSpec::dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(product_monomial_closed_form(&[(0, 0)], &dense, tau).is_err());
    }

    #[test]
    fn product_monomial_k1_matches_closed_form() {
        let cov = CovarianceSpec::hadamard_block(2).unwrap();
        let sampler = BlockSampler::Path(SimParams::with_default_delta(0.05).unwrap());
        let r = product_monomial_check(&[(0, 0)], &cov, &sampler, 20_000, &ctx()).unwrap();
        assert!(r.verdict, "{r:?}");
    }

    #[test]
    fn difference_identity_small() {
        let cov = CovarianceSpec::hadamard_block(2).unwrap();
        let sampler = BlockSampler::Path(SimParams::with_default_delta(0.05).unwrap());
        let f = product_monomial(&[(0, 1), (1, 0)], 2).unwrap();
        let r = difference_identity_check(&[f], 2, &cov, &sampler, 5000, &ctx()).unwrap().pop().unwrap();
        assert!(r.verdict, "{r:?}");
        assert!(r.note("stratified_max_abs_gap").unwrap() < 1e-12);
    }
}
