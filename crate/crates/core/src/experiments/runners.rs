use rand::Rng;

use crate::error::{Error, Result};
use crate::forrelation::{self, BlockSampler, Parity, Trit};
use crate::polynomial::{MultilinearPoly, Subset};
use crate::stats::{stream_id, Estimate, RunContext};
use crate::stochastic::{CovarianceSpec, SimParams};
use crate::verifiers::{self, EmbeddedPoly};
use crate::wht::{self, HadamardKernel};

use super::config::{ExperimentConfig, ExperimentKind, SamplerKind, Thresholds};
use super::suite;
use super::table::{Comparator, ResultRow, ResultTable};

/// Number of random Boolean functions in a standalone advantage run.
const ADVANTAGE_RANDOM_FUNCTIONS: usize = 30;

/// Runs the experiment named in `config`.
pub fn run(config: &ExperimentConfig) -> Result<ResultTable> {
    match config.experiment {
        ExperimentKind::Concentration => run_concentration(config),
        ExperimentKind::TauTail => run_tau_tail(config),
        ExperimentKind::Rounding => run_rounding(config),
        ExperimentKind::Dynkin => run_dynkin(config),
        ExperimentKind::Advantage => run_advantage(config),
        ExperimentKind::Suite => suite::run_suite(config),
    }
}

pub fn run_concentration(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let mut table = ResultTable::new(config)?;
    table.extend(concentration_rows(
        config.block_dim,
        config.k,
        &config.block_sampler()?,
        config.trials,
        &config.thresholds,
        &config.context(),
    )?);
    Ok(table)
}

pub fn run_rounding(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let mut table = ResultTable::new(config)?;
    table.extend(rounding_rows(
        config.block_dim,
        &config.block_sampler()?,
        config.trials,
        config.thresholds.rounding,
        &config.context(),
    )?);
    Ok(table)
}

pub fn run_tau_tail(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    if config.sampler == Some(SamplerKind::Endpoint) {
        return Err(Error::invalid("the tau tail needs full paths"));
    }
    let mut table = ResultTable::new(config)?;
    table.extend(tau_tail_rows(
        config.block_dim,
        config.k,
        config.sim_params()?,
        config.trials,
        config.thresholds.early_stop,
        &config.context(),
    )?);
    Ok(table)
}

pub fn run_dynkin(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let cov = CovarianceSpec::hadamard_block(config.block_dim / 2)?;
    let mut table = ResultTable::new(config)?;
    table.extend(dynkin_rows(
        "dynkin",
        &cov,
        &bilinear_family(config.block_dim / 2)?,
        config.sim_params()?,
        config.trials,
        wht::fwht_in_place,
        &config.context(),
    )?);
    Ok(table)
}

pub fn run_advantage(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let ctx = config.context();
    let m = config.k * config.block_dim;
    let mut fs = random_boolean_functions(m, ADVANTAGE_RANDOM_FUNCTIONS, &ctx.derive("advantage/functions"))?;
    fs.extend(named_functions(m)?);
    let mut table = ResultTable::new(config)?;
    table.extend(advantage_rows(
        "advantage",
        config.k,
        config.block_dim,
        &fs,
        &config.block_sampler()?,
        config.trials,
        &ctx,
    )?);
    Ok(table)
}

fn indicator(b: bool) -> f64 {
    f64::from(u8::from(b))
}

/// Clamps, rounds to the cube and returns `φ` of every block.
fn rounded_phis<R: Rng + ?Sized>(z: &[f64], k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let cube = forrelation::round_to_cube(&forrelation::clamp_to_box(z), rng)?;
    forrelation::block_phis(&cube.to_f64(), k)
}

/// Planted, uniform and `F^(k)` decision rates.
pub fn concentration_rows(
    n_dim: usize,
    k: usize,
    sampler: &BlockSampler,
    trials: u64,
    th: &Thresholds,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    let cov = CovarianceSpec::hadamard_block(n_dim / 2)?;
    let eps = sampler.epsilon();

    let planted = ctx.run_trials(stream_id("concentration/planted"), trials, 3, |rng, _, out| {
        let (z, _, hit) = sampler.sample(&cov, rng)?;
        let phi = rounded_phis(&z, 1, rng)?[0];
        out[0] = indicator(phi >= 0.75 * eps);
        out[1] = phi;
        out[2] = indicator(hit);
        Ok(())
    })?;
    let uniform = ctx.run_trials(stream_id("concentration/uniform"), trials, 2, |rng, _, out| {
        let z = forrelation::uniform_cube_point(n_dim, rng);
        let phi = forrelation::block_phis(&z.to_f64(), 1)?[0];
        out[0] = indicator(phi <= 0.25 * eps);
        out[1] = phi;
        Ok(())
    })?;

    let mut rows = vec![
        ResultRow::new("planted_phi_ge_3eps_over_4", planted[0].estimate(), Comparator::Ge, th.planted, 0.0),
        ResultRow::info("planted_mean_phi", planted[1].estimate()),
        ResultRow::info("planted_exit_frequency", planted[2].estimate()),
        ResultRow::new("uniform_phi_le_eps_over_4", uniform[0].estimate(), Comparator::Ge, th.uniform, 0.0),
        ResultRow::info("uniform_mean_phi", uniform[1].estimate()),
    ];
    for (parity, name) in [(Parity::Even, "even"), (Parity::Odd, "odd")] {
        let stats = ctx.run_trials(stream_id(&format!("concentration/{name}")), trials, 2, |rng, _, out| {
            let s = forrelation::sample_d_parity(k, parity, &cov, sampler, rng)?;
            let decision = rounded_phis(s.values(), k, rng)?
                .into_iter()
                .map(|phi| forrelation::decide(phi, eps))
                .fold(Trit::Plus, Trit::times);
            out[0] = indicator(decision == parity.expected_decision());
            out[1] = indicator(decision == Trit::Undefined);
            Ok(())
        })?;
        rows.push(ResultRow::new(
            format!("decision_{name}_correct"),
            stats[0].estimate(),
            Comparator::Ge,
            th.decision,
            0.0,
        ));
        rows.push(ResultRow::info(format!("decision_{name}_undefined"), stats[1].estimate()));
    }
    Ok(rows)
}

/// Frequency of `|φ(z̃) - φ(z)| > ε/4` for planted `z` and a fresh rounding.
pub fn rounding_rows(
    n_dim: usize,
    sampler: &BlockSampler,
    trials: u64,
    threshold: f64,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    let cov = CovarianceSpec::hadamard_block(n_dim / 2)?;
    let eps = sampler.epsilon();
    let stats = ctx.run_trials(stream_id("rounding"), trials, 4, |rng, _, out| {
        let (z, _, _) = sampler.sample(&cov, rng)?;
        let z = forrelation::clamp_to_box(&z);
        let exact = forrelation::block_phis(&z, 1)?[0];
        let rounded = rounded_phis(&z, 1, rng)?[0];
        let shift = rounded - exact;
        out[0] = indicator(shift.abs() > 0.25 * eps);
        out[1] = shift.abs();
        out[2] = shift;
        out[3] = indicator(shift < -0.25 * eps);
        Ok(())
    })?;
    Ok(vec![
        ResultRow::new("rounding_violation_frequency", stats[0].estimate(), Comparator::Le, threshold, 0.0),
        ResultRow::info("rounding_downward_violation_frequency", stats[3].estimate()),
        ResultRow::info("rounding_mean_abs_shift", stats[1].estimate()),
        ResultRow::info("rounding_shift_sd", Estimate::exact(stats[2].variance().sqrt())),
    ])
}

/// `2 / N^{7k² - 1}`.
pub fn doob_bound(n_dim: usize, k: usize) -> f64 {
    let k = k as f64;
    2.0 * (n_dim as f64).powf(-(7.0 * k * k - 1.0))
}

/// Frequency of paths that reach the boundary before the horizon.
pub fn tau_tail_rows(
    n_dim: usize,
    k: usize,
    params: SimParams,
    trials: u64,
    threshold: f64,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    let cov = CovarianceSpec::hadamard_block(n_dim / 2)?;
    let sampler = BlockSampler::Path(params);
    let stats = ctx.run_trials(stream_id("tau-tail"), trials, 2, |rng, _, out| {
        let (_, tau, hit) = sampler.sample(&cov, rng)?;
        out[0] = indicator(hit);
        out[1] = tau;
        Ok(())
    })?;
    Ok(vec![
        ResultRow::new("early_stop_frequency", stats[0].estimate(), Comparator::Le, threshold, 0.0),
        ResultRow::info("doob_bound", Estimate::exact(doob_bound(n_dim, k))),
        ResultRow::info("mean_tau", stats[1].estimate()),
    ])
}

/// Labelled bilinear monomials `x_a y_b` on the Hadamard block of half-width
/// `n`, plus one same-half product whose covariance vanishes.
pub fn bilinear_family(n: usize) -> Result<Vec<(String, EmbeddedPoly)>> {
    let mut pairs = vec![(0, 0), (1, 0), (0, 1), (n - 1, n / 2)];
    pairs.retain(|&(a, b)| a < n && b < n);
    pairs.dedup();
    let mut family: Vec<(String, EmbeddedPoly)> = pairs
        .into_iter()
        .map(|(a, b)| Ok((format!("x{a}*y{b}"), EmbeddedPoly::monomial(vec![a, n + b], 1.0)?)))
        .collect::<Result<_>>()?;
    if n >= 2 {
        family.push(("x0*x1".into(), EmbeddedPoly::monomial(vec![0, 1], 1.0)?));
    }
    Ok(family)
}

/// Dynkin rows for degree-two monomials: `LHS - RHS`, the left side against
/// the closed form `Σ_ij ε`, and the shift of each side under halving `δ`.
///
/// Exits make `E[τ] < ε`, so the closed-form row allows the measured
/// shortfall `|Σ_ij| (ε - E[τ])` on top of three standard errors.
pub fn dynkin_rows(
    prefix: &str,
    cov: &CovarianceSpec,
    family: &[(String, EmbeddedPoly)],
    params: SimParams,
    trials: u64,
    kernel: HadamardKernel,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    let polys: Vec<EmbeddedPoly> = family.iter().map(|(_, p)| p.clone()).collect();
    let reports = verifiers::dynkin_check_with_kernel(&polys, cov, params, trials, ctx, kernel)?;
    let mut rows = Vec::new();
    for ((label, p), r) in family.iter().zip(&reports) {
        let name = format!("{prefix}/{label}");
        rows.push(ResultRow::from_report(format!("{name}:lhs_minus_rhs"), r));
        if let [i, j] = p.coords() {
            let sigma = p.poly().coefficient(Subset::full(2)) * cov.entry(*i, *j);
            let shortfall = params.epsilon - r.note("mean_tau").unwrap_or(f64::NAN);
            let diff = Estimate {
                value: r.lhs.value - sigma * params.epsilon,
                se: r.lhs.se,
            };
            rows.push(ResultRow::new(
                format!("{name}:lhs_minus_closed_form"),
                diff,
                Comparator::AbsLe,
                sigma.abs() * shortfall,
                3.0,
            ));
        }
        for (side, se) in [("lhs", r.lhs.se), ("rhs", r.rhs.se)] {
            let shift = r.note(&format!("{side}_shift")).unwrap_or(f64::NAN);
            rows.push(ResultRow::new(
                format!("{name}:{side}_refinement_shift"),
                Estimate { value: shift, se },
                Comparator::AbsLe,
                0.0,
                1.0,
            ));
        }
    }
    Ok(rows)
}

/// `E[X_i X_j]` against `Σ_ij E[τ]` at the stopping time.
pub fn second_moment_rows(
    prefix: &str,
    cov: &CovarianceSpec,
    params: SimParams,
    entries: &[(usize, usize)],
    trials: u64,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    Ok(verifiers::second_moment_check(cov, params, entries, trials, ctx)?
        .iter()
        .zip(entries)
        .map(|(r, (i, j))| ResultRow::from_report(format!("{prefix}/[{i},{j}]"), r))
        .collect())
}

/// `|advantage| ≤ (εγ)^k L + 3 SE` for each function, plus at `k = 1` the
/// tightness row `|advantage(x_0 y_0)| ≥ εγ/4`.
pub fn advantage_rows(
    prefix: &str,
    k: usize,
    n_dim: usize,
    fs: &[(String, MultilinearPoly)],
    sampler: &BlockSampler,
    trials: u64,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    let cov = CovarianceSpec::hadamard_block(n_dim / 2)?;
    let mut polys: Vec<EmbeddedPoly> = fs.iter().map(|(_, f)| EmbeddedPoly::identity(f.clone())).collect();
    let tight = verifiers::product_monomial(&vec![(0, 0); k], n_dim / 2)?;
    polys.push(tight);
    let reports = verifiers::advantage_estimate(&polys, k, &cov, sampler, trials, ctx, None)?;
    let mut rows: Vec<ResultRow> = fs
        .iter()
        .zip(&reports)
        .map(|((label, _), r)| ResultRow::from_report(format!("{prefix}[k={k}]/{label}"), r))
        .collect();
    let r = reports.last().expect("tightness report");
    rows.push(ResultRow::from_report(format!("{prefix}[k={k}]/x0*y0"), r));
    let abs = Estimate {
        value: r.lhs.value.abs(),
        se: r.lhs.se,
    };
    if k == 1 {
        let floor = 0.25 * sampler.epsilon() * cov.gamma();
        rows.push(ResultRow::new(format!("{prefix}[k=1]/tightness"), abs, Comparator::Ge, floor, 0.0));
    } else {
        rows.push(ResultRow::info(format!("{prefix}[k={k}]/tightness"), abs));
    }
    Ok(rows)
}

/// `count` uniformly random Boolean functions on `m` variables.
pub fn random_boolean_functions(m: usize, count: usize, ctx: &RunContext) -> Result<Vec<(String, MultilinearPoly)>> {
    let mut rng = ctx.trial_rng(stream_id("random-boolean"), m as u64);
    (0..count)
        .map(|i| {
            let table: Vec<f64> = (0..1usize << m)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            Ok((format!("random[{i}]"), MultilinearPoly::from_truth_table(&table)?))
        })
        .collect()
}

/// Dictators, parities of one, two and all variables, and majority (ties
/// broken by variable 0) on `m` variables.
pub fn named_functions(m: usize) -> Result<Vec<(String, MultilinearPoly)>> {
    let mut out = Vec::new();
    for i in 0..m {
        out.push((format!("dictator[{i}]"), MultilinearPoly::monomial(m, Subset::singleton(i), 1.0)?));
    }
    for i in 0..m {
        for j in i + 1..m {
            out.push((
                format!("parity[{i},{j}]"),
                MultilinearPoly::monomial(m, Subset::from_indices([i, j]), 1.0)?,
            ));
        }
    }
    if m > 2 {
        out.push(("parity[all]".into(), MultilinearPoly::monomial(m, Subset::full(m), 1.0)?));
    }
    let majority: Vec<f64> = (0..1usize << m)
        .map(|idx| {
            let x = MultilinearPoly::cube_point(m, idx);
            let s: f64 = x.iter().sum::<f64>() + 0.5 * x[0];
            s.signum()
        })
        .collect();
    out.push(("majority".into(), MultilinearPoly::from_truth_table(&majority)?));
    Ok(out)
}

/// Both sides of the even/odd difference identity, plus the per-sample gap
/// of the stratified form.
pub fn difference_identity_rows(
    prefix: &str,
    k: usize,
    n_dim: usize,
    fs: &[(String, EmbeddedPoly)],
    sampler: &BlockSampler,
    trials: u64,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    let cov = CovarianceSpec::hadamard_block(n_dim / 2)?;
    let polys: Vec<EmbeddedPoly> = fs.iter().map(|(_, p)| p.clone()).collect();
    let reports = verifiers::difference_identity_check(&polys, k, &cov, sampler, trials, ctx)?;
    let mut rows = Vec::new();
    for ((label, _), r) in fs.iter().zip(&reports) {
        let name = format!("{prefix}[k={k}]/{label}");
        rows.push(ResultRow::from_report(format!("{name}:even_minus_odd"), r));
        let gap = r.note("stratified_max_abs_gap").unwrap_or(f64::NAN);
        rows.push(ResultRow::new(
            format!("{name}:stratified_gap"),
            Estimate::exact(gap),
            Comparator::AbsLe,
            1e-12,
            0.0,
        ));
    }
    Ok(rows)
}

/// Stratified advantage of `∏ x_{a_i} y_{b_i}` against its closed form.
pub fn product_monomial_rows(
    prefix: &str,
    n_dim: usize,
    cases: &[Vec<(usize, usize)>],
    sampler: &BlockSampler,
    trials: u64,
    ctx: &RunContext,
) -> Result<Vec<ResultRow>> {
    let cov = CovarianceSpec::hadamard_block(n_dim / 2)?;
    cases
        .iter()
        .map(|pairs| {
            let r = verifiers::product_monomial_check(pairs, &cov, sampler, trials, ctx)?;
            let label: Vec<String> = pairs.iter().map(|(a, b)| format!("x{a}*y{b}")).collect();
            Ok(ResultRow::from_report(
                format!("{prefix}[k={}]/{}", pairs.len(), label.join("*")),
                &r,
            ))
        })
        .collect()
}
