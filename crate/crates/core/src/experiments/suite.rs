use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::forrelation::BlockSampler;
use crate::polynomial::{sample_restriction, MultilinearPoly, Subset};
use crate::stats::{stream_id, Estimate, RunContext};
use crate::stochastic::{self, CovarianceSpec, SimParams};
use crate::verifiers::{self, EmbeddedPoly};
use crate::wht::{self, HadamardKernel};

use super::config::{ExperimentConfig, Profile};
use super::runners;
use super::table::{Comparator, ResultRow, ResultTable};

/// Instance sizes of one suite profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteParams {
    pub transform_max_n: usize,
    pub transform_vectors: usize,
    pub fourier_functions: usize,
    pub fourier_max_m: usize,
    pub restriction_cases: usize,
    pub restriction_max_m: usize,
    pub restriction_mc_trials: u64,
    pub dynkin_dim: usize,
    pub dynkin_epsilon: f64,
    pub dense_epsilon: f64,
    pub dynkin_trials: u64,
    pub moment_dim: usize,
    pub moment_epsilon: f64,
    pub moment_entries: usize,
    pub moment_trials: u64,
    pub identity_ks: Vec<usize>,
    pub identity_trials: u64,
    pub advantage_epsilon: f64,
    pub advantage_trials: u64,
    /// Random Boolean functions at `k = 1` and `k = 2`.
    pub advantage_random: [usize; 2],
    pub product_trials: u64,
    pub concentration_dim: usize,
    pub concentration_epsilon: f64,
    pub concentration_trials: u64,
    pub rounding_trials: u64,
    pub tau_dim: usize,
    pub tau_trials: u64,
}

/// Grid steps per horizon for the dense Dynkin case. Its `τ` is nearly
/// deterministic, so the right side has a tiny standard error and the exit
/// detection bias of the default grid is visible against it.
const DENSE_STEPS: f64 = 256.0;

/// Block width of the small advantage and identity instances.
pub const SMALL_DIM: usize = 4;

impl SuiteParams {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self {
                transform_max_n: 1024,
                transform_vectors: 100,
                fourier_functions: 50,
                fourier_max_m: 10,
                restriction_cases: 100,
                restriction_max_m: 8,
                restriction_mc_trials: 4000,
                dynkin_dim: 128,
                dynkin_epsilon: 0.01,
                dense_epsilon: 0.02,
                dynkin_trials: 100_000,
                moment_dim: 64,
                moment_epsilon: 0.05,
                moment_entries: 10,
                moment_trials: 100_000,
                identity_ks: vec![1, 2, 3],
                identity_trials: 20_000,
                advantage_epsilon: 0.05,
                advantage_trials: 20_000,
                advantage_random: [100, 30],
                product_trials: 20_000,
                concentration_dim: 1 << 20,
                concentration_epsilon: 0.01,
                concentration_trials: 500,
                rounding_trials: 200,
                tau_dim: 1 << 10,
                tau_trials: 1000,
            },
            Profile::Quick => Self {
                transform_max_n: 256,
                transform_vectors: 10,
                fourier_functions: 10,
                fourier_max_m: 8,
                restriction_cases: 10,
                restriction_max_m: 6,
                restriction_mc_trials: 1000,
                dynkin_dim: 16,
                dynkin_epsilon: 0.02,
                dense_epsilon: 0.02,
                dynkin_trials: 4000,
                moment_dim: 16,
                moment_epsilon: 0.05,
                moment_entries: 4,
                moment_trials: 4000,
                identity_ks: vec![1, 2],
                identity_trials: 2000,
                advantage_epsilon: 0.05,
                advantage_trials: 2000,
                advantage_random: [10, 3],
                product_trials: 4000,
                concentration_dim: 1 << 18,
                concentration_epsilon: 0.02,
                concentration_trials: 50,
                rounding_trials: 50,
                tau_dim: 1 << 10,
                tau_trials: 200,
            },
        }
    }
}

/// Every verifier and concentration check at the parameters of
/// `config.profile`. Only the seed, worker count and thresholds of `config`
/// are used.
pub fn run_suite(config: &ExperimentConfig) -> Result<ResultTable> {
    run_suite_with_kernel(config, wht::fwht_in_place)
}

/// [`run_suite`] with the transform rows and the Dynkin paths using `kernel`
/// in place of the normalized Hadamard transform.
pub fn run_suite_with_kernel(config: &ExperimentConfig, kernel: HadamardKernel) -> Result<ResultTable> {
    config.validate()?;
    let p = SuiteParams::for_profile(config.profile);
    let ctx = config.context();
    let mut table = ResultTable::new(config)?;

    table.extend(transform_rows(p.transform_max_n, p.transform_vectors, kernel, &ctx.derive("transform"))?);
    table.extend(fourier_rows(p.fourier_functions, p.fourier_max_m, &ctx.derive("fourier"))?);
    table.extend(restriction_rows(
        p.restriction_cases,
        p.restriction_max_m,
        p.restriction_mc_trials,
        &ctx.derive("restriction"),
    )?);

    let dctx = ctx.derive("dynkin");
    let cov = CovarianceSpec::hadamard_block(p.dynkin_dim / 2)?;
    table.extend(runners::dynkin_rows(
        "dynkin",
        &cov,
        &runners::bilinear_family(p.dynkin_dim / 2)?,
        SimParams::with_default_delta(p.dynkin_epsilon)?,
        p.dynkin_trials,
        kernel,
        &dctx,
    )?);
    let dense = CovarianceSpec::dense(&[vec![1.0, 0.3], vec![0.3, 1.0]])?;
    table.extend(runners::dynkin_rows(
        "dynkin-dense",
        &dense,
        &[("z0*z1".into(), EmbeddedPoly::monomial(vec![0, 1], 1.0)?)],
        SimParams::new(p.dense_epsilon, p.dense_epsilon / DENSE_STEPS)?,
        p.dynkin_trials,
        kernel,
        &dctx,
    )?);

    let mctx = ctx.derive("second-moment");
    let cov = CovarianceSpec::hadamard_block(p.moment_dim / 2)?;
    let entries = random_entries(p.moment_dim, p.moment_entries, &mctx);
    table.extend(runners::second_moment_rows(
        "second-moment",
        &cov,
        SimParams::with_default_delta(p.moment_epsilon)?,
        &entries,
        p.moment_trials,
        &mctx,
    )?);

    let small = BlockSampler::Path(SimParams::with_default_delta(p.advantage_epsilon)?);
    let ictx = ctx.derive("difference-identity");
    for &k in &p.identity_ks {
        table.extend(runners::difference_identity_rows(
            "difference-identity",
            k,
            SMALL_DIM,
            &identity_family(k, &ictx)?,
            &small,
            p.identity_trials,
            &ictx,
        )?);
    }

    let actx = ctx.derive("advantage");
    let mut fs = runners::random_boolean_functions(SMALL_DIM, p.advantage_random[0], &actx)?;
    fs.extend(runners::named_functions(SMALL_DIM)?);
    table.extend(runners::advantage_rows("advantage", 1, SMALL_DIM, &fs, &small, p.advantage_trials, &actx)?);
    let fs = runners::random_boolean_functions(2 * SMALL_DIM, p.advantage_random[1], &actx)?;
    table.extend(runners::advantage_rows("advantage", 2, SMALL_DIM, &fs, &small, p.advantage_trials, &actx)?);

    table.extend(runners::product_monomial_rows(
        "product-monomial",
        SMALL_DIM,
        &[vec![(0, 0)], vec![(0, 1), (1, 0)]],
        &small,
        p.product_trials,
        &ctx.derive("product-monomial"),
    )?);

    let big = BlockSampler::Endpoint {
        epsilon: p.concentration_epsilon,
    };
    let rows = runners::concentration_rows(
        p.concentration_dim,
        2,
        &big,
        p.concentration_trials,
        &config.thresholds,
        &ctx.derive("concentration"),
    )?;
    table.extend(prefixed("concentration", rows));
    let rows = runners::rounding_rows(
        p.concentration_dim,
        &big,
        p.rounding_trials,
        config.thresholds.rounding,
        &ctx.derive("rounding"),
    )?;
    table.extend(prefixed("rounding", rows));

    let eps = stochastic::default_epsilon(p.tau_dim as f64, 1)?;
    let rows = runners::tau_tail_rows(
        p.tau_dim,
        1,
        SimParams::with_default_delta(eps)?,
        p.tau_trials,
        config.thresholds.early_stop,
        &ctx.derive("tau-tail"),
    )?;
    table.extend(prefixed("tau-tail", rows));
    Ok(table)
}

fn prefixed(prefix: &str, rows: Vec<ResultRow>) -> impl Iterator<Item = ResultRow> + '_ {
    rows.into_iter().map(move |mut r| {
        r.metric = format!("{prefix}/{}", r.metric);
        r
    })
}

/// Largest deviation of `kernel` from the naive `H v` and largest relative
/// Parseval error, over `vectors` Gaussian vectors of each size
/// `n = 2, 4, …, max_n`.
pub fn transform_rows(max_n: usize, vectors: usize, kernel: HadamardKernel, ctx: &RunContext) -> Result<Vec<ResultRow>> {
    let mut naive_err = 0.0f64;
    let mut parseval_err = 0.0f64;
    let mut n = 2;
    while n <= max_n {
        let mut rng = ctx.trial_rng(stream_id("transform"), n as u64);
        for _ in 0..vectors {
            let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut fast = v.clone();
            kernel(&mut fast)?;
            for (i, f) in fast.iter().enumerate() {
                let naive: f64 = v.iter().enumerate().map(|(j, x)| wht::hadamard_entry(n, i, j) * x).sum();
                naive_err = naive_err.max((f - naive).abs());
            }
            let before: f64 = v.iter().map(|x| x * x).sum();
            let after: f64 = fast.iter().map(|x| x * x).sum();
            parseval_err = parseval_err.max((after - before).abs() / before);
        }
        n *= 2;
    }
    Ok(vec![
        ResultRow::new("transform/naive_max_abs_err", Estimate::exact(naive_err), Comparator::AbsLe, 1e-10, 0.0),
        ResultRow::new("transform/parseval_max_rel_err", Estimate::exact(parseval_err), Comparator::AbsLe, 1e-12, 0.0),
    ])
}

/// Largest `|f(x) - value|` over all cube points for random Boolean
/// functions on `1..=max_m` variables.
pub fn fourier_rows(functions: usize, max_m: usize, ctx: &RunContext) -> Result<Vec<ResultRow>> {
    let mut rng = ctx.trial_rng(stream_id("fourier"), 0);
    let mut err = 0.0f64;
    for i in 0..functions {
        let m = 1 + i % max_m;
        let table: Vec<f64> = (0..1usize << m)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let f = MultilinearPoly::from_truth_table(&table)?;
        for (idx, v) in table.iter().enumerate() {
            err = err.max((f.evaluate(&MultilinearPoly::cube_point(m, idx))? - v).abs());
        }
    }
    Ok(vec![ResultRow::new(
        "fourier/round_trip_max_abs_err",
        Estimate::exact(err),
        Comparator::AbsLe,
        1e-12,
        0.0,
    )])
}

/// `2^{|S|} E[∂_S f_ρ(0)] = ∂_S f(x)` for random `(f, S, x)`: exactly by
/// enumerating restrictions, and by Monte Carlo in units of its standard
/// error.
pub fn restriction_rows(cases: usize, max_m: usize, mc_trials: u64, ctx: &RunContext) -> Result<Vec<ResultRow>> {
    let mut rng = ctx.trial_rng(stream_id("restriction/cases"), 0);
    let mut exact_err = 0.0f64;
    let mut worst_z = 0.0f64;
    for c in 0..cases {
        let m = 1 + c % max_m;
        let mut coeffs = Vec::new();
        for t in 0..1u64 << m {
            if rng.random::<bool>() {
                coeffs.push((Subset(t), rng.sample::<f64, _>(StandardNormal)));
            }
        }
        let f = MultilinearPoly::from_coeffs(m, coeffs)?;
        let s = Subset(rng.random::<u64>()).intersection(Subset::full(m));
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..=0.5)).collect();
        let scale = 2f64.powi(s.len() as i32);
        let target = f.partial_derivative(s).evaluate(&x)?;
        exact_err = exact_err.max((scale * f.exact_restriction_expectation(s, &x)? - target).abs());

        let mc = ctx.run_trials(stream_id(&format!("restriction/mc/{c}")), mc_trials, 1, |r, _, out| {
            let rho = sample_restriction(&x, r)?;
            out[0] = scale * f.restrict(&rho)?.coefficient(s);
            Ok(())
        })?;
        let est = mc[0].estimate();
        let diff = (est.value - target).abs();
        let z = if est.se > 0.0 {
            diff / est.se
        } else if diff < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z);
    }
    Ok(vec![
        ResultRow::new("restriction/exact_max_abs_err", Estimate::exact(exact_err), Comparator::AbsLe, 1e-9, 0.0),
        ResultRow::new("restriction/mc_max_abs_z", Estimate::exact(worst_z), Comparator::Le, 4.0, 0.0),
    ])
}

/// The first three entries are diagonal, the rest uniform.
fn random_entries(dim: usize, count: usize, ctx: &RunContext) -> Vec<(usize, usize)> {
    let mut rng = ctx.trial_rng(stream_id("entries"), 0);
    (0..count)
        .map(|q| {
            let i = rng.random_range(0..dim);
            let j = if q < 3 { i } else { rng.random_range(0..dim) };
            (i, j)
        })
        .collect()
}

/// Product monomials and random Boolean functions for the difference identity.
fn identity_family(k: usize, ctx: &RunContext) -> Result<Vec<(String, EmbeddedPoly)>> {
    let n = SMALL_DIM / 2;
    let mut fs = vec![
        ("x0*y0".to_string(), verifiers::product_monomial(&vec![(0, 0); k], n)?),
        ("x1*y0".to_string(), verifiers::product_monomial(&vec![(1, 0); k], n)?),
        ("x0".to_string(), EmbeddedPoly::monomial(vec![0], 1.0)?),
    ];
    for (label, f) in runners::random_boolean_functions(k * SMALL_DIM, 2, ctx)? {
        fs.push((label, EmbeddedPoly::identity(f)));
    }
    Ok(fs)
}
