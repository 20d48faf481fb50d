//! Running moments, per-trial random streams and the deterministic parallel
//! trial runner.
//!
//! Every trial draws from its own ChaCha8 stream derived from
//! `(master seed, experiment stream id, trial index)`. Trials are grouped in
//! fixed-size batches whose statistics are merged in batch order, so results
//! do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "FORRELAB_WORKERS";

const BATCH: u64 = 256;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }
}

/// Welford accumulator with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.count as f64 * other.count as f64) / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean(),
            se: self.std_error(),
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

/// Seed and parallelism for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunContext {
    pub seed: u64,
    pub workers: usize,
}

impl RunContext {
    pub fn new(seed: u64, workers: usize) -> Self {
        Self {
            seed,
            workers: workers.max(1),
        }
    }

    /// Single-threaded context.
    pub fn sequential(seed: u64) -> Self {
        Self::new(seed, 1)
    }

    /// Worker count from [`WORKERS_ENV`], falling back to the available cores.
    pub fn default_workers() -> usize {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|&w: &usize| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// A context with an independent seed for the named sub-run.
    pub fn derive(&self, label: &str) -> RunContext {
        Self {
            seed: splitmix64(self.seed ^ stream_id(label)),
            workers: self.workers,
        }
    }

    /// The random stream for `trial` of the experiment identified by `stream`.
    pub fn trial_rng(&self, stream: u64, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(stream)));
        rng.set_stream(trial);
        rng
    }

    /// Runs `trials` trials, each writing `metrics` values into its output
    /// slice, and returns one accumulator per metric.
    pub fn run_trials<F>(&self, stream: u64, trials: u64, metrics: usize, trial: F) -> Result<Vec<RunningStats>>
    where
        F: Fn(&mut ChaCha8Rng, u64, &mut [f64]) -> Result<()> + Sync,
    {
        if trials == 0 {
            return Err(Error::invalid("trial count must be positive"));
        }
        let batches = trials.div_ceil(BATCH);
        let run_batch = |b: u64| -> Result<Vec<RunningStats>> {
            let mut acc = vec![RunningStats::new(); metrics];
            let mut out = vec![0.0; metrics];
            for t in b * BATCH..((b + 1) * BATCH).min(trials) {
                let mut rng = self.trial_rng(stream, t);
                out.iter_mut().for_each(|v| *v = 0.0);
                trial(&mut rng, t, &mut out)?;
                for (a, v) in acc.iter_mut().zip(&out) {
                    a.push(*v);
                }
            }
            Ok(acc)
        };
        let per_batch: Vec<Vec<RunningStats>> = self.install(|| {
            if self.workers == 1 {
                (0..batches).map(run_batch).collect::<Result<_>>()
            } else {
                (0..batches).into_par_iter().map(run_batch).collect::<Result<_>>()
            }
        })?;
        let mut total = vec![RunningStats::new(); metrics];
        for batch in &per_batch {
            for (t, b) in total.iter_mut().zip(batch) {
                t.merge(b);
            }
        }
        Ok(total)
    }

    /// Runs `trials` trials and returns their outputs in trial order.
    pub fn map_trials<T, F>(&self, stream: u64, trials: u64, trial: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut ChaCha8Rng, u64) -> Result<T> + Sync,
    {
        let one = |t: u64| {
            let mut rng = self.trial_rng(stream, t);
            trial(&mut rng, t)
        };
        self.install(|| {
            if self.workers == 1 {
                (0..trials).map(one).collect()
            } else {
                (0..trials).into_par_iter().map(one).collect()
            }
        })
    }

    fn install<T: Send>(&self, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        if self.workers == 1 {
            return job();
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(job)
    }
}

/// Stable stream id for a label (FNV-1a).
pub fn stream_id(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard error of a Bernoulli frequency `hits / trials`.
pub fn proportion(hits: u64, trials: u64) -> Estimate {
    let p = hits as f64 / trials as f64;
    Estimate {
        value: p,
        se: (p * (1.0 - p) / trials as f64).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1 - 3.0).collect();
        let whole: RunningStats = xs.iter().copied().collect();
        let mut merged = RunningStats::new();
        for chunk in xs.chunks(77) {
            merged.merge(&chunk.iter().copied().collect());
        }
        assert_eq!(merged.count(), whole.count());
        assert!((merged.mean() - whole.mean()).abs() < 1e-12);
        assert!((merged.variance() - whole.variance()).abs() < 1e-10);

        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((whole.variance() - var).abs() < 1e-10);
    }

    #[test]
    fn results_do_not_depend_on_workers() {
        let f = |rng: &mut ChaCha8Rng, _t: u64, out: &mut [f64]| {
            out[0] = rng.random::<f64>();
            out[1] = out[0] * out[0];
            Ok(())
        };
        let a = RunContext::new(9, 1).run_trials(1, 1000, 2, f).unwrap();
        let b = RunContext::new(9, 3).run_trials(1, 1000, 2, f).unwrap();
        assert_eq!(a, b);
        let c = RunContext::new(10, 1).run_trials(1, 1000, 2, f).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn streams_differ_by_label_and_trial() {
        let ctx = RunContext::sequential(42);
        let x: u64 = ctx.trial_rng(stream_id("a"), 0).random();
        let y: u64 = ctx.trial_rng(stream_id("b"), 0).random();
        let z: u64 = ctx.trial_rng(stream_id("a"), 1).random();
        assert!(x != y && x != z);
        assert_eq!(x, ctx.trial_rng(stream_id("a"), 0).random::<u64>());
    }

    #[test]
    fn zero_trials_rejected() {
        let ctx = RunContext::sequential(0);
        assert!(ctx.run_trials(0, 0, 1, |_, _, _| Ok(())).is_err());
    }
}
