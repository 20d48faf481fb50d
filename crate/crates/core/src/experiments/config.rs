use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forrelation::BlockSampler;
use crate::stats::RunContext;
use crate::stochastic::{self, SimParams};

/// Block width from which the endpoint sampler becomes the default.
pub const ENDPOINT_SAMPLER_MIN_DIM: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Concentration,
    TauTail,
    Rounding,
    Dynkin,
    Advantage,
    Suite,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Concentration,
        ExperimentKind::TauTail,
        ExperimentKind::Rounding,
        ExperimentKind::Dynkin,
        ExperimentKind::Advantage,
        ExperimentKind::Suite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::TauTail => "tau-tail",
            ExperimentKind::Rounding => "rounding",
            ExperimentKind::Dynkin => "dynkin",
            ExperimentKind::Advantage => "advantage",
            ExperimentKind::Suite => "suite",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::invalid(format!("unknown format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Path,
    Endpoint,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(SamplerKind::Path),
            "endpoint" => Ok(SamplerKind::Endpoint),
            _ => Err(Error::invalid(format!("unknown sampler {s:?}"))),
        }
    }
}

/// Size of the suite run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small instances, seconds.
    Quick,
    /// The pinned acceptance parameters, minutes.
    #[default]
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Profile::Quick),
            "full" => Ok(Profile::Full),
            _ => Err(Error::invalid(format!("unknown profile {s:?}"))),
        }
    }
}

/// `ε` given explicitly or as `1 / (28 k² ln N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSetting {
    Explicit(f64),
    Paper,
}

impl EpsilonSetting {
    pub fn resolve(self, n_dim: usize, k: usize) -> Result<f64> {
        match self {
            EpsilonSetting::Explicit(e) => Ok(e),
            EpsilonSetting::Paper => stochastic::default_epsilon(n_dim as f64, k as u32),
        }
    }
}

impl FromStr for EpsilonSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper-default" => Ok(EpsilonSetting::Paper),
            _ => s
                .parse()
                .map(EpsilonSetting::Explicit)
                .map_err(|_| Error::invalid(format!("epsilon {s:?} is neither a number nor \"paper\""))),
        }
    }
}

impl fmt::Display for EpsilonSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonSetting::Explicit(e) => write!(f, "{e}"),
            EpsilonSetting::Paper => f.write_str("paper"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EpsilonRepr {
    Number(f64),
    Word(String),
}

impl Serialize for EpsilonSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EpsilonSetting::Explicit(e) => EpsilonRepr::Number(*e),
            EpsilonSetting::Paper => EpsilonRepr::Word("paper".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EpsilonSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match EpsilonRepr::deserialize(d)? {
            EpsilonRepr::Number(e) => Ok(EpsilonSetting::Explicit(e)),
            EpsilonRepr::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Pass thresholds of the concentration-type rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Lower bound on `P[φ ≥ 3ε/4]` for rounded planted samples.
    pub planted: f64,
    /// Lower bound on `P[φ ≤ ε/4]` for uniform points.
    pub uniform: f64,
    /// Upper bound on `P[|φ(z̃) - φ(z)| > ε/4]`.
    pub rounding: f64,
    /// Lower bound on the probability that `F^(k)` is correct.
    pub decision: f64,
    /// Upper bound on the frequency of `τ < ε`.
    pub early_stop: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            planted: 0.9,
            uniform: 0.9,
            rounding: 0.05,
            decision: 0.8,
            early_stop: 0.0,
        }
    }
}

/// One experiment run. In TOML the block width `N` is the key `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// `N = 2n`, the width of one block.
    #[serde(rename = "n")]
    pub block_dim: usize,
    pub k: usize,
    pub epsilon: EpsilonSetting,
    /// Grid step; `ε / 64` when absent.
    pub delta: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    /// Worker threads; the environment default when absent.
    pub workers: Option<usize>,
    /// Block sampler; endpoint for `N ≥ 2^16`, path otherwise, when absent.
    pub sampler: Option<SamplerKind>,
    pub profile: Profile,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Concentration,
            block_dim: 1 << 20,
            k: 1,
            epsilon: EpsilonSetting::Explicit(0.01),
            delta: None,
            trials: 500,
            seed: 42,
            workers: None,
            sampler: None,
            profile: Profile::Full,
            output: None,
            format: OutputFormat::Csv,
            thresholds: Thresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.block_dim / 2;
        if self.block_dim < 2 || !self.block_dim.is_multiple_of(2) || !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "N = {} must be twice a power of two",
                self.block_dim
            )));
        }
        if self.k == 0 || self.k > 16 {
            return Err(Error::invalid(format!("k = {} must lie in 1..=16", self.k)));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        let eps = self.epsilon()?;
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::invalid(format!("epsilon {eps} must lie in (0, 1]")));
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta <= eps) {
                return Err(Error::invalid(format!("delta {delta} must lie in (0, epsilon]")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be at least 1"));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.epsilon.resolve(self.block_dim, self.k)
    }

    pub fn sim_params(&self) -> Result<SimParams> {
        let eps = self.epsilon()?;
        match self.delta {
            Some(delta) => SimParams::new(eps, delta),
            None => SimParams::with_default_delta(eps),
        }
    }

    pub fn sampler_kind(&self) -> SamplerKind {
        self.sampler.unwrap_or(if self.block_dim >= ENDPOINT_SAMPLER_MIN_DIM {
            SamplerKind::Endpoint
        } else {
            SamplerKind::Path
        })
    }

    pub fn block_sampler(&self) -> Result<BlockSampler> {
        Ok(match self.sampler_kind() {
            SamplerKind::Path => BlockSampler::Path(self.sim_params()?),
            SamplerKind::Endpoint => BlockSampler::Endpoint {
                epsilon: self.epsilon()?,
            },
        })
    }

    pub fn context(&self) -> RunContext {
        RunContext::new(self.seed, self.workers.unwrap_or_else(RunContext::default_workers))
    }
}
