use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::Estimate;
use crate::verifiers::{Check, VerifierReport};

use super::config::{ExperimentConfig, OutputFormat};

/// How a row's estimate is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// `estimate + m·se ≥ threshold`.
    Ge,
    /// `estimate - m·se ≤ threshold`.
    Le,
    /// `|estimate| ≤ threshold + m·se`.
    AbsLe,
    /// Reported only; always passes.
    Info,
}

impl Comparator {
    pub fn name(self) -> &'static str {
        match self {
            Comparator::Ge => "ge",
            Comparator::Le => "le",
            Comparator::AbsLe => "abs_le",
            Comparator::Info => "info",
        }
    }

    pub fn holds(self, estimate: f64, se: f64, threshold: f64, se_multiplier: f64) -> bool {
        let slack = se_multiplier * se;
        match self {
            Comparator::Ge => estimate + slack >= threshold,
            Comparator::Le => estimate - slack <= threshold,
            Comparator::AbsLe => estimate.abs() <= threshold + slack,
            Comparator::Info => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub metric: String,
    pub estimate: f64,
    pub se: f64,
    pub comparator: Comparator,
    pub threshold: f64,
    pub se_multiplier: f64,
    pub verdict: bool,
}

impl ResultRow {
    pub fn new(metric: impl Into<String>, est: Estimate, comparator: Comparator, threshold: f64, se_multiplier: f64) -> Self {
        Self {
            metric: metric.into(),
            estimate: est.value,
            se: est.se,
            comparator,
            threshold,
            se_multiplier,
            verdict: comparator.holds(est.value, est.se, threshold, se_multiplier),
        }
    }

    pub fn info(metric: impl Into<String>, est: Estimate) -> Self {
        Self::new(metric, est, Comparator::Info, 0.0, 0.0)
    }

    /// A pass/fail row carrying an externally computed boolean.
    pub fn flag(metric: impl Into<String>, ok: bool) -> Self {
        Self::new(metric, Estimate::exact(f64::from(u8::from(ok))), Comparator::Ge, 1.0, 0.0)
    }

    /// The verdict implied by the emitted numbers.
    pub fn recomputed_verdict(&self) -> bool {
        self.comparator.holds(self.estimate, self.se, self.threshold, self.se_multiplier)
    }

    /// Row form of a verifier report: the difference `lhs - rhs` for equality
    /// checks, `|lhs|` against `rhs + slack` for bound checks.
    pub fn from_report(metric: impl Into<String>, r: &VerifierReport) -> Self {
        match r.check {
            Check::Equal { tolerance } => Self::new(
                metric,
                Estimate {
                    value: r.lhs.value - r.rhs.value,
                    se: r.lhs.se + r.rhs.se,
                },
                Comparator::AbsLe,
                tolerance,
                0.0,
            ),
            Check::AbsAtMost { slack } => {
                Self::new(metric, r.lhs, Comparator::AbsLe, r.rhs.value + slack, 0.0)
            }
        }
    }
}

/// Run metadata written ahead of the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    /// The configuration as TOML, without the worker count and output path.
    pub config: String,
}

impl Provenance {
    pub fn of(config: &ExperimentConfig) -> Result<Self> {
        let echo = ExperimentConfig {
            workers: None,
            output: None,
            ..config.clone()
        };
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: echo.to_toml_string()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub provenance: Provenance,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            provenance: Provenance::of(config)?,
            rows: Vec::new(),
        })
    }

    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ResultRow>) {
        self.rows.extend(rows);
    }

    pub fn row(&self, metric: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.verdict)
    }

    /// `#`-prefixed provenance lines, a header, then one line per row with
    /// floats at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        let _ = writeln!(out, "# version = {}", p.version);
        let _ = writeln!(out, "# seed = {}", p.seed);
        for line in p.config.lines() {
            let _ = writeln!(out, "# config: {line}");
        }
        out.push_str("metric,estimate,se,comparator,threshold,se_multiplier,verdict\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{},{:.16e},{:.16e},{}",
                r.metric,
                r.estimate,
                r.se,
                r.comparator.name(),
                r.threshold,
                r.se_multiplier,
                if r.verdict { "pass" } else { "fail" }
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Csv => Ok(self.to_csv()),
            OutputFormat::Json => self.to_json(),
        }
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
        std::fs::write(path, self.render(format)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparators() {
        assert!(Comparator::Ge.holds(0.89, 0.01, 0.9, 1.0));
        assert!(!Comparator::Ge.holds(0.89, 0.01, 0.9, 0.0));
        assert!(Comparator::Le.holds(0.05, 0.0, 0.05, 0.0));
        assert!(Comparator::AbsLe.holds(-0.3, 0.1, 0.0, 3.0));
        assert!(!Comparator::AbsLe.holds(-0.31, 0.1, 0.0, 3.0));
        assert!(Comparator::Info.holds(f64::NAN, 0.0, 0.0, 0.0));
    }

    #[test]
    fn csv_verdicts_replay() {
        let mut t = ResultTable::new(&ExperimentConfig::default()).unwrap();
        t.push(ResultRow::new("a", Estimate { value: 0.1 + 0.2, se: 1.0 / 3.0 }, Comparator::Le, 0.3, 0.0));
        t.push(ResultRow::new("b", Estimate { value: 0.1 + 0.2, se: 0.0 }, Comparator::Ge, 0.3, 0.0));
        t.push(ResultRow::info("c", Estimate::exact(2.0)));
        let csv = t.to_csv();
        assert!(csv.contains("# seed = 42"));
        assert!(!csv.contains("workers"));
        for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| f[i].parse::<f64>().unwrap();
            let cmp = match f[3] {
                "ge" => Comparator::Ge,
                "le" => Comparator::Le,
                "abs_le" => Comparator::AbsLe,
                _ => Comparator::Info,
            };
            let verdict = cmp.holds(num(1), num(2), num(4), num(5));
            assert_eq!(verdict, f[6] == "pass", "{line}");
        }
        assert!(!t.rows[0].verdict);
        assert!(t.rows[1].verdict);
    }

    #[test]
    fn json_round_trip() {
        let mut t = ResultTable::new(&ExperimentConfig::default()).unwrap();
        t.push(ResultRow::new("x", Estimate { value: 1e-17, se: 3.5 }, Comparator::AbsLe, 0.0, 3.0));
        let back: ResultTable = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
