//! Reports and the three-way verdict.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::engine::{PathConfig, SeedLineage};
use crate::stats::McEstimate;

/// Multiple of the standard error used by every verdict.
pub const Z: f64 = 3.0;
/// Error bars above this fraction of `|rhs|` make a near-zero margin inconclusive.
pub const INCONCLUSIVE_REL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// `margin = rhs - lhs` with standard error `σ`: inconclusive when
/// `|margin| < 3σ` and `σ > 0.1 |rhs|`, otherwise pass iff `margin + 3σ >= 0`.
pub fn verdict(margin: McEstimate, rhs: f64) -> Verdict {
    let sigma = margin.stderr;
    if margin.value.abs() < Z * sigma && sigma > INCONCLUSIVE_REL * rhs.abs() {
        Verdict::Inconclusive
    } else if margin.value + Z * sigma >= 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Sample sizes, discretization and randomness for one check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub n: usize,
    pub config: PathConfig,
    pub lineage: SeedLineage,
}

impl Budget {
    pub fn new(n: usize, step: f64, seed: u64) -> Self {
        Budget {
            n,
            config: PathConfig::with_step(step),
            lineage: SeedLineage::new(seed),
        }
    }

    pub fn child(&self, tag: u64) -> Self {
        Budget {
            lineage: self.lineage.child(tag),
            ..*self
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Budget { n, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub name: String,
    /// Groups reports in summaries, e.g. `harnack`.
    pub tag: String,
    pub params: Vec<(String, String)>,
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    /// `rhs - lhs`; its standard error accounts for common random numbers
    /// when both sides come from the same paths.
    pub margin: McEstimate,
    pub verdict: Verdict,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl InequalityReport {
    /// Independent sides: the margin error combines both in quadrature.
    pub fn new(
        name: impl Into<String>,
        tag: &str,
        lhs: McEstimate,
        rhs: McEstimate,
        seed: u64,
    ) -> Self {
        Self::with_margin(name, tag, lhs, rhs, rhs.minus(lhs), seed)
    }

    pub fn with_margin(
        name: impl Into<String>,
        tag: &str,
        lhs: McEstimate,
        rhs: McEstimate,
        margin: McEstimate,
        seed: u64,
    ) -> Self {
        InequalityReport {
            name: name.into(),
            tag: tag.to_string(),
            params: Vec::new(),
            lhs,
            rhs,
            verdict: verdict(margin, rhs.value),
            margin,
            seed,
            notes: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn point(self, key: &str, x: &[f64]) -> Self {
        let s = x
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        self.param(key, s)
    }

    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    /// `margin / rhs`, comparable across rescalings of a homogeneous inequality.
    pub fn relative_margin(&self) -> f64 {
        self.margin.value / self.rhs.value
    }

    pub fn params_string(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub pass: usize,
    pub fail: usize,
    pub inconclusive: usize,
}

impl Counts {
    pub fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Pass => self.pass += 1,
            Verdict::Fail => self.fail += 1,
            Verdict::Inconclusive => self.inconclusive += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.pass + self.fail + self.inconclusive
    }
}

/// Verdict counts per tag.
pub fn summarize(reports: &[InequalityReport]) -> BTreeMap<String, Counts> {
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    for r in reports {
        out.entry(r.tag.clone()).or_default().add(r.verdict);
    }
    out
}
