//! One-line JSON records appended to a results log.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::Result;

use super::gradcheck::GradcheckReport;
use super::jl::JlTrialReport;
use super::rank::RepresentabilityReport;

/// Keys are exactly `check, params, trials, failures, bound, pass`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub check: String,
    pub params: Map<String, Value>,
    pub trials: usize,
    pub failures: usize,
    /// `None` serializes as `null` for checks without a probability bound.
    pub bound: Option<f64>,
    pub pass: bool,
}

impl ReportLine {
    pub fn to_json(&self) -> String {
        json!({
            "check": self.check,
            "params": self.params,
            "trials": self.trials,
            "failures": self.failures,
            "bound": self.bound,
            "pass": self.pass,
        })
        .to_string()
    }

    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", self.to_json())?;
        Ok(())
    }
}

fn params(pairs: &[(&str, Value)]) -> Map<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

impl From<&JlTrialReport> for ReportLine {
    fn from(r: &JlTrialReport) -> Self {
        ReportLine {
            check: "jl_monte_carlo".into(),
            params: params(&[
                ("d", json!(r.d)),
                ("d_p", json!(r.d_p)),
                ("d_in", json!(r.d_in)),
                ("epsilon", json!(r.epsilon)),
                ("vacuous", json!(r.vacuous)),
            ]),
            trials: r.trials,
            failures: r.failures,
            bound: Some(r.bound),
            pass: r.pass(),
        }
    }
}

impl From<&RepresentabilityReport> for ReportLine {
    fn from(r: &RepresentabilityReport) -> Self {
        ReportLine {
            check: "lowrank_representability".into(),
            params: params(&[
                ("n", json!(r.n)),
                ("d", json!(r.d)),
                ("r", json!(r.r)),
                ("numeric_rank", json!(r.numeric_rank)),
                ("error_at_r", json!(r.error_at_r)),
                ("error_below_r", json!(r.error_below_r)),
            ]),
            trials: 1,
            failures: usize::from(!r.pass()),
            bound: None,
            pass: r.pass(),
        }
    }
}

impl ReportLine {
    pub fn gradcheck(kind: &str, seed: u64, r: &GradcheckReport) -> Self {
        let per: Map<String, Value> = r.tensors.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let failures = r.tensors.iter().filter(|(_, v)| *v > super::gradcheck::GRADCHECK_TOL).count();
        ReportLine {
            check: format!("gradcheck_{kind}"),
            params: params(&[("seed", json!(seed)), ("discrepancy", Value::Object(per))]),
            trials: r.tensors.len(),
            failures,
            bound: Some(super::gradcheck::GRADCHECK_TOL),
            pass: failures == 0,
        }
    }

    pub fn reduction(n: usize, seeds: usize, worst_gap: f64, tol: f64, failures: usize) -> Self {
        ReportLine {
            check: "reduction_identity".into(),
            params: params(&[("n", json!(n)), ("max_abs_gap", json!(worst_gap)), ("tol", json!(tol))]),
            trials: seeds,
            failures,
            bound: None,
            pass: failures == 0,
        }
    }
}
