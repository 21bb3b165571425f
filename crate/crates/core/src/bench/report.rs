use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::Confusion;
use crate::data::{Label, RawSample};
use crate::error::{Error, Result};
use crate::trainer::predict_all;
use crate::verifier::{GraphCheck, Prepared};

/// What to do with a record whose kg fields are missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    FailFast,
    Skip,
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fail-fast" | "fail" => Ok(MissingPolicy::FailFast),
            "skip" => Ok(MissingPolicy::Skip),
            _ => Err(Error::validation("on_missing", format!("unknown policy {s:?}"))),
        }
    }
}

/// Deterministic evaluation summary; timing lives in [`Timing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n: usize,
    pub skipped: usize,
    pub bacc: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
    pub negative_share: f64,
    pub verifier_calls: usize,
    pub config_fingerprint: String,
    pub use_graph: bool,
    pub calibration: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub total_secs: f64,
    pub secs_per_sample: f64,
}

impl EvalReport {
    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fn_: self.r#fn,
            tn: self.tn,
            fp: self.fp,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Fixed-width table of one or more reports.
pub fn render_table(reports: &[(&EvalReport, Option<Timing>)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>7} {:>7} {:>5} {:>5} {:>5} {:>5} {:>7} {:>11} {:>5}",
        "dataset", "n", "bacc", "acc", "tp", "fp", "tn", "fn", "neg", "ms/sample", "mode"
    );
    for (r, t) in reports {
        let ms = t.map(|t| format!("{:.3}", t.secs_per_sample * 1e3)).unwrap_or_else(|| "-".into());
        let mode = match (r.use_graph, r.calibration) {
            (false, _) => "off",
            (true, true) => "cal",
            (true, false) => "graph",
        };
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>7.4} {:>7.4} {:>5} {:>5} {:>5} {:>5} {:>7.4} {:>11} {:>5}",
            r.dataset, r.n, r.bacc, r.accuracy, r.tp, r.fp, r.tn, r.r#fn, r.negative_share, ms, mode
        );
    }
    s
}

/// Prepares every record, applying the missing-field policy.
pub fn prepare_records(model: &GraphCheck, records: Vec<RawSample>, policy: MissingPolicy) -> Result<(Vec<Prepared>, usize)> {
    let mut out = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for (i, r) in records.into_iter().enumerate() {
        match r.complete() {
            Some(s) => out.push(model.prepare(&s)?),
            None if policy == MissingPolicy::Skip => skipped += 1,
            None => return Err(Error::validation(format!("record {}", i + 1), "missing kg field")),
        }
    }
    Ok((out, skipped))
}

/// Classifies every prepared sample in eval mode and aggregates the results.
pub fn evaluate(model: &GraphCheck, dataset: &str, data: &[Prepared], skipped: usize) -> Result<(EvalReport, Timing)> {
    if data.is_empty() {
        return Err(Error::Metric("no samples to evaluate".into()));
    }
    let calls_before = model.verifier_calls();
    let start = Instant::now();
    let pred = predict_all(model, data)?;
    let total_secs = start.elapsed().as_secs_f64();
    let verifier_calls = model.verifier_calls() - calls_before;
    let gold: Vec<Label> = data.iter().map(|p| p.label).collect();
    let c = Confusion::from_pairs(&gold, &pred)?;
    let report = EvalReport {
        dataset: dataset.to_string(),
        n: data.len(),
        skipped,
        bacc: c.balanced_accuracy()?,
        accuracy: c.accuracy(),
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        r#fn: c.fn_,
        negative_share: (c.tn + c.fp) as f64 / c.total() as f64,
        verifier_calls,
        config_fingerprint: model.cfg.fingerprint(),
        use_graph: model.cfg.use_graph,
        calibration: model.cfg.verifier.calibration,
        manifest: None,
    };
    let timing = Timing {
        total_secs,
        secs_per_sample: total_secs / data.len() as f64,
    };
    Ok((report, timing))
}
