//! Metric outputs: learning-curve CSV, round-log JSON lines, comparison
//! tables.
//!
//! Floats use Rust's shortest round-trip formatting, so equal values always
//! render to identical bytes.

use std::fmt::Write;

use crate::error::Result;
use crate::orchestrator::RoundRecord;

pub const METRICS_HEADER: &str = "round,stage,accuracy,loss";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{},{},{},{}", r.round, r.stage.name(), opt(r.accuracy), opt(r.loss))
            .expect("writing to a String cannot fail");
    }
    out
}

pub fn round_jsonl(record: &RoundRecord) -> Result<String> {
    Ok(serde_json::to_string(record)? + "\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
}

pub fn summarize(method: &str, records: &[RoundRecord]) -> MethodSummary {
    let evaluated = || records.iter().filter_map(|r| r.accuracy);
    MethodSummary {
        method: method.to_string(),
        final_accuracy: records.last().and_then(|r| r.accuracy),
        best_accuracy: evaluated().reduce(f64::max),
    }
}

/// One row per round, one accuracy column per method.
pub fn compare_csv(runs: &[(String, Vec<RoundRecord>)]) -> String {
    let mut out = String::from("round");
    for (name, _) in runs {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let rounds = runs.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
    for i in 0..rounds {
        let round = runs
            .iter()
            .find_map(|(_, r)| r.get(i).map(|x| x.round))
            .unwrap_or(i + 1);
        out.push_str(&round.to_string());
        for (_, records) in runs {
            out.push(',');
            out.push_str(&opt(records.get(i).and_then(|r| r.accuracy)));
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from("method,final_accuracy,best_accuracy\n");
    for s in summaries {
        writeln!(out, "{},{},{}", s.method, opt(s.final_accuracy), opt(s.best_accuracy))
            .expect("writing to a String cannot fail");
    }
    out
}

/// Fixed-width table for terminals.
pub fn summary_table(summaries: &[MethodSummary]) -> String {
    let width = summaries.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into());
    let mut out = format!("{:<width$}  {:>9}  {:>9}\n", "method", "final %", "best %");
    for s in summaries {
        writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}",
            s.method,
            pct(s.final_accuracy),
            pct(s.best_accuracy)
        )
        .expect("writing to a String cannot fail");
    }
    out
}
