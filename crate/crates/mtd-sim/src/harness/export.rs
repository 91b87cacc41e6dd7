//! Result export. Trace CSV columns are fixed: k, g, alarm, x_norm,
//! xt_norm, u_norm, ua_norm, sa_norm; floats are written with Rust's
//! shortest round-trip formatting.

use crate::error::{Error, Result};
use crate::harness::mc::TrialStats;
use crate::harness::sim::TrialTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn from_path(path: &str) -> ExportFormat {
        if path.ends_with(".json") {
            ExportFormat::Json
        } else {
            ExportFormat::Csv
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn trace_to_csv(trace: &TrialTrace) -> String {
    let mut out = String::from("k,g,alarm,x_norm,xt_norm,u_norm,ua_norm,sa_norm\n");
    for (k, s) in trace.steps.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            k,
            s.g,
            u8::from(s.alarm),
            norm(&s.x),
            norm(&s.xt),
            norm(&s.u),
            norm(&s.u_a),
            norm(&s.s_a),
        ));
    }
    out
}

pub fn trace_to_json(trace: &TrialTrace) -> String {
    serde_json::to_string_pretty(trace).expect("trace serializes")
}

pub fn trace_from_json(text: &str) -> Result<TrialTrace> {
    serde_json::from_str(text)
        .map_err(|e| Error::config("/trace", format!("invalid trace JSON: {e}")))
}

pub fn stats_to_json(stats: &TrialStats) -> String {
    serde_json::to_string_pretty(stats).expect("stats serialize")
}

/// Per-step view of the Monte Carlo statistics as CSV.
pub fn stats_to_csv(stats: &TrialStats) -> String {
    let mut out = String::from("k,beta_hat,beta_ci_lo,beta_ci_hi,mean_g,se_g\n");
    for (k, rate) in stats.beta_hat.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k, rate.rate, rate.ci_lo, rate.ci_hi, stats.mean_g[k], stats.se_g[k]
        ));
    }
    out
}

pub fn write_file(path: &str, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })
}

pub fn export_trace(trace: &TrialTrace, format: ExportFormat, path: &str) -> Result<()> {
    let body = match format {
        ExportFormat::Csv => trace_to_csv(trace),
        ExportFormat::Json => trace_to_json(trace),
    };
    write_file(path, &body)
}

pub fn export_stats(stats: &TrialStats, format: ExportFormat, path: &str) -> Result<()> {
    let body = match format {
        ExportFormat::Csv => stats_to_csv(stats),
        ExportFormat::Json => stats_to_json(stats),
    };
    write_file(path, &body)
}
