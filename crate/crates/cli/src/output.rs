//! Bit-stable CSV and JSON writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use sensecourt::engine::TraceMetrics;

use crate::CliError;

pub const TRACE_COLUMNS: [&str; 9] = [
    "slot",
    "policy",
    "replication",
    "user",
    "selected",
    "regulation",
    "payment",
    "active",
    "welfare_slot",
];

/// Formats like C's `%.9g`: 9 significant digits, trailing zeros trimmed,
/// scientific notation for exponents below -4 or from 9 up.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Io(path.to_path_buf(), e.into())
}

/// One row per (slot, user).
pub fn write_trace_csv(
    path: &Path,
    metrics: &TraceMetrics,
    replication: usize,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TRACE_COLUMNS)
        .map_err(|e| csv_error(path, e))?;
    let rep = replication.to_string();
    for t in 0..metrics.t_slots() {
        let slot = (t + 1).to_string();
        let welfare = fmt_g9(metrics.welfare_series[t]);
        for n in 0..metrics.n_users {
            let payment = metrics.payments_series.as_ref().map_or(0.0, |p| p[t][n]);
            w.write_record([
                slot.as_str(),
                metrics.policy.as_str(),
                rep.as_str(),
                n.to_string().as_str(),
                flag(metrics.selected_series[t][n]),
                fmt_g9(metrics.regulation_series[t][n]).as_str(),
                fmt_g9(payment).as_str(),
                flag(metrics.active_series[t][n]),
                welfare.as_str(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// A finished run as seen by the plot writers.
pub struct RunRef<'a> {
    pub replication: usize,
    pub metrics: &'a TraceMetrics,
}

pub fn write_plot_welfare(path: &Path, runs: &[RunRef<'_>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "policy",
        "replication",
        "slot",
        "welfare_slot",
        "running_avg_welfare",
    ])
    .map_err(|e| csv_error(path, e))?;
    for r in runs {
        let m = r.metrics;
        for t in 0..m.t_slots() {
            w.write_record([
                m.policy.clone(),
                r.replication.to_string(),
                (t + 1).to_string(),
                fmt_g9(m.welfare_series[t]),
                fmt_g9(m.running_avg_welfare[t]),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Min / mean / max allocation probability over the users still active.
pub fn write_plot_alloc_prob(path: &Path, runs: &[RunRef<'_>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "policy",
        "replication",
        "slot",
        "min_alloc_prob",
        "mean_alloc_prob",
        "max_alloc_prob",
    ])
    .map_err(|e| csv_error(path, e))?;
    for r in runs {
        let m = r.metrics;
        for t in 0..m.t_slots() {
            let probs: Vec<f64> = m.alloc_prob_series[t]
                .iter()
                .zip(&m.active_series[t])
                .filter(|(_, &a)| a)
                .map(|(p, _)| *p)
                .collect();
            let (lo, mean, hi) = if probs.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                (
                    probs.iter().cloned().fold(f64::INFINITY, f64::min),
                    probs.iter().sum::<f64>() / probs.len() as f64,
                    probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            w.write_record([
                m.policy.clone(),
                r.replication.to_string(),
                (t + 1).to_string(),
                fmt_g9(lo),
                fmt_g9(mean),
                fmt_g9(hi),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

pub fn write_plot_dropping(path: &Path, runs: &[RunRef<'_>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["policy", "replication", "slot", "dropping_fraction"])
        .map_err(|e| csv_error(path, e))?;
    for r in runs {
        let m = r.metrics;
        let mut dropped = 0usize;
        let mut events = m.drop_events.iter().peekable();
        for t in 1..=m.t_slots() as u64 {
            while events.next_if(|(_, s)| *s <= t).is_some() {
                dropped += 1;
            }
            w.write_record([
                m.policy.clone(),
                r.replication.to_string(),
                t.to_string(),
                fmt_g9(dropped as f64 / m.n_users as f64),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    let mut f = fs::File::create(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (2.0 / 3.0, "0.666666667"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001, "1e-05"),
            (-2.5e-7, "-2.5e-07"),
            (99999999.95, "100000000"),
            (999999999.5, "1e+09"),
            (-17.25, "-17.25"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g9(x), want, "{x}");
        }
    }
}
