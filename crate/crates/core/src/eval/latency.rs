use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Suggestion-length buckets, in tokens.
pub const LENGTH_BUCKETS: [(usize, usize); 3] = [(1, 5), (6, 10), (11, 15)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    /// Wall time of the whole request.
    pub micros: f64,
    /// Decoding steps the request ran.
    pub steps: usize,
    /// Length of the returned suggestion in tokens; 0 if none.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub name: String,
    pub requests: usize,
    pub per_step_us: f64,
    pub per_step_relative: f64,
    /// Mean microseconds per suggestion in each length bucket, `None` when
    /// the bucket is empty.
    pub bucket_us: Vec<Option<f64>>,
    pub bucket_relative: Vec<Option<f64>>,
    pub p50_us: f64,
    pub p90_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub baseline: String,
    pub rows: Vec<LatencyRow>,
}

/// Nearest-rank percentile: the `ceil(q · n)`-th smallest sample.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Summarizes named sample sets relative to the first one.
pub fn latency_report(runs: &[(String, Vec<LatencySample>)]) -> LatencyReport {
    let raw: Vec<(f64, Vec<Option<f64>>)> = runs
        .iter()
        .map(|(_, samples)| {
            let steps: usize = samples.iter().map(|s| s.steps).sum();
            let total: f64 = samples.iter().map(|s| s.micros).sum();
            let per_step = if steps == 0 { f64::NAN } else { total / steps as f64 };
            let buckets = LENGTH_BUCKETS
                .iter()
                .map(|&(lo, hi)| {
                    mean(
                        samples
                            .iter()
                            .filter(|s| (lo..=hi).contains(&s.length))
                            .map(|s| s.micros),
                    )
                })
                .collect();
            (per_step, buckets)
        })
        .collect();
    let (base_step, base_buckets) = raw.first().cloned().unwrap_or((f64::NAN, vec![None; 3]));
    let rows = runs
        .iter()
        .zip(raw)
        .map(|((name, samples), (per_step, buckets))| {
            let micros: Vec<f64> = samples.iter().map(|s| s.micros).collect();
            let bucket_relative = buckets
                .iter()
                .zip(&base_buckets)
                .map(|(b, base)| match (b, base) {
                    (Some(b), Some(base)) => Some(b / base),
                    _ => None,
                })
                .collect();
            LatencyRow {
                name: name.clone(),
                requests: samples.len(),
                per_step_us: per_step,
                per_step_relative: per_step / base_step,
                bucket_us: buckets,
                bucket_relative,
                p50_us: percentile(&micros, 0.5),
                p90_us: percentile(&micros, 0.9),
            }
        })
        .collect();
    LatencyReport {
        baseline: runs.first().map(|r| r.0.clone()).unwrap_or_default(),
        rows,
    }
}

impl LatencyReport {
    /// Relative latencies against the baseline row, then absolute p50/p90.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "relative latency (baseline: {})", self.baseline);
        let _ = writeln!(
            s,
            "{:<24} {:>9} {:>9} {:>9} {:>9}",
            "configuration", "per-step", "1-5", "6-10", "11-15"
        );
        let rel = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:>9.2} {:>9} {:>9} {:>9}",
                r.name,
                r.per_step_relative,
                rel(r.bucket_relative[0]),
                rel(r.bucket_relative[1]),
                rel(r.bucket_relative[2])
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<24} {:>9} {:>12} {:>10} {:>10}",
            "configuration", "requests", "us/step", "p50 us", "p90 us"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:>9} {:>12.1} {:>10.1} {:>10.1}",
                r.name, r.requests, r.per_step_us, r.p50_us, r.p90_us
            );
        }
        s
    }
}
