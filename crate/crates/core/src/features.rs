//! 123-slot side-channel feature vector for any ordered packet group.
//!
//! Layout (slot ranges):
//!
//! | range      | family      | count |
//! |------------|-------------|-------|
//! | `0..8`     | general     | 8     |
//! | `8..28`    | interactive | 20    |
//! | `28..33`   | rate        | 5     |
//! | `33..72`   | temporal    | 39    |
//! | `72..123`  | size        | 51    |
//!
//! Statistics that are undefined for the input (moments of fewer than two or
//! three samples, percentiles of an empty direction, relative arrival times of
//! a zero-duration group) are reported as 0.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{Direction, Packet};

pub const FEATURE_DIM: usize = 123;
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

pub const GENERAL: std::ops::Range<usize> = 0..8;
pub const INTERACTIVE: std::ops::Range<usize> = 8..28;
pub const RATE: std::ops::Range<usize> = 28..33;
pub const TEMPORAL: std::ops::Range<usize> = 33..72;
pub const SIZE: std::ops::Range<usize> = 72..123;

const RUN_STATS: [&str; 9] = [
    "run_count",
    "run_len_mean",
    "run_len_std",
    "run_len_max",
    "run_len_min",
    "run_bytes_mean",
    "run_bytes_std",
    "run_bytes_max",
    "run_bytes_min",
];
const TEMPORAL_STATS: [&str; 13] = [
    "iat_mean", "iat_std", "iat_var", "iat_min", "iat_max", "iat_skew", "iat_p25", "iat_p75", "rel_p10", "rel_p25",
    "rel_p50", "rel_p75", "rel_p90",
];
const SIZE_STATS: [&str; 17] = [
    "size_mean",
    "size_std",
    "size_var",
    "size_max",
    "size_min",
    "size_skew",
    "size_kurt",
    "size_mad",
    "size_p10",
    "size_p20",
    "size_p30",
    "size_p40",
    "size_p50",
    "size_p60",
    "size_p70",
    "size_p80",
    "size_p90",
];
const SCOPES: [&str; 3] = ["bi", "out", "in"];

/// Column names for every slot, in order. This is the CSV header contract.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names: Vec<String> = [
            "pkt_total",
            "pkt_out",
            "pkt_in",
            "pct_in",
            "bytes_total",
            "bytes_out",
            "bytes_in",
            "duration",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for dir in ["out", "in"] {
            names.extend(RUN_STATS.iter().map(|s| format!("{dir}_{s}")));
        }
        names.push("direction_flip_count".into());
        names.push("first_packet_direction".into());
        names.extend(
            ["rate_mean", "rate_std", "rate_max", "rate_min", "active_windows"]
                .iter()
                .map(|s| s.to_string()),
        );
        for scope in SCOPES {
            names.extend(TEMPORAL_STATS.iter().map(|s| format!("{scope}_{s}")));
        }
        for scope in SCOPES {
            names.extend(SIZE_STATS.iter().map(|s| format!("{scope}_{s}")));
        }
        debug_assert_eq!(names.len(), FEATURE_DIM);
        names
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: u32,
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Summary moments of a sample. Population (ddof = 0) variance.
struct Moments {
    mean: f64,
    var: f64,
    skew: f64,
    kurt: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    if n == 0 {
        return Moments {
            mean: 0.0,
            var: 0.0,
            skew: 0.0,
            kurt: 0.0,
        };
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    if n < 2 {
        return Moments {
            mean,
            var: 0.0,
            skew: 0.0,
            kurt: 0.0,
        };
    }
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let constant = xs.iter().all(|&x| x == xs[0]);
    let (skew, kurt) = if n < 3 || constant || m2 <= 0.0 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Moments {
        mean,
        var: if constant { 0.0 } else { m2 },
        skew,
        kurt,
    }
}

/// Linear interpolation between closest ranks over a sorted slice.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = p / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

fn push_run_stats(out: &mut Vec<f64>, lens: &[f64], bytes: &[f64]) {
    let lm = moments(lens);
    let bm = moments(bytes);
    let (lmin, lmax) = min_max(lens);
    let (bmin, bmax) = min_max(bytes);
    out.extend_from_slice(&[
        lens.len() as f64,
        lm.mean,
        lm.var.sqrt(),
        lmax,
        lmin,
        bm.mean,
        bm.var.sqrt(),
        bmax,
        bmin,
    ]);
}

fn push_temporal(out: &mut Vec<f64>, times: &[f64], t_first: f64, duration: f64) {
    let iats: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let m = moments(&iats);
    let (lo, hi) = min_max(&iats);
    let iat_sorted = sorted(&iats);
    out.extend_from_slice(&[
        m.mean,
        m.var.sqrt(),
        m.var,
        lo,
        hi,
        m.skew,
        percentile_sorted(&iat_sorted, 25.0),
        percentile_sorted(&iat_sorted, 75.0),
    ]);
    let rel: Vec<f64> = if duration > 0.0 {
        times.iter().map(|t| (t - t_first) / duration).collect()
    } else {
        Vec::new()
    };
    let rel = sorted(&rel);
    for p in [10.0, 25.0, 50.0, 75.0, 90.0] {
        out.push(percentile_sorted(&rel, p));
    }
}

fn push_size(out: &mut Vec<f64>, sizes: &[f64]) {
    let m = moments(sizes);
    let (lo, hi) = min_max(sizes);
    let s = sorted(sizes);
    let median = percentile_sorted(&s, 50.0);
    let deviations: Vec<f64> = sorted(&s.iter().map(|x| (x - median).abs()).collect::<Vec<_>>());
    out.extend_from_slice(&[
        m.mean,
        m.var.sqrt(),
        m.var,
        hi,
        lo,
        m.skew,
        m.kurt,
        percentile_sorted(&deviations, 50.0),
    ]);
    for decile in 1..=9 {
        out.push(percentile_sorted(&s, f64::from(decile) * 10.0));
    }
}

/// Extracts the feature vector of a timestamp-ordered packet group.
pub fn extract(packets: &[Packet]) -> Result<FeatureVector> {
    if packets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = Vec::with_capacity(FEATURE_DIM);

    let t_first = packets[0].timestamp;
    let duration = packets[packets.len() - 1].timestamp - t_first;
    let mut times = [Vec::new(), Vec::new(), Vec::new()];
    let mut sizes = [Vec::new(), Vec::new(), Vec::new()];
    for p in packets {
        let scope = if p.direction == Direction::Outbound { 1 } else { 2 };
        times[0].push(p.timestamp);
        times[scope].push(p.timestamp);
        sizes[0].push(f64::from(p.size));
        sizes[scope].push(f64::from(p.size));
    }

    // general
    let total = packets.len() as f64;
    let n_out = times[1].len() as f64;
    let n_in = times[2].len() as f64;
    let bytes_out = sizes[1].iter().fold(0.0, |a, b| a + b);
    let bytes_in = sizes[2].iter().fold(0.0, |a, b| a + b);
    v.extend_from_slice(&[
        total,
        n_out,
        n_in,
        n_in / total,
        bytes_out + bytes_in,
        bytes_out,
        bytes_in,
        duration,
    ]);

    // interactive: maximal same-direction runs
    let mut run_lens = [Vec::new(), Vec::new()];
    let mut run_bytes = [Vec::new(), Vec::new()];
    let mut flips = 0usize;
    let mut current = packets[0].direction;
    let (mut len, mut bytes) = (0.0, 0.0);
    for p in packets {
        if p.direction != current {
            let k = usize::from(current == Direction::Inbound);
            run_lens[k].push(len);
            run_bytes[k].push(bytes);
            flips += 1;
            current = p.direction;
            len = 0.0;
            bytes = 0.0;
        }
        len += 1.0;
        bytes += f64::from(p.size);
    }
    let k = usize::from(current == Direction::Inbound);
    run_lens[k].push(len);
    run_bytes[k].push(bytes);
    for k in 0..2 {
        push_run_stats(&mut v, &run_lens[k], &run_bytes[k]);
    }
    v.push(flips as f64);
    v.push(if packets[0].direction == Direction::Inbound {
        1.0
    } else {
        0.0
    });

    // rate over 1-second windows anchored at the first packet
    let n_windows = duration.floor() as usize + 1;
    let mut counts = vec![0.0f64; n_windows];
    for p in packets {
        let idx = ((p.timestamp - t_first).floor() as usize).min(n_windows - 1);
        counts[idx] += 1.0;
    }
    let cm = moments(&counts);
    let (cmin, cmax) = min_max(&counts);
    let active = counts.iter().filter(|&&c| c > 0.0).count() as f64;
    v.extend_from_slice(&[cm.mean, cm.var.sqrt(), cmax, cmin, active]);

    for scope in &times {
        push_temporal(&mut v, scope, t_first, duration);
    }
    for scope in &sizes {
        push_size(&mut v, scope);
    }

    debug_assert_eq!(v.len(), FEATURE_DIM);
    Ok(FeatureVector {
        values: v,
        schema_version: FEATURE_SCHEMA_VERSION,
    })
}
