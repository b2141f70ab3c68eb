#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xprint_core::features::{extract, feature_names, FEATURE_DIM};
use xprint_core::pipeline::PipelineConfig;
use xprint_core::synth::ScenarioConfig;
use xprint_core::traffic::{Direction, Packet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn out(t: f64, size: u32) -> Packet {
    Packet::new(t, Direction::Outbound, size)
}

pub fn inb(t: f64, size: u32) -> Packet {
    Packet::new(t, Direction::Inbound, size)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ------------------------------------------------------------ reference features
//
// Written straight from the column list, name by name, without sharing any code
// with the library extractor.

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s / xs.len() as f64
    }
}

fn central(xs: &[f64], k: i32) -> f64 {
    let m = mean(xs);
    let mut s = 0.0;
    for x in xs {
        s += (x - m).powi(k);
    }
    s / xs.len() as f64
}

fn all_equal(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

fn var(xs: &[f64]) -> f64 {
    if xs.len() < 2 || all_equal(xs) {
        0.0
    } else {
        central(xs, 2)
    }
}

fn skew(xs: &[f64]) -> f64 {
    if xs.len() < 3 || all_equal(xs) {
        return 0.0;
    }
    let sd = central(xs, 2).sqrt();
    central(xs, 3) / (sd * sd * sd)
}

fn kurt(xs: &[f64]) -> f64 {
    if xs.len() < 3 || all_equal(xs) {
        return 0.0;
    }
    let v = central(xs, 2);
    central(xs, 4) / (v * v) - 3.0
}

fn lo(xs: &[f64]) -> f64 {
    xs.iter().copied().reduce(f64::min).unwrap_or(0.0)
}

fn hi(xs: &[f64]) -> f64 {
    xs.iter().copied().reduce(f64::max).unwrap_or(0.0)
}

/// numpy's default ("linear") percentile.
fn pct(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * q / 100.0;
    let i = h.floor() as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] + (h - i as f64) * (s[i + 1] - s[i])
}

pub fn reference_features(packets: &[Packet]) -> BTreeMap<String, f64> {
    let mut f = BTreeMap::new();
    let mut put = |k: String, v: f64| {
        assert!(f.insert(k.clone(), v).is_none(), "duplicate column {k}");
    };
    let is_out = |p: &Packet| p.direction == Direction::Outbound;
    let t0 = packets[0].timestamp;
    let dur = packets.last().unwrap().timestamp - t0;

    let pick = |scope: &str| -> Vec<&Packet> {
        packets
            .iter()
            .filter(|p| match scope {
                "out" => is_out(p),
                "in" => !is_out(p),
                _ => true,
            })
            .collect()
    };
    let outs = pick("out");
    let ins = pick("in");
    let bytes = |ps: &[&Packet]| ps.iter().map(|p| p.size as f64).sum::<f64>() + 0.0;

    put("pkt_total".into(), packets.len() as f64);
    put("pkt_out".into(), outs.len() as f64);
    put("pkt_in".into(), ins.len() as f64);
    put("pct_in".into(), ins.len() as f64 / packets.len() as f64);
    put("bytes_total".into(), packets.iter().map(|p| p.size as f64).sum());
    put("bytes_out".into(), bytes(&outs));
    put("bytes_in".into(), bytes(&ins));
    put("duration".into(), dur);

    // runs: cut wherever the direction changes
    let mut cuts = vec![0];
    for i in 1..packets.len() {
        if packets[i].direction != packets[i - 1].direction {
            cuts.push(i);
        }
    }
    cuts.push(packets.len());
    for dir in ["out", "in"] {
        let want_out = dir == "out";
        let mut lens = Vec::new();
        let mut sizes = Vec::new();
        for w in cuts.windows(2) {
            let run = &packets[w[0]..w[1]];
            if is_out(&run[0]) == want_out {
                lens.push(run.len() as f64);
                sizes.push(run.iter().map(|p| p.size as f64).sum());
            }
        }
        put(format!("{dir}_run_count"), lens.len() as f64);
        put(format!("{dir}_run_len_mean"), mean(&lens));
        put(format!("{dir}_run_len_std"), var(&lens).sqrt());
        put(format!("{dir}_run_len_max"), hi(&lens));
        put(format!("{dir}_run_len_min"), lo(&lens));
        put(format!("{dir}_run_bytes_mean"), mean(&sizes));
        put(format!("{dir}_run_bytes_std"), var(&sizes).sqrt());
        put(format!("{dir}_run_bytes_max"), hi(&sizes));
        put(format!("{dir}_run_bytes_min"), lo(&sizes));
    }
    put("direction_flip_count".into(), (cuts.len() - 2) as f64);
    put(
        "first_packet_direction".into(),
        if is_out(&packets[0]) { 0.0 } else { 1.0 },
    );

    let windows = dur.floor() as usize + 1;
    let mut counts = vec![0.0; windows];
    for p in packets {
        let k = (p.timestamp - t0).floor() as usize;
        counts[k.min(windows - 1)] += 1.0;
    }
    put("rate_mean".into(), mean(&counts));
    put("rate_std".into(), var(&counts).sqrt());
    put("rate_max".into(), hi(&counts));
    put("rate_min".into(), lo(&counts));
    put(
        "active_windows".into(),
        counts.iter().filter(|c| **c != 0.0).count() as f64,
    );

    for scope in ["bi", "out", "in"] {
        let ps = pick(scope);
        let iat: Vec<f64> = (1..ps.len()).map(|i| ps[i].timestamp - ps[i - 1].timestamp).collect();
        put(format!("{scope}_iat_mean"), mean(&iat));
        put(format!("{scope}_iat_std"), var(&iat).sqrt());
        put(format!("{scope}_iat_var"), var(&iat));
        put(format!("{scope}_iat_min"), lo(&iat));
        put(format!("{scope}_iat_max"), hi(&iat));
        put(format!("{scope}_iat_skew"), skew(&iat));
        put(format!("{scope}_iat_p25"), pct(&iat, 25.0));
        put(format!("{scope}_iat_p75"), pct(&iat, 75.0));
        let rel: Vec<f64> = if dur > 0.0 {
            ps.iter().map(|p| (p.timestamp - t0) / dur).collect()
        } else {
            vec![]
        };
        for q in [10, 25, 50, 75, 90] {
            put(format!("{scope}_rel_p{q}"), pct(&rel, q as f64));
        }
    }
    for scope in ["bi", "out", "in"] {
        let xs: Vec<f64> = pick(scope).iter().map(|p| p.size as f64).collect();
        let med = pct(&xs, 50.0);
        let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
        put(format!("{scope}_size_mean"), mean(&xs));
        put(format!("{scope}_size_std"), var(&xs).sqrt());
        put(format!("{scope}_size_var"), var(&xs));
        put(format!("{scope}_size_max"), hi(&xs));
        put(format!("{scope}_size_min"), lo(&xs));
        put(format!("{scope}_size_skew"), skew(&xs));
        put(format!("{scope}_size_kurt"), kurt(&xs));
        put(format!("{scope}_size_mad"), pct(&dev, 50.0));
        for d in 1..=9 {
            put(format!("{scope}_size_p{}", d * 10), pct(&xs, d as f64 * 10.0));
        }
    }
    f
}

/// First column where the two extractors disagree beyond 1e-9.
pub fn feature_mismatch(packets: &[Packet]) -> Option<(String, f64, f64)> {
    let main = extract(packets).unwrap();
    let reference = reference_features(packets);
    assert_eq!(reference.len(), FEATURE_DIM);
    feature_names().iter().zip(&main.values).find_map(|(name, &got)| {
        let want = *reference.get(name).unwrap_or_else(|| panic!("reference lacks {name}"));
        (!close(got, want, 1e-9)).then(|| (name.clone(), got, want))
    })
}

/// Random packet group. `shape` picks the degenerate family: 0 mixed,
/// 1 outbound only, 2 inbound only, 3 singleton, 4 all at one instant.
pub fn random_group(r: &mut ChaCha8Rng, shape: u32) -> Vec<Packet> {
    let n = match shape {
        3 => 1,
        _ => r.random_range(2..=60),
    };
    let span = match shape {
        4 => 0.0,
        _ => [0.3, 2.0, 7.5, 40.0][r.random_range(0..4)],
    };
    let t0 = r.random_range(0.0..1000.0);
    let mut ts: Vec<f64> = (0..n).map(|_| t0 + r.random_range(0.0..=span)).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // occasional simultaneous packets
    for i in 1..n {
        if r.random_bool(0.05) {
            ts[i] = ts[i - 1];
        }
    }
    let fixed_size = r.random_bool(0.1).then(|| r.random_range(40..1500));
    ts.into_iter()
        .map(|t| {
            let dir = match shape {
                1 => Direction::Outbound,
                2 => Direction::Inbound,
                _ if r.random_bool(0.5) => Direction::Outbound,
                _ => Direction::Inbound,
            };
            let size = fixed_size.unwrap_or_else(|| r.random_range(1..=1500));
            Packet::new(t, dir, size)
        })
        .collect()
}

// ------------------------------------------------------------------ LCS oracle

pub const SYMBOLS: [&str; 4] = ["a", "b", "c", "d"];

/// Every sequence over the 4 symbols of length `0..=max_len`, shortest first.
pub fn all_sequences(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for len in 1..=max_len {
        for code in 0..4usize.pow(len as u32) {
            out.push((0..len).map(|i| ((code >> (2 * i)) & 3) as u8).collect());
        }
    }
    out
}

/// Position of `s` in [`all_sequences`].
pub fn seq_index(s: &[u8]) -> usize {
    let offset: usize = (0..s.len()).map(|l| 4usize.pow(l as u32)).sum();
    offset
        + s.iter()
            .enumerate()
            .map(|(i, &c)| (c as usize) << (2 * i))
            .sum::<usize>()
}

fn subsequences(s: &[u8]) -> Vec<Vec<u8>> {
    (0..1u32 << s.len())
        .map(|mask| (0..s.len()).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect())
        .collect()
}

/// For every sequence `s` over the alphabet (up to `max_len`), the set of
/// sequences in `bs` having `s` as a subsequence.
pub struct SubsequenceIndex {
    words: usize,
    bits: Vec<u64>,
}

impl SubsequenceIndex {
    pub fn build(bs: &[Vec<u8>], max_len: usize) -> Self {
        let words = bs.len().div_ceil(64);
        let total = seq_index(&vec![3u8; max_len]) + 1;
        let mut bits = vec![0u64; total * words];
        for (j, b) in bs.iter().enumerate() {
            for sub in subsequences(b) {
                bits[seq_index(&sub) * words + j / 64] |= 1 << (j % 64);
            }
        }
        Self { words, bits }
    }

    /// LCS length of `a` with every indexed sequence: the longest subsequence
    /// of `a` that the other one also contains.
    pub fn lcs_lengths(&self, a: &[u8], n: usize) -> Vec<u8> {
        let mut by_len: Vec<Vec<Vec<u8>>> = vec![Vec::new(); a.len() + 1];
        for sub in subsequences(a) {
            by_len[sub.len()].push(sub);
        }
        let mut out = vec![0u8; n];
        let mut found = vec![0u64; self.words];
        for len in (1..=a.len()).rev() {
            let mut union = vec![0u64; self.words];
            for sub in &by_len[len] {
                let row = &self.bits[seq_index(sub) * self.words..][..self.words];
                for (u, r) in union.iter_mut().zip(row) {
                    *u |= r;
                }
            }
            for (w, (u, f)) in union.iter().zip(found.iter_mut()).enumerate() {
                let mut fresh = u & !*f;
                *f |= u;
                while fresh != 0 {
                    let b = fresh.trailing_zeros() as usize;
                    out[w * 64 + b] = len as u8;
                    fresh &= fresh - 1;
                }
            }
        }
        out
    }
}

/// True when symbols first appear in the order 0, 1, 2, ...: one member of
/// each class of sequences equal up to renaming symbols.
pub fn first_occurrence_ordered(s: &[u8]) -> bool {
    let mut next = 0u8;
    for &c in s {
        if c > next {
            return false;
        }
        if c == next {
            next += 1;
        }
    }
    true
}

pub fn as_predicted(s: &[u8]) -> Vec<(&'static str, f64)> {
    s.iter().map(|&c| (SYMBOLS[c as usize], 1.0)).collect()
}

pub fn as_canonical(s: &[u8]) -> Vec<&'static str> {
    s.iter().map(|&c| SYMBOLS[c as usize]).collect()
}

// ------------------------------------------------------------------ DTW oracle

/// Minimum cost over every monotone alignment path, enumerated one by one.
pub fn dtw_brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// Every series of length `1..=max_len` over `values`.
pub fn all_series(values: &[f64], max_len: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut layer: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| {
                values.iter().map(move |&v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

// ------------------------------------------------------------------- scenarios

/// A few apps on one platform, quick to train.
pub fn small_scenario(seed: u64) -> ScenarioConfig {
    let mut s = ScenarioConfig::new(seed);
    s.apps = 3;
    s.platforms = vec!["android".into()];
    s.behaviors_per_app = 2;
    s.instances_per_behavior = 12;
    s.train_per_behavior = 8;
    s.merge_prob = 0.5;
    s
}

pub fn fast_pipeline(seed: u64) -> PipelineConfig {
    let mut p = PipelineConfig {
        seed,
        ..Default::default()
    };
    p.similarity_forest.n_trees = 30;
    p.background_forest.n_trees = 30;
    p.uri_forest.n_trees = 30;
    p.gate.epochs = 500;
    p
}

/// Compares `lcs_match` with the subsequence oracle for every `a` in `left`
/// against every sequence of length `..=max_len`. Returns (pairs, mismatches).
pub fn lcs_agreement(left: &[Vec<u8>], max_len: usize) -> (usize, usize) {
    use rayon::prelude::*;
    use xprint_core::urimap::lcs_match;
    let right = all_sequences(max_len);
    let index = SubsequenceIndex::build(&right, max_len);
    let canon: Vec<Vec<&str>> = right.iter().map(|b| as_canonical(b)).collect();
    let bad: usize = left
        .par_iter()
        .map(|a| {
            let want = index.lcs_lengths(a, right.len());
            let pred = as_predicted(a);
            canon
                .iter()
                .zip(&want)
                .filter(|(b, &w)| lcs_match(&pred, b, 0.5).len() != w as usize)
                .count()
        })
        .sum();
    (left.len() * right.len(), bad)
}

/// Every monotone alignment path through an `n` by `m` grid, as cell lists.
pub fn monotone_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(n: usize, m: usize, path: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        let (i, j) = *path.last().unwrap();
        if i + 1 == n && j + 1 == m {
            out.push(path.clone());
            return;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            if i + di < n && j + dj < m {
                path.push((i + di, j + dj));
                walk(n, m, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(n, m, &mut vec![(0, 0)], &mut out);
    out
}

/// Cheapest of the given paths.
pub fn cheapest_path(a: &[f64], b: &[f64], paths: &[Vec<(usize, usize)>]) -> f64 {
    paths
        .iter()
        .map(|p| p.iter().map(|&(i, j)| (a[i] - b[j]).abs()).fold(0.0, |s, c| s + c))
        .fold(f64::INFINITY, f64::min)
}
