//! Coarse stage: per-app flow similarity, score-series segmentation, the
//! (q, p_min) vote and the logistic flow gate.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract, FeatureVector};
use crate::learn::{LogisticModel, TreeEnsembleModel, GATE_DIM};
use crate::traffic::Flow;

pub const BACKGROUND_LABEL: &str = "background";
/// Negative class of the one-vs-rest similarity models.
pub const REST_LABEL: &str = "~rest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Params {
    /// Flows in the neighbourhood used for `p_bar`, centred on the flow.
    pub neighborhood: usize,
    pub eps_split: f64,
    pub m_min: usize,
    pub eps_merge: f64,
    pub q: f64,
    pub p_min: f64,
    pub gate_threshold: f64,
}

impl Default for Stage1Params {
    fn default() -> Self {
        Self {
            neighborhood: 5,
            eps_split: 0.01,
            m_min: 3,
            eps_merge: 0.05,
            q: 0.8,
            p_min: 0.5,
            gate_threshold: 0.95,
        }
    }
}

impl Stage1Params {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("q", self.q)?;
        unit("p_min", self.p_min)?;
        unit("gate_threshold", self.gate_threshold)?;
        if self.neighborhood == 0 || self.m_min == 0 {
            return Err(Error::Config("neighborhood and m_min must be positive".into()));
        }
        if self.eps_split < 0.0 || self.eps_merge < 0.0 {
            return Err(Error::Config("segmentation thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFlow {
    pub flow_id: String,
    pub start_time: f64,
    pub end_time: f64,
    pub p: f64,
    pub r: f64,
    pub p_bar: f64,
    pub accept_prob: f64,
}

impl ScoredFlow {
    pub fn gate_tuple(&self) -> [f64; GATE_DIM] {
        [self.p, self.p_bar, self.p - self.r]
    }
}

/// Features of each flow, computed once and shared by every app's scoring.
pub fn flow_features(flows: &[&Flow]) -> Result<Vec<FeatureVector>> {
    flows.par_iter().map(|f| extract(&f.packets)).collect()
}

/// Mean over a window of `k` values centred on each index, truncated at the
/// ends of the series.
pub fn neighborhood_mean(values: &[f64], k: usize) -> Vec<f64> {
    let k = k.max(1);
    let before = (k - 1) / 2;
    let after = k - 1 - before;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Scores flows (ordered by start time) for one app. `accept_prob` is left at
/// 0 until a gate is applied.
pub fn score_flows(
    app: &str,
    flows: &[&Flow],
    features: &[FeatureVector],
    app_model: &TreeEnsembleModel,
    background_model: &TreeEnsembleModel,
    neighborhood: usize,
) -> Result<Vec<ScoredFlow>> {
    if flows.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: flows.len(),
            got: features.len(),
        });
    }
    let pr: Vec<(f64, f64)> = features
        .par_iter()
        .map(|fv| {
            Ok((
                app_model.proba_of(fv, app)?,
                background_model.proba_of(fv, BACKGROUND_LABEL)?,
            ))
        })
        .collect::<Result<_>>()?;
    let ps: Vec<f64> = pr.iter().map(|x| x.0).collect();
    let p_bar = neighborhood_mean(&ps, neighborhood);
    Ok(flows
        .iter()
        .zip(pr)
        .zip(p_bar)
        .map(|((f, (p, r)), p_bar)| ScoredFlow {
            flow_id: f.flow_id.clone(),
            start_time: f.start_time(),
            end_time: f.end_time(),
            p,
            r,
            p_bar,
            accept_prob: 0.0,
        })
        .collect())
}

pub fn apply_gate(scored: &mut [ScoredFlow], gate: &LogisticModel) {
    for s in scored {
        s.accept_prob = gate.predict(&s.gate_tuple());
    }
}

struct Prefix {
    sum: Vec<f64>,
}

impl Prefix {
    fn new(v: &[f64]) -> Self {
        let mut sum = Vec::with_capacity(v.len() + 1);
        sum.push(0.0);
        for x in v {
            sum.push(sum.last().unwrap() + x);
        }
        Self { sum }
    }

    fn mean(&self, r: &Range<usize>) -> f64 {
        (self.sum[r.end] - self.sum[r.start]) / r.len() as f64
    }
}

/// Between-segment variance gained by cutting `r` at `k`.
fn split_gain(pre: &Prefix, r: &Range<usize>, k: usize) -> f64 {
    let mu = pre.mean(r);
    let (left, right) = (r.start..k, k..r.end);
    let (ml, mr) = (pre.mean(&left), pre.mean(&right));
    (left.len() as f64 * (ml - mu).powi(2) + right.len() as f64 * (mr - mu).powi(2)) / r.len() as f64
}

fn divide(pre: &Prefix, r: Range<usize>, params: &Stage1Params, out: &mut Vec<Range<usize>>) {
    if r.len() < params.m_min.max(2) {
        out.push(r);
        return;
    }
    let mut best = (r.start, f64::NEG_INFINITY);
    for k in r.start + 1..r.end {
        let g = split_gain(pre, &r, k);
        if g > best.1 {
            best = (k, g);
        }
    }
    if best.1 < params.eps_split {
        out.push(r);
        return;
    }
    divide(pre, r.start..best.0, params, out);
    divide(pre, best.0..r.end, params, out);
}

/// Divisive-agglomerative segmentation of a score series into contiguous
/// index ranges covering it exactly once.
pub fn segment_score_series(p: &[f64], params: &Stage1Params) -> Vec<Range<usize>> {
    if p.is_empty() {
        return Vec::new();
    }
    let pre = Prefix::new(p);
    let mut segs = Vec::new();
    divide(&pre, 0..p.len(), params, &mut segs);
    // merge the closest adjacent pair until no pair is within eps_merge
    loop {
        let closest = (0..segs.len().saturating_sub(1))
            .map(|i| (i, (pre.mean(&segs[i]) - pre.mean(&segs[i + 1])).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match closest {
            Some((i, d)) if d < params.eps_merge => {
                let end = segs.remove(i + 1).end;
                segs[i].end = end;
            }
            _ => break,
        }
    }
    segs
}

/// Fraction of scores strictly above `p_min`.
pub fn vote_fraction(scores: &[f64], p_min: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(scores.iter().filter(|&&p| p > p_min).count() as f64 / scores.len() as f64)
}

/// True iff at least a `q` fraction of scores exceed `p_min`.
pub fn coarse_filter(scores: &[f64], q: f64, p_min: f64) -> Result<bool> {
    Ok(vote_fraction(scores, p_min)? >= q)
}

pub fn fine_gate(accept_prob: f64, threshold: f64) -> bool {
    accept_prob > threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub app: String,
    pub first_flow: usize,
    pub last_flow: usize,
    pub start_time: f64,
    pub end_time: f64,
    pub mean_p: f64,
    pub vote_fraction: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityWindow {
    pub app: String,
    pub start_time: f64,
    pub end_time: f64,
    /// Flows that passed the gate, in start-time order.
    pub flow_ids: Vec<String>,
    pub passed_coarse: bool,
}

/// Runs segmentation, vote and gate over one app's scored flows. Adjacent
/// passing segments are joined into one window; windows whose flows are all
/// rejected by the gate are dropped, and windows overlapping in time are
/// merged.
pub fn detect_windows(
    app: &str,
    scored: &[ScoredFlow],
    params: &Stage1Params,
) -> Result<(Vec<ActivityWindow>, Vec<SegmentReport>)> {
    let ps: Vec<f64> = scored.iter().map(|s| s.p).collect();
    let segs = segment_score_series(&ps, params);
    let mut reports = Vec::with_capacity(segs.len());
    let mut passing: Vec<Range<usize>> = Vec::new();
    for seg in segs {
        let vote = vote_fraction(&ps[seg.clone()], params.p_min)?;
        let passed = coarse_filter(&ps[seg.clone()], params.q, params.p_min)?;
        reports.push(SegmentReport {
            app: app.to_string(),
            first_flow: seg.start,
            last_flow: seg.end - 1,
            start_time: scored[seg.start].start_time,
            end_time: scored[seg.clone()]
                .iter()
                .map(|s| s.end_time)
                .fold(f64::NEG_INFINITY, f64::max),
            mean_p: ps[seg.clone()].iter().sum::<f64>() / seg.len() as f64,
            vote_fraction: vote,
            passed,
        });
        if passed {
            match passing.last_mut() {
                Some(last) if last.end == seg.start => last.end = seg.end,
                _ => passing.push(seg),
            }
        }
    }
    let windows = passing
        .into_iter()
        .filter_map(|seg| {
            let kept: Vec<&ScoredFlow> = scored[seg]
                .iter()
                .filter(|s| fine_gate(s.accept_prob, params.gate_threshold))
                .collect();
            if kept.is_empty() {
                return None;
            }
            Some(ActivityWindow {
                app: app.to_string(),
                start_time: kept.iter().map(|s| s.start_time).fold(f64::INFINITY, f64::min),
                end_time: kept.iter().map(|s| s.end_time).fold(f64::NEG_INFINITY, f64::max),
                flow_ids: kept.iter().map(|s| s.flow_id.clone()).collect(),
                passed_coarse: true,
            })
        })
        .collect();
    Ok((merge_overlapping(windows), reports))
}

fn merge_overlapping(windows: Vec<ActivityWindow>) -> Vec<ActivityWindow> {
    let mut out: Vec<ActivityWindow> = Vec::with_capacity(windows.len());
    for w in windows {
        match out.last_mut() {
            Some(last) if w.start_time <= last.end_time => {
                last.end_time = last.end_time.max(w.end_time);
                last.flow_ids.extend(w.flow_ids);
            }
            _ => out.push(w),
        }
    }
    out
}
