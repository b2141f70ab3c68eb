//! Confidence-weighted, coverage-penalised map score and its uses: behavior
//! ranking, unseen detection, shared-URI refinement and the URI-bag baseline.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cum::{CanonicalUriMap, SharedPrivatePartition};
use super::lcs::lcs_match;
use crate::burst::UriSequence;
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub app: String,
    pub platform: String,
    pub behavior: String,
    pub score: f64,
    /// Matched unique URIs with their best matched confidence (`M`).
    pub matched: BTreeMap<String, f64>,
    /// CUM URIs present in the prediction with their max confidence (`P`).
    pub covered: BTreeMap<String, f64>,
    /// `|C|`
    pub cum_size: usize,
    /// Indices into the sequence's predictions that the LCS aligned.
    pub aligned: Vec<usize>,
    pub is_unseen: bool,
    pub refined: bool,
}

/// Per-URI maximum confidence over the whole sequence.
fn max_confidence(seq: &UriSequence) -> BTreeMap<&str, f64> {
    let mut out: BTreeMap<&str, f64> = BTreeMap::new();
    for p in &seq.predictions {
        let e = out.entry(p.uri.as_str()).or_insert(p.confidence);
        *e = e.max(p.confidence);
    }
    out
}

/// Scores a predicted sequence against one CUM.
///
/// Each domain branch of the CUM is aligned by LCS with the predictions of
/// that domain (gated at `tau`). The numerator sums, over unique matched URIs,
/// the best matched confidence that is at least `tau`; the denominator sums the
/// max confidence of every CUM URI present in the prediction and adds
/// `lambda` for each CUM URI that is absent.
pub fn score_map(seq: &UriSequence, cum: &CanonicalUriMap, lambda: f64, tau: f64) -> Result<MatchResult> {
    let c = cum.uri_set();
    if c.is_empty() {
        return Err(Error::Config(format!(
            "empty CUM for {}/{}/{}",
            cum.app, cum.platform, cum.behavior
        )));
    }
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be non-negative".into()));
    }
    let p_u = max_confidence(seq);
    let covered: BTreeMap<String, f64> = c
        .iter()
        .filter_map(|u| p_u.get(u).map(|&p| (u.to_string(), p)))
        .collect();

    let by_domain = seq.by_domain();
    let mut matched: BTreeMap<String, f64> = BTreeMap::new();
    let mut aligned = Vec::new();
    for (domain, branch) in &cum.branches {
        let Some(idx) = by_domain.get(domain.as_str()) else {
            continue;
        };
        let sub: Vec<(&str, f64)> = idx
            .iter()
            .map(|&i| (seq.predictions[i].uri.as_str(), seq.predictions[i].confidence))
            .collect();
        for (pi, _) in lcs_match(&sub, branch, tau) {
            let pred = &seq.predictions[idx[pi]];
            aligned.push(idx[pi]);
            if pred.confidence >= tau {
                let e = matched.entry(pred.uri.clone()).or_insert(pred.confidence);
                *e = e.max(pred.confidence);
            }
        }
    }
    aligned.sort_unstable();

    let numerator = matched.values().fold(0.0, |a, b| a + b);
    let denominator: f64 = covered.values().sum::<f64>() + lambda * (c.len() - covered.len()) as f64;
    let score = if denominator > 0.0 {
        (numerator / denominator).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(MatchResult {
        app: cum.app.clone(),
        platform: cum.platform.clone(),
        behavior: cum.behavior.clone(),
        score,
        matched,
        covered,
        cum_size: c.len(),
        aligned,
        is_unseen: false,
        refined: false,
    })
}

fn better(a: &MatchResult, b: &MatchResult) -> bool {
    // Higher score wins; ties go to the lexicographically smaller label.
    a.score > b.score || (a.score == b.score && (&a.app, &a.behavior, &a.platform) < (&b.app, &b.behavior, &b.platform))
}

/// Best-scoring candidate CUM for a sequence.
pub fn best_match(seq: &UriSequence, cums: &[&CanonicalUriMap], lambda: f64, tau: f64) -> Result<Option<MatchResult>> {
    let results: Vec<MatchResult> = cums
        .par_iter()
        .map(|c| score_map(seq, c, lambda, tau))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().reduce(|a, b| if better(&b, &a) { b } else { a }))
}

pub fn is_unseen(score: f64, beta: f64) -> bool {
    score <= beta
}

/// Tags results whose score does not exceed `beta` as unseen.
pub fn detect_unseen(results: &mut [MatchResult], beta: f64) {
    for r in results {
        r.is_unseen = is_unseen(r.score, beta);
    }
}

/// Rescores against the CUM restricted to shared URIs. Falls back to the
/// unrefined score when the partition shares nothing with the CUM.
pub fn refine_unseen(
    seq: &UriSequence,
    cum: &CanonicalUriMap,
    partition: &SharedPrivatePartition,
    lambda: f64,
    tau: f64,
) -> Result<MatchResult> {
    match cum.restricted_to(&partition.shared) {
        Some(shared_cum) => {
            let mut r = score_map(seq, &shared_cum, lambda, tau)?;
            r.refined = true;
            Ok(r)
        }
        None => {
            warn!(
                "no shared URIs for {}/{}/{}; keeping the unrefined score",
                cum.app, cum.platform, cum.behavior
            );
            score_map(seq, cum, lambda, tau)
        }
    }
}

/// Best refined match across candidates, looking up each CUM's partition by
/// (app, behavior). CUMs without a partition are scored unrefined.
pub fn best_refined_match(
    seq: &UriSequence,
    cums: &[&CanonicalUriMap],
    partitions: &[SharedPrivatePartition],
    lambda: f64,
    tau: f64,
) -> Result<Option<MatchResult>> {
    let results: Vec<MatchResult> = cums
        .par_iter()
        .map(
            |c| match partitions.iter().find(|p| p.app == c.app && p.behavior == c.behavior) {
                Some(p) => refine_unseen(seq, c, p, lambda, tau),
                None => score_map(seq, c, lambda, tau),
            },
        )
        .collect::<Result<_>>()?;
    Ok(results.into_iter().reduce(|a, b| if better(&b, &a) { b } else { a }))
}

/// Fraction of the CUM's URI set present among predicted URIs, ignoring order
/// and confidence.
pub fn bag_match_baseline(seq: &UriSequence, cum: &CanonicalUriMap) -> f64 {
    let c = cum.uri_set();
    if c.is_empty() {
        return 0.0;
    }
    let predicted: BTreeSet<&str> = seq.predictions.iter().map(|p| p.uri.as_str()).collect();
    c.intersection(&predicted).count() as f64 / c.len() as f64
}
