use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::ModelBundle;
use crate::burst::{predict_sequence, UriSequence};
use crate::error::Result;
use crate::stage1::{apply_gate, detect_windows, flow_features, score_flows, ActivityWindow, SegmentReport};
use crate::traffic::{Flow, TrafficTrace};
use crate::urimap::{attribute_flows, best_match, best_refined_match, is_unseen, CanonicalUriMap, Claim, MatchResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub app: String,
    pub platform: String,
    pub behavior: String,
    /// Score behind the final label (refined when the window is unseen).
    pub score: f64,
    pub unrefined_score: f64,
    pub is_unseen: bool,
    pub refined: bool,
    pub start_time: f64,
    pub end_time: f64,
    pub flow_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TracePrediction {
    pub trace_id: String,
    pub windows: Vec<WindowPrediction>,
    /// flow id -> app that owns it after attribution
    pub owners: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SegmentReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequences: Vec<UriSequence>,
}

struct Candidate {
    window: ActivityWindow,
    sequence: UriSequence,
    result: MatchResult,
}

/// Runs the whole chain on one trace: similarity scoring, segmentation, vote,
/// gate, burst classification, map matching, unseen detection, attribution and
/// refinement.
pub fn infer(bundle: &ModelBundle, trace: &TrafficTrace) -> Result<TracePrediction> {
    bundle.validate()?;
    let cfg = &bundle.config;
    let mut out = TracePrediction {
        trace_id: trace.trace_id.clone(),
        ..Default::default()
    };
    let flows = trace.flows_by_start();
    if flows.is_empty() {
        return Ok(out);
    }
    let by_id: HashMap<&str, &Flow> = flows.iter().map(|f| (f.flow_id.as_str(), *f)).collect();
    let features = flow_features(&flows)?;

    let per_app: Vec<(Vec<Candidate>, Vec<SegmentReport>)> = bundle
        .similarity
        .par_iter()
        .map(|(app, model)| {
            let mut scored = score_flows(
                app,
                &flows,
                &features,
                model,
                &bundle.background,
                cfg.stage1.neighborhood,
            )?;
            apply_gate(&mut scored, &bundle.gate);
            let (windows, reports) = detect_windows(app, &scored, &cfg.stage1)?;
            let (Some(uri_model), cums) = (bundle.uri_models.get(app), bundle.cums_of(app).collect::<Vec<_>>()) else {
                return Ok((Vec::new(), reports));
            };
            let mut cands = Vec::new();
            for window in windows {
                let members: Vec<&Flow> = window.flow_ids.iter().map(|id| by_id[id.as_str()]).collect();
                let sequence = predict_sequence(app, &members, uri_model, cfg.delta_t)?;
                if let Some(result) = best_match(&sequence, &cums, cfg.lambda, cfg.tau)? {
                    cands.push(Candidate {
                        window,
                        sequence,
                        result,
                    });
                }
            }
            Ok((cands, reports))
        })
        .collect::<Result<_>>()?;

    let mut candidates = Vec::new();
    for (c, r) in per_app {
        candidates.extend(c);
        out.segments.extend(r);
    }

    let claims: Vec<Claim> = candidates
        .iter()
        .map(|c| Claim {
            app: c.window.app.clone(),
            score: c.result.score,
            flow_ids: c.window.flow_ids.clone(),
        })
        .collect();
    let attribution = attribute_flows(&claims);
    for (flow, &ci) in &attribution.owner {
        out.owners.insert(flow.clone(), claims[ci].app.clone());
    }

    for ci in attribution.surviving {
        let c = &candidates[ci];
        let owned: Vec<&Flow> = c
            .window
            .flow_ids
            .iter()
            .filter(|id| attribution.owner.get(*id) == Some(&ci))
            .map(|id| by_id[id.as_str()])
            .collect();
        let unseen = is_unseen(c.result.score, cfg.beta);
        let final_result = if unseen {
            let cums: Vec<&CanonicalUriMap> = bundle.cums_of(&c.window.app).collect();
            best_refined_match(&c.sequence, &cums, &bundle.partitions, cfg.lambda, cfg.tau)?
                .unwrap_or_else(|| c.result.clone())
        } else {
            c.result.clone()
        };
        out.windows.push(WindowPrediction {
            app: c.window.app.clone(),
            platform: final_result.platform.clone(),
            behavior: final_result.behavior.clone(),
            score: final_result.score,
            unrefined_score: c.result.score,
            is_unseen: unseen,
            refined: final_result.refined,
            start_time: owned.iter().map(|f| f.start_time()).fold(f64::INFINITY, f64::min),
            end_time: owned.iter().map(|f| f.end_time()).fold(f64::NEG_INFINITY, f64::max),
            flow_ids: owned.iter().map(|f| f.flow_id.clone()).collect(),
        });
        out.sequences.push(c.sequence.clone());
    }
    out.windows
        .sort_by(|a, b| a.start_time.total_cmp(&b.start_time).then_with(|| a.app.cmp(&b.app)));
    Ok(out)
}

/// Infers every trace; traces are independent.
pub fn infer_all(bundle: &ModelBundle, traces: &[TrafficTrace]) -> Result<Vec<TracePrediction>> {
    traces.par_iter().map(|t| infer(bundle, t)).collect()
}
