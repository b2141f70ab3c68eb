use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::family::{make_cross_platform_family, BehaviorSpec};
use super::generate::{background_flows, instance_trace};
use super::stream_rng;
use crate::error::Result;
use crate::traffic::{merge_traces, quantize, TrafficTrace};

/// One instance embedded in background traffic: `margin` seconds of
/// background on either side.
pub fn scenario_trace(spec: &BehaviorSpec, cfg: &ScenarioConfig, trace_id: &str, seed: u64) -> TrafficTrace {
    let mut rng = stream_rng(seed, &[0]);
    let mut trace = instance_trace(spec, trace_id, cfg.margin, &mut rng);
    let end = trace.windows[0].end + cfg.margin;
    let mut bg_rng = stream_rng(seed, &[1]);
    trace.flows.extend(background_flows(
        &cfg.background,
        &format!("{trace_id}:bg-"),
        0.0,
        end,
        &mut bg_rng,
    ));
    trace.flows.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()));
    trace
}

/// `count` scenario traces per spec; `tag` separates independent corpora.
pub fn scenario_traces(specs: &[BehaviorSpec], cfg: &ScenarioConfig, count: usize, tag: u64) -> Vec<TrafficTrace> {
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..count).map(move |i| (s, i))).collect();
    jobs.par_iter()
        .map(|&(s, i)| {
            let spec = &specs[s];
            let id = format!("{}/{}/{}/{tag}-{i}", spec.app, spec.platform, spec.behavior);
            let seed = stream_rng(cfg.seed, &[6, tag, s as u64, i as u64]).random();
            scenario_trace(spec, cfg, &id, seed)
        })
        .collect()
}

fn window_app(t: &TrafficTrace) -> Option<&str> {
    t.windows.first().map(|w| w.app.as_str())
}

/// Shuffles test traces and merges pairs of different apps with probability
/// `merge_prob`, the second delayed by up to `max_merge_delay` seconds.
pub fn merge_test_traces(traces: Vec<TrafficTrace>, cfg: &ScenarioConfig, tag: u64) -> Result<Vec<TrafficTrace>> {
    let mut rng = stream_rng(cfg.seed, &[7, tag]);
    let mut pool: Vec<Option<TrafficTrace>> = traces.into_iter().map(Some).collect();
    pool.shuffle(&mut rng);
    let mut out = Vec::new();
    for i in 0..pool.len() {
        let Some(a) = pool[i].take() else { continue };
        if rng.random::<f64>() < cfg.merge_prob {
            let partner =
                (i + 1..pool.len()).find(|&j| pool[j].as_ref().is_some_and(|b| window_app(b) != window_app(&a)));
            if let Some(j) = partner {
                let b = pool[j].take().expect("partner present");
                let delay = rng.random_range(0.0..=cfg.max_merge_delay);
                let mut merged = merge_traces(&a, &b, delay)?;
                // keep written traces byte-identical on reload
                for p in merged.flows.iter_mut().flat_map(|f| f.packets.iter_mut()) {
                    p.timestamp = quantize(p.timestamp);
                }
                for w in &mut merged.windows {
                    (w.start, w.end) = (quantize(w.start), quantize(w.end));
                }
                out.push(merged);
                continue;
            }
        }
        out.push(a);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<TrafficTrace>,
    pub test: Vec<TrafficTrace>,
    pub specs: Vec<BehaviorSpec>,
}

/// Training traces are single instances; test traces are merged in pairs.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let specs = make_cross_platform_family(cfg)?;
    let all = scenario_traces(&specs, cfg, cfg.instances_per_behavior, 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, t) in all.into_iter().enumerate() {
        if k % cfg.instances_per_behavior < cfg.train_per_behavior {
            train.push(t);
        } else {
            test.push(t);
        }
    }
    let test = merge_test_traces(test, cfg, 0)?;
    Ok(Dataset { train, test, specs })
}

/// Everything needed to regenerate and interpret a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ScenarioConfig,
    pub specs: Vec<BehaviorSpec>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(config: &ScenarioConfig, specs: &[BehaviorSpec]) -> Self {
        Self {
            config: config.clone(),
            specs: specs.to_vec(),
            notes: vec![
                format!(
                    "intra-invocation gaps uniform in [{}, {}] s and inter-invocation gaps uniform in [{}, {}] s are modelling choices, not measurements",
                    config.timing.intra_gap.0,
                    config.timing.intra_gap.1,
                    config.timing.inter_gap.0,
                    config.timing.inter_gap.1
                ),
                "each domain branch is one flow starting within flow_start_jitter of the instance start".into(),
            ],
        }
    }
}
