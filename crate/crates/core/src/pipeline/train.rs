use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::burst::label_training_bursts;
use crate::error::{Error, Result};
use crate::features::{extract, FEATURE_SCHEMA_VERSION};
use crate::learn::{train_ensemble, train_logistic, LogisticModel, TrainedEnsemble, TreeEnsembleModel, GATE_DIM};
use crate::stage1::{neighborhood_mean, BACKGROUND_LABEL, REST_LABEL};
use crate::synth::stream_rng;
use crate::traffic::{Flow, TrafficTrace};
use crate::urimap::{build_cum, instance_branches, partition_all, CanonicalUriMap, SharedPrivatePartition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub seed: u64,
    pub config: PipelineConfig,
    /// One-vs-rest flow similarity model per app.
    pub similarity: BTreeMap<String, TreeEnsembleModel>,
    pub background: TreeEnsembleModel,
    pub gate: LogisticModel,
    pub uri_models: BTreeMap<String, TreeEnsembleModel>,
    pub cums: Vec<CanonicalUriMap>,
    pub partitions: Vec<SharedPrivatePartition>,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        let models = self
            .similarity
            .values()
            .chain(self.uri_models.values())
            .chain(std::iter::once(&self.background));
        for m in models {
            if m.schema_version != self.schema_version {
                return Err(Error::SchemaMismatch {
                    model: m.schema_version,
                    extractor: self.schema_version,
                });
            }
        }
        if self.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                model: self.schema_version,
                extractor: FEATURE_SCHEMA_VERSION,
            });
        }
        if let Some(c) = self.cums.iter().find(|c| !self.similarity.contains_key(&c.app)) {
            return Err(Error::Config(format!("CUM for {} has no similarity model", c.app)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: ModelBundle = serde_json::from_str(s)?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn cums_of<'a>(&'a self, app: &'a str) -> impl Iterator<Item = &'a CanonicalUriMap> + 'a {
        self.cums.iter().filter(move |c| c.app == app)
    }
}

/// Seed for the `k`-th model trained under `tag`.
pub(crate) fn sub_seed(seed: u64, tag: u64, k: usize) -> u64 {
    stream_rng(seed, &[100 + tag, k as u64]).random()
}

fn require<'a>(flow: &'a Flow, field: Option<&'a String>, what: &str) -> Result<&'a str> {
    field
        .map(String::as_str)
        .ok_or_else(|| Error::MissingLabel(format!("flow {} has no {what} label", flow.flow_id)))
}

/// URI classifiers, CUMs and partitions: everything downstream of stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct UriStage {
    pub uri_models: BTreeMap<String, TreeEnsembleModel>,
    pub cums: Vec<CanonicalUriMap>,
    pub partitions: Vec<SharedPrivatePartition>,
}

pub fn train_uri_stage(traces: &[TrafficTrace], config: &PipelineConfig) -> Result<UriStage> {
    config.validate()?;
    // app -> labelled bursts
    let mut bursts: BTreeMap<String, Vec<(Vec<f64>, String)>> = BTreeMap::new();
    // (app, platform, behavior) -> instances
    let mut instances: BTreeMap<(String, String, String), Vec<Vec<&Flow>>> = BTreeMap::new();
    for trace in traces {
        let mut per_instance: BTreeMap<(String, String, String), Vec<&Flow>> = BTreeMap::new();
        for flow in &trace.flows {
            let app = require(flow, flow.app.as_ref(), "app")?;
            if app == BACKGROUND_LABEL {
                continue;
            }
            let platform = require(flow, flow.platform.as_ref(), "platform")?;
            let behavior = require(flow, flow.behavior.as_ref(), "behavior")?;
            per_instance
                .entry((app.to_string(), platform.to_string(), behavior.to_string()))
                .or_default()
                .push(flow);
        }
        for (key, flows) in per_instance {
            instances.entry(key).or_default().push(flows);
        }
    }
    for ((app, _, _), insts) in &instances {
        let labelled: Vec<(Vec<f64>, String)> = insts
            .par_iter()
            .flatten()
            .map(|f| label_training_bursts(f, config.delta_t))
            .collect::<Result<Vec<_>>>()?
            .into_par_iter()
            .flatten()
            .map(|(b, uri)| Ok((extract(&b.packets)?.values, uri)))
            .collect::<Result<_>>()?;
        bursts.entry(app.clone()).or_default().extend(labelled);
    }

    let mut uri_models = BTreeMap::new();
    for (k, (app, rows)) in bursts.into_iter().enumerate() {
        let (x, y): (Vec<Vec<f64>>, Vec<String>) = rows.into_iter().unzip();
        info!("training URI model for {app} on {} bursts", x.len());
        let m = train_ensemble(&x, &y, &config.uri_forest, sub_seed(config.seed, 3, k))?;
        uri_models.insert(app, m.model);
    }

    let mut cums = Vec::new();
    for ((app, platform, behavior), insts) in &instances {
        if insts.len() < config.min_instances {
            warn!(
                "{app}/{platform}/{behavior}: {} training instance(s), fewer than {}; skipped",
                insts.len(),
                config.min_instances
            );
            continue;
        }
        let branches = insts
            .iter()
            .map(|flows| instance_branches(flows, config.delta_t))
            .collect::<Result<Vec<_>>>()?;
        cums.push(build_cum(app, platform, behavior, &branches)?);
    }
    let partitions = partition_all(&cums)?;
    Ok(UriStage {
        uri_models,
        cums,
        partitions,
    })
}

/// Probability of `class` for every row: out-of-bag where available, the
/// full model otherwise.
fn oob_or_full(trained: &TrainedEnsemble, x: &[Vec<f64>], class: &str) -> Result<Vec<f64>> {
    let idx = trained.model.class_index(class);
    x.par_iter()
        .zip(&trained.oob_proba)
        .map(|(row, oob)| {
            let Some(i) = idx else { return Ok(0.0) };
            match oob {
                Some(p) => Ok(p[i]),
                None => Ok(trained.model.predict_proba(row)?[i]),
            }
        })
        .collect()
}

/// Trains every model family: flow similarity, background, gate, URI
/// classifiers and CUMs.
pub fn train(config: &PipelineConfig, traces: &[TrafficTrace]) -> Result<ModelBundle> {
    config.validate()?;
    for t in traces {
        t.validate()?;
    }
    // flows of every trace in start order, remembering trace boundaries
    let mut flows: Vec<&Flow> = Vec::new();
    let mut spans = Vec::with_capacity(traces.len());
    for t in traces {
        let start = flows.len();
        flows.extend(t.flows_by_start());
        spans.push(start..flows.len());
    }
    if flows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let labels: Vec<&str> = flows
        .iter()
        .map(|f| require(f, f.app.as_ref(), "app"))
        .collect::<Result<_>>()?;
    let x: Vec<Vec<f64>> = flows
        .par_iter()
        .map(|f| Ok(extract(&f.packets)?.values))
        .collect::<Result<_>>()?;
    let apps: BTreeSet<&str> = labels.iter().copied().filter(|a| *a != BACKGROUND_LABEL).collect();
    if apps.is_empty() {
        return Err(Error::MissingLabel("no app-labelled flows in training data".into()));
    }

    let mut similarity = BTreeMap::new();
    let mut oob_p: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (k, app) in apps.iter().enumerate() {
        let y: Vec<String> = labels
            .iter()
            .map(|l| {
                if l == app {
                    app.to_string()
                } else {
                    REST_LABEL.to_string()
                }
            })
            .collect();
        info!("training similarity model for {app} on {} flows", x.len());
        let trained = train_ensemble(&x, &y, &config.similarity_forest, sub_seed(config.seed, 1, k))?;
        oob_p.insert(app, oob_or_full(&trained, &x, app)?);
        similarity.insert(app.to_string(), trained.model);
    }

    let y_bg: Vec<String> = labels
        .iter()
        .map(|l| {
            if *l == BACKGROUND_LABEL {
                l.to_string()
            } else {
                REST_LABEL.to_string()
            }
        })
        .collect();
    let bg = train_ensemble(&x, &y_bg, &config.background_forest, sub_seed(config.seed, 2, 0))?;
    let r = oob_or_full(&bg, &x, BACKGROUND_LABEL)?;

    // gate rows: every (trace, app) pairing, positive when the flow is that app's
    let mut h: Vec<[f64; GATE_DIM]> = Vec::new();
    let mut y_gate: Vec<bool> = Vec::new();
    for span in &spans {
        for app in &apps {
            let p = &oob_p[app][span.clone()];
            let p_bar = neighborhood_mean(p, config.stage1.neighborhood);
            for (i, row) in span.clone().enumerate() {
                h.push([p[i], p_bar[i], p[i] - r[row]]);
                y_gate.push(labels[row] == *app);
            }
        }
    }
    let gate = train_logistic(&h, &y_gate, &config.gate)?;
    info!("gate weights {:?} bias {}", gate.weights, gate.bias);

    let uri = train_uri_stage(traces, config)?;
    let bundle = ModelBundle {
        schema_version: FEATURE_SCHEMA_VERSION,
        seed: config.seed,
        config: config.clone(),
        similarity,
        background: bg.model,
        gate,
        uri_models: uri.uri_models,
        cums: uri.cums,
        partitions: uri.partitions,
    };
    bundle.validate()?;
    Ok(bundle)
}
