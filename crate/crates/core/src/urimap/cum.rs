use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::burst::label_training_bursts;
use crate::error::{Error, Result};
use crate::traffic::Flow;

/// Ground-truth URI invocation order of one behavior execution, per domain.
pub type InstanceBranches = BTreeMap<String, Vec<String>>;

/// Canonical URI Map: the modal invocation sequence of each domain branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalUriMap {
    pub app: String,
    pub platform: String,
    pub behavior: String,
    pub branches: BTreeMap<String, Vec<String>>,
    /// Fraction of training instances whose branch equals the canonical one.
    pub support: BTreeMap<String, f64>,
    pub instances: usize,
}

impl CanonicalUriMap {
    /// The unique URI set `C` over all branches.
    pub fn uri_set(&self) -> BTreeSet<&str> {
        self.branches.values().flatten().map(String::as_str).collect()
    }

    /// Copy keeping only URIs in `keep`; `None` if nothing survives.
    pub fn restricted_to(&self, keep: &BTreeSet<String>) -> Option<CanonicalUriMap> {
        let branches: BTreeMap<String, Vec<String>> = self
            .branches
            .iter()
            .filter_map(|(d, seq)| {
                let kept: Vec<String> = seq.iter().filter(|u| keep.contains(*u)).cloned().collect();
                (!kept.is_empty()).then(|| (d.clone(), kept))
            })
            .collect();
        if branches.is_empty() {
            return None;
        }
        let support = self
            .support
            .iter()
            .filter(|(d, _)| branches.contains_key(*d))
            .map(|(d, s)| (d.clone(), *s))
            .collect();
        Some(CanonicalUriMap {
            branches,
            support,
            ..self.clone()
        })
    }
}

/// Per-domain URI order of one labelled instance, read off its training bursts.
pub fn instance_branches(flows: &[&Flow], delta_t: f64) -> Result<InstanceBranches> {
    let mut timed: BTreeMap<String, Vec<(f64, String)>> = BTreeMap::new();
    for flow in flows {
        for (burst, uri) in label_training_bursts(flow, delta_t)? {
            timed
                .entry(flow.domain.clone())
                .or_default()
                .push((burst.start_time, uri));
        }
    }
    Ok(timed
        .into_iter()
        .map(|(d, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (d, v.into_iter().map(|(_, u)| u).collect())
        })
        .collect())
}

/// Most frequent sequence; ties go to the shorter, then lexicographically
/// smaller one.
fn modal<'a>(seqs: impl Iterator<Item = &'a Vec<String>>) -> Option<(Vec<String>, usize)> {
    let mut counts: BTreeMap<&Vec<String>, usize> = BTreeMap::new();
    for s in seqs {
        *counts.entry(s).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .min_by(|(a, ca), (b, cb)| cb.cmp(ca).then(a.len().cmp(&b.len())).then(a.cmp(b)))
        .map(|(s, c)| (s.clone(), c))
}

pub fn build_cum(app: &str, platform: &str, behavior: &str, instances: &[InstanceBranches]) -> Result<CanonicalUriMap> {
    if instances.is_empty() {
        return Err(Error::MissingLabel(format!(
            "no labelled instances for {app}/{platform}/{behavior}"
        )));
    }
    let domains: BTreeSet<&String> = instances.iter().flat_map(|i| i.keys()).collect();
    let empty = Vec::new();
    let mut branches = BTreeMap::new();
    let mut support = BTreeMap::new();
    for domain in domains {
        let seqs = instances.iter().map(|i| i.get(domain).unwrap_or(&empty));
        if let Some((seq, count)) = modal(seqs) {
            if !seq.is_empty() {
                support.insert(domain.clone(), count as f64 / instances.len() as f64);
                branches.insert(domain.clone(), seq);
            }
        }
    }
    if branches.is_empty() {
        return Err(Error::MissingLabel(format!(
            "instances for {app}/{platform}/{behavior} carry no URIs"
        )));
    }
    Ok(CanonicalUriMap {
        app: app.to_string(),
        platform: platform.to_string(),
        behavior: behavior.to_string(),
        branches,
        support,
        instances: instances.len(),
    })
}

/// URIs of one (app, behavior) split into those seen on every platform and
/// the per-platform remainders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedPrivatePartition {
    pub app: String,
    pub behavior: String,
    pub shared: BTreeSet<String>,
    pub private: BTreeMap<String, BTreeSet<String>>,
}

/// Partitions the CUMs of one (app, behavior) across platforms. With a
/// single platform every URI is treated as shared.
pub fn partition_shared_private(cums: &[&CanonicalUriMap]) -> Result<SharedPrivatePartition> {
    let first = cums
        .first()
        .ok_or_else(|| Error::Config("partition needs at least one CUM".into()))?;
    if let Some(c) = cums.iter().find(|c| c.app != first.app || c.behavior != first.behavior) {
        return Err(Error::Config(format!(
            "partition mixes {}/{} with {}/{}",
            first.app, first.behavior, c.app, c.behavior
        )));
    }
    let sets: BTreeMap<String, BTreeSet<String>> = cums
        .iter()
        .map(|c| (c.platform.clone(), c.uri_set().into_iter().map(String::from).collect()))
        .collect();
    if sets.len() < 2 {
        debug!(
            "{}/{} observed on a single platform; treating every URI as shared",
            first.app, first.behavior
        );
    }
    let mut iter = sets.values();
    let mut shared = iter.next().cloned().unwrap_or_default();
    for s in iter {
        shared = shared.intersection(s).cloned().collect();
    }
    let private = sets
        .iter()
        .map(|(p, s)| (p.clone(), s.difference(&shared).cloned().collect()))
        .collect();
    Ok(SharedPrivatePartition {
        app: first.app.clone(),
        behavior: first.behavior.clone(),
        shared,
        private,
    })
}

/// Partitions every behavior of the given CUMs.
pub fn partition_all(cums: &[CanonicalUriMap]) -> Result<Vec<SharedPrivatePartition>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&CanonicalUriMap>> = BTreeMap::new();
    for c in cums {
        groups.entry((&c.app, &c.behavior)).or_default().push(c);
    }
    groups.values().map(|g| partition_shared_private(g)).collect()
}
