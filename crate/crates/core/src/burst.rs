//! In-flow burstification and burst-level URI classification.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::extract;
use crate::learn::TreeEnsembleModel;
use crate::traffic::{Burst, Flow};

pub const DEFAULT_DELTA_T: f64 = 0.5;

/// Splits a flow wherever the gap between consecutive packets is at least
/// `delta_t`. The bursts concatenate back to the flow.
pub fn burstify(flow: &Flow, delta_t: f64) -> Vec<Burst> {
    assert!(delta_t > 0.0, "delta_t must be positive");
    let mut bursts = Vec::new();
    let mut start = 0;
    for i in 1..=flow.packets.len() {
        let boundary = i == flow.packets.len() || flow.packets[i].timestamp - flow.packets[i - 1].timestamp >= delta_t;
        if boundary && i > start {
            let packets = flow.packets[start..i].to_vec();
            bursts.push(Burst {
                parent_flow_id: flow.flow_id.clone(),
                domain: flow.domain.clone(),
                offset: start,
                start_time: packets[0].timestamp,
                end_time: packets[packets.len() - 1].timestamp,
                packets,
            });
            start = i;
        }
    }
    bursts
}

/// Training labels: each burst takes the URI of its first packet.
pub fn label_training_bursts(flow: &Flow, delta_t: f64) -> Result<Vec<(Burst, String)>> {
    burstify(flow, delta_t)
        .into_iter()
        .map(|b| {
            let uri = b.packets[0].uri.clone().ok_or_else(|| {
                Error::MissingLabel(format!("flow {} packet {} has no uri label", flow.flow_id, b.offset))
            })?;
            Ok((b, uri))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UriPrediction {
    pub flow_id: String,
    /// Position of the burst within its flow.
    pub burst_index: usize,
    pub domain: String,
    /// Burst start time.
    pub timestamp: f64,
    pub uri: String,
    pub confidence: f64,
}

/// Predicted URIs for one app candidate, ordered by burst start time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UriSequence {
    pub app: String,
    pub predictions: Vec<UriPrediction>,
}

impl UriSequence {
    pub fn new(app: impl Into<String>, mut predictions: Vec<UriPrediction>) -> Self {
        predictions.sort_by(|a, b| {
            a.timestamp
                .total_cmp(&b.timestamp)
                .then_with(|| a.flow_id.cmp(&b.flow_id))
                .then_with(|| a.burst_index.cmp(&b.burst_index))
        });
        Self {
            app: app.into(),
            predictions,
        }
    }

    /// Indices into `predictions`, grouped by domain, each group in time order.
    pub fn by_domain(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.predictions.iter().enumerate() {
            out.entry(p.domain.as_str()).or_default().push(i);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// Classifies bursts with an app's URI model. Confidence is the maximum class
/// probability.
pub fn classify_bursts(bursts: &[Burst], uri_model: &TreeEnsembleModel) -> Result<Vec<UriPrediction>> {
    let mut index_in_flow: BTreeMap<&str, usize> = BTreeMap::new();
    let indices: Vec<usize> = bursts
        .iter()
        .map(|b| {
            let slot = index_in_flow.entry(b.parent_flow_id.as_str()).or_insert(0);
            let i = *slot;
            *slot += 1;
            i
        })
        .collect();
    bursts
        .par_iter()
        .zip(indices)
        .map(|(b, burst_index)| {
            let fv = extract(&b.packets)?;
            let (uri, confidence) = uri_model.predict(&fv)?;
            Ok(UriPrediction {
                flow_id: b.parent_flow_id.clone(),
                burst_index,
                domain: b.domain.clone(),
                timestamp: b.start_time,
                uri,
                confidence,
            })
        })
        .collect()
}

/// Burstifies and classifies every flow, returning the ordered sequence.
pub fn predict_sequence(
    app: &str,
    flows: &[&Flow],
    uri_model: &TreeEnsembleModel,
    delta_t: f64,
) -> Result<UriSequence> {
    let bursts: Vec<Burst> = flows.iter().flat_map(|f| burstify(f, delta_t)).collect();
    Ok(UriSequence::new(app, classify_bursts(&bursts, uri_model)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{Direction, Packet};

    fn flow_at(times: &[f64]) -> Flow {
        Flow {
            flow_id: "f".into(),
            domain: "d".into(),
            packets: times
                .iter()
                .map(|&t| Packet::new(t, Direction::Outbound, 100))
                .collect(),
            app: None,
            platform: None,
            behavior: None,
        }
    }

    #[test]
    fn splits_at_threshold() {
        let bursts = burstify(&flow_at(&[0.0, 0.1, 0.8, 0.85]), 0.5);
        let times: Vec<Vec<f64>> = bursts
            .iter()
            .map(|b| b.packets.iter().map(|p| p.timestamp).collect())
            .collect();
        assert_eq!(times, vec![vec![0.0, 0.1], vec![0.8, 0.85]]);
        assert_eq!(bursts[1].offset, 2);
    }

    #[test]
    fn gap_equal_to_threshold_starts_new_burst() {
        assert_eq!(burstify(&flow_at(&[0.0, 0.5]), 0.5).len(), 2);
    }

    #[test]
    fn single_packet_and_huge_threshold() {
        assert_eq!(burstify(&flow_at(&[3.0]), 0.5).len(), 1);
        assert_eq!(burstify(&flow_at(&[0.0, 1.0, 5.0, 9.0]), 100.0).len(), 1);
    }

    fn labelled(labels: &[(f64, &str)]) -> Flow {
        let mut f = flow_at(&labels.iter().map(|l| l.0).collect::<Vec<_>>());
        for (p, (_, uri)) in f.packets.iter_mut().zip(labels) {
            p.uri = Some(uri.to_string());
        }
        f
    }

    #[test]
    fn first_uri_labels_the_burst() {
        let f = labelled(&[(0.0, "a"), (0.01, "a"), (0.02, "b")]);
        let labels: Vec<String> = label_training_bursts(&f, 0.5)
            .unwrap()
            .into_iter()
            .map(|(_, u)| u)
            .collect();
        assert_eq!(labels, vec!["a"]);

        let f = labelled(&[(0.0, "a"), (0.01, "a"), (2.0, "b"), (2.01, "b")]);
        let labels: Vec<String> = label_training_bursts(&f, 0.5)
            .unwrap()
            .into_iter()
            .map(|(_, u)| u)
            .collect();
        assert_eq!(labels, vec!["a", "b"]);
    }

    #[test]
    fn unlabelled_packet_is_an_error_in_training() {
        let f = flow_at(&[0.0]);
        assert!(matches!(label_training_bursts(&f, 0.5), Err(Error::MissingLabel(_))));
    }
}
