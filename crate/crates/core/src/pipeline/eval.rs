use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::infer::{TracePrediction, WindowPrediction};
use crate::error::{Error, Result};
use crate::stage1::BACKGROUND_LABEL;
use crate::traffic::{GroundTruthWindow, TrafficTrace};

/// Row/column label for a missed true window or a spurious prediction.
pub const NONE_LABEL: &str = "none";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    /// Sorted; `NONE_LABEL` included when it occurs.
    pub labels: Vec<String>,
    /// `matrix[truth][pred]`
    pub matrix: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn from_pairs(pairs: &[(String, String)]) -> Self {
        let labels: Vec<String> = pairs
            .iter()
            .flat_map(|(t, p)| [t.clone(), p.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut matrix = vec![vec![0; labels.len()]; labels.len()];
        for (t, p) in pairs {
            matrix[index[t.as_str()]][index[p.as_str()]] += 1;
        }
        Self { labels, matrix }
    }

    pub fn total(&self) -> usize {
        self.matrix.iter().flatten().sum()
    }

    /// One-vs-rest counts for `label`.
    pub fn counts(&self, label: &str) -> Counts {
        let Some(i) = self.labels.iter().position(|l| l == label) else {
            return Counts {
                tn: self.total(),
                ..Default::default()
            };
        };
        let tp = self.matrix[i][i];
        let row: usize = self.matrix[i].iter().sum();
        let col: usize = self.matrix.iter().map(|r| r[i]).sum();
        let (fn_, fp) = (row - tp, col - tp);
        Counts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    pub fn fnr(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            1.0 - self.recall()
        }
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// 1 when there are no negatives, so that FPR + TNR = 1 always.
    pub fn tnr(&self) -> f64 {
        1.0 - self.fpr()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fnr: f64,
    pub fpr: f64,
}

impl ClassMetrics {
    fn new(label: &str, counts: Counts) -> Self {
        Self {
            label: label.to_string(),
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            fnr: counts.fnr(),
            fpr: counts.fpr(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fnr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelReport {
    pub confusion: Confusion,
    pub classes: Vec<ClassMetrics>,
    /// Unweighted mean over `classes`.
    pub macro_avg: Summary,
}

impl LevelReport {
    pub fn from_pairs(pairs: &[(String, String)]) -> Self {
        let confusion = Confusion::from_pairs(pairs);
        let classes: Vec<ClassMetrics> = confusion
            .labels
            .iter()
            .filter(|l| *l != NONE_LABEL)
            .map(|l| ClassMetrics::new(l, confusion.counts(l)))
            .collect();
        let n = classes.len().max(1) as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / n;
        let macro_avg = Summary {
            precision: mean(|c| c.precision),
            recall: mean(|c| c.recall),
            f1: mean(|c| c.f1),
            fnr: mean(|c| c.fnr),
            fpr: mean(|c| c.fpr),
        };
        Self {
            confusion,
            classes,
            macro_avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub behavior: LevelReport,
    pub app: LevelReport,
    /// Fraction of app flows whose attributed owner is the true app.
    pub flow_accuracy: f64,
    /// Same, over only the app flows some window claimed.
    #[serde(default)]
    pub attribution_accuracy: f64,
    pub unseen_f1: Option<f64>,
}

pub fn behavior_label(app: &str, behavior: &str) -> String {
    format!("{app}/{behavior}")
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Pairs each true window with at most one prediction. A prediction is
/// eligible when it covers at least `threshold` of the true window; among
/// eligible ones a label match wins, then the larger overlap. Returns
/// `(truth index, prediction index)` pairs.
pub fn match_windows(
    truth: &[GroundTruthWindow],
    preds: &[WindowPrediction],
    threshold: f64,
) -> Vec<(Option<usize>, Option<usize>)> {
    let mut used = vec![false; preds.len()];
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| truth[a].start.total_cmp(&truth[b].start));
    let mut out = Vec::new();
    for ti in order {
        let t = &truth[ti];
        let len = t.end - t.start;
        let best = preds
            .iter()
            .enumerate()
            .filter(|(pi, _)| !used[*pi])
            .map(|(pi, p)| (pi, overlap((t.start, t.end), (p.start_time, p.end_time)), p))
            .filter(|(_, ov, _)| *ov >= threshold * len && *ov > 0.0)
            .max_by(|a, b| {
                let la = a.2.app == t.app && a.2.behavior == t.behavior;
                let lb = b.2.app == t.app && b.2.behavior == t.behavior;
                la.cmp(&lb).then(a.1.total_cmp(&b.1)).then(b.0.cmp(&a.0))
            })
            .map(|(pi, _, _)| pi);
        if let Some(pi) = best {
            used[pi] = true;
        }
        out.push((Some(ti), best));
    }
    out.extend(
        used.iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(pi, _)| (None, Some(pi))),
    );
    out
}

/// Scores predictions against the ground-truth windows and flow labels of
/// `truth`. Every prediction must name a trace in `truth`; truth traces with
/// no prediction count as empty predictions.
pub fn evaluate(preds: &[TracePrediction], truth: &[TrafficTrace], threshold: f64) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &TracePrediction> = preds.iter().map(|p| (p.trace_id.as_str(), p)).collect();
    let truth_ids: BTreeSet<&str> = truth.iter().map(|t| t.trace_id.as_str()).collect();
    if let Some(id) = by_id.keys().find(|id| !truth_ids.contains(*id)) {
        return Err(Error::InvalidTrace {
            trace_id: id.to_string(),
            message: "prediction has no ground truth".into(),
        });
    }
    let empty = TracePrediction::default();
    let mut behavior_pairs = Vec::new();
    let mut app_pairs = Vec::new();
    let (mut flows, mut owned, mut owned_right) = (0usize, 0usize, 0usize);
    for t in truth {
        let p = by_id.get(t.trace_id.as_str()).copied().unwrap_or(&empty);
        for (ti, pi) in match_windows(&t.windows, &p.windows, threshold) {
            let tw = ti.map(|i| &t.windows[i]);
            let pw = pi.map(|i| &p.windows[i]);
            let none = || NONE_LABEL.to_string();
            behavior_pairs.push((
                tw.map_or_else(none, |w| behavior_label(&w.app, &w.behavior)),
                pw.map_or_else(none, |w| behavior_label(&w.app, &w.behavior)),
            ));
            app_pairs.push((
                tw.map_or_else(none, |w| w.app.clone()),
                pw.map_or_else(none, |w| w.app.clone()),
            ));
        }
        for f in &t.flows {
            match f.app.as_deref() {
                Some(app) if app != BACKGROUND_LABEL => {
                    flows += 1;
                    if let Some(owner) = p.owners.get(&f.flow_id) {
                        owned += 1;
                        if owner == app {
                            owned_right += 1;
                        }
                    }
                }
                _ => {}
            }
        }
    }
    Ok(EvalReport {
        behavior: LevelReport::from_pairs(&behavior_pairs),
        app: LevelReport::from_pairs(&app_pairs),
        flow_accuracy: ratio(owned_right, flows),
        attribution_accuracy: ratio(owned_right, owned),
        unseen_f1: None,
    })
}

/// F1 of a binary detector, positives being `true`.
pub fn binary_f1(pred: &[bool], truth: &[bool]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count();
    let fp = pred.iter().zip(truth).filter(|(p, t)| **p && !**t).count();
    let fn_ = pred.iter().zip(truth).filter(|(p, t)| !**p && **t).count();
    Counts { tp, fp, fn_, tn: 0 }.f1()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub behavior_f1: MeanStd,
    pub behavior_precision: MeanStd,
    pub behavior_recall: MeanStd,
    pub behavior_fnr: MeanStd,
    pub behavior_fpr: MeanStd,
    pub app_f1: MeanStd,
    /// Per behavior label, F1 across the runs where it appears.
    pub per_behavior_f1: BTreeMap<String, MeanStd>,
    pub per_app_f1: BTreeMap<String, MeanStd>,
}

pub fn summarize_runs(reports: &[EvalReport]) -> RunSummary {
    let col = |f: fn(&EvalReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let per_class = |level: fn(&EvalReport) -> &LevelReport| {
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in reports {
            for c in &level(r).classes {
                acc.entry(c.label.clone()).or_default().push(c.f1);
            }
        }
        acc.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect()
    };
    RunSummary {
        runs: reports.len(),
        behavior_f1: col(|r| r.behavior.macro_avg.f1),
        behavior_precision: col(|r| r.behavior.macro_avg.precision),
        behavior_recall: col(|r| r.behavior.macro_avg.recall),
        behavior_fnr: col(|r| r.behavior.macro_avg.fnr),
        behavior_fpr: col(|r| r.behavior.macro_avg.fpr),
        app_f1: col(|r| r.app.macro_avg.f1),
        per_behavior_f1: per_class(|r| &r.behavior),
        per_app_f1: per_class(|r| &r.app),
    }
}
