use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::eval::{behavior_label, binary_f1, evaluate, summarize_runs, EvalReport, LevelReport, RunSummary, Summary};
use super::infer::infer_all;
use super::train::{train, train_uri_stage, UriStage};
use crate::burst::{burstify, predict_sequence, UriSequence};
use crate::error::{Error, Result};
use crate::stage1::BACKGROUND_LABEL;
use crate::synth::{
    app_name, app_specs, generate_dataset, scenario_traces, stream_rng, BehaviorSpec, FamilyVariant, ScenarioConfig,
};
use crate::traffic::{Flow, TrafficTrace};
use crate::urimap::{
    bag_match_baseline, best_match, best_refined_match, dtw_similarity, is_unseen, signed_size_series, CanonicalUriMap,
};

pub const EXPERIMENTS: [&str; 8] = [
    "delta-sweep",
    "map-vs-bag",
    "lambda-beta-grid",
    "unseen-platform",
    "unseen-app",
    "unseen-version",
    "interleaved",
    "dtw-consistency",
];

pub const SWEEP_DELTAS: [f64; 4] = [0.05, 0.5, 2.0, 5.0];
pub const GRID_LAMBDAS: [f64; 10] = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0];
pub const GRID_BETAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Platform held out of training in the unseen-platform experiment.
pub const UNSEEN_PLATFORM: &str = "web";
/// Fraction of private URIs replaced in the unseen-version experiment.
pub const VERSION_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    /// Replaces the experiment's preset scenario; its seed is overwritten.
    pub scenario: Option<ScenarioConfig>,
    /// Independent repetitions (interleaved only).
    pub runs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pipeline: PipelineConfig::default(),
            scenario: None,
            runs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    fn scenario_for(&self, name: &str) -> Result<ScenarioConfig> {
        let mut s = match &self.scenario {
            Some(s) => s.clone(),
            None => preset(name, self.seed)?,
        };
        s.seed = self.seed;
        s.validate()?;
        Ok(s)
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            ..self.pipeline.clone()
        }
    }
}

/// Scenario each experiment runs on unless overridden.
pub fn preset(name: &str, seed: u64) -> Result<ScenarioConfig> {
    let mut s = ScenarioConfig::new(seed);
    s.platforms = vec!["android".into()];
    s.merge_prob = 0.0;
    match name {
        "delta-sweep" => {
            s.apps = 5;
            s.instances_per_behavior = 20;
            s.train_per_behavior = 15;
            s.timing.intra_stall_prob = 0.15;
        }
        "map-vs-bag" => {
            s.apps = 5;
            s.behaviors_per_app = 4;
            s.behavior_overlap = 0.67;
            s.timing.spurious_uri_rate = 1.0;
            s.instances_per_behavior = 40;
            s.train_per_behavior = 20;
        }
        "lambda-beta-grid" | "unseen-app" => {
            s.apps = 20;
            s.shared_fraction = 0.2;
            s.uris_per_behavior = 10;
            s.instances_per_behavior = 50;
            s.train_per_behavior = 40;
        }
        "unseen-platform" | "unseen-version" => {
            s.platforms = vec!["android".into(), "ios".into()];
            s.uris_per_behavior = 10;
            s.shared_fraction = 0.4;
            s.behavior_overlap = 0.2;
            s.private_taper = 3;
            s.instances_per_behavior = 50;
            s.train_per_behavior = 40;
        }
        "interleaved" => {
            s.merge_prob = 0.5;
        }
        "dtw-consistency" => {
            s.apps = 5;
            s.platforms = vec!["android".into(), "ios".into(), "web".into()];
            s.instances_per_behavior = 4;
            s.train_per_behavior = 4;
        }
        other => return Err(Error::UnknownExperiment(other.to_string())),
    }
    Ok(s)
}

fn app_flows(trace: &TrafficTrace) -> Vec<&Flow> {
    let mut flows: Vec<&Flow> = trace
        .flows
        .iter()
        .filter(|f| f.app.as_deref().is_some_and(|a| a != BACKGROUND_LABEL))
        .collect();
    flows.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()));
    flows
}

/// Training and held-out single-instance traces of `specs`.
fn split_traces(specs: &[BehaviorSpec], s: &ScenarioConfig) -> (Vec<TrafficTrace>, Vec<TrafficTrace>) {
    let train = scenario_traces(specs, s, s.train_per_behavior, 0);
    let test = scenario_traces(specs, s, s.instances_per_behavior - s.train_per_behavior, 1);
    (train, test)
}

fn known_specs(s: &ScenarioConfig) -> Result<Vec<BehaviorSpec>> {
    crate::synth::make_cross_platform_family(s)
}

fn variant_specs(s: &ScenarioConfig, variant: impl Fn(usize) -> FamilyVariant) -> Result<Vec<BehaviorSpec>> {
    let mut out = Vec::new();
    for a in 0..s.apps {
        out.extend(app_specs(s, a, &variant(a))?);
    }
    Ok(out)
}

/// One held-out instance scored without stage 1: its own flows, classified by
/// the URI model of `candidate`.
#[derive(Debug, Clone)]
struct DirectCase {
    truth: String,
    candidate: String,
    unseen: bool,
    seq: UriSequence,
}

fn direct_cases(
    stage: &UriStage,
    traces: &[TrafficTrace],
    unseen: bool,
    delta_t: f64,
    // true app -> candidate app and the behavior label it should map to
    candidate_of: impl Fn(&str) -> String + Sync,
) -> Result<Vec<DirectCase>> {
    traces
        .par_iter()
        .map(|t| {
            let w = &t.windows[0];
            let candidate = candidate_of(&w.app);
            let model = stage
                .uri_models
                .get(&candidate)
                .ok_or_else(|| Error::Config(format!("no URI model for {candidate}")))?;
            let seq = predict_sequence(&candidate, &app_flows(t), model, delta_t)?;
            Ok(DirectCase {
                truth: behavior_label(&candidate, &w.behavior),
                candidate,
                unseen,
                seq,
            })
        })
        .collect()
}

fn cums_of<'a>(stage: &'a UriStage, app: &str) -> Vec<&'a CanonicalUriMap> {
    stage.cums.iter().filter(|c| c.app == app).collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Scored {
    label: String,
    score: f64,
    refined_label: String,
}

fn score_cases(stage: &UriStage, cases: &[DirectCase], cfg: &PipelineConfig, lambda: f64) -> Result<Vec<Scored>> {
    cases
        .par_iter()
        .map(|c| {
            let cums = cums_of(stage, &c.candidate);
            let best = best_match(&c.seq, &cums, lambda, cfg.tau)?
                .ok_or_else(|| Error::Config(format!("no CUMs for {}", c.candidate)))?;
            let refined = best_refined_match(&c.seq, &cums, &stage.partitions, lambda, cfg.tau)?
                .ok_or_else(|| Error::Config(format!("no CUMs for {}", c.candidate)))?;
            Ok(Scored {
                label: behavior_label(&best.app, &best.behavior),
                score: best.score,
                refined_label: behavior_label(&refined.app, &refined.behavior),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- delta sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub delta_t: f64,
    /// Macro-F1 over URIs, each packet labelled with its burst's prediction.
    pub uri_macro_f1: f64,
    /// Bursts per ground-truth invocation.
    pub bursts_per_invocation: f64,
}

/// (truth, predicted) label pairs.
type LabelPairs = Vec<(String, String)>;

fn packet_pairs(stage: &UriStage, trace: &TrafficTrace, delta_t: f64) -> Result<(LabelPairs, usize, usize)> {
    let flows = app_flows(trace);
    let app = &trace.windows[0].app;
    let model = stage
        .uri_models
        .get(app)
        .ok_or_else(|| Error::Config(format!("no URI model for {app}")))?;
    let (mut pairs, mut bursts, mut invocations) = (Vec::new(), 0, 0);
    for f in flows {
        let bs = burstify(f, delta_t);
        bursts += bs.len();
        // back-to-back repeats of one URI count once
        invocations += 1 + f.packets.windows(2).filter(|w| w[0].uri != w[1].uri).count();
        let preds = crate::burst::classify_bursts(&bs, model)?;
        for (b, p) in bs.iter().zip(preds) {
            for pk in &b.packets {
                let truth = pk
                    .uri
                    .clone()
                    .ok_or_else(|| Error::MissingLabel(format!("unlabelled packet in {}", f.flow_id)))?;
                pairs.push((truth, p.uri.clone()));
            }
        }
    }
    Ok((pairs, bursts, invocations))
}

pub fn delta_sweep(cfg: &ExperimentConfig) -> Result<Vec<DeltaRow>> {
    let s = cfg.scenario_for("delta-sweep")?;
    let specs = known_specs(&s)?;
    let (train_t, test_t) = split_traces(&specs, &s);
    SWEEP_DELTAS
        .par_iter()
        .map(|&delta_t| {
            let pc = PipelineConfig {
                delta_t,
                ..cfg.pipeline()
            };
            let stage = train_uri_stage(&train_t, &pc)?;
            let mut pairs = Vec::new();
            let (mut bursts, mut invocations) = (0, 0);
            for t in &test_t {
                let (p, b, i) = packet_pairs(&stage, t, delta_t)?;
                pairs.extend(p);
                bursts += b;
                invocations += i;
            }
            Ok(DeltaRow {
                delta_t,
                uri_macro_f1: LevelReport::from_pairs(&pairs).macro_avg.f1,
                bursts_per_invocation: bursts as f64 / invocations.max(1) as f64,
            })
        })
        .collect()
}

// ----------------------------------------------------------------- map vs bag

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapVsBag {
    pub cases: usize,
    pub map: Summary,
    pub bag: Summary,
}

pub fn map_vs_bag(cfg: &ExperimentConfig) -> Result<MapVsBag> {
    let s = cfg.scenario_for("map-vs-bag")?;
    let pc = cfg.pipeline();
    let specs = known_specs(&s)?;
    let (train_t, test_t) = split_traces(&specs, &s);
    let stage = train_uri_stage(&train_t, &pc)?;
    let cases = direct_cases(&stage, &test_t, false, pc.delta_t, |a| a.to_string())?;
    let scored = score_cases(&stage, &cases, &pc, pc.lambda)?;
    let map_pairs: Vec<(String, String)> = cases
        .iter()
        .zip(&scored)
        .map(|(c, s)| (c.truth.clone(), s.label.clone()))
        .collect();
    let bag_pairs: Vec<(String, String)> = cases
        .iter()
        .map(|c| {
            let best = cums_of(&stage, &c.candidate)
                .into_iter()
                .map(|cum| (bag_match_baseline(&c.seq, cum), cum))
                .reduce(|a, b| if b.0 > a.0 { b } else { a })
                .map(|(_, cum)| behavior_label(&cum.app, &cum.behavior))
                .unwrap_or_default();
            (c.truth.clone(), best)
        })
        .collect();
    Ok(MapVsBag {
        cases: cases.len(),
        map: LevelReport::from_pairs(&map_pairs).macro_avg,
        bag: LevelReport::from_pairs(&bag_pairs).macro_avg,
    })
}

// ------------------------------------------------------- unseen detection grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub beta: f64,
    /// F1 of flagging unseen cases (unseen = positive).
    pub unseen_f1: f64,
}

#[derive(Debug, Clone)]
struct UnseenSetup {
    stage: UriStage,
    cases: Vec<DirectCase>,
}

/// Known apps on one platform plus a sibling of every app. Sibling instances
/// are scored against their base app, whose flows they resemble.
fn sibling_setup(cfg: &ExperimentConfig, name: &str) -> Result<UnseenSetup> {
    let s = cfg.scenario_for(name)?;
    let pc = cfg.pipeline();
    let specs = known_specs(&s)?;
    let (train_t, test_t) = split_traces(&specs, &s);
    let stage = train_uri_stage(&train_t, &pc)?;
    let sib_specs = variant_specs(&s, |_| FamilyVariant::Sibling { base: 0 })?;
    let sib_t = scenario_traces(&sib_specs, &s, s.instances_per_behavior - s.train_per_behavior, 2);
    let mut cases = direct_cases(&stage, &test_t, false, pc.delta_t, |a| a.to_string())?;
    cases.extend(direct_cases(&stage, &sib_t, true, pc.delta_t, |a| {
        a.trim_end_matches("-sib").to_string()
    })?);
    Ok(UnseenSetup { stage, cases })
}

fn grid_rows(setup: &UnseenSetup, pc: &PipelineConfig, lambdas: &[f64]) -> Result<Vec<GridRow>> {
    let truth: Vec<bool> = setup.cases.iter().map(|c| c.unseen).collect();
    let per_lambda: Vec<Vec<GridRow>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let scored = score_cases(&setup.stage, &setup.cases, pc, lambda)?;
            Ok(GRID_BETAS
                .iter()
                .map(|&beta| {
                    let pred: Vec<bool> = scored.iter().map(|s| is_unseen(s.score, beta)).collect();
                    GridRow {
                        lambda,
                        beta,
                        unseen_f1: binary_f1(&pred, &truth),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_lambda.into_iter().flatten().collect())
}

pub fn lambda_beta_grid(cfg: &ExperimentConfig) -> Result<Vec<GridRow>> {
    let setup = sibling_setup(cfg, "lambda-beta-grid")?;
    grid_rows(&setup, &cfg.pipeline(), &GRID_LAMBDAS)
}

/// True when `ys` never rises again after it starts falling.
pub fn is_unimodal(ys: &[f64]) -> bool {
    let mut falling = false;
    for w in ys.windows(2) {
        if w[1] < w[0] {
            falling = true;
        } else if w[1] > w[0] && falling {
            return false;
        }
    }
    true
}

// ------------------------------------------------------------ unseen variants

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub cases: usize,
    /// Fraction of unseen cases whose best score is at most beta.
    pub flagged_fraction: f64,
    /// Behavior macro-F1 using the unrefined best match.
    pub unrefined_f1: f64,
    /// Behavior macro-F1 with every case refined; all cases are unseen by
    /// construction.
    pub refined_f1: f64,
    /// Behavior macro-F1 when only cases flagged at beta are refined.
    pub gated_f1: f64,
    /// Expected macro-F1 of picking uniformly among the app's behaviors.
    pub chance_f1: f64,
    /// Unseen-detection F1 against known test cases of the same apps.
    pub detection_f1: f64,
}

fn chance_f1(cases: &[DirectCase], behaviors: &BTreeMap<String, Vec<String>>, seed: u64) -> f64 {
    const DRAWS: usize = 20;
    let mut rng = stream_rng(seed, &[40]);
    let mut total = 0.0;
    for _ in 0..DRAWS {
        let pairs: Vec<(String, String)> = cases
            .iter()
            .map(|c| {
                let options = &behaviors[&c.candidate];
                let pick = &options[rng.random_range(0..options.len())];
                (c.truth.clone(), behavior_label(&c.candidate, pick))
            })
            .collect();
        total += LevelReport::from_pairs(&pairs).macro_avg.f1;
    }
    total / DRAWS as f64
}

fn refinement_report(
    stage: &UriStage,
    known: &[DirectCase],
    unseen: &[DirectCase],
    pc: &PipelineConfig,
    seed: u64,
) -> Result<RefinementReport> {
    let scored = score_cases(stage, unseen, pc, pc.lambda)?;
    let flagged: Vec<bool> = scored.iter().map(|s| is_unseen(s.score, pc.beta)).collect();
    let pairs = |pick: &dyn Fn(usize, &Scored) -> String| -> Vec<(String, String)> {
        unseen
            .iter()
            .zip(&scored)
            .enumerate()
            .map(|(i, (c, s))| (c.truth.clone(), pick(i, s)))
            .collect()
    };
    let unrefined = pairs(&|_, s| s.label.clone());
    let refined = pairs(&|_, s| s.refined_label.clone());
    let gated = pairs(&|i, s| {
        if flagged[i] {
            s.refined_label.clone()
        } else {
            s.label.clone()
        }
    });

    let mut behaviors: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in &stage.cums {
        let v = behaviors.entry(c.app.clone()).or_default();
        if !v.contains(&c.behavior) {
            v.push(c.behavior.clone());
        }
    }
    let known_scored = score_cases(stage, known, pc, pc.lambda)?;
    let mut pred: Vec<bool> = known_scored.iter().map(|s| is_unseen(s.score, pc.beta)).collect();
    pred.extend(&flagged);
    let truth: Vec<bool> = known.iter().chain(unseen).map(|c| c.unseen).collect();
    Ok(RefinementReport {
        cases: unseen.len(),
        flagged_fraction: flagged.iter().filter(|f| **f).count() as f64 / flagged.len().max(1) as f64,
        unrefined_f1: LevelReport::from_pairs(&unrefined).macro_avg.f1,
        refined_f1: LevelReport::from_pairs(&refined).macro_avg.f1,
        gated_f1: LevelReport::from_pairs(&gated).macro_avg.f1,
        chance_f1: chance_f1(unseen, &behaviors, seed),
        detection_f1: binary_f1(&pred, &truth),
    })
}

fn variant_experiment(
    cfg: &ExperimentConfig,
    name: &str,
    variant: impl Fn(usize) -> FamilyVariant,
    candidate_of: impl Fn(&str) -> String + Sync,
) -> Result<RefinementReport> {
    let s = cfg.scenario_for(name)?;
    let pc = cfg.pipeline();
    let specs = known_specs(&s)?;
    let (train_t, test_t) = split_traces(&specs, &s);
    let stage = train_uri_stage(&train_t, &pc)?;
    let v_specs = variant_specs(&s, variant)?;
    let v_t = scenario_traces(&v_specs, &s, s.instances_per_behavior - s.train_per_behavior, 2);
    let known = direct_cases(&stage, &test_t, false, pc.delta_t, |a| a.to_string())?;
    let unseen = direct_cases(&stage, &v_t, true, pc.delta_t, candidate_of)?;
    refinement_report(&stage, &known, &unseen, &pc, cfg.seed)
}

pub fn unseen_platform(cfg: &ExperimentConfig) -> Result<RefinementReport> {
    variant_experiment(
        cfg,
        "unseen-platform",
        |_| FamilyVariant::UnseenPlatform(UNSEEN_PLATFORM.into()),
        |a| a.to_string(),
    )
}

pub fn unseen_app(cfg: &ExperimentConfig) -> Result<RefinementReport> {
    variant_experiment(
        cfg,
        "unseen-app",
        |_| FamilyVariant::Sibling { base: 0 },
        |a| a.trim_end_matches("-sib").to_string(),
    )
}

pub fn unseen_version(cfg: &ExperimentConfig) -> Result<RefinementReport> {
    variant_experiment(
        cfg,
        "unseen-version",
        |_| FamilyVariant::Version {
            base: 0,
            fraction: VERSION_FRACTION,
        },
        |a| a.to_string(),
    )
}

// ---------------------------------------------------------------- interleaved

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleavedReport {
    pub summary: RunSummary,
    pub reports: Vec<EvalReport>,
    pub merged_traces: Vec<usize>,
}

/// Full pipeline on merged two-instance test traces, repeated `runs` times
/// with consecutive seeds.
pub fn interleaved(cfg: &ExperimentConfig) -> Result<InterleavedReport> {
    let (mut reports, mut merged) = (Vec::new(), Vec::new());
    for k in 0..cfg.runs.max(1) {
        let run = ExperimentConfig {
            seed: cfg.seed + k as u64,
            ..cfg.clone()
        };
        let s = run.scenario_for("interleaved")?;
        let ds = generate_dataset(&s)?;
        let bundle = train(&run.pipeline(), &ds.train)?;
        let preds = infer_all(&bundle, &ds.test)?;
        reports.push(evaluate(&preds, &ds.test, bundle.config.overlap_threshold)?);
        merged.push(ds.test.iter().filter(|t| t.windows.len() > 1).count());
    }
    Ok(InterleavedReport {
        summary: summarize_runs(&reports),
        reports,
        merged_traces: merged,
    })
}

// ------------------------------------------------------------ dtw consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwRow {
    pub app: String,
    pub behavior: String,
    pub platform_a: String,
    pub platform_b: String,
    pub shared_similarity: f64,
    pub private_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwReport {
    pub rows: Vec<DtwRow>,
    pub shared_mean: f64,
    pub private_mean: f64,
}

/// Signed-size series of the first invocation of each URI in a trace.
fn uri_series(trace: &TrafficTrace) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for f in app_flows(trace) {
        let mut run: Vec<&crate::traffic::Packet> = Vec::new();
        let mut flush = |run: &mut Vec<&crate::traffic::Packet>| {
            if let Some(uri) = run.first().and_then(|p| p.uri.clone()) {
                out.entry(uri)
                    .or_insert_with(|| signed_size_series(&run.iter().map(|p| (*p).clone()).collect::<Vec<_>>()));
            }
            run.clear();
        };
        for p in &f.packets {
            if run.last().is_some_and(|q| q.uri != p.uri) {
                flush(&mut run);
            }
            run.push(p);
        }
        flush(&mut run);
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Cross-platform DTW similarity of shared URIs (same URI on both platforms)
/// against private URIs (same slot position, different URI).
pub fn dtw_consistency(cfg: &ExperimentConfig) -> Result<DtwReport> {
    let s = cfg.scenario_for("dtw-consistency")?;
    let specs = known_specs(&s)?;
    let traces = scenario_traces(&specs, &s, s.instances_per_behavior, 3);
    // (app, behavior, platform) -> per-instance URI series
    type Series = BTreeMap<String, Vec<f64>>;
    let mut by_key: BTreeMap<(String, String, String), Vec<Series>> = BTreeMap::new();
    for t in &traces {
        let w = &t.windows[0];
        let platform = t.flows.iter().find_map(|f| f.platform.clone()).unwrap_or_default();
        by_key
            .entry((w.app.clone(), w.behavior.clone(), platform))
            .or_default()
            .push(uri_series(t));
    }
    let spec_of = |app: &str, behavior: &str, platform: &str| {
        specs
            .iter()
            .find(|x| x.app == app && x.behavior == behavior && x.platform == platform)
    };
    let mut rows = Vec::new();
    for a in 0..s.apps {
        let app = app_name(a);
        for b in specs.iter().filter(|x| x.app == app && x.platform == s.platforms[0]) {
            for (i, pa) in s.platforms.iter().enumerate() {
                for pb in &s.platforms[i + 1..] {
                    let (Some(sa), Some(sb)) = (spec_of(&app, &b.behavior, pa), spec_of(&app, &b.behavior, pb)) else {
                        continue;
                    };
                    let priv_a: Vec<&String> = sa.canonical_sequence.iter().filter(|u| !sa.shared_flags[*u]).collect();
                    let priv_b: Vec<&String> = sb.canonical_sequence.iter().filter(|u| !sb.shared_flags[*u]).collect();
                    let shared: Vec<&String> = sa.canonical_sequence.iter().filter(|u| sa.shared_flags[*u]).collect();
                    let ia = &by_key[&(app.clone(), b.behavior.clone(), pa.clone())];
                    let ib = &by_key[&(app.clone(), b.behavior.clone(), pb.clone())];
                    let (mut sh, mut pr) = (Vec::new(), Vec::new());
                    for (xa, xb) in ia.iter().zip(ib) {
                        for u in &shared {
                            if let (Some(x), Some(y)) = (xa.get(*u), xb.get(*u)) {
                                sh.push(dtw_similarity(x, y)?);
                            }
                        }
                        for (u, v) in priv_a.iter().zip(&priv_b) {
                            if let (Some(x), Some(y)) = (xa.get(*u), xb.get(*v)) {
                                pr.push(dtw_similarity(x, y)?);
                            }
                        }
                    }
                    rows.push(DtwRow {
                        app: app.clone(),
                        behavior: b.behavior.clone(),
                        platform_a: pa.clone(),
                        platform_b: pb.clone(),
                        shared_similarity: mean(&sh),
                        private_similarity: mean(&pr),
                    });
                }
            }
        }
    }
    let shared_mean = mean(&rows.iter().map(|r| r.shared_similarity).collect::<Vec<_>>());
    let private_mean = mean(&rows.iter().map(|r| r.private_similarity).collect::<Vec<_>>());
    Ok(DtwReport {
        rows,
        shared_mean,
        private_mean,
    })
}

// ------------------------------------------------------------------ dispatch

/// CSV body and summary JSON of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub name: String,
    pub csv: String,
    pub summary: serde_json::Value,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct MethodRow<'a> {
    method: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    fnr: f64,
    fpr: f64,
}

impl<'a> MethodRow<'a> {
    fn new(method: &'a str, s: &Summary) -> Self {
        Self {
            method,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            fnr: s.fnr,
            fpr: s.fpr,
        }
    }
}

#[derive(Serialize)]
struct RunRow {
    run: usize,
    behavior_precision: f64,
    behavior_recall: f64,
    behavior_f1: f64,
    behavior_fnr: f64,
    behavior_fpr: f64,
    app_f1: f64,
    flow_accuracy: f64,
    attribution_accuracy: f64,
}

pub fn run_experiment(name: &str, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.pipeline.validate()?;
    let (csv, summary) = match name {
        "delta-sweep" => {
            let rows = delta_sweep(cfg)?;
            (to_csv(&rows)?, serde_json::to_value(&rows)?)
        }
        "map-vs-bag" => {
            let r = map_vs_bag(cfg)?;
            let rows = [MethodRow::new("map", &r.map), MethodRow::new("bag", &r.bag)];
            (to_csv(&rows)?, serde_json::to_value(&r)?)
        }
        "lambda-beta-grid" => {
            let rows = lambda_beta_grid(cfg)?;
            let best = rows.iter().max_by(|a, b| a.unseen_f1.total_cmp(&b.unseen_f1)).cloned();
            (
                to_csv(&rows)?,
                serde_json::json!({ "best": best, "points": rows.len() }),
            )
        }
        "unseen-platform" | "unseen-app" | "unseen-version" => {
            let r = match name {
                "unseen-platform" => unseen_platform(cfg)?,
                "unseen-app" => unseen_app(cfg)?,
                _ => unseen_version(cfg)?,
            };
            (to_csv(std::slice::from_ref(&r))?, serde_json::to_value(&r)?)
        }
        "interleaved" => {
            let r = interleaved(cfg)?;
            let rows: Vec<RunRow> = r
                .reports
                .iter()
                .enumerate()
                .map(|(run, e)| RunRow {
                    run,
                    behavior_precision: e.behavior.macro_avg.precision,
                    behavior_recall: e.behavior.macro_avg.recall,
                    behavior_f1: e.behavior.macro_avg.f1,
                    behavior_fnr: e.behavior.macro_avg.fnr,
                    behavior_fpr: e.behavior.macro_avg.fpr,
                    app_f1: e.app.macro_avg.f1,
                    flow_accuracy: e.flow_accuracy,
                    attribution_accuracy: e.attribution_accuracy,
                })
                .collect();
            (to_csv(&rows)?, serde_json::to_value(&r)?)
        }
        "dtw-consistency" => {
            let r = dtw_consistency(cfg)?;
            (
                to_csv(&r.rows)?,
                serde_json::json!({ "shared_mean": r.shared_mean, "private_mean": r.private_mean }),
            )
        }
        other => return Err(Error::UnknownExperiment(other.to_string())),
    };
    Ok(ExperimentOutput {
        name: name.to_string(),
        csv,
        summary,
    })
}

impl ExperimentOutput {
    /// Writes `<name>.csv` and `<name>.summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.name));
        let json_path = dir.join(format!("{}.summary.json", self.name));
        std::fs::write(&csv_path, &self.csv)?;
        std::fs::write(&json_path, serde_json::to_string_pretty(&self.summary)?)?;
        Ok((csv_path, json_path))
    }
}
