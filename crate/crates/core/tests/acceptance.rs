//! The twelve acceptance criteria, one PASS/FAIL line each. Slow; the heavy
//! experiments take several minutes in total.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use common::{
    all_sequences, all_series, cheapest_path, feature_mismatch, first_occurrence_ordered, lcs_agreement,
    monotone_paths, random_group, rng, small_scenario,
};
use rand::Rng;
use rayon::prelude::*;
use xprint_core::burst::{burstify, UriPrediction, UriSequence};
use xprint_core::learn::logistic::{gradient, loss};
use xprint_core::learn::GATE_DIM;
use xprint_core::pipeline::experiments::{
    delta_sweep, interleaved, is_unimodal, lambda_beta_grid, map_vs_bag, unseen_platform, ExperimentConfig,
};
use xprint_core::pipeline::{evaluate, infer_all, train, ModelBundle, PipelineConfig};
use xprint_core::synth::{generate_dataset, generate_instance, make_cross_platform_family, ScenarioConfig};
use xprint_core::traffic::{read_traces, traces_to_string};
use xprint_core::urimap::{build_cum, dtw_distance, dtw_similarity, score_map};

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn seq(items: &[(&str, f64)]) -> UriSequence {
    let preds = items
        .iter()
        .enumerate()
        .map(|(i, &(u, c))| UriPrediction {
            flow_id: "f".into(),
            burst_index: i,
            domain: "d".into(),
            timestamp: i as f64,
            uri: u.into(),
            confidence: c,
        })
        .collect();
    UriSequence::new("app", preds)
}

fn score_arithmetic() -> Outcome {
    let inst = BTreeMap::from([("d".to_string(), vec!["a".to_string(), "b".into(), "c".into()])]);
    let cum = build_cum("app", "android", "b", &[inst]).unwrap();
    let partial = score_map(&seq(&[("a", 0.9), ("b", 0.8)]), &cum, 1.0, 0.5)
        .unwrap()
        .score;
    let full = score_map(&seq(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]), &cum, 1.0, 0.5)
        .unwrap()
        .score;
    outcome(
        (partial - 1.7 / 2.7).abs() < 1e-9 && full == 1.0,
        format!("partial {partial:.12}, perfect {full}"),
    )
}

fn lcs_oracle() -> Outcome {
    // lcs_match only compares symbols for equality, so each length-7 pair is a
    // relabelling of a pair whose left side names symbols in first-use order.
    let (short, short_bad) = lcs_agreement(&all_sequences(5), 5);
    let reps: Vec<Vec<u8>> = all_sequences(7)
        .into_iter()
        .filter(|s| first_occurrence_ordered(s))
        .collect();
    let (long, long_bad) = lcs_agreement(&reps, 7);
    outcome(
        short_bad + long_bad == 0,
        format!(
            "{short} literal pairs up to length 5, {long} pairs covering all {} up to 7; {} mismatches",
            21845u64 * 21845,
            short_bad + long_bad
        ),
    )
}

fn dtw_oracle() -> Outcome {
    let series = all_series(&[1.0, 2.0, 3.0], 6);
    let mut paths = BTreeMap::new();
    for n in 1..=6 {
        for m in 1..=6 {
            paths.insert((n, m), monotone_paths(n, m));
        }
    }
    let bad: usize = series
        .par_iter()
        .map(|a| {
            series
                .iter()
                .filter(|b| {
                    let want = cheapest_path(a, b, &paths[&(a.len(), b.len())]);
                    let sim = 1.0 / (1.0 + want / a.len().max(b.len()) as f64);
                    dtw_distance(a, b).unwrap() != want || dtw_similarity(a, b).unwrap() != sim
                })
                .count()
        })
        .sum();
    outcome(
        bad == 0,
        format!("{} pairs, {bad} mismatches", series.len() * series.len()),
    )
}

fn burst_exactness() -> Outcome {
    let mut s = ScenarioConfig::new(SEED);
    s.apps = 5;
    let specs = make_cross_platform_family(&s).unwrap();
    let (mut flows, mut exact) = (0, 0);
    for (k, spec) in specs.iter().enumerate() {
        for i in 0..12 {
            for f in generate_instance(spec, (k * 100 + i) as u64).flows {
                let got: Vec<usize> = burstify(&f, 0.5).iter().skip(1).map(|b| b.offset).collect();
                let want: Vec<usize> = (1..f.packets.len())
                    .filter(|&j| f.packets[j].uri != f.packets[j - 1].uri)
                    .collect();
                flows += 1;
                exact += usize::from(got == want);
            }
        }
    }
    outcome(
        flows >= 1000 && exact == flows,
        format!("{exact} of {flows} flows exact"),
    )
}

fn delta_shape() -> Outcome {
    let rows = delta_sweep(&ExperimentConfig::new(SEED)).unwrap();
    let at = |d: f64| rows.iter().find(|r| r.delta_t == d).unwrap().uri_macro_f1;
    let best = at(0.5);
    let others = [0.05, 2.0, 5.0].map(at);
    outcome(
        others.iter().all(|&o| best > o) && best >= 0.90,
        format!(
            "F1 {best:.3} at 0.5 s vs {:.3} / {:.3} / {:.3}",
            others[0], others[1], others[2]
        ),
    )
}

fn map_beats_bag() -> Outcome {
    let r = map_vs_bag(&ExperimentConfig::new(SEED)).unwrap();
    outcome(
        r.map.fnr <= 0.5 * r.bag.fnr && r.map.fpr <= 0.5 * r.bag.fpr,
        format!(
            "{} cases; FNR {:.4} vs {:.4}, FPR {:.4} vs {:.4}",
            r.cases, r.map.fnr, r.bag.fnr, r.map.fpr, r.bag.fpr
        ),
    )
}

fn unseen_detection() -> Outcome {
    let rows = lambda_beta_grid(&ExperimentConfig::new(SEED)).unwrap();
    let curve: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.lambda == 1.0)
        .map(|r| (r.beta, r.unseen_f1))
        .collect();
    let ys: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let max = ys.iter().copied().fold(0.0, f64::max);
    let at = curve.iter().find(|c| c.0 == 0.3).unwrap().1;
    outcome(
        is_unimodal(&ys) && at >= 0.85 * max,
        format!("F1 {at:.3} at beta 0.3, max {max:.3}, curve {ys:.3?}"),
    )
}

fn refinement_gain() -> Outcome {
    let r = unseen_platform(&ExperimentConfig::new(SEED)).unwrap();
    outcome(
        r.refined_f1 - r.unrefined_f1 >= 0.10 && r.unrefined_f1 > r.chance_f1,
        format!(
            "{} cases; refined {:.3}, unrefined {:.3}, chance {:.3}",
            r.cases, r.refined_f1, r.unrefined_f1, r.chance_f1
        ),
    )
}

fn interleaved_recognition() -> Outcome {
    let r = interleaved(&ExperimentConfig::new(SEED)).unwrap();
    let f1 = r.summary.behavior_f1.mean;
    outcome(
        f1 >= 0.90,
        format!("behavior F1 {f1:.3}, {} merged test traces", r.merged_traces[0]),
    )
}

fn determinism() -> Outcome {
    let run = || {
        let data = generate_dataset(&small_scenario(SEED)).unwrap();
        let bundle = train(
            &PipelineConfig {
                seed: SEED,
                ..Default::default()
            },
            &data.train,
        )
        .unwrap();
        let preds = infer_all(&bundle, &data.test).unwrap();
        let report = evaluate(&preds, &data.test, bundle.config.overlap_threshold).unwrap();
        (data, bundle.to_json().unwrap(), serde_json::to_string(&report).unwrap())
    };
    let (data, bundle_a, report_a) = run();
    let (_, bundle_b, report_b) = run();
    let text = traces_to_string(&data.test);
    let traces_back = read_traces(text.as_bytes()).unwrap();
    let model_back = ModelBundle::from_json(&bundle_a).unwrap();
    let checks = [
        ("bundle bytes", bundle_a == bundle_b),
        ("report bytes", report_a == report_b),
        (
            "traces",
            traces_back == data.test && traces_to_string(&traces_back) == text,
        ),
        ("bundle", model_back.to_json().unwrap() == bundle_a),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        "bundles, reports, traces all stable".to_string()
    } else {
        format!("differs: {failed:?}")
    };
    outcome(failed.is_empty(), detail)
}

fn gradient_check() -> Outcome {
    let mut r = rng(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = 40;
        let h: Vec<[f64; GATE_DIM]> = (0..n)
            .map(|_| {
                let (p, pb, q) = (r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
                [p, pb, p - q]
            })
            .collect();
        let y: Vec<bool> = (0..n).map(|_| r.random()).collect();
        let w: [f64; GATE_DIM] = std::array::from_fn(|_| r.random_range(-3.0..3.0));
        let b = r.random_range(-3.0..3.0);
        let l2 = 1e-3;
        let (gw, gb) = gradient(&w, b, &h, &y, l2);
        let step = 1e-5;
        let mut fd = [0.0; GATE_DIM + 1];
        for k in 0..=GATE_DIM {
            let shifted = |d: f64| {
                let mut w2 = w;
                let mut b2 = b;
                if k < GATE_DIM {
                    w2[k] += d;
                } else {
                    b2 += d;
                }
                loss(&w2, b2, &h, &y, l2)
            };
            fd[k] = (shifted(step) - shifted(-step)) / (2.0 * step);
        }
        let analytic = [gw[0], gw[1], gw[2], gb];
        let diff = analytic
            .iter()
            .zip(&fd)
            .map(|(a, f)| (a - f).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    outcome(
        worst <= 1e-6,
        format!("worst relative error {worst:.2e} over 10 points"),
    )
}

fn feature_oracle() -> Outcome {
    let mut r = rng(SEED);
    let mut first_bad = None;
    let mut bad = 0;
    for i in 0..1000 {
        let g = random_group(&mut r, i % 5);
        if let Some(m) = feature_mismatch(&g) {
            bad += 1;
            first_bad.get_or_insert(m);
        }
    }
    outcome(
        bad == 0,
        match first_bad {
            None => "1000 groups, all within 1e-9".to_string(),
            Some((name, got, want)) => {
                format!("{bad} of 1000 groups differ; first {name}: {got} vs {want}")
            }
        },
    )
}

#[test]
fn acceptance() {
    type Check = (&'static str, fn() -> Outcome, Duration);
    let checks: [Check; 12] = [
        ("score arithmetic", score_arithmetic, Duration::from_secs(1)),
        ("LCS oracle", lcs_oracle, mins(1)),
        ("DTW oracle", dtw_oracle, mins(1)),
        ("burst exactness", burst_exactness, mins(1)),
        ("delta sweep shape", delta_shape, mins(5)),
        ("map vs bag", map_beats_bag, mins(5)),
        ("unseen detection", unseen_detection, mins(10)),
        ("refinement gain", refinement_gain, mins(5)),
        ("interleaved recognition", interleaved_recognition, mins(10)),
        ("determinism and round-trips", determinism, mins(5)),
        ("logistic gradient", gradient_check, mins(1)),
        ("feature oracle", feature_oracle, mins(1)),
    ];
    let mut failed = Vec::new();
    for (k, (name, check, budget)) in checks.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let pass = o.pass && took <= *budget;
        // straight to stderr so the lines survive output capture
        writeln!(
            std::io::stderr(),
            "{} {:>2} {name}: {} ({:.1}s, budget {}s)",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        )
        .unwrap();
        if !pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
