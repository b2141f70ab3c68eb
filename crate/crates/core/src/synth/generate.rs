use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use super::config::{BackgroundConfig, TimingConfig};
use super::family::BehaviorSpec;
use super::signature::{SizeDist, UriSignature};
use crate::stage1::BACKGROUND_LABEL;
use crate::traffic::{quantize, Direction, Flow, GroundTruthWindow, Packet, TrafficTrace};

fn draw_size(d: &SizeDist, rng: &mut ChaCha8Rng) -> u32 {
    let x = Normal::new(d.mean, d.std)
        .expect("finite size distribution")
        .sample(rng);
    x.round().max(1.0) as u32
}

fn uniform(r: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..=r.1)
    } else {
        r.0
    }
}

/// Packets of one invocation starting at `t`. Returns the time of the last
/// packet.
fn emit_invocation(
    sig: &UriSignature,
    timing: &TimingConfig,
    t: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Packet>,
) -> f64 {
    let mut now = t;
    let mut first = true;
    for run in &sig.direction_pattern {
        let len = rng.random_range(run.min_len..=run.max_len);
        for _ in 0..len {
            if !first {
                let stall = timing.intra_stall_prob > 0.0 && rng.random::<f64>() < timing.intra_stall_prob;
                now += uniform(if stall { timing.stall_gap } else { timing.intra_gap }, rng);
            }
            first = false;
            let size = match run.direction {
                Direction::Outbound => draw_size(&sig.out_size, rng),
                Direction::Inbound => draw_size(&sig.in_size, rng),
            };
            out.push(Packet::new(quantize(now), run.direction, size).with_uri(sig.uri.clone()));
        }
    }
    now
}

/// Chooses the canonical sequence or a variant, then sprinkles spurious
/// invocations.
pub fn draw_sequence(spec: &BehaviorSpec, rng: &mut ChaCha8Rng) -> Vec<String> {
    let u: f64 = rng.random();
    let mut acc = spec.canonical_prob;
    let mut seq = spec.canonical_sequence.clone();
    if u >= acc {
        for (v, p) in &spec.variant_sequences {
            acc += p;
            seq = v.clone();
            if u < acc {
                break;
            }
        }
    }
    let rate = spec.timing.spurious_uri_rate;
    if rate > 0.0 && !spec.spurious_pool.is_empty() {
        let k = Poisson::new(rate).expect("positive rate").sample(rng) as usize;
        for _ in 0..k {
            let uri = spec.spurious_pool.choose(rng).expect("non-empty pool").clone();
            let pos = rng.random_range(0..=seq.len());
            seq.insert(pos, uri);
        }
    }
    seq
}

/// One behavior execution starting at `t0`: one flow per domain branch.
pub fn instance_trace(spec: &BehaviorSpec, trace_id: &str, t0: f64, rng: &mut ChaCha8Rng) -> TrafficTrace {
    let seq = draw_sequence(spec, rng);
    let branches = spec.branches_of(&seq);
    let mut trace = TrafficTrace::new(trace_id);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (domain, uris) in &branches {
        let mut t = t0 + uniform((0.0, spec.timing.flow_start_jitter), rng);
        let mut packets = Vec::new();
        for (i, uri) in uris.iter().enumerate() {
            if i > 0 {
                t += uniform(spec.timing.inter_gap, rng);
            }
            t = emit_invocation(&spec.signatures[uri], &spec.timing, t, rng, &mut packets);
        }
        lo = lo.min(packets[0].timestamp);
        hi = hi.max(packets[packets.len() - 1].timestamp);
        trace.flows.push(Flow {
            flow_id: format!("{trace_id}:{domain}"),
            domain: domain.clone(),
            packets,
            app: Some(spec.app.clone()),
            platform: Some(spec.platform.clone()),
            behavior: Some(spec.behavior.clone()),
        });
    }
    trace.flows.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()));
    trace.windows.push(GroundTruthWindow {
        start: lo,
        end: hi,
        app: spec.app.clone(),
        behavior: spec.behavior.clone(),
    });
    trace
}

/// A single behavior execution at time 0.
pub fn generate_instance(spec: &BehaviorSpec, seed: u64) -> TrafficTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = format!("{}/{}/{}#{seed}", spec.app, spec.platform, spec.behavior);
    instance_trace(spec, &id, 0.0, &mut rng)
}

fn bg_flow(id: String, domain: &str, packets: Vec<Packet>) -> Flow {
    Flow {
        flow_id: id,
        domain: domain.to_string(),
        packets,
        app: Some(BACKGROUND_LABEL.to_string()),
        platform: None,
        behavior: None,
    }
}

fn poisson_times(rate: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut out = Vec::new();
    let mut t = exp.sample(rng);
    while t < duration {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

/// Background flows over `[start, start + duration)`: periodic heartbeats,
/// bulky prefetches and outbound-heavy telemetry.
pub fn background_flows(
    cfg: &BackgroundConfig,
    prefix: &str,
    start: f64,
    duration: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Flow> {
    let mut flows = Vec::new();
    if duration <= 0.0 {
        return flows;
    }
    let small = |rng: &mut ChaCha8Rng, m: f64| draw_size(&SizeDist { mean: m, std: 4.0 }, rng);
    if cfg.heartbeat_period > 0.0 {
        let mut k = 0;
        while (k as f64) * cfg.heartbeat_period < duration {
            let t = start + k as f64 * cfg.heartbeat_period;
            let gap = uniform((0.02, 0.06), rng);
            let packets = vec![
                Packet::new(quantize(t), Direction::Outbound, small(rng, 66.0)),
                Packet::new(quantize(t + gap), Direction::Inbound, small(rng, 54.0)),
            ];
            flows.push(bg_flow(format!("{prefix}hb{k}"), "push.bg.example", packets));
            k += 1;
        }
    }
    for (k, t) in poisson_times(cfg.prefetch_rate, duration, rng).into_iter().enumerate() {
        let mut now = start + t;
        let mut packets = vec![Packet::new(quantize(now), Direction::Outbound, small(rng, 140.0))];
        for _ in 0..rng.random_range(12..=30) {
            now += uniform((0.002, 0.01), rng);
            let size = draw_size(
                &SizeDist {
                    mean: 1420.0,
                    std: 20.0,
                },
                rng,
            );
            packets.push(Packet::new(quantize(now), Direction::Inbound, size));
        }
        flows.push(bg_flow(format!("{prefix}pf{k}"), "ads.bg.example", packets));
    }
    for (k, t) in poisson_times(cfg.telemetry_rate, duration, rng).into_iter().enumerate() {
        let mut now = start + t;
        let mut packets = Vec::new();
        for _ in 0..rng.random_range(3..=6) {
            packets.push(Packet::new(
                quantize(now),
                Direction::Outbound,
                draw_size(&SizeDist { mean: 620.0, std: 80.0 }, rng),
            ));
            now += uniform((0.005, 0.02), rng);
        }
        packets.push(Packet::new(quantize(now), Direction::Inbound, small(rng, 90.0)));
        flows.push(bg_flow(format!("{prefix}tm{k}"), "telemetry.bg.example", packets));
    }
    flows.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()));
    flows
}

pub fn generate_background(cfg: &BackgroundConfig, duration: f64, seed: u64) -> TrafficTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = TrafficTrace::new(format!("background#{seed}"));
    trace.flows = background_flows(cfg, "bg-", 0.0, duration, &mut rng);
    trace
}
