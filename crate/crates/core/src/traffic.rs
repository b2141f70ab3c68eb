//! Packets, flows and traces, plus the JSON-lines trace format.
//!
//! One flow per line:
//!
//! ```text
//! {"trace_id":"t0","flow_id":"f0","domain":"api.example","app":"a","platform":"android",
//!  "behavior":"search","packets":[[0.012,1,231,"/search"],[0.04,-1,1400,null]]}
//! ```
//!
//! Direction is `1` (outbound) or `-1` (inbound); the reader also accepts the
//! strings `"+1"` and `"-1"`. Ground-truth windows travel on their own lines:
//! `{"trace_id":"t0","window":[start,end,app,behavior]}`. Floats are written
//! with 9 significant digits.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAX_MERGE_DELAY: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Outbound,
    Inbound,
}

impl Direction {
    pub fn sign(self) -> i32 {
        match self {
            Direction::Outbound => 1,
            Direction::Inbound => -1,
        }
    }

    pub fn flipped(self) -> Direction {
        match self {
            Direction::Outbound => Direction::Inbound,
            Direction::Inbound => Direction::Outbound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub timestamp: f64,
    pub direction: Direction,
    pub size: u32,
    /// Ground-truth URI path; only present in training and synthetic data.
    pub uri: Option<String>,
}

impl Packet {
    pub fn new(timestamp: f64, direction: Direction, size: u32) -> Self {
        Self {
            timestamp,
            direction,
            size,
            uri: None,
        }
    }

    pub fn with_uri(mut self, uri: impl Into<String>) -> Self {
        self.uri = Some(uri.into());
        self
    }

    /// Size signed by direction: positive outbound, negative inbound.
    pub fn signed_size(&self) -> f64 {
        f64::from(self.direction.sign()) * f64::from(self.size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub flow_id: String,
    /// Server endpoint, standing in for the TLS SNI hostname.
    pub domain: String,
    pub packets: Vec<Packet>,
    pub app: Option<String>,
    pub platform: Option<String>,
    pub behavior: Option<String>,
}

impl Flow {
    pub fn start_time(&self) -> f64 {
        self.packets.first().map_or(0.0, |p| p.timestamp)
    }

    pub fn end_time(&self) -> f64 {
        self.packets.last().map_or(0.0, |p| p.timestamp)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidFlow {
            flow_id: self.flow_id.clone(),
            message,
        };
        if self.packets.is_empty() {
            return Err(invalid("flow has no packets".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, p) in self.packets.iter().enumerate() {
            if p.size == 0 {
                return Err(invalid(format!("packet {i} has size 0")));
            }
            if !p.timestamp.is_finite() || p.timestamp < 0.0 {
                return Err(invalid(format!("packet {i} has invalid timestamp {}", p.timestamp)));
            }
            if p.timestamp < prev {
                return Err(invalid(format!("packet {i} is out of timestamp order")));
            }
            prev = p.timestamp;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWindow {
    pub start: f64,
    pub end: f64,
    pub app: String,
    pub behavior: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrafficTrace {
    pub trace_id: String,
    pub flows: Vec<Flow>,
    pub windows: Vec<GroundTruthWindow>,
}

impl TrafficTrace {
    pub fn new(trace_id: impl Into<String>) -> Self {
        Self {
            trace_id: trace_id.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for flow in &self.flows {
            flow.validate()?;
            if !ids.insert(flow.flow_id.as_str()) {
                return Err(Error::InvalidTrace {
                    trace_id: self.trace_id.clone(),
                    message: format!("duplicate flow id {}", flow.flow_id),
                });
            }
        }
        for w in &self.windows {
            if w.start.is_nan() || w.end.is_nan() || w.end <= w.start {
                return Err(Error::InvalidTrace {
                    trace_id: self.trace_id.clone(),
                    message: format!("degenerate window [{}, {}]", w.start, w.end),
                });
            }
        }
        Ok(())
    }

    /// Flows ordered by start time; ties keep file order.
    pub fn flows_by_start(&self) -> Vec<&Flow> {
        let mut flows: Vec<&Flow> = self.flows.iter().collect();
        flows.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()));
        flows
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        let start = self.flows.iter().map(Flow::start_time).min_by(f64::total_cmp)?;
        let end = self.flows.iter().map(Flow::end_time).max_by(f64::total_cmp)?;
        Some((start, end))
    }
}

/// A run of consecutive packets of one flow, separated from its neighbours by
/// gaps of at least the burstification threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    pub parent_flow_id: String,
    pub domain: String,
    /// Index of the first packet within the parent flow.
    pub offset: usize,
    pub packets: Vec<Packet>,
    pub start_time: f64,
    pub end_time: f64,
}

/// Rounds to the value the trace writer would emit (9 significant digits).
pub fn quantize(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn fmt_float(x: f64) -> String {
    // Display prints the shortest representation that round-trips, which for
    // an already-quantized value has at most 9 significant digits.
    format!("{}", quantize(x))
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn json_opt_str(s: &Option<String>) -> String {
    s.as_deref().map_or_else(|| "null".to_string(), json_str)
}

pub fn flow_to_line(trace_id: &str, flow: &Flow) -> String {
    let mut line = String::with_capacity(64 + flow.packets.len() * 24);
    let _ = write!(
        line,
        "{{\"trace_id\":{},\"flow_id\":{},\"domain\":{},\"app\":{},\"platform\":{},\"behavior\":{},\"packets\":[",
        json_str(trace_id),
        json_str(&flow.flow_id),
        json_str(&flow.domain),
        json_opt_str(&flow.app),
        json_opt_str(&flow.platform),
        json_opt_str(&flow.behavior),
    );
    for (i, p) in flow.packets.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(
            line,
            "[{},{},{},{}]",
            fmt_float(p.timestamp),
            p.direction.sign(),
            p.size,
            json_opt_str(&p.uri)
        );
    }
    line.push_str("]}");
    line
}

fn window_to_line(trace_id: &str, w: &GroundTruthWindow) -> String {
    format!(
        "{{\"trace_id\":{},\"window\":[{},{},{},{}]}}",
        json_str(trace_id),
        fmt_float(w.start),
        fmt_float(w.end),
        json_str(&w.app),
        json_str(&w.behavior)
    )
}

pub fn write_traces<W: Write>(mut out: W, traces: &[TrafficTrace]) -> Result<()> {
    for trace in traces {
        for flow in &trace.flows {
            writeln!(out, "{}", flow_to_line(&trace.trace_id, flow))?;
        }
        for w in &trace.windows {
            writeln!(out, "{}", window_to_line(&trace.trace_id, w))?;
        }
    }
    Ok(())
}

pub fn save_traces(path: impl AsRef<Path>, traces: &[TrafficTrace]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_traces(&mut out, traces)?;
    out.flush()?;
    Ok(())
}

pub fn traces_to_string(traces: &[TrafficTrace]) -> String {
    let mut buf = Vec::new();
    write_traces(&mut buf, traces).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("writer emits utf-8")
}

fn parse_direction(v: &Value) -> Option<Direction> {
    match v {
        Value::Number(n) => match n.as_i64() {
            Some(1) => Some(Direction::Outbound),
            Some(-1) => Some(Direction::Inbound),
            _ => None,
        },
        Value::String(s) => match s.as_str() {
            "+1" | "1" => Some(Direction::Outbound),
            "-1" => Some(Direction::Inbound),
            _ => None,
        },
        _ => None,
    }
}

fn opt_string(v: Option<&Value>, field: &str) -> std::result::Result<Option<String>, String> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(format!("field `{field}` must be a string or null, got {other}")),
    }
}

fn req_string(v: Option<&Value>, field: &str) -> std::result::Result<String, String> {
    opt_string(v, field)?.ok_or_else(|| format!("missing field `{field}`"))
}

fn parse_packet(v: &Value) -> std::result::Result<Packet, String> {
    let arr = v.as_array().ok_or("packet must be an array")?;
    if arr.len() != 4 {
        return Err(format!("packet must have 4 elements, got {}", arr.len()));
    }
    let timestamp = arr[0].as_f64().ok_or("packet timestamp must be a number")?;
    let direction = parse_direction(&arr[1]).ok_or_else(|| format!("bad direction {}", arr[1]))?;
    let size = arr[2]
        .as_u64()
        .ok_or_else(|| format!("packet size must be a non-negative integer, got {}", arr[2]))?;
    let size = u32::try_from(size).map_err(|_| format!("packet size {size} too large"))?;
    let uri = opt_string(Some(&arr[3]), "uri")?;
    Ok(Packet {
        timestamp,
        direction,
        size,
        uri,
    })
}

enum Line {
    Flow(String, Flow),
    Window(String, GroundTruthWindow),
}

fn parse_line(text: &str) -> std::result::Result<Line, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("line must be a JSON object")?;
    let trace_id = req_string(obj.get("trace_id"), "trace_id")?;
    if let Some(w) = obj.get("window") {
        let arr = w.as_array().ok_or("window must be an array")?;
        if arr.len() != 4 {
            return Err("window must be [start, end, app, behavior]".into());
        }
        let start = arr[0].as_f64().ok_or("window start must be a number")?;
        let end = arr[1].as_f64().ok_or("window end must be a number")?;
        let app = req_string(arr.get(2), "window app")?;
        let behavior = req_string(arr.get(3), "window behavior")?;
        return Ok(Line::Window(
            trace_id,
            GroundTruthWindow {
                start,
                end,
                app,
                behavior,
            },
        ));
    }
    let packets = obj
        .get("packets")
        .and_then(Value::as_array)
        .ok_or("missing `packets` array")?
        .iter()
        .map(parse_packet)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let flow = Flow {
        flow_id: req_string(obj.get("flow_id"), "flow_id")?,
        domain: req_string(obj.get("domain"), "domain")?,
        packets,
        app: opt_string(obj.get("app"), "app")?,
        platform: opt_string(obj.get("platform"), "platform")?,
        behavior: opt_string(obj.get("behavior"), "behavior")?,
    };
    Ok(Line::Flow(trace_id, flow))
}

/// Reads traces from JSON lines, grouping lines by `trace_id` in order of first
/// appearance. Packets are re-sorted by timestamp (stable) before validation.
pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<TrafficTrace>> {
    let mut traces: Vec<TrafficTrace> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_line(&line).map_err(|message| Error::Parse { line: i + 1, message })?;
        let trace_id = match &parsed {
            Line::Flow(t, _) | Line::Window(t, _) => t.clone(),
        };
        let slot = *index.entry(trace_id.clone()).or_insert_with(|| {
            traces.push(TrafficTrace::new(trace_id));
            traces.len() - 1
        });
        match parsed {
            Line::Flow(_, mut flow) => {
                flow.packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
                traces[slot].flows.push(flow);
            }
            Line::Window(_, w) => traces[slot].windows.push(w),
        }
    }
    for trace in &traces {
        trace.validate()?;
    }
    Ok(traces)
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<TrafficTrace>> {
    read_traces(BufReader::new(File::open(path)?))
}

fn unique_id(base: &str, taken: &mut HashSet<String>) -> String {
    if taken.insert(base.to_string()) {
        return base.to_string();
    }
    let mut n = 1;
    loop {
        let candidate = format!("{base}~{n}");
        if taken.insert(candidate.clone()) {
            return candidate;
        }
        n += 1;
    }
}

/// Overlays `b` on `a`, translating every timestamp of `b` by `delay` seconds.
/// Flows of `b` whose ids collide with `a` are renamed with a `~n` suffix.
pub fn merge_traces(a: &TrafficTrace, b: &TrafficTrace, delay: f64) -> Result<TrafficTrace> {
    if !(0.0..=MAX_MERGE_DELAY).contains(&delay) {
        return Err(Error::Config(format!(
            "merge delay {delay} outside [0, {MAX_MERGE_DELAY}]"
        )));
    }
    a.validate()?;
    b.validate()?;
    let mut taken: HashSet<String> = a.flows.iter().map(|f| f.flow_id.clone()).collect();
    let mut flows = a.flows.clone();
    for flow in &b.flows {
        let mut shifted = flow.clone();
        shifted.flow_id = unique_id(&flow.flow_id, &mut taken);
        for p in &mut shifted.packets {
            p.timestamp += delay;
        }
        flows.push(shifted);
    }
    flows.sort_by(|x, y| x.start_time().total_cmp(&y.start_time()));

    let mut windows = a.windows.clone();
    windows.extend(b.windows.iter().map(|w| GroundTruthWindow {
        start: w.start + delay,
        end: w.end + delay,
        ..w.clone()
    }));
    windows.sort_by(|x, y| x.start.total_cmp(&y.start));

    Ok(TrafficTrace {
        trace_id: format!("{}+{}", a.trace_id, b.trace_id),
        flows,
        windows,
    })
}

/// Merges with a delay drawn uniformly from `[0, 5]` seconds.
pub fn merge_with_random_delay<R: Rng + ?Sized>(
    a: &TrafficTrace,
    b: &TrafficTrace,
    rng: &mut R,
) -> Result<(TrafficTrace, f64)> {
    let delay = rng.random_range(0.0..=MAX_MERGE_DELAY);
    Ok((merge_traces(a, b, delay)?, delay))
}
