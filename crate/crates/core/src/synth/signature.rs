use serde::{Deserialize, Serialize};

use crate::traffic::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunTemplate {
    pub direction: Direction,
    pub min_len: u32,
    pub max_len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDist {
    pub mean: f64,
    pub std: f64,
}

/// Side-channel template of one URI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UriSignature {
    pub uri: String,
    pub domain: String,
    pub packet_count_range: (u32, u32),
    pub out_size: SizeDist,
    pub in_size: SizeDist,
    pub direction_pattern: Vec<RunTemplate>,
    /// Range of gaps between packets of one invocation, seconds.
    pub intra_gap: (f64, f64),
    /// Position in the signature grid: (pattern, inbound level, outbound level).
    pub cell: (usize, usize, usize),
}

const fn run(direction: Direction, min_len: u32, max_len: u32) -> RunTemplate {
    RunTemplate {
        direction,
        min_len,
        max_len,
    }
}

use Direction::{Inbound as I, Outbound as O};

pub const PATTERNS: [&[RunTemplate]; 6] = [
    &[run(O, 1, 1), run(I, 3, 5)],
    &[run(O, 1, 1), run(I, 1, 1), run(O, 1, 1), run(I, 2, 4)],
    &[run(O, 2, 3), run(I, 1, 2)],
    &[run(O, 1, 1), run(I, 6, 9)],
    &[run(O, 1, 2), run(I, 2, 3), run(O, 1, 1), run(I, 1, 1)],
    &[run(O, 3, 4), run(I, 3, 4)],
];

pub const IN_LEVELS: usize = 12;
pub const OUT_LEVELS: usize = 4;
pub const GRID_SIZE: usize = PATTERNS.len() * IN_LEVELS * OUT_LEVELS;

pub const IN_STD: f64 = 25.0;
pub const OUT_STD: f64 = 15.0;

pub fn in_level(k: usize) -> f64 {
    180.0 + 110.0 * k as f64
}

pub fn out_level(k: usize) -> f64 {
    90.0 + 140.0 * k as f64
}

pub fn cell_of(index: usize) -> (usize, usize, usize) {
    let pattern = index % PATTERNS.len();
    let rest = index / PATTERNS.len();
    (pattern, rest % IN_LEVELS, rest / IN_LEVELS)
}

pub fn make_signature(uri: &str, domain: &str, cell: (usize, usize, usize), intra_gap: (f64, f64)) -> UriSignature {
    let pattern = PATTERNS[cell.0].to_vec();
    let lo = pattern.iter().map(|r| r.min_len).sum();
    let hi = pattern.iter().map(|r| r.max_len).sum();
    UriSignature {
        uri: uri.to_string(),
        domain: domain.to_string(),
        packet_count_range: (lo, hi),
        out_size: SizeDist {
            mean: out_level(cell.2),
            std: OUT_STD,
        },
        in_size: SizeDist {
            mean: in_level(cell.1),
            std: IN_STD,
        },
        direction_pattern: pattern,
        intra_gap,
        cell,
    }
}

/// Two signatures are told apart either by their run template or by mean
/// sizes at least two pooled standard deviations apart in some direction.
pub fn distinguishable(a: &UriSignature, b: &UriSignature) -> bool {
    let far = |x: &SizeDist, y: &SizeDist| {
        let pooled = ((x.std * x.std + y.std * y.std) / 2.0).sqrt();
        (x.mean - y.mean).abs() >= 2.0 * pooled
    };
    a.direction_pattern != b.direction_pattern || far(&a.in_size, &b.in_size) || far(&a.out_size, &b.out_size)
}
