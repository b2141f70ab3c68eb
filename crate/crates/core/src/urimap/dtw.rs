use crate::error::{Error, Result};
use crate::traffic::Packet;

/// Packet series as signed sizes: outbound positive, inbound negative.
pub fn signed_size_series(packets: &[Packet]) -> Vec<f64> {
    packets.iter().map(Packet::signed_size).collect()
}

/// Classic O(nm) dynamic time warping with absolute-difference cost.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// `1 / (1 + d / max(n, m))`, in `(0, 1]`.
pub fn dtw_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = dtw_distance(a, b)?;
    Ok(1.0 / (1.0 + d / a.len().max(b.len()) as f64))
}
