/// Longest common subsequence between a gated prediction sequence and a
/// canonical branch, by URI identity.
///
/// Predictions with confidence below `tau` are skipped. Returns the matched
/// `(prediction index, canonical index)` pairs; among maximum-length matchings
/// the lexicographically earliest one is chosen.
pub fn lcs_match<S: AsRef<str>>(predicted: &[(&str, f64)], canonical: &[S], tau: f64) -> Vec<(usize, usize)> {
    let kept: Vec<usize> = (0..predicted.len()).filter(|&i| predicted[i].1 >= tau).collect();
    let n = kept.len();
    let m = canonical.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let w = m + 1;
    let mut same = Vec::with_capacity(n * m);
    for &k in &kept {
        same.extend(canonical.iter().map(|c| predicted[k].0 == c.as_ref()));
    }
    let eq = |i: usize, j: usize| same[i * m + j];
    // suffix[i * w + j] = LCS length of kept[i..] and canonical[j..]
    let mut suffix = vec![0u32; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i * w + j] = if eq(i, j) {
                suffix[(i + 1) * w + j + 1] + 1
            } else {
                suffix[(i + 1) * w + j].max(suffix[i * w + j + 1])
            };
        }
    }
    let mut pairs = Vec::with_capacity(suffix[0] as usize);
    let (mut i, mut j) = (0, 0);
    while suffix[i * w + j] > 0 {
        let need = suffix[i * w + j];
        // once the suffix length drops below need no later row can start an optimal matching
        let next = (i..n)
            .take_while(|&a| suffix[a * w + j] == need)
            .find_map(|a| {
                (j..m)
                    .find(|&b| eq(a, b) && suffix[(a + 1) * w + b + 1] + 1 == need)
                    .map(|b| (a, b))
            })
            .expect("a pair extending an optimal matching exists");
        pairs.push((kept[next.0], next.1));
        i = next.0 + 1;
        j = next.1 + 1;
    }
    pairs
}
