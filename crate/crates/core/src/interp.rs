//! Arc-length parameterized linear interpolation of sequences, expressed as
//! a weight matrix so it can also be applied on an autodiff tape.

/// Cumulative normalized positions in `[0, 1]` of `lengths.len() + 1`
/// points separated by the given segment lengths. Falls back to uniform
/// spacing when the total length is not positive.
pub fn arc_positions(lengths: &[f64]) -> Vec<f64> {
    let n = lengths.len();
    let clean: Vec<f64> = lengths
        .iter()
        .map(|&l| if l.is_finite() { l.max(0.0) } else { 0.0 })
        .collect();
    let total: f64 = clean.iter().sum();
    if n == 0 {
        return vec![0.0];
    }
    if !(total > 0.0) || !total.is_finite() {
        return uniform_positions(n + 1);
    }
    let mut pos = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    pos.push(0.0);
    for l in &clean[..n - 1] {
        acc += l;
        pos.push(acc / total);
    }
    pos.push(1.0);
    pos
}

pub fn uniform_positions(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.0];
    }
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// Row-major `[m_target, positions.len()]` weights that linearly
/// interpolate source points (at nondecreasing `positions` from 0 to 1)
/// at `m_target` uniform query positions.
pub fn upsample_matrix(positions: &[f64], m_target: usize) -> Vec<f64> {
    let n = positions.len();
    assert!(n >= 1, "need at least one source point");
    let mut w = vec![0.0; m_target * n];
    if n == 1 {
        w.iter_mut().for_each(|v| *v = 1.0);
        return w;
    }
    for (i, q) in uniform_positions(m_target).into_iter().enumerate() {
        let j = positions[..n - 1].iter().rposition(|&p| p <= q).unwrap_or(0);
        let span = positions[j + 1] - positions[j];
        let t = if span > 0.0 {
            ((q - positions[j]) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
        w[i * n + j] += 1.0 - t;
        w[i * n + j + 1] += t;
    }
    w
}

/// Applies a `[m, rows.len()]` weight matrix to a sequence of vectors.
pub fn apply(weights: &[f64], m: usize, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    assert_eq!(weights.len(), m * n);
    let dim = rows.first().map_or(0, Vec::len);
    (0..m)
        .map(|i| {
            let mut out = vec![0.0; dim];
            for (j, r) in rows.iter().enumerate() {
                let wij = weights[i * n + j];
                for (o, v) in out.iter_mut().zip(r) {
                    *o += wij * v;
                }
            }
            out
        })
        .collect()
}
