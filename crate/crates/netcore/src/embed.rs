/// Sinusoidal embedding of a scalar position (the diffusion step index):
/// `[sin(k w_0), .., sin(k w_{h-1}), cos(k w_0), .., cos(k w_{h-1})]` with
/// `w_i = 10000^(-i / (h - 1))` and `h = dim / 2`.
pub fn sinusoidal_embedding(k: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim.is_multiple_of(2), "embedding width must be even");
    let half = dim / 2;
    let denom = (half.max(2) - 1) as f64;
    let freqs: Vec<f64> = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / denom).exp()).collect();
    let mut out = Vec::with_capacity(dim);
    out.extend(freqs.iter().map(|w| (k * w).sin()));
    out.extend(freqs.iter().map(|w| (k * w).cos()));
    out
}
