use rand::Rng;
use rand_chacha::ChaCha8Rng;
use subgoal_mpc::mppi::MppiConfig;
use subgoal_mpc::world2d::{SdfGrid, Vec2};

/// Literal transcription of the goal-set cost, one term at a time.
pub fn brute_force_cost(
    states: &[Vec<Vec2>],
    grippers: &[Vec2],
    controls: &[Vec2],
    prev: Vec2,
    chain: &[Vec<Vec2>],
    sdf: &SdfGrid,
    cfg: &MppiConfig,
) -> f64 {
    let mut total = 0.0;
    for t in 0..states.len() {
        let mut best = f64::INFINITY;
        for (i, g) in chain.iter().enumerate() {
            let mut d2 = 0.0;
            for k in 0..g.len() {
                let dx = states[t][k].x - g[k].x;
                let dy = states[t][k].y - g[k].y;
                d2 += dx * dx + dy * dy;
            }
            let mut geom = 0.0;
            for p in 0..i {
                geom += cfg.gamma.powi(p as i32);
            }
            best = best.min(d2 - cfg.lambda_remote * geom);
        }
        let pen = (-sdf.query(grippers[t])).max(0.0);
        let u_prev = if t == 0 { prev } else { controls[t - 1] };
        let du = controls[t] - u_prev;
        total += best + cfg.lambda_col * pen + cfg.lambda_smooth * (du.x * du.x + du.y * du.y);
    }
    total
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}
