//! Temporal U-Net: residual 1-D convolution blocks over the sequence axis
//! with feature-wise conditioning from a global context vector.
//!
//! The network is length-polymorphic. One average-pool/upsample pair wraps
//! the inner blocks when the sequence has at least `pool_min_len` rows;
//! shorter sequences run the same blocks without resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::layers::{Conv1d, GroupNorm, Linear, Mlp};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Per-position input channels.
    pub in_dim: usize,
    /// Per-position output channels.
    pub out_dim: usize,
    /// Width of the raw context vector.
    pub ctx_dim: usize,
    /// Hidden width of the context MLP.
    pub ctx_hidden: usize,
    /// Channel widths of the outer and inner stage.
    pub widths: [usize; 2],
    pub groups: usize,
    pub kernel: usize,
    pub pool_min_len: usize,
}

impl UNetConfig {
    pub fn new(in_dim: usize, out_dim: usize, ctx_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            ctx_dim,
            ctx_hidden: 64,
            widths: [32, 64],
            groups: 8,
            kernel: 3,
            pool_min_len: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv1d,
    norm1: GroupNorm,
    film: Linear,
    conv2: Conv1d,
    norm2: GroupNorm,
    skip: Option<Conv1d>,
    cout: usize,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        ctx_hidden: usize,
        cfg: &UNetConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), cin, cout, cfg.kernel, rng),
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), cout, cfg.groups, rng),
            film: Linear::new(store, &format!("{name}.film"), ctx_hidden, 2 * cout, rng),
            conv2: Conv1d::new(store, &format!("{name}.conv2"), cout, cout, cfg.kernel, rng),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), cout, cfg.groups, rng),
            skip: (cin != cout).then(|| Conv1d::new(store, &format!("{name}.skip"), cin, cout, 1, rng)),
            cout,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, ctx: Var) -> Var {
        let h = self.conv1.forward(tape, x);
        let h = self.norm1.forward(tape, h);
        let mods = self.film.forward(tape, ctx);
        let scale = tape.slice_cols(mods, 0, self.cout);
        let shift = tape.slice_cols(mods, self.cout, self.cout);
        let h = tape.film(h, scale, shift);
        let h = tape.silu(h);
        let h = self.conv2.forward(tape, h);
        let h = self.norm2.forward(tape, h);
        let h = tape.silu(h);
        let res = match &self.skip {
            Some(conv) => conv.forward(tape, x),
            None => x,
        };
        tape.add(h, res)
    }
}

#[derive(Clone, Debug)]
pub struct TemporalUNet {
    pub config: UNetConfig,
    ctx_mlp: Mlp,
    input: Conv1d,
    enc: ResidualBlock,
    down: ResidualBlock,
    mid: ResidualBlock,
    up: ResidualBlock,
    output: Conv1d,
}

impl TemporalUNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: UNetConfig, rng: &mut R) -> Self {
        let [w0, w1] = config.widths;
        let h = config.ctx_hidden;
        let ctx_mlp = Mlp::new(store, &format!("{name}.ctx"), &[config.ctx_dim, h, h], false, rng);
        let input = Conv1d::new(store, &format!("{name}.input"), config.in_dim, w0, config.kernel, rng);
        let enc = ResidualBlock::new(store, &format!("{name}.enc"), w0, w0, h, &config, rng);
        let down = ResidualBlock::new(store, &format!("{name}.down"), w0, w1, h, &config, rng);
        let mid = ResidualBlock::new(store, &format!("{name}.mid"), w1, w1, h, &config, rng);
        let up = ResidualBlock::new(store, &format!("{name}.up"), w1 + w0, w0, h, &config, rng);
        let output = Conv1d::zeroed(store, &format!("{name}.output"), w0, config.out_dim, config.kernel, rng);
        Self {
            config,
            ctx_mlp,
            input,
            enc,
            down,
            mid,
            up,
            output,
        }
    }

    /// `x: [L, in_dim]` with `L >= 2`, `context: [1, ctx_dim]`; returns
    /// `[L, out_dim]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, context: Var) -> Result<Var> {
        let (len, cin) = tape.shape(x);
        if len < 2 || cin != self.config.in_dim {
            return Err(shape_err(
                "TemporalUNet input",
                format!("[L>=2, {}]", self.config.in_dim),
                format!("[{len}, {cin}]"),
            ));
        }
        let cs = tape.shape(context);
        if cs != (1, self.config.ctx_dim) {
            return Err(shape_err(
                "TemporalUNet context",
                format!("[1, {}]", self.config.ctx_dim),
                format!("{cs:?}"),
            ));
        }
        let ctx = self.ctx_mlp.forward(tape, context);
        let ctx = tape.silu(ctx);

        let h = self.input.forward(tape, x);
        let skip = self.enc.forward(tape, h, ctx);
        let pooled = len >= self.config.pool_min_len;
        let inner = if pooled { tape.avg_pool2(skip) } else { skip };
        let inner = self.down.forward(tape, inner, ctx);
        let inner = self.mid.forward(tape, inner, ctx);
        let inner = if pooled { tape.upsample2(inner, len) } else { inner };
        let merged = tape.concat_cols(inner, skip);
        let h = self.up.forward(tape, merged, ctx);
        Ok(self.output.forward(tape, h))
    }
}
