use rand::Rng;

use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Dense layer, `y = x W + b` applied row-wise.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), fan_in, fan_out, Init::Uniform(bound), rng),
            bias: store.add(format!("{name}.bias"), 1, fan_out, Init::Uniform(bound), rng),
            fan_in,
            fan_out,
        }
    }

    /// Weight and bias start at zero, so the layer outputs zeros until trained.
    pub fn zeroed<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), fan_in, fan_out, Init::Zeros, rng),
            bias: store.add(format!("{name}.bias"), 1, fan_out, Init::Zeros, rng),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Temporal convolution with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel) as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), kernel * cin, cout, Init::Uniform(bound), rng),
            bias: store.add(format!("{name}.bias"), 1, cout, Init::Uniform(bound), rng),
            kernel,
            cin,
            cout,
        }
    }

    pub fn zeroed<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), kernel * cin, cout, Init::Zeros, rng),
            bias: store.add(format!("{name}.bias"), 1, cout, Init::Zeros, rng),
            kernel,
            cin,
            cout,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv1d(x, w, b, self.kernel)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        groups: usize,
        rng: &mut R,
    ) -> Self {
        assert!(
            channels.is_multiple_of(groups),
            "{channels} channels do not split into {groups} groups"
        );
        Self {
            gamma: store.add(format!("{name}.gamma"), 1, channels, Init::Ones, rng),
            beta: store.add(format!("{name}.beta"), 1, channels, Init::Zeros, rng),
            groups,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.group_norm(x, g, b, self.groups)
    }
}

/// Stack of dense layers with SiLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`. With `zero_last`, the output layer
    /// starts at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_last && i == n - 1 {
                    Linear::zeroed(store, &lname, widths[i], widths[i + 1], rng)
                } else {
                    Linear::new(store, &lname, widths[i], widths[i + 1], rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x);
            if i < last {
                x = tape.silu(x);
            }
        }
        x
    }
}
