//! Reverse-mode tape over row-major 2-D tensors.
//!
//! Sequences are laid out as `[length, channels]`; vectors as `[1, n]`.
//! Every op records its inputs so [`Tape::backward`] can walk the nodes in
//! reverse creation order.

use crate::error::{NetError, Result};
use crate::params::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const GN_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Silu(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Film {
        h: Var,
        scale: Var,
        shift: Var,
    },
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    AvgPool2(Var),
    Upsample2(Var),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    // Empty for parameter nodes; their values live in the store.
    value: Vec<f64>,
    op: Op,
}

/// One forward pass worth of recorded computation.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            consumed: false,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(id) => self.store.value(id),
            _ => &n.value,
        }
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), (1, 1));
        self.value(v)[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant data length");
        self.push(rows, cols, data, Op::Constant)
    }

    pub fn row(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.constant(1, n, data)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let (r, c) = self.store.shape(id);
        self.push(r, c, Vec::new(), Op::Param(id))
    }

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * m..(p + 1) * m];
                for (o, w) in orow.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        self.push(n, m, out, Op::MatMul(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "elementwise shape");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(r, c, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast-adds a `[1,m]` row to every row of `[n,m]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(row), (1, m), "add_row shape");
        let rv = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_exact_mut(m) {
            for (o, r) in chunk.iter_mut().zip(rv) {
                *o += r;
            }
        }
        self.push(n, m, out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, k) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push(r, k, out, Op::Scale(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let (r, k) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * x).collect();
        self.push(r, k, out, Op::Square(a))
    }

    /// `x * sigmoid(x)`
    pub fn silu(&mut self, a: Var) -> Var {
        let (r, k) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * sigmoid(x)).collect();
        self.push(r, k, out, Op::Silu(a))
    }

    /// Zero-padded "same" 1-D convolution over rows (time).
    /// `x: [L, cin]`, `w: [kernel*cin, cout]` with row `j*cin + c` holding
    /// the tap at offset `j - kernel/2`, `b: [1, cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        let (len, cin) = self.shape(x);
        let (wr, cout) = self.shape(w);
        assert_eq!(wr, kernel * cin, "conv weight rows");
        assert_eq!(self.shape(b), (1, cout), "conv bias shape");
        let pad = kernel / 2;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(len * cout);
        for _ in 0..len {
            out.extend_from_slice(bv);
        }
        for t in 0..len {
            let orow = &mut out[t * cout..(t + 1) * cout];
            for j in 0..kernel {
                let src = t + j;
                if src < pad || src - pad >= len {
                    continue;
                }
                let xrow = &xv[(src - pad) * cin..(src - pad + 1) * cin];
                for (c, &xval) in xrow.iter().enumerate() {
                    let wrow = &wv[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xval * wv;
                    }
                }
            }
        }
        self.push(len, cout, out, Op::Conv1d { x, w, b, kernel })
    }

    /// Group normalization over `(rows x channels-in-group)` followed by a
    /// per-channel affine map.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let (len, ch) = self.shape(x);
        assert!(groups > 0 && ch % groups == 0, "channels must divide into groups");
        assert_eq!(self.shape(gamma), (1, ch), "group_norm gamma");
        assert_eq!(self.shape(beta), (1, ch), "group_norm beta");
        let per = ch / groups;
        let count = (len * per) as f64;
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut normalized = vec![0.0; len * ch];
        let mut inv_std = vec![0.0; groups];
        for g in 0..groups {
            let cols = g * per..(g + 1) * per;
            let mut mean = 0.0;
            for t in 0..len {
                mean += xv[t * ch + cols.start..t * ch + cols.end].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for t in 0..len {
                var += xv[t * ch + cols.start..t * ch + cols.end]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            var /= count;
            let istd = 1.0 / (var + GN_EPS).sqrt();
            inv_std[g] = istd;
            for t in 0..len {
                for c in cols.clone() {
                    normalized[t * ch + c] = (xv[t * ch + c] - mean) * istd;
                }
            }
        }
        let mut out = vec![0.0; len * ch];
        for t in 0..len {
            for c in 0..ch {
                out[t * ch + c] = gv[c] * normalized[t * ch + c] + bv[c];
            }
        }
        self.push(
            len,
            ch,
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                normalized,
                inv_std,
            },
        )
    }

    /// Feature-wise affine modulation `h * (1 + scale) + shift` with
    /// `[1, C]` scale and shift broadcast over rows.
    pub fn film(&mut self, h: Var, scale: Var, shift: Var) -> Var {
        let (len, ch) = self.shape(h);
        assert_eq!(self.shape(scale), (1, ch), "film scale");
        assert_eq!(self.shape(shift), (1, ch), "film shift");
        let hv = self.value(h);
        let sv = self.value(scale);
        let tv = self.value(shift);
        let mut out = vec![0.0; len * ch];
        for t in 0..len {
            for c in 0..ch {
                out[t * ch + c] = hv[t * ch + c] * (1.0 + sv[c]) + tv[c];
            }
        }
        self.push(len, ch, out, Op::Film { h, scale, shift })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (n, ca) = self.shape(a);
        let (n2, cb) = self.shape(b);
        assert_eq!(n, n2, "concat_cols rows");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        self.push(n, ca + cb, out, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols range");
        let av = self.value(a);
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&av[i * c + start..i * c + start + len]);
        }
        self.push(n, len, out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, c) = self.shape(a);
        assert!(start + len <= n, "slice_rows range");
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        self.push(len, c, out, Op::SliceRows(a, start))
    }

    /// Averages row pairs; an odd trailing row passes through alone.
    pub fn avg_pool2(&mut self, a: Var) -> Var {
        let (n, c) = self.shape(a);
        let m = n.div_ceil(2);
        let av = self.value(a);
        let mut out = vec![0.0; m * c];
        for i in 0..m {
            let lo = 2 * i;
            let hi = (2 * i + 1).min(n - 1);
            let w = if hi > lo { 0.5 } else { 1.0 };
            for k in 0..c {
                out[i * c + k] = if hi > lo {
                    w * (av[lo * c + k] + av[hi * c + k])
                } else {
                    av[lo * c + k]
                };
            }
        }
        self.push(m, c, out, Op::AvgPool2(a))
    }

    /// Nearest-neighbour upsampling to `target` rows; row `i` copies input
    /// row `i / 2`. Requires `ceil(target / 2)` input rows.
    pub fn upsample2(&mut self, a: Var, target: usize) -> Var {
        let (n, c) = self.shape(a);
        assert_eq!(n, target.div_ceil(2), "upsample2 length");
        let av = self.value(a);
        let mut out = Vec::with_capacity(target * c);
        for i in 0..target {
            out.extend_from_slice(&av[(i / 2) * c..(i / 2 + 1) * c]);
        }
        self.push(target, c, out, Op::Upsample2(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (n, c) = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..n {
            for k in 0..c {
                out[k] += av[i * c + k];
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(1, c, out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Mean softmax cross-entropy of `[n, classes]` logits against class
    /// indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, c) = self.shape(logits);
        assert_eq!(n, labels.len(), "one label per logit row");
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &lv[i * c..(i + 1) * c];
            let p = softmax(row);
            assert!(labels[i] < c, "label out of range");
            loss -= p[labels[i]].max(f64::MIN_POSITIVE).ln();
            probs[i * c..(i + 1) * c].copy_from_slice(&p);
        }
        loss /= n as f64;
        self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Runs reverse-mode differentiation from a scalar loss. A tape can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(NetError::TapeConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(NetError::NonScalarLoss(r, c));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::empty(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.add(*id, g.len(), &g),
                Op::MatMul(a, b) => {
                    let (n, k) = self.shape(*a);
                    let m = node.cols;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // dA = G B^T
                    let ga = slot(&mut grads, *a, n * k);
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            ga[i * k + p] += dot(grow, brow);
                        }
                    }
                    // dB = A^T G
                    let gb = slot(&mut grads, *b, k * m);
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += x * gv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    axpy(slot(&mut grads, *b, g.len()), 1.0, &g);
                }
                Op::Sub(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    axpy(slot(&mut grads, *b, g.len()), -1.0, &g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).to_vec();
                    let bv = self.value(*b);
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, gv), y) in ga.iter_mut().zip(&g).zip(bv) {
                        *o += gv * y;
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for ((o, gv), x) in gb.iter_mut().zip(&g).zip(&av) {
                        *o += gv * x;
                    }
                }
                Op::AddRow(a, row) => {
                    let m = node.cols;
                    axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    let gr = slot(&mut grads, *row, m);
                    for chunk in g.chunks_exact(m) {
                        axpy(gr, 1.0, chunk);
                    }
                }
                Op::Scale(a, s) => axpy(slot(&mut grads, *a, g.len()), *s, &g),
                Op::Square(a) => {
                    let av = self.value(*a);
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, gv), x) in ga.iter_mut().zip(&g).zip(av) {
                        *o += 2.0 * x * gv;
                    }
                }
                Op::Silu(a) => {
                    let av = self.value(*a);
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, gv), &x) in ga.iter_mut().zip(&g).zip(av) {
                        let s = sigmoid(x);
                        *o += gv * (s + x * s * (1.0 - s));
                    }
                }
                Op::Conv1d { x, w, b, kernel } => {
                    let (len, cin) = self.shape(*x);
                    let cout = node.cols;
                    let pad = kernel / 2;
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let gb = slot(&mut grads, *b, cout);
                    for chunk in g.chunks_exact(cout) {
                        axpy(gb, 1.0, chunk);
                    }
                    let gw = slot(&mut grads, *w, kernel * cin * cout);
                    for t in 0..len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for j in 0..*kernel {
                            let src = t + j;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            let xrow = &xv[(src - pad) * cin..(src - pad + 1) * cin];
                            for (c, &xval) in xrow.iter().enumerate() {
                                let r = j * cin + c;
                                axpy(&mut gw[r * cout..(r + 1) * cout], xval, grow);
                            }
                        }
                    }
                    let gx = slot(&mut grads, *x, len * cin);
                    for t in 0..len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for j in 0..*kernel {
                            let src = t + j;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            let s = src - pad;
                            for c in 0..cin {
                                let r = j * cin + c;
                                gx[s * cin + c] += dot(&wv[r * cout..(r + 1) * cout], grow);
                            }
                        }
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    normalized,
                    inv_std,
                } => {
                    let (len, ch) = (node.rows, node.cols);
                    let per = ch / groups;
                    let count = (len * per) as f64;
                    let gv = self.value(*gamma).to_vec();
                    let gg = slot(&mut grads, *gamma, ch);
                    for t in 0..len {
                        for c in 0..ch {
                            gg[c] += g[t * ch + c] * normalized[t * ch + c];
                        }
                    }
                    let gbeta = slot(&mut grads, *beta, ch);
                    for chunk in g.chunks_exact(ch) {
                        axpy(gbeta, 1.0, chunk);
                    }
                    let gx = slot(&mut grads, *x, len * ch);
                    for grp in 0..*groups {
                        let cols = grp * per..(grp + 1) * per;
                        let mut sum_d = 0.0;
                        let mut sum_dn = 0.0;
                        for t in 0..len {
                            for c in cols.clone() {
                                let d = g[t * ch + c] * gv[c];
                                sum_d += d;
                                sum_dn += d * normalized[t * ch + c];
                            }
                        }
                        let k = inv_std[grp] / count;
                        for t in 0..len {
                            for c in cols.clone() {
                                let i = t * ch + c;
                                let d = g[i] * gv[c];
                                gx[i] += k * (count * d - sum_d - normalized[i] * sum_dn);
                            }
                        }
                    }
                }
                Op::Film { h, scale, shift } => {
                    let (len, ch) = (node.rows, node.cols);
                    let hv = self.value(*h).to_vec();
                    let sv = self.value(*scale).to_vec();
                    let gh = slot(&mut grads, *h, len * ch);
                    for t in 0..len {
                        for c in 0..ch {
                            gh[t * ch + c] += g[t * ch + c] * (1.0 + sv[c]);
                        }
                    }
                    let gs = slot(&mut grads, *scale, ch);
                    for t in 0..len {
                        for c in 0..ch {
                            gs[c] += g[t * ch + c] * hv[t * ch + c];
                        }
                    }
                    let gt = slot(&mut grads, *shift, ch);
                    for chunk in g.chunks_exact(ch) {
                        axpy(gt, 1.0, chunk);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (n, ca) = self.shape(*a);
                    let cb = self.shape(*b).1;
                    let ga = slot(&mut grads, *a, n * ca);
                    for i in 0..n {
                        axpy(
                            &mut ga[i * ca..(i + 1) * ca],
                            1.0,
                            &g[i * (ca + cb)..i * (ca + cb) + ca],
                        );
                    }
                    let gb = slot(&mut grads, *b, n * cb);
                    for i in 0..n {
                        axpy(
                            &mut gb[i * cb..(i + 1) * cb],
                            1.0,
                            &g[i * (ca + cb) + ca..(i + 1) * (ca + cb)],
                        );
                    }
                }
                Op::SliceCols(a, start) => {
                    let (n, c) = self.shape(*a);
                    let len = node.cols;
                    let ga = slot(&mut grads, *a, n * c);
                    for i in 0..n {
                        axpy(
                            &mut ga[i * c + start..i * c + start + len],
                            1.0,
                            &g[i * len..(i + 1) * len],
                        );
                    }
                }
                Op::SliceRows(a, start) => {
                    let (n, c) = self.shape(*a);
                    let ga = slot(&mut grads, *a, n * c);
                    axpy(&mut ga[start * c..start * c + g.len()], 1.0, &g);
                }
                Op::AvgPool2(a) => {
                    let (n, c) = self.shape(*a);
                    let ga = slot(&mut grads, *a, n * c);
                    for i in 0..node.rows {
                        let lo = 2 * i;
                        let hi = 2 * i + 1;
                        let grow = &g[i * c..(i + 1) * c];
                        if hi < n {
                            axpy(&mut ga[lo * c..(lo + 1) * c], 0.5, grow);
                            axpy(&mut ga[hi * c..(hi + 1) * c], 0.5, grow);
                        } else {
                            axpy(&mut ga[lo * c..(lo + 1) * c], 1.0, grow);
                        }
                    }
                }
                Op::Upsample2(a) => {
                    let (n, c) = self.shape(*a);
                    let ga = slot(&mut grads, *a, n * c);
                    for i in 0..node.rows {
                        let s = i / 2;
                        axpy(&mut ga[s * c..(s + 1) * c], 1.0, &g[i * c..(i + 1) * c]);
                    }
                }
                Op::MeanRows(a) => {
                    let (n, c) = self.shape(*a);
                    let ga = slot(&mut grads, *a, n * c);
                    let inv = 1.0 / n as f64;
                    for chunk in ga.chunks_exact_mut(c) {
                        axpy(chunk, inv, &g);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let ga = slot(&mut grads, *a, n);
                    ga.iter_mut().for_each(|v| *v += g[0]);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let (n, c) = self.shape(*logits);
                    let gl = slot(&mut grads, *logits, n * c);
                    let k = g[0] / n as f64;
                    for i in 0..n {
                        for j in 0..c {
                            let target = if labels[i] == j { 1.0 } else { 0.0 };
                            gl[i * c + j] += k * (probs[i * c + j] - target);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use rand::SeedableRng;

    #[test]
    fn backward_twice_is_an_error() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let w = store.add("w", 1, 3, Init::Uniform(1.0), &mut rng);
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        let loss = tape.sum(wv);
        assert!(tape.backward(loss).is_ok());
        assert!(matches!(tape.backward(loss), Err(NetError::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.row(vec![1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(NetError::NonScalarLoss(1, 2))));
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w = store.add("w", 2, 2, Init::Uniform(1.0), &mut rng);
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        let zeroed = tape.scale(wv, 0.0);
        let loss = tape.sum(zeroed);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn pooling_round_trip_lengths() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        for len in [2usize, 3, 8, 9, 17] {
            let x = tape.constant(len, 1, (0..len).map(|v| v as f64).collect());
            let p = tape.avg_pool2(x);
            assert_eq!(tape.shape(p).0, len.div_ceil(2));
            let u = tape.upsample2(p, len);
            assert_eq!(tape.shape(u), (len, 1));
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -5.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
