use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::conv::{self, ConvGeom, Padding};
use super::{numel, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    graph: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    MaxPool {
        input: usize,
        argmax: Vec<u32>,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        rows: usize,
        in_features: usize,
        out_features: usize,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Dropout {
        input: usize,
        mask: Vec<f32>,
    },
    Mse {
        pred: usize,
        target: usize,
    },
    Reshape(usize),
    Narrow {
        input: usize,
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Concat {
        inputs: Vec<(usize, usize)>,
        outer: usize,
        inner: usize,
    },
    Mean {
        input: usize,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in execution order, which is a valid topological
/// order; [`Graph::backward`] walks it in reverse, visiting each node once.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.graph, self.id, "Var used with a graph it does not belong to");
        v.idx
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            idx: self.nodes.len() - 1,
            graph: self.id,
        }
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Record a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Record a constant leaf (never receives a gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[self.check(v)].shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[self.check(v)].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[self.check(v)];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(self.check(v))
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(self.check(v)).and_then(|g| g.as_deref())
    }

    // ---- convolution family -------------------------------------------------

    fn conv_nd(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: Padding,
        spatial: usize,
    ) -> Result<Var> {
        let (xi, wi) = (self.check(x), self.check(w));
        let bi = b.map(|b| self.check(b));
        let xs = self.nodes[xi].shape.clone();
        let ws = self.nodes[wi].shape.clone();
        let batched = match xs.len() {
            r if r == spatial + 1 => false,
            r if r == spatial + 2 => true,
            _ => {
                return Err(Error::dim(format!(
                    "conv{spatial}d input must be rank {} or {}, got {xs:?}",
                    spatial + 1,
                    spatial + 2
                )))
            }
        };
        if ws.len() != spatial + 2 {
            return Err(Error::dim(format!("conv{spatial}d kernel shape {ws:?}")));
        }
        let (batch, rest) = if batched { (xs[0], &xs[1..]) } else { (1, &xs[..]) };
        let in_ch = rest[0];
        if ws[1] != in_ch {
            return Err(Error::dim(format!(
                "conv{spatial}d: input has {in_ch} channels, kernel expects {}",
                ws[1]
            )));
        }
        let out_ch = ws[0];
        if let Some(bi) = bi {
            if self.nodes[bi].shape != [out_ch] {
                return Err(Error::dim(format!(
                    "conv bias shape {:?}, expected [{out_ch}]",
                    self.nodes[bi].shape
                )));
            }
        }
        let mut in_dims = [1usize; 3];
        let mut kernel = [1usize; 3];
        for a in 0..spatial {
            in_dims[3 - spatial + a] = rest[1 + a];
            kernel[3 - spatial + a] = ws[2 + a];
        }
        let geom = ConvGeom::new(batch, in_ch, out_ch, in_dims, kernel, padding)?;
        let value = conv::conv_forward(
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            bi.map(|b| self.nodes[b].value.as_slice()),
            &geom,
        );
        let mut shape = Vec::with_capacity(xs.len());
        if batched {
            shape.push(batch);
        }
        shape.push(out_ch);
        shape.extend_from_slice(&geom.out_dims[3 - spatial..]);
        let rg = self.rg(xi) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            shape,
            value,
            Op::Conv {
                input: xi,
                kernel: wi,
                bias: bi,
                geom,
            },
            rg,
        ))
    }

    /// 1-D cross-correlation: `[C, L]` or `[B, C, L]` with kernel `[F, C, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        self.conv_nd(x, w, b, padding, 1)
    }

    /// 2-D cross-correlation: `[C, H, W]` or `[B, C, H, W]` with kernel `[F, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        self.conv_nd(x, w, b, padding, 2)
    }

    /// 3-D cross-correlation: `[C, T, H, W]` or `[B, C, T, H, W]` with kernel `[F, C, kt, k, k]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        self.conv_nd(x, w, b, padding, 3)
    }

    /// 2x2 stride-2 max pooling over the last two axes.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x);
        let s = self.nodes[xi].shape.clone();
        if s.len() < 2 {
            return Err(Error::dim(format!("maxpool needs rank >= 2, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let outer = numel(&s[..s.len() - 2]);
        let (value, argmax) = conv::maxpool_forward(&self.nodes[xi].value, outer, h, w);
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend_from_slice(&[h.div_ceil(2), w.div_ceil(2)]);
        let rg = self.rg(xi);
        Ok(self.push(shape, value, Op::MaxPool { input: xi, argmax }, rg))
    }

    // ---- dense ---------------------------------------------------------------

    /// Affine map `x·Wᵀ + b` for `x` of shape `[N]` or `[B, N]` and `W` of `[M, N]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.check(x), self.check(w));
        let bi = b.map(|b| self.check(b));
        let xs = self.nodes[xi].shape.clone();
        let ws = self.nodes[wi].shape.clone();
        if ws.len() != 2 {
            return Err(Error::dim(format!("dense weight must be [M, N], got {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let (rows, batched) = match xs.as_slice() {
            [k] if *k == n => (1, false),
            [r, k] if *k == n => (*r, true),
            _ => {
                return Err(Error::dim(format!(
                    "dense: input {xs:?} does not match weight {ws:?}"
                )))
            }
        };
        if let Some(bi) = bi {
            if self.nodes[bi].shape != [m] {
                return Err(Error::dim(format!(
                    "dense bias shape {:?}, expected [{m}]",
                    self.nodes[bi].shape
                )));
            }
        }
        let mut out = vec![0.0f32; rows * m];
        if let Some(bi) = bi {
            for r in 0..rows {
                out[r * m..(r + 1) * m].copy_from_slice(&self.nodes[bi].value);
            }
        }
        conv::gemm(
            rows,
            n,
            m,
            &self.nodes[xi].value,
            (n, 1),
            &self.nodes[wi].value,
            (1, n),
            1.0,
            &mut out,
            (m, 1),
        );
        let shape = if batched { vec![rows, m] } else { vec![m] };
        let rg = self.rg(xi) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            shape,
            out,
            Op::Linear {
                input: xi,
                weight: wi,
                bias: bi,
                rows,
                in_features: n,
                out_features: m,
            },
            rg,
        ))
    }

    // ---- pointwise -----------------------------------------------------------

    fn same_shape(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a), self.check(b));
        self.same_shape(ai, bi, "add")?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(self.nodes[ai].shape.clone(), value, Op::Add(ai, bi), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a), self.check(b));
        self.same_shape(ai, bi, "mul")?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(self.nodes[ai].shape.clone(), value, Op::Mul(ai, bi), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: fn(usize) -> Op) -> Var {
        let xi = self.check(x);
        let value = self.nodes[xi].value.iter().map(|&v| f(v)).collect();
        let rg = self.rg(xi);
        self.push(self.nodes[xi].shape.clone(), value, op(xi), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    /// Inverted dropout. Identity when `!training` or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f32,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::usage(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let xi = self.check(x);
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f32> = (0..self.nodes[xi].value.len())
            .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { scale })
            .collect();
        let value = self.nodes[xi]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let rg = self.rg(xi);
        Ok(self.push(
            self.nodes[xi].shape.clone(),
            value,
            Op::Dropout { input: xi, mask },
            rg,
        ))
    }

    /// Mean squared error, returned as a `[1]` tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pi, ti) = (self.check(pred), self.check(target));
        self.same_shape(pi, ti, "mse")?;
        let n = self.nodes[pi].value.len();
        let sum: f64 = self.nodes[pi]
            .value
            .iter()
            .zip(&self.nodes[ti].value)
            .map(|(p, t)| {
                let d = (*p - *t) as f64;
                d * d
            })
            .sum();
        let rg = self.rg(pi) || self.rg(ti);
        Ok(self.push(
            vec![1],
            vec![(sum / n as f64) as f32],
            Op::Mse {
                pred: pi,
                target: ti,
            },
            rg,
        ))
    }

    // ---- shape ---------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(x);
        if numel(shape) != self.nodes[xi].value.len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.nodes[xi].shape
            )));
        }
        let value = self.nodes[xi].value.clone();
        let rg = self.rg(xi);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(xi), rg))
    }

    fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= shape.len() {
            return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
        }
        Ok((numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..])))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xi = self.check(x);
        let s = self.nodes[xi].shape.clone();
        let (outer, axis_len, inner) = Self::split_axis(&s, axis)?;
        if len == 0 || start + len > axis_len {
            return Err(Error::dim(format!(
                "narrow [{start}, {}) outside axis of {axis_len}",
                start + len
            )));
        }
        let src = &self.nodes[xi].value;
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            value.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(xi);
        Ok(self.push(
            shape,
            value,
            Op::Narrow {
                input: xi,
                outer,
                axis_len,
                inner,
                start,
                len,
            },
            rg,
        ))
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let ids: Vec<usize> = xs.iter().map(|&v| self.check(v)).collect();
        let first = ids.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let s0 = self.nodes[*first].shape.clone();
        let (outer, _, inner) = Self::split_axis(&s0, axis)?;
        let mut parts = Vec::with_capacity(ids.len());
        let mut total = 0;
        for &i in &ids {
            let s = &self.nodes[i].shape;
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(a, (x, y))| a != axis && x != y)
            {
                return Err(Error::dim(format!("concat: shape {s:?} vs {s0:?} on axis {axis}")));
            }
            parts.push((i, s[axis]));
            total += s[axis];
        }
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(i, len) in &parts {
                let v = &self.nodes[i].value;
                value.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = ids.iter().any(|&i| self.rg(i));
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                inputs: parts,
                outer,
                inner,
            },
            rg,
        ))
    }

    /// Mean over one axis (the axis is removed).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xi = self.check(x);
        let s = self.nodes[xi].shape.clone();
        let (outer, axis_len, inner) = Self::split_axis(&s, axis)?;
        let src = &self.nodes[xi].value;
        let mut value = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for a in 0..axis_len {
                let row = &src[(o * axis_len + a) * inner..(o * axis_len + a + 1) * inner];
                for (d, v) in value[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let scale = 1.0 / axis_len as f32;
        value.iter_mut().for_each(|v| *v *= scale);
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(xi);
        Ok(self.push(
            shape,
            value,
            Op::Mean {
                input: xi,
                outer,
                axis_len,
                inner,
            },
            rg,
        ))
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse-mode sweep from a single-element `loss`.
    ///
    /// Afterwards [`Graph::grad`] returns d(loss)/d(v) for every node that
    /// requires a gradient. Calling it again replaces the previous result.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss);
        if self.nodes[li].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a single-element loss, got shape {:?}",
                self.nodes[li].shape
            )));
        }
        if !self.nodes[li].requires_grad {
            return Err(Error::usage(
                "backward on a tensor with no recorded graph (nothing requires grad)",
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);
        for idx in (0..=li).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.requires_grad && grads[i].is_none() {
                // reached no path from the loss: defined as zero
                grads[i] = Some(vec![0.0; n.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], idx: usize, g: impl FnOnce(&mut [f32])) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let slot = grads[idx].get_or_insert_with(|| vec![0.0; self.nodes[idx].value.len()]);
        g(slot);
    }

    fn propagate(&self, idx: usize, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            } => {
                let want = (
                    self.rg(*input),
                    self.rg(*kernel),
                    bias.is_some_and(|b| self.rg(b)),
                );
                let g = conv::conv_backward(
                    &self.nodes[*input].value,
                    &self.nodes[*kernel].value,
                    gout,
                    geom,
                    want,
                );
                if let Some(dx) = g.input {
                    self.accumulate(grads, *input, |s| add_into(s, &dx));
                }
                if let Some(dw) = g.kernel {
                    self.accumulate(grads, *kernel, |s| add_into(s, &dw));
                }
                if let (Some(b), Some(db)) = (bias, g.bias) {
                    self.accumulate(grads, *b, |s| add_into(s, &db));
                }
            }
            Op::MaxPool { input, argmax } => {
                self.accumulate(grads, *input, |s| {
                    for (g, &a) in gout.iter().zip(argmax) {
                        s[a as usize] += g;
                    }
                });
            }
            Op::Linear {
                input,
                weight,
                bias,
                rows,
                in_features: n,
                out_features: m,
            } => {
                let (rows, n, m) = (*rows, *n, *m);
                if self.rg(*input) {
                    // dX = dY · W
                    let w = &self.nodes[*weight].value;
                    self.accumulate(grads, *input, |s| {
                        conv::gemm(rows, m, n, gout, (m, 1), w, (n, 1), 1.0, s, (n, 1))
                    });
                }
                if self.rg(*weight) {
                    // dW = dYᵀ · X
                    let x = &self.nodes[*input].value;
                    self.accumulate(grads, *weight, |s| {
                        conv::gemm(m, rows, n, gout, (1, m), x, (n, 1), 1.0, s, (n, 1))
                    });
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, |s| {
                        for r in 0..rows {
                            add_into(s, &gout[r * m..(r + 1) * m]);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, gout));
                self.accumulate(grads, *b, |s| add_into(s, gout));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                self.accumulate(grads, *a, |s| {
                    for ((d, g), y) in s.iter_mut().zip(gout).zip(bv) {
                        *d += g * y;
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for ((d, g), x) in s.iter_mut().zip(gout).zip(av) {
                        *d += g * x;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, |s| {
                    for ((d, g), y) in s.iter_mut().zip(gout).zip(y) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, |s| {
                    for ((d, g), y) in s.iter_mut().zip(gout).zip(y) {
                        *d += g * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                self.accumulate(grads, *a, |s| {
                    for ((d, g), x) in s.iter_mut().zip(gout).zip(x) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => {
                self.accumulate(grads, *input, |s| {
                    for ((d, g), m) in s.iter_mut().zip(gout).zip(mask) {
                        *d += g * m;
                    }
                });
            }
            Op::Mse { pred, target } => {
                let (p, t) = (&self.nodes[*pred].value, &self.nodes[*target].value);
                let scale = 2.0 * gout[0] / p.len() as f32;
                self.accumulate(grads, *pred, |s| {
                    for ((d, p), t) in s.iter_mut().zip(p).zip(t) {
                        *d += scale * (p - t);
                    }
                });
                self.accumulate(grads, *target, |s| {
                    for ((d, p), t) in s.iter_mut().zip(p).zip(t) {
                        *d -= scale * (p - t);
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |s| add_into(s, gout));
            }
            Op::Narrow {
                input,
                outer,
                axis_len,
                inner,
                start,
                len,
            } => {
                self.accumulate(grads, *input, |s| {
                    for o in 0..*outer {
                        let base = (o * axis_len + start) * inner;
                        add_into(
                            &mut s[base..base + len * inner],
                            &gout[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::Concat {
                inputs,
                outer,
                inner,
            } => {
                let total: usize = inputs.iter().map(|(_, l)| l).sum();
                let mut offset = 0;
                for &(i, len) in inputs {
                    self.accumulate(grads, i, |s| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut s[o * len * inner..(o + 1) * len * inner],
                                &gout[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Mean {
                input,
                outer,
                axis_len,
                inner,
            } => {
                let scale = 1.0 / *axis_len as f32;
                self.accumulate(grads, *input, |s| {
                    for o in 0..*outer {
                        let g = &gout[o * inner..(o + 1) * inner];
                        for a in 0..*axis_len {
                            let row = &mut s[(o * axis_len + a) * inner..(o * axis_len + a + 1) * inner];
                            for (d, g) in row.iter_mut().zip(g) {
                                *d += g * scale;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
