use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `b` is either the same shape as `a` or a suffix of it (broadcast over leading axes).
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    /// Mask already carries the 1/(1-p) scaling.
    Dropout(Var, Vec<f64>),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Tape of operations. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    training: bool,
    dropout_seed: u64,
    dropout_counter: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Evaluation-mode graph (dropout is the identity).
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            training: false,
            dropout_seed: 0,
            dropout_counter: 0,
        }
    }

    /// Training-mode graph; dropout masks are keyed by `(seed, instance counter, element)`.
    pub fn training(seed: u64) -> Self {
        Graph {
            training: true,
            dropout_seed: seed,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Register a tensor as a differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    /// Register a tensor as a constant leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Leaf tracked according to the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad();
        self.push(t, Op::Leaf, tracked)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clear accumulated gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let tracked = self.tracked(x);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !(sa.len() >= sb.len() && sa.ends_with(sb)) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let n = bv.len();
        let data = av.iter().enumerate().map(|(i, &x)| x + bv[i % n]).collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let value = Tensor::new(vec![m, n], out)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// 1-D cross-correlation of `x: [C_in × L]` with `w: [C_out × C_in × K]`
    /// plus bias `b: [C_out]`, zero padding `pad` on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(TensorError::InvalidStride(stride));
        }
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv1d",
            lhs: sx.to_vec(),
            rhs: sw.to_vec(),
        };
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] || sb != [sw[0]] {
            return Err(mismatch());
        }
        let (c_in, len) = (sx[0], sx[1]);
        let (c_out, k) = (sw[0], sw[2]);
        if len + 2 * pad < k {
            return Err(mismatch());
        }
        let l_out = (len + 2 * pad - k) / stride + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; c_out * l_out];
        for o in 0..c_out {
            for j in 0..l_out {
                let mut acc = bv[o];
                for c in 0..c_in {
                    let wrow = &wv[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    let xrow = &xv[c * len..(c + 1) * len];
                    for (kk, &wk) in wrow.iter().enumerate() {
                        let pos = (j * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += wk * xrow[pos as usize];
                        }
                    }
                }
                out[o * l_out + j] = acc;
            }
        }
        let value = Tensor::new(vec![c_out, l_out], out)?;
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            },
            tracked,
        ))
    }

    /// Non-overlapping max pooling over the last axis of `[C × L]`; output
    /// length is `floor(L / k)`. Ties resolve to the first maximum.
    pub fn max_pool1d(&mut self, x: Var, k: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || k == 0 || sx[1] < k {
            return Err(TensorError::InvalidArgument {
                op: "max_pool1d",
                msg: format!("kernel {k} on shape {sx:?}"),
            });
        }
        let (c, len) = (sx[0], sx[1]);
        let l_out = len / k;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * l_out);
        let mut argmax = Vec::with_capacity(c * l_out);
        for ch in 0..c {
            for j in 0..l_out {
                let base = ch * len + j * k;
                let mut best = base;
                for idx in base + 1..base + k {
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![c, l_out], out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, tracked))
    }

    /// Inverted dropout. Identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                msg: format!("p = {p} outside [0, 1)"),
            });
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let instance = self.dropout_counter;
        self.dropout_counter += 1;
        let keep_scale = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n as u64)
            .map(|i| {
                if counter_uniform(self.dropout_seed, instance, i) >= p {
                    keep_scale
                } else {
                    0.0
                }
            })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Dropout(x, mask), tracked))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let width = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * width..(o + 1) * width]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    /// Take `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!("[{start}, {}) on axis {axis} of {sx:?}", start + len),
            });
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * sx[axis] + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Slice { x, axis, start }, tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(m), Op::Mean(x), tracked)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Reshape(x), tracked))
    }

    /// Reverse sweep from a scalar `loss`. Fills gradients for every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::DoubleBackward);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].tracked {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.tracked {
                *g = None;
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|s| add_assign(s, g));
                let n = self.value(*b).len();
                acc(*b, &|s| {
                    for (i, &gi) in g.iter().enumerate() {
                        s[i % n] += gi;
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| add_assign(s, g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(si, gi)| *si -= gi));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &|s| {
                s.iter_mut().zip(g).for_each(|(si, gi)| *si += c * gi)
            }),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = G · Bᵀ
                acc(*a, &|s| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut t = 0.0;
                            for j in 0..n {
                                t += g[i * n + j] * bv[p * n + j];
                            }
                            s[i * k + p] += t;
                        }
                    }
                });
                // dB = Aᵀ · G
                acc(*b, &|s| {
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            let row = &mut s[p * n..(p + 1) * n];
                            for (r, &gij) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *r += a_ip * gij;
                            }
                        }
                    }
                });
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (c_in, len) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (c_out, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                let l_out = node.value.shape()[1];
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let positions = |j: usize, kk: usize| -> Option<usize> {
                    let pos = (j * stride + kk) as isize - *pad as isize;
                    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
                };
                acc(*x, &|s| {
                    for o in 0..c_out {
                        for j in 0..l_out {
                            let go = g[o * l_out + j];
                            for c in 0..c_in {
                                for kk in 0..k {
                                    if let Some(pos) = positions(j, kk) {
                                        s[c * len + pos] += go * wv[(o * c_in + c) * k + kk];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*w, &|s| {
                    for o in 0..c_out {
                        for j in 0..l_out {
                            let go = g[o * l_out + j];
                            for c in 0..c_in {
                                for kk in 0..k {
                                    if let Some(pos) = positions(j, kk) {
                                        s[(o * c_in + c) * k + kk] += go * xv[c * len + pos];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*b, &|s| {
                    for o in 0..c_out {
                        s[o] += g[o * l_out..(o + 1) * l_out].iter().sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        if xv[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Sqrt(x) => {
                let y = node.value.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * 0.5 / y[i];
                    }
                });
            }
            Op::Dropout(x, mask) => acc(*x, &|s| {
                for i in 0..s.len() {
                    s[i] += g[i] * mask[i];
                }
            }),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let width = self.shape(v)[*axis] * inner;
                    acc(v, &|s| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + width];
                            add_assign(&mut s[o * width..(o + 1) * width], src);
                        }
                    });
                    offset += width;
                }
            }
            Op::Slice { x, axis, start } => {
                let sx = self.shape(*x);
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[axis + 1..].iter().product();
                let len = node.value.shape()[*axis];
                acc(*x, &|s| {
                    for o in 0..outer {
                        let to = (o * sx[*axis] + start) * inner;
                        let from = o * len * inner;
                        add_assign(&mut s[to..to + len * inner], &g[from..from + len * inner]);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|si| *si += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &|s| s.iter_mut().for_each(|si| *si += g[0] / n));
            }
            Op::Reshape(x) => acc(*x, &|s| add_assign(s, g)),
            Op::MaxPool1d { x, argmax } => acc(*x, &|s| {
                for (gi, &src) in g.iter().zip(argmax) {
                    s[src] += gi;
                }
            }),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += a_ip * bv;
            }
        }
    }
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) determined only by `(seed, instance, index)`.
pub(crate) fn counter_uniform(seed: u64, instance: u64, index: u64) -> f64 {
    let h = mix64(
        mix64(mix64(seed ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(instance)).wrapping_add(index),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}
