use super::kernels::{
    broadcast_index, broadcast_shape, gelu_scalar, gelu_with_grad, gemm, gemm_new, BroadcastIndex, MatRef,
};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
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
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
        ia: BroadcastIndex,
        ib: BroadcastIndex,
    },
    Sub {
        a: Var,
        b: Var,
        ia: BroadcastIndex,
        ib: BroadcastIndex,
    },
    Mul {
        a: Var,
        b: Var,
        ia: BroadcastIndex,
        ib: BroadcastIndex,
    },
    MulScalar {
        a: Var,
        c: f64,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Transpose {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    PadTail {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    /// Keeps the elementwise derivative when the input needs a gradient.
    Gelu {
        a: Var,
        dydx: Vec<f64>,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of operations for reverse-mode differentiation.
///
/// Operations are appended as they execute, so every input precedes its
/// output. `backward` walks the list once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Branch-free within each chunk so the scan vectorizes.
fn all_finite(data: &[f64]) -> bool {
    const EXP: u64 = 0x7ff0_0000_0000_0000;
    data.chunks(256).all(|c| c.iter().map(|v| ((v.to_bits() & EXP) == EXP) as u64).sum::<u64>() == 0)
}

fn grad_slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Adds `scale · g` into the adjoint of `v`, copying on first contribution.
fn add_scaled(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64], scale: f64) {
    match &mut adj[v.0] {
        Some(acc) if scale == 1.0 => acc.iter_mut().zip(g).for_each(|(x, gi)| *x += gi),
        Some(acc) => acc.iter_mut().zip(g).for_each(|(x, gi)| *x += scale * gi),
        slot if scale == 1.0 => *slot = Some(g.to_vec()),
        slot => *slot = Some(g.iter().map(|gi| scale * gi).collect()),
    }
}

/// Adds `scale · g` into the adjoint of `v`, moving `g` on first contribution.
fn add_owned(adj: &mut [Option<Vec<f64>>], v: Var, mut g: Vec<f64>, scale: f64) {
    match &mut adj[v.0] {
        Some(_) => add_scaled(adj, v, &g, scale),
        slot => {
            if scale != 1.0 {
                g.iter_mut().for_each(|x| *x *= scale);
            }
            *slot = Some(g);
        }
    }
}

/// Transposes each of `batch` consecutive `rows × cols` blocks.
fn transpose_blocks(src: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return out;
    }
    for block in src.chunks(rows * cols).take(batch) {
        for j in 0..cols {
            out.extend((0..rows).map(|i| block[i * cols + j]));
        }
    }
    out
}

/// Adds `g`, laid out as repeated copies of an `m`-element block, into `acc`.
fn add_folded(acc: &mut [f64], g: &[f64], scale: f64) {
    for chunk in g.chunks(acc.len()) {
        acc.iter_mut().zip(chunk).for_each(|(x, gi)| *x += scale * gi);
    }
}

/// Splits a shape into (outer, axis length, inner) around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf by previous `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if cfg!(debug_assertions) && !all_finite(&data) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor::new(shape, data)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() }
    }

    /// Matrix product of `[.., m, k]` and `[k, n]`; leading axes of the left
    /// operand are treated as extra rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.tensor(a).numel() / k.max(1);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let out = gemm_new(m, k, n, MatRef::rows_major(self.value(a), k), MatRef::rows_major(self.value(b), n));
        self.push("matmul", shape, out, Op::MatMul { a, b }, &[a, b])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>, BroadcastIndex, BroadcastIndex)> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b)).ok_or_else(|| self.shape_err(name, a, b))?;
        let ia = broadcast_index(self.shape(a), &out_shape);
        let ib = broadcast_index(self.shape(b), &out_shape);
        let (da, db) = (self.value(a), self.value(b));
        let n: usize = out_shape.iter().product();
        let data = match (&ia, &ib) {
            (BroadcastIndex::Same, BroadcastIndex::Same) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            (BroadcastIndex::Same, BroadcastIndex::Suffix(m)) => {
                let mut out = Vec::with_capacity(n);
                for chunk in da.chunks(*m) {
                    out.extend(chunk.iter().zip(db).map(|(&x, &y)| f(x, y)));
                }
                out
            }
            (BroadcastIndex::Same, BroadcastIndex::Scalar) => da.iter().map(|&x| f(x, db[0])).collect(),
            _ => (0..n).map(|i| f(da[ia.map(i)], db[ib.map(i)])).collect(),
        };
        Ok((out_shape, data, ia, ib))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data, ia, ib) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", shape, data, Op::Add { a, b, ia, ib }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data, ia, ib) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", shape, data, Op::Sub { a, b, ia, ib }, &[a, b])
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data, ia, ib) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", shape, data, Op::Mul { a, b, ia, ib }, &[a, b])
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul_scalar", shape, data, Op::MulScalar { a, c }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", vec![1], vec![m], Op::Mean { a }, &[a])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(TensorError::Axis { op: "transpose", axis: 1, shape });
        }
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let batch = shape[..r - 2].iter().product::<usize>();
        let out = transpose_blocks(self.value(a), batch, rows, cols);
        let mut new_shape = shape;
        new_shape.swap(r - 2, r - 1);
        self.push("transpose", new_shape, out, Op::Transpose { a }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.tensor(a).numel() {
            return Err(TensorError::Shape { op: "reshape", lhs: self.shape(a).to_vec(), rhs: shape });
        }
        let data = self.value(a).to_vec();
        self.push("reshape", shape, data, Op::Reshape { a }, &[a])
    }

    /// Sub-range `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { op: "slice", axis, shape });
        }
        if start > end || end > shape[axis] {
            return Err(TensorError::Range { op: "slice", start, end, len: shape[axis] });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let width = end - start;
        let src = self.value(a);
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = width;
        self.push("slice", new_shape, out, Op::Slice { a, axis, start }, &[a])
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Axis { op: "concat", axis, shape: vec![] })?;
        let base_shape = self.shape(first).to_vec();
        if axis >= base_shape.len() {
            return Err(TensorError::Axis { op: "concat", axis, shape: base_shape });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base_shape.len()
                && s.iter().zip(&base_shape).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(self.shape_err("concat", first, p));
            }
            total += s[axis];
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * w..(o + 1) * w]);
            }
        }
        self.push("concat", shape, out, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    /// Extends the last axis to `target` by repeating its final element.
    pub fn pad_replicate_tail(&mut self, a: Var, target: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let len = *shape.last().ok_or(TensorError::Axis { op: "pad_replicate_tail", axis: 0, shape: shape.clone() })?;
        if len == 0 || target < len {
            return Err(TensorError::Range { op: "pad_replicate_tail", start: len, end: target, len });
        }
        let rows = self.tensor(a).numel() / len;
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows * target);
        for r in 0..rows {
            let row = &src[r * len..(r + 1) * len];
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(row[len - 1], target - len));
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = target;
        self.push("pad_replicate_tail", new_shape, out, Op::PadTail { a }, &[a])
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 || self.shape(gain) != [d] {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        if self.shape(bias) != [d] {
            return Err(self.shape_err("layer_norm", x, bias));
        }
        let rows = self.tensor(x).numel() / d;
        let (src, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for row in src.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            let start = xhat.len();
            xhat.extend(row.iter().map(|v| (v - mean) * rs));
            out.extend(xhat[start..].iter().zip(g.iter().zip(b)).map(|(h, (gi, bi))| h * gi + bi));
        }
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let (data, dydx) = if self.wants(a) {
            src.iter().map(|&x| gelu_with_grad(x)).unzip()
        } else {
            (src.iter().map(|&x| gelu_scalar(x)).collect(), Vec::new())
        };
        let shape = self.shape(a).to_vec();
        self.push("gelu", shape, data, Op::Gelu { a, dydx }, &[a])
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { op: "softmax", axis, shape });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { a, axis }, &[a])
    }

    /// Propagates d(loss)/d(leaf) into every leaf that requires a gradient.
    ///
    /// Gradients accumulate across calls until the leaves are zeroed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.tensor(loss).numel() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                adj[idx] = Some(g);
                continue;
            }
            self.propagate(idx, g, &mut adj);
        }

        for (idx, slot) in adj.into_iter().enumerate() {
            if let Some(g) = slot {
                let node = &mut self.nodes[idx];
                if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: Vec<f64>, adj: &mut [Option<Vec<f64>>]) {
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(adj, $v, self.tensor($v).numel())
            };
        }

        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = g.len() / n.max(1);
                if self.wants(*a) {
                    let (gm, bt) = (MatRef::rows_major(&g, n), MatRef::transposed(self.value(*b), n));
                    match &mut adj[a.0] {
                        Some(ga) => gemm(m, n, k, gm, bt, 1.0, ga),
                        slot => *slot = Some(gemm_new(m, n, k, gm, bt)),
                    }
                }
                if self.wants(*b) {
                    let (at, gm) = (MatRef::transposed(self.value(*a), k), MatRef::rows_major(&g, n));
                    match &mut adj[b.0] {
                        Some(gb) => gemm(k, m, n, at, gm, 1.0, gb),
                        slot => *slot = Some(gemm_new(k, m, n, at, gm)),
                    }
                }
            }
            Op::Add { a, b, ia, ib } | Op::Sub { a, b, ia, ib } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                let mut owned = Some(g);
                let sides = [(*a, ia, 1.0), (*b, ib, sign)];
                let wanted: Vec<_> = sides.into_iter().filter(|(v, _, _)| self.wants(*v)).collect();
                let last = wanted.len();
                for (k, (v, idx, s)) in wanted.into_iter().enumerate() {
                    match idx {
                        BroadcastIndex::Same if k + 1 == last => add_owned(adj, v, owned.take().unwrap(), s),
                        BroadcastIndex::Same => add_scaled(adj, v, owned.as_deref().unwrap(), s),
                        BroadcastIndex::Suffix(_) | BroadcastIndex::Scalar => {
                            add_folded(slot!(v), owned.as_deref().unwrap(), s)
                        }
                        BroadcastIndex::General(_) => {
                            let g = owned.as_deref().unwrap();
                            let gv = slot!(v);
                            for (i, gi) in g.iter().enumerate() {
                                gv[idx.map(i)] += s * gi;
                            }
                        }
                    }
                }
            }
            Op::Mul { a, b, ia, ib } => {
                if self.wants(*a) {
                    let vb = self.value(*b);
                    let ga = slot!(*a);
                    for (i, gi) in g.iter().enumerate() {
                        ga[ia.map(i)] += gi * vb[ib.map(i)];
                    }
                }
                if self.wants(*b) {
                    let va = self.value(*a);
                    let gb = slot!(*b);
                    for (i, gi) in g.iter().enumerate() {
                        gb[ib.map(i)] += gi * va[ia.map(i)];
                    }
                }
            }
            Op::MulScalar { a, c } => add_owned(adj, *a, g, *c),
            Op::Sum { a } => {
                let ga = slot!(*a);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean { a } => {
                let ga = slot!(*a);
                let s = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += s);
            }
            Op::Transpose { a } => {
                let shape = self.shape(*a);
                let r = shape.len();
                let (rows, cols) = (shape[r - 2], shape[r - 1]);
                let batch = shape[..r - 2].iter().product::<usize>();
                add_owned(adj, *a, transpose_blocks(&g, batch, cols, rows), 1.0);
            }
            Op::Reshape { a } => add_owned(adj, *a, g, 1.0),
            Op::Slice { a, axis, start } => {
                let (outer, len, inner) = split_axis(self.shape(*a), *axis);
                let width = node.value.shape()[*axis];
                let ga = slot!(*a);
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * width * inner;
                    for t in 0..width * inner {
                        ga[dst + t] += g[src + t];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[*axis] * inner;
                    if self.wants(p) {
                        let gp = slot!(p);
                        for o in 0..outer {
                            let src = o * total * inner + offset;
                            for t in 0..w {
                                gp[o * w + t] += g[src + t];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::PadTail { a } => {
                let len = *self.shape(*a).last().unwrap();
                let target = *node.value.shape().last().unwrap();
                let ga = slot!(*a);
                let rows = ga.len() / len;
                for r in 0..rows {
                    for t in 0..target {
                        ga[r * len + t.min(len - 1)] += g[r * target + t];
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.shape(*gain)[0];
                let rows = rstd.len();
                let gv = self.value(*gain);
                if self.wants(*x) {
                    let mut gx = Vec::with_capacity(g.len());
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let (gr, hr) = (&g[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for i in 0..d {
                            dxhat[i] = gr[i] * gv[i];
                            mean_d += dxhat[i];
                            mean_dh += dxhat[i] * hr[i];
                        }
                        mean_d /= d as f64;
                        mean_dh /= d as f64;
                        gx.extend((0..d).map(|i| rstd[r] * (dxhat[i] - mean_d - hr[i] * mean_dh)));
                    }
                    add_owned(adj, *x, gx, 1.0);
                }
                if self.wants(*gain) {
                    let gg = slot!(*gain);
                    for r in 0..rows {
                        for i in 0..d {
                            gg[i] += g[r * d + i] * xhat[r * d + i];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = slot!(*bias);
                    for r in 0..rows {
                        for i in 0..d {
                            gb[i] += g[r * d + i];
                        }
                    }
                }
            }
            Op::Gelu { a, dydx } => {
                let mut g = g;
                g.iter_mut().zip(dydx).for_each(|(gi, d)| *gi *= d);
                add_owned(adj, *a, g, 1.0);
            }
            Op::Softmax { a, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let y = node.value.data();
                let ga = slot!(*a);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            ga[at(k)] += y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
            }
        }
    }
}
