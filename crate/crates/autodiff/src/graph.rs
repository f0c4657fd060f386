//! Computation graph recording forward values and the ops that produced
//! them. Nodes are appended in evaluation order, so the node list is a
//! topological order and backward is a single reverse sweep.

use std::collections::HashMap;

use crate::error::{shape_err, AutodiffError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{axis_split, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Broadcast(Var, Vec<usize>),
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Conv1d(Var, Var, Var),
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    ClampMin(Var, f64),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LogSumExp(Var, usize),
    WeightedLogSumExp(Var, usize, Tensor),
    Sum(Var, usize),
    SumAll(Var),
    Mean(Var, usize),
    MaskedMax(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Slice(Var, usize, usize),
    MatMul2x2(Var, Var),
    Det2x2(Var),
    Inverse2x2(Var),
    StopGradient(#[allow(dead_code)] Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-use differentiable expression graph.
///
/// Parameter values are borrowed from a [`ParamStore`] rather than copied,
/// so building a graph per instance stays cheap.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    param_nodes: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            param_nodes: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(params),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(pid) => self
                .params
                .expect("parameter node without a store")
                .value(pid),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is recorded but not propagated further.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(Tensor::scalar(value), Op::Leaf)
    }

    /// Node for a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        assert!(self.params.is_some(), "graph has no parameter store");
        let v = self.push(Tensor::zeros(&[0]), Op::Param(id));
        self.param_nodes.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        rec: Op,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_raw(va.shape().to_vec(), data);
        Ok(self.push(t, rec))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, rec: Op) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::from_raw(vx.shape().to_vec(), data);
        self.push(t, rec)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.map(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.map(x, f64::cos, Op::Cos(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    /// `max(x, floor)` elementwise; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.map(x, |v| v.max(floor), Op::ClampMin(x, floor))
    }

    /// Passes the value through unchanged and blocks gradient flow.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::StopGradient(x))
    }

    /// Numpy-style broadcast of `x` to `shape`.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let map = broadcast_map(src.shape(), shape)?;
        let data = map.iter().map(|&i| src.data()[i]).collect();
        let t = Tensor::from_raw(shape.to_vec(), data);
        Ok(self.push(t, Op::Broadcast(x, map)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if axis >= src.rank() || start + len > src.shape()[axis] {
            return shape_err(
                "slice",
                format!(
                    "axis {axis} range {start}..{} of {:?}",
                    start + len,
                    src.shape()
                ),
            );
        }
        let (outer, n, inner) = axis_split(src.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src.data()[base..base + len * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = len;
        let t = Tensor::from_raw(shape, data);
        Ok(self.push(t, Op::Slice(x, axis, start)))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return shape_err("concat", format!("{s:?} incompatible with {base:?}"));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::from_raw(shape, data);
        Ok(self.push(t, Op::Concat(xs.to_vec(), axis)))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape()));
        }
        let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm(va.data(), vb.data(), &mut out, n, k, m);
        let t = Tensor::from_raw(vec![n, m], out);
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Affine map `x W + b` for `x` of shape `[in]` or `[n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vw.rank() != 2 || vb.shape() != [vw.shape()[1]] {
            return shape_err(
                "linear",
                format!("weight {:?} bias {:?}", vw.shape(), vb.shape()),
            );
        }
        let (k, m) = (vw.shape()[0], vw.shape()[1]);
        let (n, out_shape) = match vx.shape() {
            [i] if *i == k => (1, vec![m]),
            [r, i] if *i == k => (*r, vec![*r, m]),
            s => return shape_err("linear", format!("input {s:?} vs weight {:?}", vw.shape())),
        };
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(vb.data());
        }
        gemm(vx.data(), vw.data(), &mut out, n, k, m);
        let t = Tensor::from_raw(out_shape, out);
        Ok(self.push(t, Op::Linear(x, w, b)))
    }

    /// Valid-padding temporal convolution: `x: [L, C_in]`, `w: [K, C_in, C_out]`,
    /// `b: [C_out]` -> `[L - K + 1, C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let ok = vx.rank() == 2
            && vw.rank() == 3
            && vw.shape()[1] == vx.shape()[1]
            && vb.shape() == [vw.shape()[2]]
            && vx.shape()[0] >= vw.shape()[0];
        if !ok {
            return shape_err(
                "conv1d",
                format!(
                    "input {:?} weight {:?} bias {:?}",
                    vx.shape(),
                    vw.shape(),
                    vb.shape()
                ),
            );
        }
        let (len, cin) = (vx.shape()[0], vx.shape()[1]);
        let (kern, cout) = (vw.shape()[0], vw.shape()[2]);
        let out_len = len - kern + 1;
        let mut out = Vec::with_capacity(out_len * cout);
        for _ in 0..out_len {
            out.extend_from_slice(vb.data());
        }
        for t in 0..out_len {
            let row = &mut out[t * cout..(t + 1) * cout];
            for k in 0..kern {
                let xin = &vx.data()[(t + k) * cin..(t + k + 1) * cin];
                let wk = &vw.data()[k * cin * cout..(k + 1) * cin * cout];
                for (ci, &xv) in xin.iter().enumerate() {
                    let wrow = &wk[ci * cout..(ci + 1) * cout];
                    for (o, &wv) in row.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let t = Tensor::from_raw(vec![out_len, cout], out);
        Ok(self.push(t, Op::Conv1d(x, w, b)))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.value(x).rank() {
            return shape_err(
                op,
                format!("axis {axis} out of range for {:?}", self.shape(x)),
            );
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let mut t = self.value(x).clone();
        let (outer, n, inner) = axis_split(t.shape(), axis);
        for_groups(outer, n, inner, |idx| {
            let d = t.data_mut();
            let mx = idx.clone().map(|i| d[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for i in idx.clone() {
                d[i] = (d[i] - mx).exp();
                s += d[i];
            }
            for i in idx {
                d[i] /= s;
            }
        });
        Ok(self.push(t, Op::Softmax(x, axis)))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let mut t = self.value(x).clone();
        let (outer, n, inner) = axis_split(t.shape(), axis);
        for_groups(outer, n, inner, |idx| {
            let d = t.data_mut();
            let lse = logsumexp_iter(idx.clone().map(|i| d[i]));
            for i in idx {
                d[i] -= lse;
            }
        });
        Ok(self.push(t, Op::LogSoftmax(x, axis)))
    }

    /// `ln Σ exp(x)` along `axis`; the axis is removed.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("logsumexp", x, axis)?;
        let vx = self.value(x);
        let (outer, n, inner) = axis_split(vx.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let it = (0..n).map(|k| vx.data()[(o * n + k) * inner + i]);
                out[o * inner + i] = logsumexp_iter(it);
            }
        }
        let t = Tensor::from_raw(removed_axis(vx.shape(), axis), out);
        Ok(self.push(t, Op::LogSumExp(x, axis)))
    }

    /// `ln Σ w·exp(x)` along `axis` with constant non-negative weights shaped
    /// like `x`. Zero-weight terms are skipped, so they receive exactly zero
    /// gradient. Every group needs at least one positive weight.
    pub fn logsumexp_weighted(&mut self, x: Var, axis: usize, weights: &Tensor) -> Result<Var> {
        self.check_axis("logsumexp_weighted", x, axis)?;
        let vx = self.value(x);
        if weights.shape() != vx.shape() {
            return shape_err(
                "logsumexp_weighted",
                format!("weights {:?} vs input {:?}", weights.shape(), vx.shape()),
            );
        }
        let (outer, n, inner) = axis_split(vx.shape(), axis);
        let (xd, wd) = (vx.data(), weights.data());
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let live: Vec<usize> = (0..n).filter(|&k| wd[idx(k)] > 0.0).collect();
                if live.is_empty() {
                    return Err(AutodiffError::EmptyReduction {
                        op: "logsumexp_weighted",
                        group: o * inner + i,
                    });
                }
                // NaN and all -inf groups pass through so callers can detect them.
                let mx = live
                    .iter()
                    .map(|&k| xd[idx(k)])
                    .fold(
                        f64::NEG_INFINITY,
                        |a, b| if b.is_nan() || b > a { b } else { a },
                    );
                out[o * inner + i] = if !mx.is_finite() {
                    mx
                } else {
                    let s: f64 = live
                        .iter()
                        .map(|&k| wd[idx(k)] * (xd[idx(k)] - mx).exp())
                        .sum();
                    mx + s.ln()
                };
            }
        }
        let t = Tensor::from_raw(removed_axis(vx.shape(), axis), out);
        Ok(self.push(t, Op::WeightedLogSumExp(x, axis, weights.clone())))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum", x, axis)?;
        let t = reduce_sum(self.value(x), axis);
        Ok(self.push(t, Op::Sum(x, axis)))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean", x, axis)?;
        let n = self.shape(x)[axis] as f64;
        let mut t = reduce_sum(self.value(x), axis);
        t.data_mut().iter_mut().for_each(|v| *v /= n);
        Ok(self.push(t, Op::Mean(x, axis)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Max along `axis` over unmasked entries. `mask` has one flag per
    /// (leading dims, axis) position, shared across trailing dims, i.e.
    /// its length is the product of `shape[..=axis]`. Ties resolve to the
    /// lowest index.
    pub fn masked_max(&mut self, x: Var, axis: usize, mask: &[bool]) -> Result<Var> {
        self.check_axis("masked_max", x, axis)?;
        let vx = self.value(x);
        let (outer, n, inner) = axis_split(vx.shape(), axis);
        if mask.len() != outer * n {
            return shape_err(
                "masked_max",
                format!(
                    "mask length {} for shape {:?} axis {axis}",
                    mask.len(),
                    vx.shape()
                ),
            );
        }
        let mut out = Vec::with_capacity(outer * inner);
        let mut arg = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            if !mask[o * n..(o + 1) * n].iter().any(|&m| m) {
                return Err(AutodiffError::EmptyReduction {
                    op: "masked_max",
                    group: o,
                });
            }
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for k in 0..n {
                    if !mask[o * n + k] {
                        continue;
                    }
                    let idx = (o * n + k) * inner + i;
                    let v = vx.data()[idx];
                    if best_idx == usize::MAX || v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
        let t = Tensor::from_raw(removed_axis(vx.shape(), axis), out);
        Ok(self.push(t, Op::MaskedMax(x, arg)))
    }

    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max", x, axis)?;
        let s = self.shape(x);
        let len = s[..=axis].iter().product();
        self.masked_max(x, axis, &vec![true; len])
    }

    fn check_2x2(&self, op: &'static str, x: Var) -> Result<usize> {
        let s = self.shape(x);
        if s.len() < 2 || s[s.len() - 1] != 2 || s[s.len() - 2] != 2 {
            return shape_err(op, format!("expected [..., 2, 2], got {s:?}"));
        }
        Ok(s[..s.len() - 2].iter().product())
    }

    /// Batched 2x2 matrix product over trailing `[2, 2]` dims.
    pub fn matmul2x2(&mut self, a: Var, b: Var) -> Result<Var> {
        let batch = self.check_2x2("matmul2x2", a)?;
        self.check_2x2("matmul2x2", b)?;
        self.same_shape("matmul2x2", a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * 4];
        for i in 0..batch {
            let (p, q, r) = (&va[i * 4..], &vb[i * 4..], &mut out[i * 4..i * 4 + 4]);
            r[0] = p[0] * q[0] + p[1] * q[2];
            r[1] = p[0] * q[1] + p[1] * q[3];
            r[2] = p[2] * q[0] + p[3] * q[2];
            r[3] = p[2] * q[1] + p[3] * q[3];
        }
        let t = Tensor::from_raw(self.shape(a).to_vec(), out);
        Ok(self.push(t, Op::MatMul2x2(a, b)))
    }

    pub fn det2x2(&mut self, x: Var) -> Result<Var> {
        let batch = self.check_2x2("det2x2", x)?;
        let s = self.shape(x);
        let shape = s[..s.len() - 2].to_vec();
        let d = self.value(x).data();
        let out = (0..batch)
            .map(|i| d[i * 4] * d[i * 4 + 3] - d[i * 4 + 1] * d[i * 4 + 2])
            .collect();
        let t = Tensor::from_raw(shape, out);
        Ok(self.push(t, Op::Det2x2(x)))
    }

    pub fn inverse2x2(&mut self, x: Var) -> Result<Var> {
        let batch = self.check_2x2("inverse2x2", x)?;
        let d = self.value(x).data();
        let mut out = vec![0.0; batch * 4];
        for i in 0..batch {
            let m = &d[i * 4..i * 4 + 4];
            let det = m[0] * m[3] - m[1] * m[2];
            out[i * 4] = m[3] / det;
            out[i * 4 + 1] = -m[1] / det;
            out[i * 4 + 2] = -m[2] / det;
            out[i * 4 + 3] = m[0] / det;
        }
        let t = Tensor::from_raw(self.shape(x).to_vec(), out);
        Ok(self.push(t, Op::Inverse2x2(x)))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else { continue };
            self.propagate(Var(i), g, lo);
        }

        let param_nodes = self.param_nodes.iter().map(|(&p, &v)| (p, v)).collect();
        Ok(Gradients { grads, param_nodes })
    }

    fn slot<'g>(&self, lo: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        lo[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
    }

    fn propagate(&self, node: Var, g: &Tensor, lo: &mut [Option<Tensor>]) {
        let out = &self.nodes[node.0].value;
        let gd = g.data();
        match &self.nodes[node.0].op {
            Op::Leaf | Op::Param(_) | Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                self.slot(lo, *a).add_assign(g);
                self.slot(lo, *b).add_assign(g);
            }
            Op::Sub(a, b) => {
                self.slot(lo, *a).add_assign(g);
                let gb = self.slot(lo, *b);
                gb.data_mut().iter_mut().zip(gd).for_each(|(d, &s)| *d -= s);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = self.slot(lo, *a);
                for ((d, &s), &y) in ga.data_mut().iter_mut().zip(gd).zip(vb) {
                    *d += s * y;
                }
                let gb = self.slot(lo, *b);
                for ((d, &s), &x) in gb.data_mut().iter_mut().zip(gd).zip(va) {
                    *d += s * x;
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                let ga = self.slot(lo, *a);
                for ((d, &s), &y) in ga.data_mut().iter_mut().zip(gd).zip(vb) {
                    *d += s / y;
                }
                let gb = self.slot(lo, *b);
                for (((d, &s), &y), &q) in gb.data_mut().iter_mut().zip(gd).zip(vb).zip(out.data())
                {
                    *d -= s * q / y;
                }
            }
            Op::AddScalar(x) => self.slot(lo, *x).add_assign(g),
            Op::Scale(x, c) => {
                let gx = self.slot(lo, *x);
                gx.data_mut()
                    .iter_mut()
                    .zip(gd)
                    .for_each(|(d, &s)| *d += c * s);
            }
            Op::Broadcast(x, map) => {
                let gx = self.slot(lo, *x);
                let d = gx.data_mut();
                for (&src, &s) in map.iter().zip(gd) {
                    d[src] += s;
                }
            }
            Op::Reshape(x) => {
                let gx = self.slot(lo, *x);
                gx.data_mut().iter_mut().zip(gd).for_each(|(d, &s)| *d += s);
            }
            Op::Slice(x, axis, start) => {
                let full = self.value(*x).shape().to_vec();
                let (outer, n, inner) = axis_split(&full, *axis);
                let len = out.shape()[*axis];
                let gx = self.slot(lo, *x);
                let d = gx.data_mut();
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    for j in 0..len * inner {
                        d[dst + j] += gd[src + j];
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, _, inner) = axis_split(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &x in xs {
                    let chunk = self.value(x).shape()[*axis] * inner;
                    let gx = self.slot(lo, x);
                    let d = gx.data_mut();
                    for o in 0..outer {
                        let src = o * total + offset;
                        for j in 0..chunk {
                            d[o * chunk + j] += gd[src + j];
                        }
                    }
                    offset += chunk;
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let (ad, bd) = (va.data(), vb.data());
                gemm_nt(gd, bd, self.slot(lo, *a).data_mut(), n, m, k);
                gemm_tn(ad, gd, self.slot(lo, *b).data_mut(), n, k, m);
            }
            Op::Linear(x, w, b) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (k, m) = (vw.shape()[0], vw.shape()[1]);
                let n = vx.len() / k;
                let (xd, wd) = (vx.data(), vw.data());
                gemm_nt(gd, wd, self.slot(lo, *x).data_mut(), n, m, k);
                gemm_tn(xd, gd, self.slot(lo, *w).data_mut(), n, k, m);
                let gb = self.slot(lo, *b).data_mut();
                for r in 0..n {
                    for (d, &s) in gb.iter_mut().zip(&gd[r * m..(r + 1) * m]) {
                        *d += s;
                    }
                }
            }
            Op::Conv1d(x, w, b) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (cin, kern, cout) = (vx.shape()[1], vw.shape()[0], vw.shape()[2]);
                let out_len = out.shape()[0];
                let (xd, wd) = (vx.data(), vw.data());
                {
                    let gx = self.slot(lo, *x).data_mut();
                    for t in 0..out_len {
                        let grow = &gd[t * cout..(t + 1) * cout];
                        for k in 0..kern {
                            for ci in 0..cin {
                                let wrow = &wd[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                                let s: f64 = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                                gx[(t + k) * cin + ci] += s;
                            }
                        }
                    }
                }
                {
                    let gw = self.slot(lo, *w).data_mut();
                    for t in 0..out_len {
                        let grow = &gd[t * cout..(t + 1) * cout];
                        for k in 0..kern {
                            for ci in 0..cin {
                                let xv = xd[(t + k) * cin + ci];
                                let dst = &mut gw[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                                for (d, &s) in dst.iter_mut().zip(grow) {
                                    *d += xv * s;
                                }
                            }
                        }
                    }
                }
                let gb = self.slot(lo, *b).data_mut();
                for t in 0..out_len {
                    for (d, &s) in gb.iter_mut().zip(&gd[t * cout..(t + 1) * cout]) {
                        *d += s;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &v) in gx.iter_mut().zip(gd).zip(xv) {
                    if v > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Tanh(x) => {
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &y) in gx.iter_mut().zip(gd).zip(out.data()) {
                    *d += s * (1.0 - y * y);
                }
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &v) in gx.iter_mut().zip(gd).zip(xv) {
                    *d += s * sigmoid(v);
                }
            }
            Op::Exp(x) => {
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &y) in gx.iter_mut().zip(gd).zip(out.data()) {
                    *d += s * y;
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &v) in gx.iter_mut().zip(gd).zip(xv) {
                    *d += s / v;
                }
            }
            Op::Sin(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &v) in gx.iter_mut().zip(gd).zip(xv) {
                    *d += s * v.cos();
                }
            }
            Op::Cos(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &v) in gx.iter_mut().zip(gd).zip(xv) {
                    *d -= s * v.sin();
                }
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &v) in gx.iter_mut().zip(gd).zip(xv) {
                    *d += 2.0 * s * v;
                }
            }
            Op::ClampMin(x, floor) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for ((d, &s), &v) in gx.iter_mut().zip(gd).zip(xv) {
                    if v > *floor {
                        *d += s;
                    }
                }
            }
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let gx = self.slot(lo, *x).data_mut();
                for_groups(outer, n, inner, |idx| {
                    let dot: f64 = idx.clone().map(|i| gd[i] * y[i]).sum();
                    for i in idx {
                        gx[i] += y[i] * (gd[i] - dot);
                    }
                });
            }
            Op::LogSoftmax(x, axis) => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let gx = self.slot(lo, *x).data_mut();
                for_groups(outer, n, inner, |idx| {
                    let total: f64 = idx.clone().map(|i| gd[i]).sum();
                    for i in idx {
                        gx[i] += gd[i] - y[i].exp() * total;
                    }
                });
            }
            Op::LogSumExp(x, axis) => {
                let vx = self.value(*x);
                let (outer, n, inner) = axis_split(vx.shape(), *axis);
                let xv = vx.data();
                let lse = out.data();
                let gx = self.slot(lo, *x).data_mut();
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        for k in 0..n {
                            let idx = (o * n + k) * inner + i;
                            gx[idx] += gd[r] * (xv[idx] - lse[r]).exp();
                        }
                    }
                }
            }
            Op::WeightedLogSumExp(x, axis, w) => {
                let vx = self.value(*x);
                let (outer, n, inner) = axis_split(vx.shape(), *axis);
                let (xv, wd) = (vx.data(), w.data());
                let lse = out.data();
                let gx = self.slot(lo, *x).data_mut();
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        for k in 0..n {
                            let idx = (o * n + k) * inner + i;
                            if wd[idx] > 0.0 {
                                gx[idx] += gd[r] * wd[idx] * (xv[idx] - lse[r]).exp();
                            }
                        }
                    }
                }
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let vx = self.value(*x);
                let (outer, n, inner) = axis_split(vx.shape(), *axis);
                let c = if matches!(self.nodes[node.0].op, Op::Mean(..)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let gx = self.slot(lo, *x).data_mut();
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            gx[(o * n + k) * inner + i] += c * gd[o * inner + i];
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let s = gd[0];
                self.slot(lo, *x)
                    .data_mut()
                    .iter_mut()
                    .for_each(|d| *d += s);
            }
            Op::MaskedMax(x, arg) => {
                let gx = self.slot(lo, *x).data_mut();
                for (&idx, &s) in arg.iter().zip(gd) {
                    gx[idx] += s;
                }
            }
            Op::MatMul2x2(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let batch = va.len() / 4;
                {
                    // dA = G Bᵀ
                    let ga = self.slot(lo, *a).data_mut();
                    for i in 0..batch {
                        let (q, gg) = (&vb[i * 4..i * 4 + 4], &gd[i * 4..i * 4 + 4]);
                        ga[i * 4] += gg[0] * q[0] + gg[1] * q[1];
                        ga[i * 4 + 1] += gg[0] * q[2] + gg[1] * q[3];
                        ga[i * 4 + 2] += gg[2] * q[0] + gg[3] * q[1];
                        ga[i * 4 + 3] += gg[2] * q[2] + gg[3] * q[3];
                    }
                }
                // dB = Aᵀ G
                let gb = self.slot(lo, *b).data_mut();
                for i in 0..batch {
                    let (p, gg) = (&va[i * 4..i * 4 + 4], &gd[i * 4..i * 4 + 4]);
                    gb[i * 4] += p[0] * gg[0] + p[2] * gg[2];
                    gb[i * 4 + 1] += p[0] * gg[1] + p[2] * gg[3];
                    gb[i * 4 + 2] += p[1] * gg[0] + p[3] * gg[2];
                    gb[i * 4 + 3] += p[1] * gg[1] + p[3] * gg[3];
                }
            }
            Op::Det2x2(x) => {
                let xv = self.value(*x).data();
                let gx = self.slot(lo, *x).data_mut();
                for (i, &s) in gd.iter().enumerate() {
                    let m = &xv[i * 4..i * 4 + 4];
                    gx[i * 4] += s * m[3];
                    gx[i * 4 + 1] -= s * m[2];
                    gx[i * 4 + 2] -= s * m[1];
                    gx[i * 4 + 3] += s * m[0];
                }
            }
            Op::Inverse2x2(x) => {
                // dX = -Yᵀ G Yᵀ with Y = X⁻¹
                let y = out.data();
                let gx = self.slot(lo, *x).data_mut();
                for i in 0..y.len() / 4 {
                    let yt = [y[i * 4], y[i * 4 + 2], y[i * 4 + 1], y[i * 4 + 3]];
                    let gg = &gd[i * 4..i * 4 + 4];
                    let t = mul2(&yt, gg);
                    let r = mul2(&t, &yt);
                    for j in 0..4 {
                        gx[i * 4 + j] -= r[j];
                    }
                }
            }
        }
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_nodes: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, or `None` if no path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// True when no gradient reached `v` or every entry is exactly zero.
    pub fn is_zero(&self, v: Var) -> bool {
        self.get(v)
            .is_none_or(|g| g.data().iter().all(|&x| x == 0.0))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_nodes
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Adds parameter gradients into `acc`, indexed by `ParamId`.
    pub fn accumulate_params(&self, acc: &mut [Tensor]) {
        for &(pid, v) in &self.param_nodes {
            if let Some(g) = self.get(v) {
                acc[pid.0].add_assign(g);
            }
        }
    }
}

fn mul2(a: &[f64], b: &[f64]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp_iter(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + it.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

fn for_groups(
    outer: usize,
    n: usize,
    inner: usize,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    for o in 0..outer {
        for i in 0..inner {
            let start = o * n * inner + i;
            f((start..start + n * inner).step_by(inner));
        }
    }
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn reduce_sum(x: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                out[o * inner + i] += x.data()[(o * n + k) * inner + i];
            }
        }
    }
    Tensor::from_raw(removed_axis(x.shape(), axis), out)
}

fn broadcast_map(src: &[usize], dst: &[usize]) -> Result<Vec<usize>> {
    if src.len() > dst.len() {
        return shape_err("broadcast", format!("{src:?} -> {dst:?}"));
    }
    let pad = dst.len() - src.len();
    let mut padded = vec![1; pad];
    padded.extend_from_slice(src);
    for (a, b) in padded.iter().zip(dst) {
        if *a != *b && *a != 1 {
            return shape_err("broadcast", format!("{src:?} -> {dst:?}"));
        }
    }
    let mut src_strides = vec![0; dst.len()];
    let mut stride = 1;
    for d in (0..dst.len()).rev() {
        src_strides[d] = if padded[d] == 1 { 0 } else { stride };
        stride *= padded[d];
    }
    let total: usize = dst.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; dst.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..dst.len()).rev() {
            idx[d] += 1;
            if idx[d] < dst[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(map)
}

/// `c += a[n,k] · b[k,m]`
fn gemm(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for r in 0..n {
        let crow = &mut c[r * m..(r + 1) * m];
        for (p, &av) in a[r * k..(r + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[n,k] += g[n,m] · b[k,m]ᵀ`
fn gemm_nt(g: &[f64], b: &[f64], c: &mut [f64], n: usize, m: usize, k: usize) {
    for r in 0..n {
        let grow = &g[r * m..(r + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            c[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k,m] += a[n,k]ᵀ · g[n,m]`
fn gemm_tn(a: &[f64], g: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for r in 0..n {
        let grow = &g[r * m..(r + 1) * m];
        for (p, &av) in a[r * k..(r + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(g: &mut Graph, v: &[f64]) -> Var {
        g.input(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[0.0, 0.0, 0.0]);
        let y = g.softmax(x, 0).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_max_skips_masked_entries() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[5.0, 9.0, 7.0]);
        let y = g.masked_max(x, 0, &[true, false, true]).unwrap();
        assert_eq!(g.value(y).item(), 7.0);
    }

    #[test]
    fn masked_max_fully_masked_is_an_error() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[5.0, 9.0]);
        assert!(matches!(
            g.masked_max(x, 0, &[false, false]),
            Err(AutodiffError::EmptyReduction { .. })
        ));
    }

    #[test]
    fn masked_max_tie_routes_gradient_to_lowest_index() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[4.0, 4.0, 1.0]);
        let y = g.max(x, 0).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn det_of_diagonal() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap());
        let d = g.det2x2(x).unwrap();
        assert_eq!(g.value(d).item(), 6.0);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![2.0, 0.5, 0.5, 3.0]).unwrap());
        let inv = g.inverse2x2(x).unwrap();
        let p = g.matmul2x2(x, inv).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0];
        for (a, b) in g.value(p).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks_path() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[1.0, 2.0]);
        let y = vec(&mut g, &[3.0, 4.0]);
        let xs = g.stop_gradient(x);
        let p = g.mul(xs, y).unwrap();
        let s = g.sum_all(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.is_zero(x));
        assert_eq!(grads.get(y).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[1.0, 2.0]);
        assert!(matches!(
            g.backward(x),
            Err(AutodiffError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Graph::new();
        let a = vec(&mut g, &[1.0, 2.0]);
        let b = vec(&mut g, &[1.0, 2.0, 3.0]);
        assert!(matches!(g.add(a, b), Err(AutodiffError::Shape { .. })));
        let w = g.input(Tensor::zeros(&[3, 4]));
        let bias = g.input(Tensor::zeros(&[4]));
        assert!(g.linear(a, w, bias).is_err());
    }

    #[test]
    fn broadcast_and_concat_layout() {
        let mut g = Graph::new();
        let e = g.input(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let rows = g.reshape(e, &[2, 1, 1]).unwrap();
        let cols = g.reshape(e, &[1, 2, 1]).unwrap();
        let a = g.broadcast_to(rows, &[2, 2, 1]).unwrap();
        let b = g.broadcast_to(cols, &[2, 2, 1]).unwrap();
        let pairs = g.concat(&[a, b], 2).unwrap();
        assert_eq!(g.shape(pairs), &[2, 2, 2]);
        assert_eq!(
            g.value(pairs).data(),
            &[1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 2.0]
        );
    }

    #[test]
    fn slice_picks_rows() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let s = g.slice(x, 0, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[3., 4., 5., 6.]);
        let c = g.slice(x, 1, 1, 1).unwrap();
        assert_eq!(g.value(c).data(), &[2., 4., 6.]);
    }

    #[test]
    fn logsumexp_is_stable_for_large_inputs() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[1000.0, 1000.0]);
        let y = g.logsumexp(x, 0).unwrap();
        assert!((g.value(y).item() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let z = vec(&mut g, &[-1000.0, -1e6]);
        let w = g.logsumexp(z, 0).unwrap();
        assert!((g.value(w).item() + 1000.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_logsumexp_zero_weight_gets_exact_zero_gradient() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[0.3, -2.0, 1.1]);
        let w = Tensor::vector(vec![0.5, 0.0, 0.5]);
        let y = g.logsumexp_weighted(x, 0, &w).unwrap();
        let want = (0.5 * 0.3f64.exp() + 0.5 * 1.1f64.exp()).ln();
        assert!((g.value(y).item() - want).abs() < 1e-15);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data()[1], 0.0);
    }

    #[test]
    fn weighted_logsumexp_propagates_non_finite_values() {
        let mut g = Graph::new();
        let x = vec(&mut g, &[f64::NAN, 0.0]);
        let w = Tensor::vector(vec![1.0, 1.0]);
        let y = g.logsumexp_weighted(x, 0, &w).unwrap();
        assert!(g.value(y).item().is_nan());
        let z = vec(&mut g, &[f64::NEG_INFINITY, f64::NEG_INFINITY]);
        let y = g.logsumexp_weighted(z, 0, &w).unwrap();
        assert_eq!(g.value(y).item(), f64::NEG_INFINITY);
        let none = Tensor::vector(vec![0.0, 0.0]);
        assert!(matches!(
            g.logsumexp_weighted(z, 0, &none),
            Err(AutodiffError::EmptyReduction { .. })
        ));
    }

    #[test]
    fn conv1d_output_length() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[10, 5]));
        let w = g.input(Tensor::zeros(&[3, 5, 8]));
        let b = g.input(Tensor::full(&[8], 0.5));
        let y = g.conv1d(x, w, b).unwrap();
        assert_eq!(g.shape(y), &[8, 8]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }
}
