//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar variable walks the tape in reverse and
//! returns the gradient of that scalar with respect to every variable that
//! requires one. Graphs are cheap and single-use: build one per forward pass.

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, ConvGeom};
use crate::numerics::tensor::{split_axis, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    ChannelBroadcast(Var),
    Conv3d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Linear { input: Var, weight: Var, bias: Var },
    MatMul { a: Var, b: Var, transpose_b: bool },
    Softmax { input: Var, axis: usize },
    LayerNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Trilinear { field: Var, points: Var },
    Sum(Var),
    BceWithLogits { logit: Var, label: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; gradients are tracked if the tensor's flag is set.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, name: &'static str, shape: &[usize], data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} produced {} at flat index {bad}", data[bad])));
        }
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let shape = va.shape().to_vec();
        self.push_op("add", &shape, data, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * c).collect();
        let shape = va.shape().to_vec();
        self.push_op("scale", &shape, data, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.max(T::zero())).collect();
        let shape = va.shape().to_vec();
        self.push_op("relu", &shape, data, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.tanh()).collect();
        let shape = va.shape().to_vec();
        self.push_op("tanh", &shape, data, Op::Tanh(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if shape.iter().product::<usize>() != va.numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", va.shape())));
        }
        let data = va.data().to_vec();
        self.push_op("reshape", shape, data, Op::Reshape(a), &[a])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &n)| i != axis && n != base[i]) {
                return Err(Error::shape("concat", format!("{:?} incompatible with {base:?} on axis {axis}", s)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let val = self.value(v);
                let len = val.shape()[axis] * inner;
                data.extend_from_slice(&val.data()[o * len..(o + 1) * len]);
            }
        }
        self.push_op("concat", &shape, data, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let s = va.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) on axis {axis} of {s:?}", start + len)));
        }
        let (outer, n, inner) = split_axis(s, axis);
        let mut shape = s.to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&va.data()[base..base + len * inner]);
        }
        self.push_op("slice", &shape, data, Op::Slice { input: a, axis, start }, &[a])
    }

    /// Replicates a `[C]` vector over `spatial`, producing `[C, spatial...]`.
    pub fn channel_broadcast(&mut self, a: Var, spatial: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if va.ndim() != 1 {
            return Err(Error::shape("channel_broadcast", format!("expected a vector, got {:?}", va.shape())));
        }
        let sp: usize = spatial.iter().product();
        let data = va.data().iter().flat_map(|&v| std::iter::repeat(v).take(sp)).collect();
        let mut shape = vec![va.numel()];
        shape.extend_from_slice(spatial);
        self.push_op("channel_broadcast", &shape, data, Op::ChannelBroadcast(a), &[a])
    }

    /// input `[Cin, D, H, W]`, weight `[Cout, Cin, k, k, k]`, bias `[Cout]`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.value(input).dims::<4>("conv3d")?;
        let ws = self.value(weight).dims::<5>("conv3d")?;
        let geom = ConvGeom::new(xs, ws, stride, padding)?;
        let [bn] = self.value(bias).dims::<1>("conv3d")?;
        if bn != geom.cout {
            return Err(Error::shape("conv3d", format!("bias has {bn} entries for {} output channels", geom.cout)));
        }
        let data = kernels::conv3d_forward(&geom, self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let shape = [geom.cout, geom.output[0], geom.output[1], geom.output[2]];
        self.push_op("conv3d", &shape, data, Op::Conv3d { input, weight, bias, geom }, &[input, weight, bias])
    }

    /// Affine map on the trailing axis: input `[..., din]`, weight `[din, dout]`, bias `[dout]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let [din, dout] = self.value(weight).dims::<2>("linear")?;
        if xs.last() != Some(&din) {
            return Err(Error::shape("linear", format!("input {xs:?} does not end in {din}")));
        }
        if self.shape(bias) != [dout] {
            return Err(Error::shape("linear", format!("bias {:?} for output width {dout}", self.shape(bias))));
        }
        let data = kernels::linear_forward(
            self.value(input).data(),
            self.value(weight).data(),
            Some(self.value(bias).data()),
            din,
            dout,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        self.push_op("linear", &shape, data, Op::Linear { input, weight, bias }, &[input, weight, bias])
    }

    /// `a [m, k] · b [k, n]`, or `a · bᵀ` with `b [n, k]` when `transpose_b`.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let [m, k] = self.value(a).dims::<2>("matmul")?;
        let [b0, b1] = self.value(b).dims::<2>("matmul")?;
        let (kb, n) = if transpose_b { (b1, b0) } else { (b0, b1) };
        if kb != k {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x {:?} (transpose_b={transpose_b})", [b0, b1])));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut data[i * n..(i + 1) * n];
            if transpose_b {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = arow.iter().zip(&bv[j * k..(j + 1) * k]).map(|(&x, &y)| x * y).sum();
                }
            } else {
                for (p, &x) in arow.iter().enumerate() {
                    for (o, &y) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                        *o += x * y;
                    }
                }
            }
        }
        self.push_op("matmul", &[m, n], data, Op::MatMul { a, b, transpose_b }, &[a, b])
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let v = self.value(input);
        if axis >= v.ndim() {
            return Err(Error::shape("softmax", format!("axis {axis} for shape {:?}", v.shape())));
        }
        let (outer, n, inner) = split_axis(v.shape(), axis);
        let x = v.data();
        let mut data = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    let e = (x[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    data[at(j)] /= total;
                }
            }
        }
        let shape = v.shape().to_vec();
        self.push_op("softmax", &shape, data, Op::Softmax { input, axis }, &[input])
    }

    /// Normalizes the trailing axis to zero mean and unit variance, then scales and shifts.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let xs = self.shape(input).to_vec();
        let d = *xs.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", format!("gamma/beta must be [{d}]")));
        }
        let x = self.value(input).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = x.len() / d;
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut data = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                data[r * d + j] = h * g[j] + b[j];
            }
        }
        self.push_op(
            "layer_norm",
            &xs,
            data,
            Op::LayerNorm { input, gamma, beta, xhat, inv_std },
            &[input, gamma, beta],
        )
    }

    /// Trilinear interpolation of `field [C, D, H, W]` at `points [N, 3]`
    /// given in normalized (depth, height, width) coordinates; returns `[N, C]`.
    pub fn trilinear_sample(&mut self, field: Var, points: Var) -> Result<Var> {
        let fs = self.value(field).dims::<4>("trilinear_sample")?;
        let [n, three] = self.value(points).dims::<2>("trilinear_sample")?;
        if three != 3 {
            return Err(Error::shape("trilinear_sample", format!("points must be [N, 3], got [{n}, {three}]")));
        }
        if !self.value(points).is_finite() {
            return Err(Error::NonFinite("trilinear_sample received non-finite sample points".into()));
        }
        let data = kernels::trilinear_forward(self.value(field).data(), fs, self.value(points).data());
        self.push_op("trilinear_sample", &[n, fs[0]], data, Op::Trilinear { field, points }, &[field, points])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push_op("sum", &[], vec![s], Op::Sum(a), &[a])
    }

    /// Binary cross-entropy on a single logit, in log-sigmoid form.
    pub fn bce_with_logits(&mut self, logit: Var, label: T) -> Result<Var> {
        let v = self.value(logit);
        if v.numel() != 1 {
            return Err(Error::shape("bce_with_logits", format!("expected one logit, got {:?}", v.shape())));
        }
        let loss = bce_value(v.item(), label);
        self.push_op("bce_with_logits", &[], vec![loss], Op::BceWithLogits { logit, label }, &[logit])
    }

    /// Gradients of the scalar `root` with respect to every tracked variable.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, got {:?}", rv.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for idx in (0..=root.0).rev() {
            let Some(go) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &go, &mut grads);
            grads[idx] = Some(go);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, go: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, g: Vec<T>| accumulate(grads, v, g);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(*a, go.to_vec());
                }
                if self.needs(*b) {
                    acc(*b, go.to_vec());
                }
            }
            Op::Scale(a, c) => acc(*a, go.iter().map(|&g| g * *c).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, go.iter().zip(x).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, go.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect());
            }
            Op::Reshape(a) => acc(*a, go.to_vec()),
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                let total = node.value.shape()[*axis] * inner;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    if self.needs(v) {
                        let mut g = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            g.extend_from_slice(&go[o * total + offset..o * total + offset + len]);
                        }
                        acc(v, g);
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*input), *axis);
                let len = node.value.shape()[*axis];
                let mut g = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    g[base..base + len * inner].copy_from_slice(&go[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*input, g);
            }
            Op::ChannelBroadcast(a) => {
                let c = self.value(*a).numel();
                let sp = go.len() / c.max(1);
                acc(*a, (0..c).map(|i| go[i * sp..(i + 1) * sp].iter().copied().sum()).collect());
            }
            Op::Conv3d { input, weight, bias, geom } => {
                let (gx, gw, gb) = kernels::conv3d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    go,
                    self.needs(*input),
                );
                if let Some(gx) = gx {
                    acc(*input, gx);
                }
                if self.needs(*weight) {
                    acc(*weight, gw);
                }
                if self.needs(*bias) {
                    acc(*bias, gb);
                }
            }
            Op::Linear { input, weight, bias } => {
                let [din, dout] = [self.shape(*weight)[0], self.shape(*weight)[1]];
                let g = kernels::linear_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    go,
                    din,
                    dout,
                    self.needs(*input),
                    self.needs(*weight),
                );
                if let Some(gx) = g.input {
                    acc(*input, gx);
                }
                if let Some(gw) = g.weight {
                    acc(*weight, gw);
                }
                if self.needs(*bias) {
                    acc(*bias, g.bias);
                }
            }
            Op::MatMul { a, b, transpose_b } => {
                let [m, k] = [self.shape(*a)[0], self.shape(*a)[1]];
                let n = node.value.shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // b element (p, j) of the logical [k, n] operand.
                let b_at = |p: usize, j: usize| if *transpose_b { bv[j * k + p] } else { bv[p * n + j] };
                if self.needs(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] = (0..n).map(|j| go[i * n + j] * b_at(p, j)).sum();
                        }
                    }
                    acc(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let g: T = (0..m).map(|i| av[i * k + p] * go[i * n + j]).sum();
                            if *transpose_b {
                                gb[j * k + p] = g;
                            } else {
                                gb[p * n + j] = g;
                            }
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut g = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| go[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            g[at(j)] = y[at(j)] * (go[at(j)] - dot);
                        }
                    }
                }
                acc(*input, g);
            }
            Op::LayerNorm { input, gamma, beta, xhat, inv_std } => {
                let d = *self.shape(*input).last().unwrap();
                let rows = go.len() / d;
                let gv = self.value(*gamma).data();
                if self.needs(*input) {
                    let dn = T::of(d as f64);
                    let mut gx = vec![T::zero(); go.len()];
                    for r in 0..rows {
                        let gh: Vec<T> = (0..d).map(|j| go[r * d + j] * gv[j]).collect();
                        let h = &xhat[r * d..(r + 1) * d];
                        let mean_gh = gh.iter().copied().sum::<T>() / dn;
                        let mean_ghh = gh.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (gh[j] - mean_gh - h[j] * mean_ghh);
                        }
                    }
                    acc(*input, gx);
                }
                if self.needs(*gamma) {
                    let mut gg = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += go[r * d + j] * xhat[r * d + j];
                        }
                    }
                    acc(*gamma, gg);
                }
                if self.needs(*beta) {
                    let mut gb = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += go[r * d + j];
                        }
                    }
                    acc(*beta, gb);
                }
            }
            Op::Trilinear { field, points } => {
                let fs = self.value(*field).dims::<4>("trilinear_sample").expect("checked in forward");
                let (gf, gp) = kernels::trilinear_backward(
                    self.value(*field).data(),
                    fs,
                    self.value(*points).data(),
                    go,
                    self.needs(*field),
                    self.needs(*points),
                );
                if let Some(gf) = gf {
                    acc(*field, gf);
                }
                if let Some(gp) = gp {
                    acc(*points, gp);
                }
            }
            Op::Sum(a) => acc(*a, vec![go[0]; self.value(*a).numel()]),
            Op::BceWithLogits { logit, label } => {
                let z = self.value(*logit).item();
                acc(*logit, vec![go[0] * (sigmoid(z) - *label)]);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `max(z, 0) - z·y + ln(1 + e^{-|z|})`
pub fn bce_value<T: Scalar>(z: T, label: T) -> T {
    z.max(T::zero()) - z * label + (-z.abs()).exp().ln_1p()
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Raw gradient data, `None` when the variable did not influence the root.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient shaped like the variable, zeros where it had no influence.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        let shape = graph.shape(v);
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }
}
