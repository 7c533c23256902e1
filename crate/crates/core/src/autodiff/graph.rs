use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Conv2d { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Sum(Var),
    GradReverse(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::BiasAdd(..) => "bias_add",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Clamp { .. } => "clamp",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AvgPool2(_) => "avg_pool2",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Sum(_) => "sum",
            Op::GradReverse(..) => "gradient_reversal",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Reverse-mode tape. Nodes are stored in construction order, which is a
/// topological order because every op only references existing nodes.
#[derive(Clone, Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn owns(&self, v: Var) -> bool {
        v.graph == self.id && v.idx < self.nodes.len()
    }

    fn node(&self, v: Var) -> &Node {
        assert!(self.owns(v), "variable #{} belongs to another graph", v.idx);
        &self.nodes[v.idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input or parameter. Its `requires_grad` flag decides
    /// whether backward writes into its gradient slot.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t.with_requires_grad(false))
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).value.requires_grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var { graph: self.id, idx: self.nodes.len() - 1 }
    }

    fn push_op(&mut self, op: Op, inputs: &[Var], shape: Vec<usize>, data: Vec<f64>) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let t = Tensor::new(shape, data)
            .expect("op kernels produce consistent shapes")
            .with_requires_grad(rg);
        self.push(op, t)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.node(v).value.data()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        self.push_op(op, &[x], shape, data)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        Ok(self.push_op(Op::MatMul(a, b), &[a, b], vec![m, n], out))
    }

    /// Adds a length-`n` bias to every row of an `[m,n]` matrix.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::shape("bias_add", format!("{sx:?} + {sb:?}")));
        }
        let n = sx[1];
        let shape = sx.to_vec();
        let bias = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i % n])
            .collect();
        Ok(self.push_op(Op::BiasAdd(x, b), &[x, b], shape, data))
    }

    /// Stride-1 convolution with "same" zero padding. `x: [N,C,H,W]`, `w: [O,C,k,k]` (k odd), `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 {
            return Err(Error::shape(
                "conv2d",
                format!("expected NCHW input, OIHW kernel, O bias; got {sx:?}, {sw:?}, {sb:?}"),
            ));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kc, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, kernel expects {kc}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be square and odd, got {kh}×{kw}")));
        }
        if sb[0] != o {
            return Err(Error::shape("conv2d", format!("bias length {} for {o} output channels", sb[0])));
        }
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: kh };
        let (rows, hw) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; rows * hw];
        let mut out = vec![0.0; n * o * hw];
        let (xd, wdata, bias) = (self.data(x), self.data(w), self.data(b));
        for i in 0..n {
            im2col(&xd[i * c * hw..(i + 1) * c * hw], geom, &mut cols);
            let dst = &mut out[i * o * hw..(i + 1) * o * hw];
            for (oc, plane) in dst.chunks_mut(hw).enumerate() {
                plane.fill(bias[oc]);
            }
            kernels::gemm(o, rows, hw, wdata, false, &cols, false, 1.0, dst);
        }
        Ok(self.push_op(Op::Conv2d { x, w, b }, &[x, w, b], vec![n, o, h, wd], out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some((i, v)) = self.data(x).iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::Domain { op: "log", detail: format!("element {i} is {v}") });
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        Ok(self.push_op(Op::Add(a, b), &[a, b], shape, data))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        Ok(self.push_op(Op::Mul(a, b), &[a, b], shape, data))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// 2×2 mean pooling over the spatial dims of `[N,C,H,W]`; H and W must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::shape("avg_pool2", format!("need [N,C,H,W] with even H,W, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let out = kernels::avg_pool2(self.data(x), n * c, h, w);
        Ok(self.push_op(Op::AvgPool2(x), &[x], vec![n, c, h / 2, w / 2], out))
    }

    /// `[N,C,H,W] → [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("need [N,C,H,W], got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = 1.0 / hw as f64;
        let out = self.data(x).chunks(hw).map(|p| p.iter().sum::<f64>() * inv).collect();
        Ok(self.push_op(Op::GlobalAvgPool(x), &[x], vec![n, c], out))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.push_op(Op::Sum(x), &[x], vec![1], vec![total])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Identity forward; backward multiplies the upstream gradient by `-lambda`.
    pub fn gradient_reversal(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Domain {
                op: "gradient_reversal",
                detail: format!("lambda must be finite and >= 0, got {lambda}"),
            });
        }
        let shape = self.shape(x).to_vec();
        let data = self.data(x).to_vec();
        Ok(self.push_op(Op::GradReverse(x, lambda), &[x], shape, data))
    }

    /// Propagates `d loss / d node` back through the tape in reverse
    /// construction order and adds the result into every trainable leaf's
    /// gradient slot. Intermediate gradients are discarded after the call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.owns(loss) {
            return Err(Error::Graph(format!("loss node #{} is not in this graph", loss.idx)));
        }
        let node = &self.nodes[loss.idx];
        if !node.value.is_scalar() {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.value.requires_grad() {
            return Err(Error::Graph("loss does not depend on any trainable leaf".into()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);
        for i in (0..=loss.idx).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if let Op::Leaf = op {
                self.nodes[i].value.accumulate_grad(&gy);
                continue;
            }
            self.propagate(i, &op, &gy, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, op: &Op, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.nodes[i].value.data();
        // Only allocate/accumulate for inputs that take part in differentiation.
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.requires_grad(v) {
                return;
            }
            let slot = grads[v.idx].get_or_insert_with(|| vec![0.0; self.nodes[v.idx].value.numel()]);
            f(slot);
        };
        match *op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(a), self.data(b));
                send(a, &mut |ga| kernels::gemm(m, n, k, gy, false, db, true, 1.0, ga));
                send(b, &mut |gb| kernels::gemm(k, m, n, da, true, gy, false, 1.0, gb));
            }
            Op::BiasAdd(x, b) => {
                let n = self.shape(b)[0];
                send(x, &mut |gx| add_into(gx, gy));
                send(b, &mut |gb| {
                    for row in gy.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Conv2d { x, w, b } => {
                let (sx, sw) = (self.shape(x), self.shape(w));
                let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let o = sw[0];
                let geom = ConvGeom { channels: c, height: h, width: wd, kernel: sw[2] };
                let (rows, hw) = (geom.col_rows(), geom.col_cols());
                let (xd, wdata) = (self.data(x), self.data(w));
                send(b, &mut |gb| {
                    for (j, plane) in gy.chunks(hw).enumerate() {
                        gb[j % o] += plane.iter().sum::<f64>();
                    }
                });
                let mut cols = vec![0.0; rows * hw];
                send(w, &mut |gw| {
                    for s in 0..n {
                        im2col(&xd[s * c * hw..(s + 1) * c * hw], geom, &mut cols);
                        let g = &gy[s * o * hw..(s + 1) * o * hw];
                        kernels::gemm(o, hw, rows, g, false, &cols, true, 1.0, gw);
                    }
                });
                send(x, &mut |gx| {
                    for s in 0..n {
                        let g = &gy[s * o * hw..(s + 1) * o * hw];
                        kernels::gemm(rows, o, hw, wdata, true, g, false, 0.0, &mut cols);
                        kernels::col2im_add(&cols, geom, &mut gx[s * c * hw..(s + 1) * c * hw]);
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.data(x);
                send(x, &mut |gx| {
                    for ((g, &v), &u) in gx.iter_mut().zip(xd).zip(gy) {
                        if v > 0.0 {
                            *g += u;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => send(x, &mut |gx| {
                for ((g, &s), &u) in gx.iter_mut().zip(y).zip(gy) {
                    *g += u * s * (1.0 - s);
                }
            }),
            Op::Log(x) => {
                let xd = self.data(x);
                send(x, &mut |gx| {
                    for ((g, &v), &u) in gx.iter_mut().zip(xd).zip(gy) {
                        *g += u / v;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.data(x);
                send(x, &mut |gx| {
                    for ((g, &v), &u) in gx.iter_mut().zip(xd).zip(gy) {
                        if v >= lo && v <= hi {
                            *g += u;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                send(a, &mut |ga| add_into(ga, gy));
                send(b, &mut |gb| add_into(gb, gy));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                send(a, &mut |ga| {
                    for ((g, &v), &u) in ga.iter_mut().zip(db).zip(gy) {
                        *g += u * v;
                    }
                });
                send(b, &mut |gb| {
                    for ((g, &v), &u) in gb.iter_mut().zip(da).zip(gy) {
                        *g += u * v;
                    }
                });
            }
            Op::Scale(x, c) => send(x, &mut |gx| {
                for (g, &u) in gx.iter_mut().zip(gy) {
                    *g += c * u;
                }
            }),
            Op::AddScalar(x) => send(x, &mut |gx| add_into(gx, gy)),
            Op::AvgPool2(x) => {
                let s = self.shape(x);
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                send(x, &mut |gx| kernels::avg_pool2_backward(gy, planes, h, w, gx));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(x);
                let hw = s[2] * s[3];
                let inv = 1.0 / hw as f64;
                send(x, &mut |gx| {
                    for (plane, &u) in gx.chunks_mut(hw).zip(gy) {
                        plane.iter_mut().for_each(|g| *g += u * inv);
                    }
                });
            }
            Op::Sum(x) => send(x, &mut |gx| gx.iter_mut().for_each(|g| *g += gy[0])),
            Op::GradReverse(x, lambda) => send(x, &mut |gx| {
                for (g, &u) in gx.iter_mut().zip(gy) {
                    *g += -lambda * u;
                }
            }),
        }
    }

    /// Short description of a node, for diagnostics.
    pub fn describe(&self, v: Var) -> String {
        let n = self.node(v);
        format!("#{} {} {:?}", v.idx, n.op.name(), n.value.shape())
    }
}

fn im2col(img: &[f64], geom: ConvGeom, cols: &mut [f64]) {
    kernels::im2col(img, geom, cols)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
