use std::cell::{Cell, RefCell};
use std::rc::Rc;

use nalgebra::Vector3;

use super::geometry::{self, PolarCache};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::rotations::EulerConvention;

/// Precomputed linear-blend-skinning data for [`Var::skin`].
#[derive(Debug, Clone)]
pub struct SkinData {
    pub joint_count: usize,
    /// Per output vertex: `(joint, weight, rest offset from that joint)`.
    pub influences: Vec<Vec<(usize, f64, [f64; 3])>>,
}

/// A capsule pair for [`Var::capsule_gaps`]: two segments given by joint
/// indices and the sum of their radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapsulePair {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub radius_sum: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Sin(usize),
    Cos(usize),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Maximum(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Reshape(usize),
    Rodrigues(usize, Vec<[[f64; 9]; 3]>),
    LogMap(usize, Vec<[[f64; 9]; 3]>),
    Project(usize, Vec<PolarCache>),
    Euler(usize, Vec<[[f64; 9]; 3]>),
    BlockMatMul(usize, usize),
    BlockRotate(usize, usize),
    Skin(usize, usize, Rc<SkinData>),
    CapsuleGaps(usize, Vec<CapsulePair>, Vec<(f64, f64, [f64; 3])>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::AddRow(..) => "add_row",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumCols(..) => "sum_cols",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Maximum(..) => "maximum",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::Rodrigues(..) => "rodrigues",
            Op::LogMap(..) => "log_map",
            Op::Project(..) => "project",
            Op::Euler(..) => "euler",
            Op::BlockMatMul(..) => "block_matmul",
            Op::BlockRotate(..) => "block_rotate",
            Op::Skin(..) => "skin",
            Op::CapsuleGaps(..) => "capsule_gaps",
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation. Single-threaded.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: Cell<Option<(usize, &'static str)>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.first_non_finite.get().is_none() && !value.is_finite() {
            self.first_non_finite.set(Some((id, op.name())));
        }
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Differentiable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// First node whose forward value contained a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite.get() {
            Some((node, op)) => Err(Error::NonFiniteValue { node, op }),
            None => Ok(()),
        }
    }

    /// Reverse-mode gradients of a scalar `objective` with respect to `wrt`.
    /// Variables the objective does not depend on receive zeros.
    pub fn gradient(&self, objective: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Tensor>> {
        let out_val = self.value(objective.id);
        if !out_val.is_scalar() {
            return Err(Error::NotScalar(out_val.shape()));
        }
        if !out_val.is_finite() {
            self.check_finite()?;
            return Err(Error::NonFiniteValue {
                node: objective.id,
                op: self.nodes.borrow()[objective.id].op.name(),
            });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..=objective.id).map(|_| None).collect();
        grads[objective.id] = Some(Tensor::scalar(1.0));
        for id in (0..=objective.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backward(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(wrt
            .iter()
            .map(|v| {
                grads.get(v.id).and_then(|g| g.clone()).unwrap_or_else(|| {
                    let (r, c) = nodes[v.id].value.shape();
                    Tensor::zeros(r, c)
                })
            })
            .collect())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Reduces a gradient to the shape of a (possibly scalar-broadcast) operand.
fn reduce_to(g: Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        g
    } else {
        Tensor::scalar(g.data().iter().sum())
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.rows(), a.cols(), data).expect("same shape")
    } else if b.is_scalar() {
        let y = b.data()[0];
        a.map(|x| f(x, y))
    } else {
        let x = a.data()[0];
        b.map(|y| f(x, y))
    }
}

fn backward(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, reduce_to(g.clone(), val(*a).shape()));
            accumulate(grads, nodes, *b, reduce_to(g.clone(), val(*b).shape()));
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, reduce_to(g.clone(), val(*a).shape()));
            accumulate(grads, nodes, *b, reduce_to(g.map(|x| -x), val(*b).shape()));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[*a].requires_grad {
                let ga = zip_broadcast(g, vb, |gi, bi| gi * bi);
                accumulate(grads, nodes, *a, reduce_to(ga, va.shape()));
            }
            if nodes[*b].requires_grad {
                let gb = zip_broadcast(g, va, |gi, ai| gi * ai);
                accumulate(grads, nodes, *b, reduce_to(gb, vb.shape()));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[*a].requires_grad {
                let ga = zip_broadcast(g, vb, |gi, bi| gi / bi);
                accumulate(grads, nodes, *a, reduce_to(ga, va.shape()));
            }
            if nodes[*b].requires_grad {
                // d(a/b)/db = -out / b
                let t = zip_broadcast(out, vb, |o, bi| -o / bi);
                let gb = zip_broadcast(g, &t, |gi, ti| gi * ti);
                accumulate(grads, nodes, *b, reduce_to(gb, vb.shape()));
            }
        }
        Op::Neg(a) => accumulate(grads, nodes, *a, g.map(|x| -x)),
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.map(|x| x * s)),
        Op::Offset(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            if nodes[*b].requires_grad {
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, x) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k, n) = (va.rows(), va.cols(), vb.cols());
            if nodes[*a].requires_grad {
                let mut ga = Tensor::zeros(m, k);
                gemm(m, n, k, 1.0, g.data(), false, vb.data(), true, 0.0, ga.data_mut());
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = Tensor::zeros(k, n);
                gemm(k, m, n, 1.0, va.data(), true, g.data(), false, 0.0, gb.data_mut());
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::Exp(a) => {
            let ga = zip_broadcast(g, out, |gi, o| gi * o);
            accumulate(grads, nodes, *a, ga);
        }
        Op::Log(a) => {
            let ga = zip_broadcast(g, val(*a), |gi, x| gi / x);
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sqrt(a) => {
            let ga = zip_broadcast(g, out, |gi, o| if o > 0.0 { gi * 0.5 / o } else { 0.0 });
            accumulate(grads, nodes, *a, ga);
        }
        Op::Square(a) => {
            let ga = zip_broadcast(g, val(*a), |gi, x| 2.0 * gi * x);
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sin(a) => {
            let ga = zip_broadcast(g, val(*a), |gi, x| gi * x.cos());
            accumulate(grads, nodes, *a, ga);
        }
        Op::Cos(a) => {
            let ga = zip_broadcast(g, val(*a), |gi, x| -gi * x.sin());
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, nodes, *a, Tensor::filled(r, c, g.data()[0]));
        }
        Op::Mean(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, nodes, *a, Tensor::filled(r, c, g.data()[0] / (r * c) as f64));
        }
        Op::SumCols(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, nodes, *a, Tensor::from_fn(r, c, |i, _| g.data()[i]));
        }
        Op::Relu(a) => {
            // Zero subgradient at the kink.
            let ga = zip_broadcast(g, val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
            accumulate(grads, nodes, *a, ga);
        }
        Op::LeakyRelu(a, slope) => {
            let ga = zip_broadcast(g, val(*a), |gi, x| if x > 0.0 { gi } else { gi * slope });
            accumulate(grads, nodes, *a, ga);
        }
        Op::Maximum(a, b) => {
            // Ties route the gradient to the first operand.
            let (va, vb) = (val(*a), val(*b));
            let mask_a = zip_broadcast(va, vb, |x, y| if x >= y { 1.0 } else { 0.0 });
            let ga = zip_broadcast(g, &mask_a, |gi, m| gi * m);
            let gb = zip_broadcast(g, &mask_a, |gi, m| gi * (1.0 - m));
            accumulate(grads, nodes, *a, reduce_to(ga, va.shape()));
            accumulate(grads, nodes, *b, reduce_to(gb, vb.shape()));
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (r, c) = val(p).shape();
                if nodes[p].requires_grad {
                    let gp = Tensor::from_fn(r, c, |i, j| g.get(i, offset + j));
                    accumulate(grads, nodes, p, gp);
                }
                offset += c;
            }
        }
        Op::Slice(a, start) => {
            let (r, c) = val(*a).shape();
            let len = g.cols();
            let mut ga = Tensor::zeros(r, c);
            for i in 0..r {
                ga.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row_slice(i));
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Reshape(a) => {
            let (r, c) = val(*a).shape();
            let ga = Tensor::new(r, c, g.data().to_vec()).expect("same length");
            accumulate(grads, nodes, *a, ga);
        }
        Op::Rodrigues(a, jacs) => {
            let (r, c) = val(*a).shape();
            let blocks = c / 3;
            let mut ga = Tensor::zeros(r, c);
            for row in 0..r {
                for blk in 0..blocks {
                    let jac = &jacs[row * blocks + blk];
                    let up = &g.row_slice(row)[blk * 9..blk * 9 + 9];
                    for (i, ji) in jac.iter().enumerate() {
                        let v: f64 = ji.iter().zip(up).map(|(x, y)| x * y).sum();
                        ga.data_mut()[row * c + blk * 3 + i] = v;
                    }
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::LogMap(a, jacs) | Op::Euler(a, jacs) => {
            let (r, c) = val(*a).shape();
            let blocks = c / 9;
            let mut ga = Tensor::zeros(r, c);
            for row in 0..r {
                for blk in 0..blocks {
                    let jac = &jacs[row * blocks + blk];
                    let up = &g.row_slice(row)[blk * 3..blk * 3 + 3];
                    let dst = &mut ga.data_mut()[row * c + blk * 9..row * c + blk * 9 + 9];
                    for (u, ju) in up.iter().zip(jac.iter()) {
                        for (d, x) in dst.iter_mut().zip(ju) {
                            *d += u * x;
                        }
                    }
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Project(a, caches) => {
            let (r, c) = val(*a).shape();
            let blocks = c / 9;
            let mut ga = Tensor::zeros(r, c);
            for row in 0..r {
                for blk in 0..blocks {
                    let up = &g.row_slice(row)[blk * 9..blk * 9 + 9];
                    let gm = geometry::polar_vjp(&caches[row * blocks + blk], up);
                    ga.data_mut()[row * c + blk * 9..row * c + blk * 9 + 9].copy_from_slice(&gm);
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::BlockMatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (r, c) = va.shape();
            let mut ga = Tensor::zeros(r, c);
            let mut gb = Tensor::zeros(r, c);
            for row in 0..r {
                for blk in 0..c / 9 {
                    let o = row * c + blk * 9;
                    let am = geometry::mat(&va.data()[o..o + 9]);
                    let bm = geometry::mat(&vb.data()[o..o + 9]);
                    let gm = geometry::mat(&g.data()[o..o + 9]);
                    // C = A B: dA = G Bᵀ, dB = Aᵀ G
                    ga.data_mut()[o..o + 9].copy_from_slice(&geometry::flat(&(gm * bm.transpose())));
                    gb.data_mut()[o..o + 9].copy_from_slice(&geometry::flat(&(am.transpose() * gm)));
                }
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::BlockRotate(a, p) => {
            let (va, vp) = (val(*a), val(*p));
            let (r, c) = va.shape();
            let pc = vp.cols();
            let mut ga = Tensor::zeros(r, c);
            let mut gp = Tensor::zeros(r, pc);
            for row in 0..r {
                for blk in 0..c / 9 {
                    let o = row * c + blk * 9;
                    let po = row * pc + blk * 3;
                    let am = geometry::mat(&va.data()[o..o + 9]);
                    let pv = Vector3::from_column_slice(&vp.data()[po..po + 3]);
                    let gv = Vector3::from_column_slice(&g.data()[po..po + 3]);
                    // y = A p: dA = g pᵀ, dp = Aᵀ g
                    ga.data_mut()[o..o + 9].copy_from_slice(&geometry::flat(&(gv * pv.transpose())));
                    let dp = am.transpose() * gv;
                    gp.data_mut()[po..po + 3].copy_from_slice(dp.as_slice());
                }
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *p, gp);
        }
        Op::Skin(rot, trans, data) => {
            let rows = val(*rot).rows();
            let k = data.joint_count;
            let mut grot = Tensor::zeros(rows, 9 * k);
            let mut gtrans = Tensor::zeros(rows, 3 * k);
            let n = data.influences.len();
            for row in 0..rows {
                for (v, infl) in data.influences.iter().enumerate() {
                    let gv = &g.data()[row * 3 * n + 3 * v..row * 3 * n + 3 * v + 3];
                    for &(j, w, off) in infl {
                        let ro = row * 9 * k + 9 * j;
                        for a in 0..3 {
                            for b in 0..3 {
                                grot.data_mut()[ro + 3 * a + b] += w * gv[a] * off[b];
                            }
                            gtrans.data_mut()[row * 3 * k + 3 * j + a] += w * gv[a];
                        }
                    }
                }
            }
            accumulate(grads, nodes, *rot, grot);
            accumulate(grads, nodes, *trans, gtrans);
        }
        Op::CapsuleGaps(a, pairs, closest) => {
            let mut ga = Tensor::zeros(1, val(*a).cols());
            for (idx, (pair, &(s, t, n))) in pairs.iter().zip(closest).enumerate() {
                let gi = g.data()[idx];
                let n = Vector3::new(n[0], n[1], n[2]);
                // gap = radius_sum - |c_a - c_b|
                let contrib = [(pair.a.0, -(1.0 - s)), (pair.a.1, -s), (pair.b.0, 1.0 - t), (pair.b.1, t)];
                for (joint, coef) in contrib {
                    for d in 0..3 {
                        ga.data_mut()[3 * joint + d] += gi * coef * n[d];
                    }
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() || a.is_scalar() || b.is_scalar()
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    /// First element; intended for `1×1` results.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    fn requires(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(self, t: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires();
        self.tape.push(t, op, rg)
    }

    fn binary(self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if !broadcast_ok(&a, &b) {
            return Err(shape_err(name, &a, &b));
        }
        let t = zip_broadcast(&a, &b, f);
        let rg = self.requires() || other.requires();
        Ok(self.tape.push(t, op(self.id, other.id), rg))
    }

    /// Elementwise sum; either side may be a `1×1` scalar.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |x, y| x / y, Op::Div)
    }

    /// Elementwise maximum of two tensors.
    pub fn maximum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "maximum", f64::max, Op::Maximum)
    }

    pub fn neg(self) -> Var<'t> {
        let t = self.value().map(|x| -x);
        self.unary(t, Op::Neg(self.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let t = self.value().map(|x| x * s);
        self.unary(t, Op::Scale(self.id, s))
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        let t = self.value().map(|x| x + c);
        self.unary(t, Op::Offset(self.id))
    }

    /// Adds a `1×cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), row.value());
        if b.rows() != 1 || b.cols() != a.cols() {
            return Err(shape_err("add_row", &a, &b));
        }
        let t = Tensor::from_fn(a.rows(), a.cols(), |r, c| a.get(r, c) + b.data()[c]);
        let rg = self.requires() || row.requires();
        Ok(self.tape.push(t, Op::AddRow(self.id, row.id), rg))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let t = self.value().matmul(&other.value())?;
        let rg = self.requires() || other.requires();
        Ok(self.tape.push(t, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(self) -> Var<'t> {
        let t = self.value().transpose();
        self.unary(t, Op::Transpose(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let t = self.value().map(f64::exp);
        self.unary(t, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        let t = self.value().map(f64::ln);
        self.unary(t, Op::Log(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        let t = self.value().map(f64::sqrt);
        self.unary(t, Op::Sqrt(self.id))
    }

    pub fn square(self) -> Var<'t> {
        let t = self.value().map(|x| x * x);
        self.unary(t, Op::Square(self.id))
    }

    pub fn sin(self) -> Var<'t> {
        let t = self.value().map(f64::sin);
        self.unary(t, Op::Sin(self.id))
    }

    pub fn cos(self) -> Var<'t> {
        let t = self.value().map(f64::cos);
        self.unary(t, Op::Cos(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let s: f64 = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Row sums: `r×c → r×1`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value();
        let t = Tensor::from_fn(v.rows(), 1, |r, _| v.row_slice(r).iter().sum());
        self.unary(t, Op::SumCols(self.id))
    }

    /// `max(x, 0)` with zero derivative at the kink.
    pub fn relu(self) -> Var<'t> {
        let t = self.value().map(|x| x.max(0.0));
        self.unary(t, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let t = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(t, Op::LeakyRelu(self.id, slope))
    }

    /// Column slice `[start, start + len)`.
    pub fn slice(self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + len > v.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: v.shape(),
                rhs: (start, len),
            });
        }
        let t = Tensor::from_fn(v.rows(), len, |r, c| v.get(r, start + c));
        Ok(self.unary(t, Op::Slice(self.id, start)))
    }

    /// Row-major reshape to `rows×cols`.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        if rows * cols != v.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: v.shape(),
                rhs: (rows, cols),
            });
        }
        let t = Tensor::new(rows, cols, v.data().to_vec())?;
        Ok(self.unary(t, Op::Reshape(self.id)))
    }

    /// Column-wise concatenation.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(Error::InvalidInput("empty concat".into()))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        if let Some(bad) = values.iter().find(|v| v.rows() != rows) {
            return Err(shape_err("concat", &values[0], bad));
        }
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let rg = parts.iter().any(|p| p.requires());
        let t = Tensor::new(rows, cols, data)?;
        Ok(tape.push(t, Op::Concat(parts.iter().map(|p| p.id).collect()), rg))
    }

    /// Rodrigues map on each 3-column block: `r×3m → r×9m`.
    pub fn rodrigues(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.cols() % 3 != 0 {
            return Err(Error::ShapeMismatch {
                op: "rodrigues",
                lhs: v.shape(),
                rhs: (0, 3),
            });
        }
        let blocks = v.cols() / 3;
        let mut out = Tensor::zeros(v.rows(), blocks * 9);
        let mut jacs = Vec::with_capacity(v.rows() * blocks);
        for r in 0..v.rows() {
            for b in 0..blocks {
                let s = &v.row_slice(r)[3 * b..3 * b + 3];
                let (m, j) = geometry::rodrigues([s[0], s[1], s[2]]);
                out.data_mut()[r * blocks * 9 + 9 * b..r * blocks * 9 + 9 * b + 9].copy_from_slice(&m);
                jacs.push(j);
            }
        }
        Ok(self.unary(out, Op::Rodrigues(self.id, jacs)))
    }

    fn check_blocks9(&self, op: &'static str) -> Result<Rc<Tensor>> {
        let v = self.value();
        if v.cols() % 9 != 0 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: v.shape(),
                rhs: (0, 9),
            });
        }
        Ok(v)
    }

    /// Logarithm map on each 9-column block: `r×9m → r×3m`.
    pub fn log_map(self) -> Result<Var<'t>> {
        let v = self.check_blocks9("log_map")?;
        let blocks = v.cols() / 9;
        let mut out = Tensor::zeros(v.rows(), blocks * 3);
        let mut jacs = Vec::with_capacity(v.rows() * blocks);
        for r in 0..v.rows() {
            for b in 0..blocks {
                let (a, j) = geometry::log_map(&v.row_slice(r)[9 * b..9 * b + 9]);
                out.data_mut()[r * blocks * 3 + 3 * b..r * blocks * 3 + 3 * b + 3].copy_from_slice(&a);
                jacs.push(j);
            }
        }
        Ok(self.unary(out, Op::LogMap(self.id, jacs)))
    }

    /// Nearest-rotation projection of each 9-column block.
    pub fn project(self) -> Result<Var<'t>> {
        let v = self.check_blocks9("project")?;
        let blocks = v.cols() / 9;
        let mut out = Tensor::zeros(v.rows(), v.cols());
        let mut caches = Vec::with_capacity(v.rows() * blocks);
        for r in 0..v.rows() {
            for b in 0..blocks {
                let (m, cache) = geometry::polar(&v.row_slice(r)[9 * b..9 * b + 9]).ok_or(Error::DegenerateMatrix)?;
                out.data_mut()[r * v.cols() + 9 * b..r * v.cols() + 9 * b + 9].copy_from_slice(&m);
                caches.push(cache);
            }
        }
        Ok(self.unary(out, Op::Project(self.id, caches)))
    }

    /// Euler angles of each 9-column block, one convention per block.
    pub fn euler(self, conventions: &[EulerConvention]) -> Result<Var<'t>> {
        let v = self.check_blocks9("euler")?;
        let blocks = v.cols() / 9;
        if conventions.len() != blocks {
            return Err(Error::DimensionMismatch {
                expected: blocks,
                got: conventions.len(),
            });
        }
        let mut out = Tensor::zeros(v.rows(), blocks * 3);
        let mut jacs = Vec::with_capacity(v.rows() * blocks);
        for r in 0..v.rows() {
            for (b, &conv) in conventions.iter().enumerate() {
                let (a, j) = geometry::euler(&v.row_slice(r)[9 * b..9 * b + 9], conv);
                out.data_mut()[r * blocks * 3 + 3 * b..r * blocks * 3 + 3 * b + 3].copy_from_slice(&a);
                jacs.push(j);
            }
        }
        Ok(self.unary(out, Op::Euler(self.id, jacs)))
    }

    /// Blockwise 3×3 products `A_i B_i` of two `r×9m` tensors.
    pub fn block_matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.check_blocks9("block_matmul")?;
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err("block_matmul", &a, &b));
        }
        let mut out = Tensor::zeros(a.rows(), a.cols());
        for o in (0..a.len()).step_by(9) {
            let m = geometry::mat(&a.data()[o..o + 9]) * geometry::mat(&b.data()[o..o + 9]);
            out.data_mut()[o..o + 9].copy_from_slice(&geometry::flat(&m));
        }
        let rg = self.requires() || other.requires();
        Ok(self.tape.push(out, Op::BlockMatMul(self.id, other.id), rg))
    }

    /// Blockwise `A_i p_i` for `r×9m` matrices and `r×3m` vectors.
    pub fn block_rotate(self, points: Var<'t>) -> Result<Var<'t>> {
        let a = self.check_blocks9("block_rotate")?;
        let p = points.value();
        if p.rows() != a.rows() || p.cols() * 3 != a.cols() {
            return Err(shape_err("block_rotate", &a, &p));
        }
        let mut out = Tensor::zeros(p.rows(), p.cols());
        let blocks = a.cols() / 9;
        for r in 0..a.rows() {
            for b in 0..blocks {
                let o = r * a.cols() + 9 * b;
                let po = r * p.cols() + 3 * b;
                let m = geometry::mat(&a.data()[o..o + 9]);
                let y = m * Vector3::from_column_slice(&p.data()[po..po + 3]);
                out.data_mut()[po..po + 3].copy_from_slice(y.as_slice());
            }
        }
        let rg = self.requires() || points.requires();
        Ok(self.tape.push(out, Op::BlockRotate(self.id, points.id), rg))
    }

    /// Linear blend skinning: world rotations `r×9K` (self) and world joint
    /// positions `r×3K` to vertices `r×3N`.
    pub fn skin(self, positions: Var<'t>, data: Rc<SkinData>) -> Result<Var<'t>> {
        let rot = self.value();
        let pos = positions.value();
        let k = data.joint_count;
        if rot.cols() != 9 * k || pos.cols() != 3 * k || rot.rows() != pos.rows() {
            return Err(shape_err("skin", &rot, &pos));
        }
        let n = data.influences.len();
        let mut out = Tensor::zeros(rot.rows(), 3 * n);
        for r in 0..rot.rows() {
            let rrow = rot.row_slice(r);
            let prow = pos.row_slice(r);
            let orow = &mut out.data_mut()[r * 3 * n..(r + 1) * 3 * n];
            for (v, infl) in data.influences.iter().enumerate() {
                let mut acc = [0.0; 3];
                for &(j, w, off) in infl {
                    let m = &rrow[9 * j..9 * j + 9];
                    for a in 0..3 {
                        acc[a] += w * (m[3 * a] * off[0] + m[3 * a + 1] * off[1] + m[3 * a + 2] * off[2] + prow[3 * j + a]);
                    }
                }
                orow[3 * v..3 * v + 3].copy_from_slice(&acc);
            }
        }
        let rg = self.requires() || positions.requires();
        Ok(self.tape.push(out, Op::Skin(self.id, positions.id, data), rg))
    }

    /// Capsule overlaps `radius_sum − segment distance` for joint positions
    /// given as a `1×3K` row.
    pub fn capsule_gaps(self, pairs: &[CapsulePair]) -> Result<Var<'t>> {
        let v = self.value();
        if v.rows() != 1 || v.cols() % 3 != 0 {
            return Err(Error::ShapeMismatch {
                op: "capsule_gaps",
                lhs: v.shape(),
                rhs: (1, 3),
            });
        }
        let joints = v.cols() / 3;
        let p = |j: usize| Vector3::from_column_slice(&v.data()[3 * j..3 * j + 3]);
        let mut out = Vec::with_capacity(pairs.len());
        let mut cache = Vec::with_capacity(pairs.len());
        for pair in pairs {
            for j in [pair.a.0, pair.a.1, pair.b.0, pair.b.1] {
                if j >= joints {
                    return Err(Error::InvalidInput(format!("capsule joint {j} out of range")));
                }
            }
            let (p0, p1, q0, q1) = (p(pair.a.0), p(pair.a.1), p(pair.b.0), p(pair.b.1));
            let (s, t, d) = geometry::segment_closest(&p0, &p1, &q0, &q1);
            let c1 = p0 + (p1 - p0) * s;
            let c2 = q0 + (q1 - q0) * t;
            let n = if d > 0.0 { (c1 - c2) / d } else { Vector3::zeros() };
            out.push(pair.radius_sum - d);
            cache.push((s, t, [n.x, n.y, n.z]));
        }
        let t = Tensor::row(out);
        Ok(self.unary(t, Op::CapsuleGaps(self.id, pairs.to_vec(), cache)))
    }
}
