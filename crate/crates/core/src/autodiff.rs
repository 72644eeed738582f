//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every recorded node stores its value and the local partial derivatives
//! with respect to its inputs, so `backward` is a single reverse sweep of
//! multiply-accumulates. Dense layers and layer normalization are recorded
//! as fused blocks: one node per output, one vector-Jacobian product per
//! block.
//!
//! A [`Var`] either lives on a tape or is a constant. Constants never create
//! nodes, which keeps observation noise, set-points and other detached
//! quantities off the tape.

use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};
use core::sync::atomic::{AtomicU32, Ordering};

use crate::math;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

const NO_NODE: u32 = u32::MAX;

/// Primitive operations recognised by the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Opcode {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Sin,
    Cos,
    Asin,
    Atan2,
    MaxConst,
    MinConst,
    Dot,
    Norm,
    SmoothL1,
    Softplus,
    Sum,
    /// Identity marking a rollout-step handoff; scaled by the decay factor
    /// during `backward`.
    Boundary,
    Affine,
    LayerNorm,
    /// Caller-supplied value and partials (see [`Tape::record`]).
    Custom,
}

#[derive(Clone, Copy)]
enum Kind {
    Leaf,
    Op { start: u32, len: u32 },
    Boundary { input: u32 },
    Block { block: u32 },
}

#[derive(Clone, Copy)]
struct Node {
    op: Opcode,
    kind: Kind,
}

#[derive(Clone, Copy)]
struct Edge {
    input: u32,
    partial: f64,
}

enum BlockKind {
    /// `out = W x + b` with `W` row-major `len x n_in`.
    Affine {
        w: u32,
        b: u32,
        n_in: usize,
        x: Vec<u32>,
        x_vals: Vec<f64>,
    },
    /// `out = gain * (x - mean) * inv_std + bias`.
    LayerNorm {
        gain: u32,
        bias: u32,
        x: Vec<u32>,
        xhat: Vec<f64>,
        inv_std: f64,
    },
}

struct Block {
    out: u32,
    len: u32,
    kind: BlockKind,
}

#[derive(Default)]
struct Inner {
    values: Vec<f64>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    blocks: Vec<Block>,
}

/// Append-only record of a forward computation.
pub struct Tape {
    id: u32,
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(Inner::default()),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node. Vars recorded before the call must not be used
    /// afterwards; this is checked only through node ids being out of range.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.values.clear();
        inner.nodes.clear();
        inner.edges.clear();
        inner.blocks.clear();
    }

    /// Opcode of a node, for inspection and tests.
    pub fn opcode(&self, node: usize) -> Opcode {
        self.inner.borrow().nodes[node].op
    }

    /// Input node ids of a node in recording order.
    pub fn inputs(&self, node: usize) -> Vec<usize> {
        let inner = self.inner.borrow();
        match inner.nodes[node].kind {
            Kind::Leaf => Vec::new(),
            Kind::Op { start, len } => inner.edges[start as usize..(start + len) as usize]
                .iter()
                .map(|e| e.input as usize)
                .collect(),
            Kind::Boundary { input } => alloc::vec![input as usize],
            Kind::Block { block } => {
                let b = &inner.blocks[block as usize];
                let mut ids = Vec::new();
                match &b.kind {
                    BlockKind::Affine { w, b: bias, n_in, x, .. } => {
                        ids.extend(x.iter().filter(|&&i| i != NO_NODE).map(|&i| i as usize));
                        ids.extend(*w as usize..*w as usize + n_in * b.len as usize);
                        ids.extend(*bias as usize..*bias as usize + b.len as usize);
                    }
                    BlockKind::LayerNorm { gain, bias, x, .. } => {
                        ids.extend(x.iter().filter(|&&i| i != NO_NODE).map(|&i| i as usize));
                        ids.extend(*gain as usize..*gain as usize + b.len as usize);
                        ids.extend(*bias as usize..*bias as usize + b.len as usize);
                    }
                }
                ids
            }
        }
    }

    /// Value stored for a node.
    pub fn value(&self, node: usize) -> f64 {
        self.inner.borrow().values[node]
    }

    pub fn leaf(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len() as u32;
        inner.values.push(value);
        inner.nodes.push(Node {
            op: Opcode::Leaf,
            kind: Kind::Leaf,
        });
        Var {
            tape: Some(self),
            node: id,
            value,
        }
    }

    /// Registers a contiguous run of leaves, e.g. a parameter vector.
    pub fn leaves(&self, values: &[f64]) -> Vec<Var<'_>> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.nodes.len() as u32;
        inner.values.extend_from_slice(values);
        inner.nodes.extend(core::iter::repeat_n(
            Node {
                op: Opcode::Leaf,
                kind: Kind::Leaf,
            },
            values.len(),
        ));
        values
            .iter()
            .enumerate()
            .map(|(i, &value)| Var {
                tape: Some(self),
                node: start + i as u32,
                value,
            })
            .collect()
    }

    /// Records a primitive with an explicit value and local partials.
    ///
    /// Panics when `inputs` and `partials` differ in length or when an
    /// input does not belong to this tape.
    pub fn record<'t>(
        &'t self,
        op: Opcode,
        inputs: &[Var<'t>],
        value: f64,
        partials: &[f64],
    ) -> Var<'t> {
        assert_eq!(
            inputs.len(),
            partials.len(),
            "record: {} inputs but {} partials",
            inputs.len(),
            partials.len()
        );
        for v in inputs {
            match v.tape {
                Some(t) if core::ptr::eq(t, self) => {}
                Some(t) => panic!(
                    "record: Var from tape {} used on tape {}",
                    t.id, self.id
                ),
                None => panic!("record: constant input on tape {}", self.id),
            }
        }
        self.push_op(op, inputs.iter().map(|v| v.node).zip(partials.iter().copied()), value)
    }

    fn push_op(&self, op: Opcode, edges: impl Iterator<Item = (u32, f64)>, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.edges.len() as u32;
        inner
            .edges
            .extend(edges.map(|(input, partial)| Edge { input, partial }));
        let len = inner.edges.len() as u32 - start;
        let id = inner.nodes.len() as u32;
        inner.values.push(value);
        inner.nodes.push(Node {
            op,
            kind: Kind::Op { start, len },
        });
        Var {
            tape: Some(self),
            node: id,
            value,
        }
    }

    /// Identity node whose adjoint is scaled by the decay factor.
    pub fn boundary<'t>(&'t self, v: Var<'t>) -> Var<'t> {
        let Some(t) = v.tape else { return v };
        assert_same(t, self);
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len() as u32;
        inner.values.push(v.value);
        inner.nodes.push(Node {
            op: Opcode::Boundary,
            kind: Kind::Boundary { input: v.node },
        });
        Var {
            tape: Some(self),
            node: id,
            value: v.value,
        }
    }

    fn push_block(&self, op: Opcode, kind: BlockKind, values: &[f64]) -> Vec<Var<'_>> {
        let mut inner = self.inner.borrow_mut();
        let out = inner.nodes.len() as u32;
        let block = inner.blocks.len() as u32;
        inner.blocks.push(Block {
            out,
            len: values.len() as u32,
            kind,
        });
        inner.values.extend_from_slice(values);
        inner.nodes.extend(core::iter::repeat_n(
            Node {
                op,
                kind: Kind::Block { block },
            },
            values.len(),
        ));
        values
            .iter()
            .enumerate()
            .map(|(i, &value)| Var {
                tape: Some(self),
                node: out + i as u32,
                value,
            })
            .collect()
    }

    /// Reverse sweep from `root`.
    ///
    /// With `decay = Some(g)` the adjoint crossing every boundary node is
    /// multiplied by `g`; `None` treats boundaries as identities.
    pub fn backward(&self, root: Var<'_>, decay: Option<f64>) -> Gradients {
        let inner = self.inner.borrow();
        let n = inner.nodes.len();
        let mut adj = alloc::vec![0.0; n];
        let Some(t) = root.tape else {
            return Gradients { tape: self.id, adj };
        };
        assert_same(t, self);
        adj[root.node as usize] = 1.0;
        let gamma = decay.unwrap_or(1.0);
        let mut out_adj = Vec::new();
        for i in (0..n).rev() {
            let node = inner.nodes[i];
            if let Kind::Block { block } = node.kind {
                let b = &inner.blocks[block as usize];
                if i as u32 == b.out + b.len - 1 {
                    out_adj.clear();
                    out_adj.extend_from_slice(&adj[b.out as usize..(b.out + b.len) as usize]);
                    if out_adj.iter().any(|&g| g != 0.0) {
                        block_vjp(b, &out_adj, &inner.values, &mut adj);
                    }
                }
                continue;
            }
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match node.kind {
                Kind::Leaf | Kind::Block { .. } => {}
                Kind::Op { start, len } => {
                    for e in &inner.edges[start as usize..(start + len) as usize] {
                        adj[e.input as usize] += g * e.partial;
                    }
                }
                Kind::Boundary { input } => adj[input as usize] += g * gamma,
            }
        }
        Gradients { tape: self.id, adj }
    }

    pub(crate) fn affine<'t>(&'t self, w: &[Var<'t>], b: &[Var<'t>], x: &[Var<'t>]) -> Option<Vec<Var<'t>>> {
        let n_out = b.len();
        let n_in = x.len();
        let w0 = contiguous(self, w)?;
        let b0 = contiguous(self, b)?;
        let x_vals: Vec<f64> = x.iter().map(|v| v.value).collect();
        let x_ids: Vec<u32> = x
            .iter()
            .map(|v| match v.tape {
                Some(t) => {
                    assert_same(t, self);
                    v.node
                }
                None => NO_NODE,
            })
            .collect();
        let mut out = alloc::vec![0.0; n_out];
        {
            let inner = self.inner.borrow();
            let wv = &inner.values[w0 as usize..w0 as usize + n_out * n_in];
            let bv = &inner.values[b0 as usize..b0 as usize + n_out];
            affine_kernel(wv, bv, &x_vals, &mut out);
        }
        Some(self.push_block(
            Opcode::Affine,
            BlockKind::Affine {
                w: w0,
                b: b0,
                n_in,
                x: x_ids,
                x_vals,
            },
            &out,
        ))
    }

    pub(crate) fn layer_norm<'t>(
        &'t self,
        x: &[Var<'t>],
        gain: &[Var<'t>],
        bias: &[Var<'t>],
        eps: f64,
    ) -> Option<Vec<Var<'t>>> {
        let g0 = contiguous(self, gain)?;
        let b0 = contiguous(self, bias)?;
        let x_vals: Vec<f64> = x.iter().map(|v| v.value).collect();
        let x_ids: Vec<u32> = x
            .iter()
            .map(|v| match v.tape {
                Some(t) => {
                    assert_same(t, self);
                    v.node
                }
                None => NO_NODE,
            })
            .collect();
        let gv: Vec<f64> = gain.iter().map(|v| v.value).collect();
        let bv: Vec<f64> = bias.iter().map(|v| v.value).collect();
        let mut out = alloc::vec![0.0; x.len()];
        let mut xhat = alloc::vec![0.0; x.len()];
        let inv_std = layer_norm_kernel(&x_vals, &gv, &bv, eps, &mut xhat, &mut out);
        Some(self.push_block(
            Opcode::LayerNorm,
            BlockKind::LayerNorm {
                gain: g0,
                bias: b0,
                x: x_ids,
                xhat,
                inv_std,
            },
            &out,
        ))
    }
}

fn assert_same(a: &Tape, b: &Tape) {
    if !core::ptr::eq(a, b) {
        panic!("Var from tape {} mixed with Var from tape {}", a.id, b.id);
    }
}

/// Start node of `vars` when they are consecutive nodes of `tape`.
fn contiguous(tape: &Tape, vars: &[Var<'_>]) -> Option<u32> {
    let first = vars.first()?;
    let t = first.tape?;
    if !core::ptr::eq(t, tape) {
        return None;
    }
    let start = first.node;
    vars.iter()
        .enumerate()
        .all(|(i, v)| matches!(v.tape, Some(t) if core::ptr::eq(t, tape)) && v.node == start + i as u32)
        .then_some(start)
}

/// `out = W x + b` for row-major `W`.
pub fn affine_kernel(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * n_in..(i + 1) * n_in];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(x) {
            acc += wij * xj;
        }
        *o = acc + b[i];
    }
}

/// Layer normalisation over the whole vector. Returns `1/sqrt(var + eps)`.
pub fn layer_norm_kernel(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    xhat: &mut [f64],
    out: &mut [f64],
) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / math::sqrt(var + eps);
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv_std;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    inv_std
}

fn block_vjp(b: &Block, g: &[f64], values: &[f64], adj: &mut [f64]) {
    match &b.kind {
        BlockKind::Affine { w, b: bias, n_in, x, x_vals } => {
            let (w, bias, n_in) = (*w as usize, *bias as usize, *n_in);
            for (i, &gi) in g.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                adj[bias + i] += gi;
                let row = w + i * n_in;
                for (j, &xj) in x_vals.iter().enumerate() {
                    adj[row + j] += gi * xj;
                }
            }
            for (j, &xid) in x.iter().enumerate() {
                if xid == NO_NODE {
                    continue;
                }
                let mut acc = 0.0;
                for (i, &gi) in g.iter().enumerate() {
                    acc += values[w + i * n_in + j] * gi;
                }
                adj[xid as usize] += acc;
            }
        }
        BlockKind::LayerNorm {
            gain,
            bias,
            x,
            xhat,
            inv_std,
        } => {
            let (gain, bias) = (*gain as usize, *bias as usize);
            let n = g.len() as f64;
            let mut dxhat = alloc::vec![0.0; g.len()];
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for i in 0..g.len() {
                adj[gain + i] += g[i] * xhat[i];
                adj[bias + i] += g[i];
                dxhat[i] = g[i] * values[gain + i];
                mean_d += dxhat[i];
                mean_dx += dxhat[i] * xhat[i];
            }
            mean_d /= n;
            mean_dx /= n;
            for (i, &xid) in x.iter().enumerate() {
                if xid != NO_NODE {
                    adj[xid as usize] += inv_std * (dxhat[i] - mean_d - xhat[i] * mean_dx);
                }
            }
        }
    }
}

/// Adjoints from one `backward` sweep, indexed by node id.
#[derive(Clone, Debug)]
pub struct Gradients {
    tape: u32,
    adj: Vec<f64>,
}

impl Gradients {
    /// Adjoint of `v`; zero for constants.
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        match v.tape {
            None => 0.0,
            Some(t) => {
                assert_eq!(t.id, self.tape, "gradient lookup for a Var of another tape");
                self.adj.get(v.node as usize).copied().unwrap_or(0.0)
            }
        }
    }

    pub fn node(&self, id: usize) -> f64 {
        self.adj[id]
    }

    /// Adjoints of a run of Vars, typically the parameter leaves.
    pub fn collect(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(v)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adj
    }
}

/// A scalar that is either a node on a [`Tape`] or a constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    node: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(t) => write!(f, "Var(t{}#{} = {})", t.id, self.node, self.value),
            None => write!(f, "Var(const {})", self.value),
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            node: NO_NODE,
            value,
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    pub fn tape_id(&self) -> Option<u32> {
        self.tape.map(|t| t.id)
    }

    pub fn node_id(&self) -> Option<usize> {
        self.tape.map(|_| self.node as usize)
    }

    pub fn tape(&self) -> Option<&'t Tape> {
        self.tape
    }

    #[inline]
    pub(crate) fn unary(self, op: Opcode, value: f64, d: f64) -> Var<'t> {
        match self.tape {
            None => Var::constant(value),
            Some(t) => t.push_op(op, core::iter::once((self.node, d)), value),
        }
    }

    #[inline]
    pub(crate) fn binary(self, rhs: Var<'t>, op: Opcode, value: f64, da: f64, db: f64) -> Var<'t> {
        match (self.tape, rhs.tape) {
            (None, None) => Var::constant(value),
            (Some(t), None) => t.push_op(op, core::iter::once((self.node, da)), value),
            (None, Some(t)) => t.push_op(op, core::iter::once((rhs.node, db)), value),
            (Some(a), Some(b)) => {
                assert_same(a, b);
                a.push_op(op, [(self.node, da), (rhs.node, db)].into_iter(), value)
            }
        }
    }

    /// Records an n-ary node; constant inputs are dropped from the edge list.
    pub(crate) fn nary(op: Opcode, inputs: &[Var<'t>], value: f64, partials: &[f64]) -> Var<'t> {
        debug_assert_eq!(inputs.len(), partials.len());
        let mut tape: Option<&'t Tape> = None;
        for v in inputs {
            if let Some(t) = v.tape {
                match tape {
                    None => tape = Some(t),
                    Some(prev) => assert_same(prev, t),
                }
            }
        }
        match tape {
            None => Var::constant(value),
            Some(t) => t.push_op(
                op,
                inputs
                    .iter()
                    .zip(partials)
                    .filter(|(v, _)| v.tape.is_some())
                    .map(|(v, &p)| (v.node, p)),
                value,
            ),
        }
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = math::sqrt(self.value);
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(Opcode::Sqrt, s, d)
    }

    pub fn exp(self) -> Var<'t> {
        let e = math::exp(self.value);
        self.unary(Opcode::Exp, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Opcode::Ln, math::ln(self.value), 1.0 / self.value)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = math::tanh(self.value);
        self.unary(Opcode::Tanh, t, 1.0 - t * t)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = math::sigmoid(self.value);
        self.unary(Opcode::Sigmoid, s, s * (1.0 - s))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Opcode::Sin, math::sin(self.value), math::cos(self.value))
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Opcode::Cos, math::cos(self.value), -math::sin(self.value))
    }

    /// Arcsine; the input is clamped to `[-1, 1]` and the partial is zero at
    /// the clamp.
    pub fn asin(self) -> Var<'t> {
        let x = self.value.clamp(-1.0, 1.0);
        let q = 1.0 - x * x;
        let d = if q > 0.0 { 1.0 / math::sqrt(q) } else { 0.0 };
        self.unary(Opcode::Asin, math::asin(x), d)
    }

    /// `atan2(self, x)`; both partials are zero at the origin.
    pub fn atan2(self, x: Var<'t>) -> Var<'t> {
        let (yv, xv) = (self.value, x.value);
        let r2 = xv * xv + yv * yv;
        let (dy, dx) = if r2 > 0.0 { (xv / r2, -yv / r2) } else { (0.0, 0.0) };
        self.binary(x, Opcode::Atan2, math::atan2(yv, xv), dy, dx)
    }

    /// `max(self, c)`; the partial is 1 when `self > c`.
    pub fn max_c(self, c: f64) -> Var<'t> {
        if self.value > c {
            self.unary(Opcode::MaxConst, self.value, 1.0)
        } else {
            self.unary(Opcode::MaxConst, c, 0.0)
        }
    }

    pub fn min_c(self, c: f64) -> Var<'t> {
        if self.value < c {
            self.unary(Opcode::MinConst, self.value, 1.0)
        } else {
            self.unary(Opcode::MinConst, c, 0.0)
        }
    }

    /// Smooth-L1 (Huber with slope 1) of `self` against zero.
    pub fn smooth_l1(self, beta: f64) -> Var<'t> {
        let (v, d) = smooth_l1(self.value, beta);
        self.unary(Opcode::SmoothL1, v, d)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Opcode::Softplus, math::softplus(self.value), math::sigmoid(self.value))
    }
}

/// Value and derivative of smooth-L1 against zero.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    let a = math::abs(x);
    if a < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (a - 0.5 * beta, if x >= 0.0 { 1.0 } else { -1.0 })
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Opcode::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Opcode::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Opcode::Mul, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.binary(rhs, Opcode::Div, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Opcode::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Opcode::Add, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(Opcode::Sub, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(Opcode::Mul, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(Opcode::Div, self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(Opcode::Sub, self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self / rhs.value;
        rhs.unary(Opcode::Div, q, -q / rhs.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_records_product_rule_partials() {
        let tape = Tape::new();
        let x = tape.leaf(3.0);
        let y = x * x;
        assert_eq!(y.value(), 9.0);
        let id = y.node_id().unwrap();
        assert_eq!(tape.opcode(id), Opcode::Mul);
        assert_eq!(tape.inputs(id), alloc::vec![0, 0]);
        let g = tape.backward(y, None);
        assert_eq!(g.wrt(&x), 6.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(0.0);
        let s = x.sigmoid();
        assert_eq!(s.value(), 0.5);
        assert_eq!(tape.backward(s, None).wrt(&x), 0.25);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(2.0);
        let y = tape.leaf(5.0);
        let f = x + x * y;
        let g = tape.backward(f, None);
        assert_eq!((g.wrt(&x), g.wrt(&y)), (6.0, 2.0));
    }

    #[test]
    fn constants_do_not_create_nodes() {
        let tape = Tape::new();
        let x = tape.leaf(1.5);
        let c = Var::constant(2.0) * Var::constant(4.0) + 1.0;
        assert!(c.is_constant());
        assert_eq!(c.value(), 9.0);
        let y = x * c;
        assert_eq!(tape.len(), 2);
        assert_eq!(tape.backward(y, None).wrt(&x), 9.0);
    }

    #[test]
    #[should_panic(expected = "mixed")]
    fn mixing_tapes_panics() {
        let a = Tape::new();
        let b = Tape::new();
        let _ = a.leaf(1.0) + b.leaf(2.0);
    }

    #[test]
    #[should_panic(expected = "used on tape")]
    fn record_rejects_foreign_inputs() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.leaf(1.0);
        let _ = b.record(Opcode::Custom, &[x], 1.0, &[1.0]);
    }

    #[test]
    fn cleared_tape_is_empty() {
        let mut tape = Tape::new();
        {
            let x = tape.leaf(1.0);
            let _ = x.exp() * 2.0;
        }
        assert_eq!(tape.len(), 3);
        tape.clear();
        assert!(tape.is_empty());
    }

    #[test]
    fn boundary_scales_adjoint_only_when_decayed() {
        let tape = Tape::new();
        let x = tape.leaf(2.0);
        let b = tape.boundary(x * 3.0);
        let y = b * b;
        assert_eq!(y.value(), 36.0);
        assert_eq!(tape.opcode(b.node_id().unwrap()), Opcode::Boundary);
        let g1 = tape.backward(y, None);
        let g2 = tape.backward(y, Some(1.0));
        let gh = tape.backward(y, Some(0.5));
        assert_eq!(g1.wrt(&x), 36.0);
        assert_eq!(g1.as_slice(), g2.as_slice());
        assert_eq!(gh.wrt(&x), 18.0);
    }

    #[test]
    fn affine_block_matches_scalar_expansion() {
        let tape = Tape::new();
        let w = tape.leaves(&[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
        let b = tape.leaves(&[0.1, -0.2]);
        let x = tape.leaves(&[0.3, -0.7, 2.0]);
        let out = tape.affine(&w, &b, &x).unwrap();
        let loss = out[0] * out[0] + out[1] * 3.0;
        let g = tape.backward(loss, None);

        let t2 = Tape::new();
        let w2 = t2.leaves(&[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
        let b2 = t2.leaves(&[0.1, -0.2]);
        let x2 = t2.leaves(&[0.3, -0.7, 2.0]);
        let mut o = alloc::vec::Vec::new();
        for i in 0..2 {
            let mut acc = b2[i];
            for j in 0..3 {
                acc = acc + w2[i * 3 + j] * x2[j];
            }
            o.push(acc);
        }
        let loss2 = o[0] * o[0] + o[1] * 3.0;
        assert!((loss.value() - loss2.value()).abs() < 1e-14);
        let g2 = t2.backward(loss2, None);
        for (a, b) in g.collect(&w).iter().zip(g2.collect(&w2)) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.collect(&x).iter().zip(g2.collect(&x2)) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.collect(&b).iter().zip(g2.collect(&b2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_of_constant_vector_is_bias() {
        let tape = Tape::new();
        let x = tape.leaves(&[0.7; 4]);
        let g = tape.leaves(&[2.0; 4]);
        let b = tape.leaves(&[0.1, 0.2, 0.3, 0.4]);
        let y = tape.layer_norm(&x, &g, &b, 1e-5).unwrap();
        for (yi, bi) in y.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((yi.value() - bi).abs() < 1e-15);
        }
    }

    #[test]
    fn non_contiguous_params_are_refused() {
        let tape = Tape::new();
        let w = [tape.leaf(1.0), tape.leaf(2.0)];
        let _gap = tape.leaf(0.0);
        let b = [tape.leaf(0.0)];
        let x = [tape.leaf(1.0), tape.leaf(1.0)];
        let w_bad = [w[1], w[0]];
        assert!(tape.affine(&w_bad, &b, &x).is_none());
        assert!(tape.affine(&w, &b, &x).is_some());
    }
}
