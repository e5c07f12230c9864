//! Scalar computation graphs and their builder.
//!
//! Nodes are stored in evaluation order: every operand index is smaller than
//! the index of the node that uses it, so a single forward pass over the node
//! list evaluates the graph and a single backward pass propagates adjoints.
//!
//! The builder folds constants, removes additive/multiplicative identities and
//! deduplicates structurally identical nodes. Forward-mode tangents are built
//! symbolically with [`GraphBuilder::tangent`], which appends the derivative
//! nodes to the same graph so that a later reverse sweep differentiates
//! through them (forward-over-reverse nesting).

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

/// Handle to a node inside a [`GraphBuilder`] or [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Node kinds.
///
/// `Min(a, b)` evaluates to `a` when `a < b` and to `b` otherwise; `Max(a, b)`
/// evaluates to `a` when `a > b` and to `b` otherwise. Ties resolve to the
/// second operand, which callers use as the pass-through argument (the bound
/// goes first). `Select(l, r, x, y)` evaluates to `x` when `l < r` and to `y`
/// otherwise; it is produced when differentiating `Min`/`Max` and carries no
/// derivative through its comparison operands.
#[derive(Debug, Clone, Copy)]
pub enum Op {
    Const(f64),
    Param(u32),
    Input(u32),
    Add(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Recip(u32),
    Exp(u32),
    Log(u32),
    Pow(u32, f64),
    Min(u32, u32),
    Max(u32, u32),
    Softplus(u32),
    Sigmoid(u32),
    Select(u32, u32, u32, u32),
}

impl Op {
    fn tag(&self) -> u8 {
        match self {
            Op::Const(_) => 0,
            Op::Param(_) => 1,
            Op::Input(_) => 2,
            Op::Add(..) => 3,
            Op::Mul(..) => 4,
            Op::Neg(_) => 5,
            Op::Recip(_) => 6,
            Op::Exp(_) => 7,
            Op::Log(_) => 8,
            Op::Pow(..) => 9,
            Op::Min(..) => 10,
            Op::Max(..) => 11,
            Op::Softplus(_) => 12,
            Op::Sigmoid(_) => 13,
            Op::Select(..) => 14,
        }
    }

    /// Operand indices in a fixed-size buffer.
    pub(crate) fn operands(&self) -> ([u32; 4], usize) {
        match *self {
            Op::Const(_) | Op::Param(_) | Op::Input(_) => ([0; 4], 0),
            Op::Neg(a)
            | Op::Recip(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Pow(a, _)
            | Op::Softplus(a)
            | Op::Sigmoid(a) => ([a, 0, 0, 0], 1),
            Op::Add(a, b) | Op::Mul(a, b) | Op::Min(a, b) | Op::Max(a, b) => ([a, b, 0, 0], 2),
            Op::Select(l, r, x, y) => ([l, r, x, y], 4),
        }
    }

    fn remap(&self, map: &[u32]) -> Op {
        let m = |i: u32| map[i as usize];
        match *self {
            Op::Const(c) => Op::Const(c),
            Op::Param(i) => Op::Param(i),
            Op::Input(i) => Op::Input(i),
            Op::Add(a, b) => Op::Add(m(a), m(b)),
            Op::Mul(a, b) => Op::Mul(m(a), m(b)),
            Op::Neg(a) => Op::Neg(m(a)),
            Op::Recip(a) => Op::Recip(m(a)),
            Op::Exp(a) => Op::Exp(m(a)),
            Op::Log(a) => Op::Log(m(a)),
            Op::Pow(a, p) => Op::Pow(m(a), p),
            Op::Min(a, b) => Op::Min(m(a), m(b)),
            Op::Max(a, b) => Op::Max(m(a), m(b)),
            Op::Softplus(a) => Op::Softplus(m(a)),
            Op::Sigmoid(a) => Op::Sigmoid(m(a)),
            Op::Select(l, r, x, y) => Op::Select(m(l), m(r), m(x), m(y)),
        }
    }
}

impl PartialEq for Op {
    fn eq(&self, other: &Self) -> bool {
        use Op::*;
        match (*self, *other) {
            (Const(a), Const(b)) => a.to_bits() == b.to_bits(),
            (Param(a), Param(b)) | (Input(a), Input(b)) => a == b,
            (Pow(a, p), Pow(b, q)) => a == b && p.to_bits() == q.to_bits(),
            (x, y) => x.tag() == y.tag() && x.operands() == y.operands(),
        }
    }
}

impl Eq for Op {}

impl Hash for Op {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tag().hash(state);
        match *self {
            Op::Const(c) => c.to_bits().hash(state),
            Op::Param(i) | Op::Input(i) => i.hash(state),
            Op::Pow(a, p) => {
                a.hash(state);
                p.to_bits().hash(state);
            }
            ref op => op.operands().hash(state),
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Incrementally constructs a [`Graph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    ops: Vec<Op>,
    dedup: HashMap<Op, u32>,
    tangents: HashMap<(u32, u32), Option<u32>>,
    num_inputs: usize,
    num_params: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Declares at least `n` input leaves even if some are never referenced.
    pub fn declare_inputs(&mut self, n: usize) {
        self.num_inputs = self.num_inputs.max(n);
    }

    /// Declares at least `n` parameter leaves even if some are never referenced.
    pub fn declare_params(&mut self, n: usize) {
        self.num_params = self.num_params.max(n);
    }

    fn push(&mut self, op: Op) -> NodeId {
        if let Some(&id) = self.dedup.get(&op) {
            return NodeId(id);
        }
        let id = u32::try_from(self.ops.len()).expect("graph exceeds u32 node capacity");
        self.ops.push(op);
        self.dedup.insert(op, id);
        NodeId(id)
    }

    fn const_of(&self, n: NodeId) -> Option<f64> {
        match self.ops[n.index()] {
            Op::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn zero(&mut self) -> NodeId {
        self.constant(0.0)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.num_params = self.num_params.max(index + 1);
        self.push(Op::Param(index as u32))
    }

    pub fn input(&mut self, index: usize) -> NodeId {
        self.num_inputs = self.num_inputs.max(index + 1);
        self.push(Op::Input(index as u32))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_of(a), self.const_of(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            (Some(x), None) if x == 0.0 => b,
            (None, Some(y)) if y == 0.0 => a,
            _ => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                self.push(Op::Add(lo.0, hi.0))
            }
        }
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_of(a), self.const_of(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => self.zero(),
            (Some(x), None) if x == 1.0 => b,
            (None, Some(y)) if y == 1.0 => a,
            (Some(x), None) if x == -1.0 => self.neg(b),
            (None, Some(y)) if y == -1.0 => self.neg(a),
            _ => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                self.push(Op::Mul(lo.0, hi.0))
            }
        }
    }

    pub fn scale(&mut self, factor: f64, a: NodeId) -> NodeId {
        let c = self.constant(factor);
        self.mul(c, a)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_of(a) {
            return self.constant(-x);
        }
        if let Op::Neg(inner) = self.ops[a.index()] {
            return NodeId(inner);
        }
        self.push(Op::Neg(a.0))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(x) if x != 0.0 => self.constant(1.0 / x),
            _ => self.push(Op::Recip(a.0)),
        }
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(x) => self.constant(x.exp()),
            None => self.push(Op::Exp(a.0)),
        }
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(x) if x > 0.0 => self.constant(x.ln()),
            _ => self.push(Op::Log(a.0)),
        }
    }

    /// `a` raised to a constant real power.
    pub fn powf(&mut self, a: NodeId, p: f64) -> NodeId {
        if p == 0.0 {
            return self.constant(1.0);
        }
        if p == 1.0 {
            return a;
        }
        match self.const_of(a) {
            Some(x) if x > 0.0 || (p.fract() == 0.0 && x != 0.0) => self.constant(x.powf(p)),
            _ => self.push(Op::Pow(a.0, p)),
        }
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.powf(a, 2.0)
    }

    /// Minimum with the pass-through operand second: ties select `pass`.
    pub fn min(&mut self, bound: NodeId, pass: NodeId) -> NodeId {
        match (self.const_of(bound), self.const_of(pass)) {
            (Some(x), Some(y)) => self.constant(if x < y { x } else { y }),
            _ if bound == pass => pass,
            _ => self.push(Op::Min(bound.0, pass.0)),
        }
    }

    /// Maximum with the pass-through operand second: ties select `pass`.
    pub fn max(&mut self, bound: NodeId, pass: NodeId) -> NodeId {
        match (self.const_of(bound), self.const_of(pass)) {
            (Some(x), Some(y)) => self.constant(if x > y { x } else { y }),
            _ if bound == pass => pass,
            _ => self.push(Op::Max(bound.0, pass.0)),
        }
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(x) => self.constant(softplus(x)),
            None => self.push(Op::Softplus(a.0)),
        }
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(x) => self.constant(sigmoid(x)),
            None => self.push(Op::Sigmoid(a.0)),
        }
    }

    /// `if lhs < rhs { when_less } else { otherwise }`.
    pub fn select(&mut self, lhs: NodeId, rhs: NodeId, when_less: NodeId, otherwise: NodeId) -> NodeId {
        if when_less == otherwise {
            return otherwise;
        }
        match (self.const_of(lhs), self.const_of(rhs)) {
            (Some(l), Some(r)) => {
                if l < r {
                    when_less
                } else {
                    otherwise
                }
            }
            _ => self.push(Op::Select(lhs.0, rhs.0, when_less.0, otherwise.0)),
        }
    }

    /// Left-to-right sum; an empty slice yields the constant 0.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let mut acc = self.zero();
        for &t in terms {
            acc = self.add(acc, t);
        }
        acc
    }

    pub fn dot(&mut self, a: &[NodeId], b: &[NodeId]) -> NodeId {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let mut acc = self.zero();
        for (&x, &y) in a.iter().zip(b) {
            let p = self.mul(x, y);
            acc = self.add(acc, p);
        }
        acc
    }

    /// Symbolic forward-mode derivative of `node` along input leaf `input`.
    ///
    /// The derivative nodes are appended to this builder and may themselves be
    /// differentiated in reverse mode after [`GraphBuilder::finish`]. A
    /// structurally zero derivative is returned as the constant 0.
    pub fn tangent(&mut self, node: NodeId, input: usize) -> NodeId {
        let dir = input as u32;
        // Iterative post-order walk; operands always precede their users.
        let mut stack = vec![(node.0, false)];
        while let Some((id, expanded)) = stack.pop() {
            if self.tangents.contains_key(&(id, dir)) {
                continue;
            }
            let op = self.ops[id as usize];
            if !expanded {
                stack.push((id, true));
                let (ops, n) = op.operands();
                for &child in &ops[..n] {
                    if !self.tangents.contains_key(&(child, dir)) {
                        stack.push((child, false));
                    }
                }
                continue;
            }
            let t = self.tangent_rule(id, op, dir);
            self.tangents.insert((id, dir), t);
        }
        match self.tangents[&(node.0, dir)] {
            Some(t) => NodeId(t),
            None => self.zero(),
        }
    }

    fn tangent_rule(&mut self, id: u32, op: Op, dir: u32) -> Option<u32> {
        let t = |b: &Self, i: u32| b.tangents[&(i, dir)].map(NodeId);
        let this = NodeId(id);
        let out = match op {
            Op::Const(_) | Op::Param(_) => None,
            Op::Input(i) => (i == dir).then(|| self.constant(1.0)),
            Op::Add(a, b) => match (t(self, a), t(self, b)) {
                (None, None) => None,
                (Some(x), None) | (None, Some(x)) => Some(x),
                (Some(x), Some(y)) => Some(self.add(x, y)),
            },
            Op::Mul(a, b) => {
                let ta = t(self, a).map(|x| self.mul(x, NodeId(b)));
                let tb = t(self, b).map(|y| self.mul(NodeId(a), y));
                match (ta, tb) {
                    (None, None) => None,
                    (Some(x), None) | (None, Some(x)) => Some(x),
                    (Some(x), Some(y)) => Some(self.add(x, y)),
                }
            }
            Op::Neg(a) => t(self, a).map(|x| self.neg(x)),
            Op::Recip(a) => t(self, a).map(|x| {
                let sq = self.mul(this, this);
                let p = self.mul(x, sq);
                self.neg(p)
            }),
            Op::Exp(a) => t(self, a).map(|x| self.mul(x, this)),
            Op::Log(a) => t(self, a).map(|x| {
                let r = self.recip(NodeId(a));
                self.mul(x, r)
            }),
            Op::Pow(a, p) => t(self, a).map(|x| {
                let pw = self.powf(NodeId(a), p - 1.0);
                let d = self.scale(p, pw);
                self.mul(x, d)
            }),
            Op::Softplus(a) => t(self, a).map(|x| {
                let s = self.sigmoid(NodeId(a));
                self.mul(x, s)
            }),
            Op::Sigmoid(a) => t(self, a).map(|x| {
                let one = self.constant(1.0);
                let ns = self.neg(this);
                let comp = self.add(one, ns);
                let d = self.mul(this, comp);
                self.mul(x, d)
            }),
            Op::Min(a, b) => self.select_tangent(t(self, a), t(self, b), NodeId(a), NodeId(b)),
            Op::Max(a, b) => self.select_tangent(t(self, a), t(self, b), NodeId(b), NodeId(a)),
            Op::Select(l, r, x, y) => {
                let (tx, ty) = (t(self, x), t(self, y));
                if tx.is_none() && ty.is_none() {
                    None
                } else {
                    let z = self.zero();
                    let (tx, ty) = (tx.unwrap_or(z), ty.unwrap_or(z));
                    Some(self.select(NodeId(l), NodeId(r), tx, ty))
                }
            }
        };
        out.map(|n| n.0)
    }

    /// Tangent of `if lhs < rhs { first } else { second }` where `first`'s
    /// tangent is `ta` and `second`'s is `tb`.
    fn select_tangent(
        &mut self,
        ta: Option<NodeId>,
        tb: Option<NodeId>,
        lhs: NodeId,
        rhs: NodeId,
    ) -> Option<NodeId> {
        if ta.is_none() && tb.is_none() {
            return None;
        }
        let z = self.zero();
        Some(self.select(lhs, rhs, ta.unwrap_or(z), tb.unwrap_or(z)))
    }

    /// Finalizes a multi-output graph, dropping nodes the outputs never read.
    pub fn finish(self, outputs: &[NodeId]) -> Graph {
        let n = self.ops.len();
        let mut live = vec![false; n];
        for o in outputs {
            live[o.index()] = true;
        }
        for i in (0..n).rev() {
            if live[i] {
                let (ops, k) = self.ops[i].operands();
                for &c in &ops[..k] {
                    live[c as usize] = true;
                }
            }
        }
        let mut map = vec![u32::MAX; n];
        let mut ops = Vec::with_capacity(live.iter().filter(|&&l| l).count());
        for i in 0..n {
            if live[i] {
                map[i] = ops.len() as u32;
                ops.push(self.ops[i].remap(&map));
            }
        }
        Graph {
            ops,
            outputs: outputs.iter().map(|o| map[o.index()]).collect(),
            num_inputs: self.num_inputs,
            num_params: self.num_params,
        }
    }

    /// Finalizes a single-output expression.
    pub fn into_expr(self, root: NodeId) -> Expr {
        Expr(self.finish(&[root]))
    }
}

/// Immutable, evaluation-ordered scalar graph with one or more outputs.
#[derive(Debug, Clone)]
pub struct Graph {
    pub(crate) ops: Vec<Op>,
    pub(crate) outputs: Vec<u32>,
    pub(crate) num_inputs: usize,
    pub(crate) num_params: usize,
}

impl Graph {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }
}

/// A single-output graph.
#[derive(Debug, Clone)]
pub struct Expr(pub(crate) Graph);

impl Expr {
    pub fn graph(&self) -> &Graph {
        &self.0
    }

    pub fn num_inputs(&self) -> usize {
        self.0.num_inputs
    }

    pub fn num_params(&self) -> usize {
        self.0.num_params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_precede_parents() {
        let mut b = GraphBuilder::new();
        let x = b.input(0);
        let w = b.param(0);
        let p = b.mul(w, x);
        let s = b.softplus(p);
        let t = b.tangent(s, 0);
        let out = b.add(s, t);
        let g = b.finish(&[out]);
        for (i, op) in g.ops().iter().enumerate() {
            let (ops, k) = op.operands();
            assert!(ops[..k].iter().all(|&c| (c as usize) < i));
        }
    }

    #[test]
    fn folding_and_dedup() {
        let mut b = GraphBuilder::new();
        let x = b.input(0);
        let zero = b.zero();
        let one = b.constant(1.0);
        assert_eq!(b.add(x, zero), x);
        assert_eq!(b.mul(one, x), x);
        assert_eq!(b.mul(zero, x), zero);
        let y = b.param(1);
        let a1 = b.add(x, y);
        let a2 = b.add(y, x);
        assert_eq!(a1, a2);
        let nn = b.neg(x);
        assert_eq!(b.neg(nn), x);
    }

    #[test]
    fn tangent_of_constant_is_zero_node() {
        let mut b = GraphBuilder::new();
        let w = b.param(0);
        let e = b.exp(w);
        let t = b.tangent(e, 0);
        assert!(matches!(b.ops[t.index()], Op::Const(c) if c == 0.0));
    }

    #[test]
    fn dead_nodes_are_dropped() {
        let mut b = GraphBuilder::new();
        let x = b.input(0);
        let _unused = b.exp(x);
        let y = b.square(x);
        let g = b.finish(&[y]);
        assert_eq!(g.len(), 2);
        assert_eq!(g.num_inputs(), 1);
    }
}
