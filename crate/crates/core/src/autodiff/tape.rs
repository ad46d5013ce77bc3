use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis. `Rows` collapses the row dimension (result is `1 × cols`),
/// `Cols` collapses the column dimension (result is `rows × 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    All,
    Rows,
    Cols,
}

/// How the right operand of a binary op is expanded to the left operand's shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    MaxScalar(Var, f64),
    Logit(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Sum(Var, Axis),
    Mean(Var, Axis),
    ConcatCols(Vec<Var>),
}

/// One recorded value with its accumulated gradient and the rule that produced it.
#[derive(Debug)]
pub struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Append-only computation record. Parents always precede children, so
/// reverse insertion order is a valid topological order for backward.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records the current value of a stored parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone());
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Adds the gradients of all parameter leaves on this tape into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let Some(id) = node.param {
                store.grad_mut(id).add_assign(&node.grad);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(Broadcast::Same)
        } else if sb == (1, 1) {
            Ok(Broadcast::Scalar)
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Ok(Broadcast::Row)
        } else {
            Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let kind = self.broadcast_kind(name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let mut out = av.clone();
        match kind {
            Broadcast::Same => {
                for (o, &y) in out.data_mut().iter_mut().zip(bv.data()) {
                    *o = f(*o, y);
                }
            }
            Broadcast::Scalar => {
                let y = bv.item();
                out.data_mut().iter_mut().for_each(|o| *o = f(*o, y));
            }
            Broadcast::Row => {
                let row = bv.data().to_vec();
                for (i, o) in out.data_mut().iter_mut().enumerate() {
                    *o = f(*o, row[i % cols]);
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, make(a, b, kind), rg))
    }

    /// `a + b`; `b` may be `1 × 1` or `1 × a.cols`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::Shift(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Elementwise `max(x, floor)`; the ramp used by hinge-style losses.
    pub fn max_scalar(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), Op::MaxScalar(a, floor))
    }

    /// `ln(x / (1 - x))`, defined on the open unit interval only.
    pub fn logit(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self
            .value(a)
            .data()
            .iter()
            .find(|&&x| !(x > 0.0 && x < 1.0))
        {
            return Err(Error::Domain {
                op: "logit",
                detail: format!("value {bad} not in (0, 1)"),
            });
        }
        Ok(self.unary(a, |x| (x / (1.0 - x)).ln(), Op::Logit(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var, axis: Axis) -> Var {
        let value = reduce_sum(self.value(a), axis);
        let rg = self.rg(a);
        self.push(value, Op::Sum(a, axis), rg)
    }

    pub fn mean(&mut self, a: Var, axis: Axis) -> Var {
        let v = self.value(a);
        let count = match axis {
            Axis::All => v.len(),
            Axis::Rows => v.rows(),
            Axis::Cols => v.cols(),
        } as f64;
        let value = reduce_sum(v, axis).map(|x| x / count);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a, axis), rg)
    }

    /// Horizontal concatenation; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        };
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.value(first).shape(),
                    right: self.value(p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                for c in 0..v.cols() {
                    out.set(r, offset + c, v.get(r, c));
                }
            }
            offset += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Reverse sweep from a `1 × 1` node. Gradients add onto whatever the
    /// nodes already hold; call [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj)?;
            self.nodes[i].grad.add_assign(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, g.matmul_t(bv)?);
                }
                if self.rg(*b) {
                    send(*b, av.t_matmul(g)?);
                }
            }
            Op::Add(a, b, k) => {
                send(*a, g.clone());
                if self.rg(*b) {
                    send(*b, unbroadcast(g.clone(), *k));
                }
            }
            Op::Sub(a, b, k) => {
                send(*a, g.clone());
                if self.rg(*b) {
                    send(*b, unbroadcast(g.map(|x| -x), *k));
                }
            }
            Op::Mul(a, b, k) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, zip_broadcast(g, bv, *k, |gi, y| gi * y));
                }
                if self.rg(*b) {
                    send(*b, unbroadcast(g.zip_map(av, |gi, x| gi * x), *k));
                }
            }
            Op::Div(a, b, k) => {
                let bv = self.value(*b);
                if self.rg(*a) {
                    send(*a, zip_broadcast(g, bv, *k, |gi, y| gi / y));
                }
                if self.rg(*b) {
                    // d(x/y)/dy = -x/y² = -out/y
                    let out = &node.value;
                    let t = zip_broadcast(&g.zip_map(out, |gi, o| -gi * o), bv, *k, |v, y| v / y);
                    send(*b, unbroadcast(t, *k));
                }
            }
            Op::Scale(a, f) => send(*a, g.map(|x| x * f)),
            Op::Shift(a) => send(*a, g.clone()),
            Op::Relu(a) => send(
                *a,
                g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
            ),
            Op::MaxScalar(a, floor) => {
                let floor = *floor;
                send(
                    *a,
                    g.zip_map(self.value(*a), |gi, x| if x > floor { gi } else { 0.0 }),
                )
            }
            Op::Logit(a) => send(*a, g.zip_map(self.value(*a), |gi, x| gi / (x * (1.0 - x)))),
            Op::Sigmoid(a) => send(*a, g.zip_map(&node.value, |gi, s| gi * s * (1.0 - s))),
            Op::Exp(a) => send(*a, g.zip_map(&node.value, |gi, e| gi * e)),
            Op::Square(a) => send(*a, g.zip_map(self.value(*a), |gi, x| 2.0 * gi * x)),
            Op::Abs(a) => send(
                *a,
                g.zip_map(self.value(*a), |gi, x| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Sum(a, axis) => send(*a, expand(g, self.value(*a).shape(), *axis, 1.0)),
            Op::Mean(a, axis) => {
                let (r, c) = self.value(*a).shape();
                let count = match axis {
                    Axis::All => r * c,
                    Axis::Rows => r,
                    Axis::Cols => c,
                } as f64;
                send(*a, expand(g, (r, c), *axis, 1.0 / count))
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    if self.rg(p) {
                        let mut part = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                part.set(r, c, g.get(r, offset + c));
                            }
                        }
                        send(p, part);
                    }
                    offset += cols;
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn reduce_sum(v: &Tensor, axis: Axis) -> Tensor {
    let (r, c) = v.shape();
    match axis {
        Axis::All => Tensor::scalar(v.sum()),
        Axis::Rows => {
            let mut out = Tensor::zeros(1, c);
            for i in 0..r {
                for (o, x) in out.data_mut().iter_mut().zip(v.row_slice(i)) {
                    *o += x;
                }
            }
            out
        }
        Axis::Cols => {
            let data = (0..r).map(|i| v.row_slice(i).iter().sum()).collect();
            Tensor::new(r, 1, data).expect("row sums")
        }
    }
}

/// Spreads a reduced gradient back over the original shape.
fn expand(g: &Tensor, shape: (usize, usize), axis: Axis, factor: f64) -> Tensor {
    let (r, c) = shape;
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let gi = match axis {
                Axis::All => g.item(),
                Axis::Rows => g.get(0, j),
                Axis::Cols => g.get(i, 0),
            };
            out.set(i, j, gi * factor);
        }
    }
    out
}

fn zip_broadcast(g: &Tensor, b: &Tensor, k: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    match k {
        Broadcast::Same => g.zip_map(b, f),
        Broadcast::Scalar => {
            let y = b.item();
            g.map(|gi| f(gi, y))
        }
        Broadcast::Row => {
            let cols = g.cols();
            let mut out = g.clone();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o = f(*o, b.data()[i % cols]);
            }
            out
        }
    }
}

fn unbroadcast(g: Tensor, k: Broadcast) -> Tensor {
    match k {
        Broadcast::Same => g,
        Broadcast::Scalar => Tensor::scalar(g.sum()),
        Broadcast::Row => reduce_sum(&g, Axis::Rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let m = tape.leaf(t(&[vec![1.5, -2.0], vec![0.25, 7.0]]));
        let out = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(out), tape.value(m));
    }

    #[test]
    fn matmul_grad_of_sum() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::identity(2));
        let b = tape.leaf(t(&[vec![2.0, 3.0], vec![4.0, 5.0]]));
        let p = tape.matmul(a, b).unwrap();
        let s = tape.sum(p, Axis::All);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).data(), &[5.0, 9.0, 5.0, 9.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[-3.0, 3.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 3.0]);
        let h = tape.leaf(Tensor::scalar(0.5));
        let l = tape.logit(h).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn logit_rejects_endpoints() {
        let mut tape = Tape::new();
        for bad in [0.0, 1.0, -0.2, 1.5] {
            let x = tape.leaf(Tensor::scalar(bad));
            assert!(matches!(tape.logit(x), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn logit_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.25));
        let l = tape.logit(x).unwrap();
        tape.backward(l).unwrap();
        assert!((tape.grad(x).item() - 1.0 / (0.25 * 0.75)).abs() < 1e-12);
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::column(&[1.0, 2.0, 3.0]));
        let m = tape.mean(x, Axis::All);
        assert_eq!(tape.value(m).item(), 2.0);
        let ones = tape.leaf(Tensor::ones(2, 2));
        let s = tape.sum(ones, Axis::Rows);
        assert_eq!(tape.value(s).data(), &[2.0, 2.0]);
        let s = tape.sum(ones, Axis::Cols);
        assert_eq!(tape.value(s).shape(), (2, 1));

        let y = tape.leaf(Tensor::row(&[4.0, -1.0, 2.0, 0.0]));
        let m = tape.mean(y, Axis::All);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(y).data(), &[0.25; 4]);
    }

    #[test]
    fn backward_simple_losses() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 2));
        let s = tape.sum(w, Axis::All);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let w = tape.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let sq = tape.square(w);
        let s = tape.sum(sq, Axis::All);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn two_passes_double_the_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[0.3, -1.7, 2.2]));
        let w = tape.leaf(Tensor::column(&[1.1, 0.4, -0.9]));
        let h = tape.matmul(x, w).unwrap();
        let e = tape.exp(h);
        let sq = tape.square(x);
        let s1 = tape.sum(sq, Axis::All);
        let loss = tape.add(e, s1).unwrap();
        tape.backward(loss).unwrap();
        let once = tape.grad(x).clone();
        tape.zero_grad();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn bias_row_broadcast_and_bad_broadcast() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(3, 2));
        let b = tape.leaf(Tensor::row(&[1.0, 2.0]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).row_slice(2), &[2.0, 3.0]);
        let s = tape.sum(y, Axis::All);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).data(), &[3.0, 3.0]);

        let col = tape.leaf(Tensor::column(&[1.0, 2.0, 3.0]));
        assert!(tape.add(x, col).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::identity(2));
        let w = tape.leaf(Tensor::ones(2, 1));
        let p = tape.matmul(a, w).unwrap();
        let s = tape.sum(p, Axis::All);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).sum(), 0.0);
        assert_eq!(tape.grad(w).data(), &[1.0, 1.0]);
    }
}
