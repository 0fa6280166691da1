//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records a define-by-run computation graph: each operation
//! evaluates eagerly and appends one node holding its forward value and the
//! recipe for its adjoint. [`Tape::backward`] then sweeps the nodes once in
//! reverse topological order (which is simply reverse insertion order),
//! accumulating adjoints for every node including leaves.
//!
//! The primitive set is deliberately small: elementwise arithmetic, matrix
//! multiplication, an affine layer with row-broadcast bias, sine/cosine,
//! square, an overflow-safe softplus, full-tensor sum and mean, scaling by a
//! constant, and column slicing/concatenation. That is enough to express the
//! network forward pass, the DAE right-hand sides, and the collocation loss,
//! so a single code path serves training gradients and Newton Jacobians.
//!
//! NaN and infinity are propagated untouched; only structural problems
//! (shape mismatches, exact-zero denominators, non-scalar backward roots)
//! raise errors. A tape is single-threaded; concurrency, if any, happens one
//! tape per worker.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Sin(NodeId),
    Cos(NodeId),
    Square(NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by a backward sweep, indexed by the ids of the tape that
/// produced them.
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    visits: usize,
}

impl Gradients {
    /// Adjoint of the swept root with respect to the given node, if the node
    /// participated in the computation.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.get(id.0).and_then(|g| g.as_ref())
    }

    /// Number of adjoint slots visited by the sweep; equals the tape length,
    /// each node is touched exactly once.
    pub fn visits(&self) -> usize {
        self.visits
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Record a non-trainable input. Adjoints are still available on request;
    /// the distinction is purely documentary.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let value = elementwise(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let value = elementwise(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let value = elementwise(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("div", a, b)?;
        if self.value(b).data().iter().any(|&y| y == 0.0) {
            return Err(Error::DivisionByZero("elementwise div".into()));
        }
        let value = elementwise(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.push(Op::Div(a, b), value))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), value)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.value(a).map(|x| k * x);
        self.push(Op::Scale(a, k), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let value = matmul_nn(va, vb);
        Ok(self.push(Op::Matmul(a, b), value))
    }

    /// x W + b with b a single row broadcast over the rows of x W.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.cols() != vw.rows() {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: vx.shape().to_vec(),
                right: vw.shape().to_vec(),
            });
        }
        if vb.rows() != 1 || vb.cols() != vw.cols() {
            return Err(Error::ShapeMismatch {
                op: "affine bias",
                left: vw.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut value = matmul_nn(vx, vw);
        let bias = self.value(b).clone();
        for r in 0..value.rows() {
            for (v, &bb) in value.row_mut(r).iter_mut().zip(bias.data().iter()) {
                *v += bb;
            }
        }
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::sin);
        self.push(Op::Sin(a), value)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::cos);
        self.push(Op::Cos(a), value)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), value)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(softplus);
        self.push(Op::Softplus(a), value)
    }

    /// Sum of all entries, a 1x1 tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Mean of all entries, a 1x1 tensor.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum();
        let n = v.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s / n))
    }

    /// Columns start..start+len as a new tensor.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.cols() || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "column slice {start}..{} out of bounds for {} columns",
                start + len,
                v.cols()
            )));
        }
        let mut out = Tensor::zeros(v.rows(), len);
        for r in 0..v.rows() {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols { x, start, len }, out))
    }

    /// Horizontal concatenation; all inputs must share the row count.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat_cols of nothing".into()));
        }
        let rows = self.value(xs[0]).rows();
        let mut cols = 0;
        for &x in xs {
            let v = self.value(x);
            if v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![rows, self.value(xs[0]).cols()],
                    right: v.shape().to_vec(),
                });
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &x in xs {
            let v = self.value(x);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        Ok(self.push(Op::ConcatCols(xs.to_vec()), out))
    }

    /// Reverse sweep from a scalar root with seed 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let v = self.value(root);
        if !v.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                v.shape()
            )));
        }
        self.backward_seeded(root, Tensor::scalar(1.0))
    }

    /// Reverse sweep with an arbitrary seed adjoint on `root`. Used to pick
    /// out individual Jacobian rows.
    pub(crate) fn backward_seeded(&self, root: NodeId, seed: Tensor) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(
                "backward root is not a node of this tape".into(),
            ));
        }
        if seed.shape() != self.value(root).shape() {
            return Err(Error::ShapeMismatch {
                op: "backward seed",
                left: self.value(root).shape().to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[root.0] = Some(seed);
        let mut visits = 0;

        for idx in (0..=root.0).rev() {
            visits += 1;
            let Some(grad) = adjoints[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut adjoints);
            adjoints[idx] = Some(grad);
        }
        // Nodes recorded after the root cannot influence it; count them as
        // (trivially) visited so a full-tape sweep is exactly len() visits.
        visits += self.nodes.len() - root.0 - 1;
        Ok(Gradients { adjoints, visits })
    }

    fn propagate(&self, idx: usize, grad: &Tensor, adjoints: &mut [Option<Tensor>]) {
        let accumulate = |adjoints: &mut [Option<Tensor>], id: NodeId, delta: Tensor| {
            match &mut adjoints[id.0] {
                Some(t) => {
                    for (a, d) in t.data_mut().iter_mut().zip(delta.data().iter()) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adjoints, *a, grad.clone());
                accumulate(adjoints, *b, grad.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adjoints, *a, grad.clone());
                accumulate(adjoints, *b, grad.map(|g| -g));
            }
            Op::Mul(a, b) => {
                accumulate(adjoints, *a, elementwise(grad, self.value(*b), |g, y| g * y));
                accumulate(adjoints, *b, elementwise(grad, self.value(*a), |g, x| g * x));
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                accumulate(adjoints, *a, elementwise(grad, vb, |g, y| g / y));
                let va = self.value(*a);
                let mut gb = elementwise(grad, va, |g, x| -g * x);
                for (v, &y) in gb.data_mut().iter_mut().zip(vb.data().iter()) {
                    *v /= y * y;
                }
                accumulate(adjoints, *b, gb);
            }
            Op::Neg(a) => accumulate(adjoints, *a, grad.map(|g| -g)),
            Op::Scale(a, k) => {
                let k = *k;
                accumulate(adjoints, *a, grad.map(|g| k * g));
            }
            Op::Matmul(a, b) => {
                accumulate(adjoints, *a, matmul_nt(grad, self.value(*b)));
                accumulate(adjoints, *b, matmul_tn(self.value(*a), grad));
            }
            Op::Affine { x, w, b } => {
                accumulate(adjoints, *x, matmul_nt(grad, self.value(*w)));
                accumulate(adjoints, *w, matmul_tn(self.value(*x), grad));
                // Bias was broadcast over rows; its adjoint is the column sum.
                let mut gb = Tensor::zeros(1, grad.cols());
                for r in 0..grad.rows() {
                    for (acc, &g) in gb.data_mut().iter_mut().zip(grad.row(r).iter()) {
                        *acc += g;
                    }
                }
                accumulate(adjoints, *b, gb);
            }
            Op::Sin(a) => {
                accumulate(adjoints, *a, elementwise(grad, self.value(*a), |g, x| g * x.cos()));
            }
            Op::Cos(a) => {
                accumulate(adjoints, *a, elementwise(grad, self.value(*a), |g, x| -g * x.sin()));
            }
            Op::Square(a) => {
                accumulate(adjoints, *a, elementwise(grad, self.value(*a), |g, x| 2.0 * g * x));
            }
            Op::Softplus(a) => {
                accumulate(
                    adjoints,
                    *a,
                    elementwise(grad, self.value(*a), |g, x| g * sigmoid(x)),
                );
            }
            Op::Sum(a) => {
                let g = grad.get(0, 0);
                let v = self.value(*a);
                accumulate(adjoints, *a, Tensor::filled(v.rows(), v.cols(), g));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let g = grad.get(0, 0) / v.len() as f64;
                accumulate(adjoints, *a, Tensor::filled(v.rows(), v.cols(), g));
            }
            Op::SliceCols { x, start, len } => {
                let v = self.value(*x);
                let mut gx = Tensor::zeros(v.rows(), v.cols());
                for r in 0..grad.rows() {
                    gx.row_mut(r)[*start..*start + *len].copy_from_slice(grad.row(r));
                }
                accumulate(adjoints, *x, gx);
            }
            Op::ConcatCols(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let cols = self.value(x).cols();
                    let mut gx = Tensor::zeros(grad.rows(), cols);
                    for r in 0..grad.rows() {
                        gx.row_mut(r).copy_from_slice(&grad.row(r)[offset..offset + cols]);
                    }
                    accumulate(adjoints, x, gx);
                    offset += cols;
                }
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes checked")
}

/// Compare the reverse-mode gradient of a scalar-valued function against
/// central finite differences at `point`.
///
/// Returns the worst per-coordinate deviation
/// |autodiff - central| / (|central| + 1e-12).
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let y = f(&mut tape, x)?;
        if !tape.value(y).is_scalar() {
            return Err(Error::InvalidArgument(
                "grad_check target must produce a scalar".into(),
            ));
        }
        Ok(tape.value(y).get(0, 0))
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    if !tape.value(y).is_scalar() {
        return Err(Error::InvalidArgument(
            "grad_check target must produce a scalar".into(),
        ));
    }
    let grads = tape.backward(y)?;
    let g = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.rows(), point.cols()));

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let central = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let dev = (g.data()[i] - central).abs() / (central.abs() + 1e-12);
        worst = worst.max(dev);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.softplus(x);
        assert_eq!(tape.value(y).get(0, 0), 2.0f64.ln());
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().get(0, 0), 0.5);
    }

    #[test]
    fn softplus_is_overflow_safe() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(&[-800.0, 800.0]));
        let y = tape.softplus(x);
        assert_eq!(tape.value(y).get(0, 0), 0.0);
        assert_eq!(tape.value(y).get(0, 1), 800.0);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).unwrap().all_finite());
    }

    #[test]
    fn product_rule_for_sin_times_square() {
        // d/dx [sin(x) * x^2] = cos(x) x^2 + 2 x sin(x)
        for &x0 in &[-1.3, -0.2, 0.45, 2.2] {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(x0));
            let s = tape.sin(x);
            let q = tape.square(x);
            let y = tape.mul(s, q).unwrap();
            let g = tape.backward(y).unwrap();
            let expected = x0.cos() * x0 * x0 + 2.0 * x0 * x0.sin();
            assert!((g.wrt(x).unwrap().get(0, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b_data: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = Tensor::from_vec(4, 2, b_data).unwrap();
        let dev = grad_check(
            |tape, x| {
                let bb = tape.constant(b.clone());
                let y = tape.matmul(x, bb)?;
                Ok(tape.sum(y))
            },
            &Tensor::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(dev < 1e-6, "deviation {dev:.3e}");
    }

    #[test]
    fn grad_check_of_sine() {
        let dev = grad_check(
            |tape, x| Ok(tape.sin(x)),
            &Tensor::scalar(0.7),
            1e-5,
        )
        .unwrap();
        assert!(dev <= 1e-6, "deviation {dev:.3e}");
    }

    #[test]
    fn random_primitive_compositions_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..64 {
            let rows = rng.random_range(1..4usize);
            let cols = rng.random_range(1..5usize);
            let point = Tensor::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let w = Tensor::from_vec(
                cols,
                3,
                (0..cols * 3)
                    .map(|_| {
                        let sign = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
                        sign * rng.random_range(0.5..1.5)
                    })
                    .collect(),
            )
            .unwrap();
            let bias = Tensor::from_vec(1, 3, (0..3).map(|_| rng.random_range(-0.5..0.5)).collect())
                .unwrap();
            let pick = case % 4;
            let dev = grad_check(
                |tape, x| {
                    let w = tape.constant(w.clone());
                    let b = tape.constant(bias.clone());
                    let h = tape.affine(x, w, b)?;
                    let h = match pick {
                        0 => tape.sin(h),
                        1 => tape.softplus(h),
                        2 => {
                            let s = tape.sin(h);
                            tape.square(s)
                        }
                        _ => {
                            let c = tape.cos(h);
                            let s = tape.softplus(h);
                            tape.add(c, s)?
                        }
                    };
                    Ok(tape.mean(h))
                },
                &point,
                1e-5,
            )
            .unwrap();
            assert!(dev <= 1e-5, "case {case}: deviation {dev:.3e}");
        }
    }

    #[test]
    fn slice_and_concat_round_trip_gradients() {
        let point = Tensor::from_vec(2, 3, vec![0.3, -0.7, 1.1, 0.9, 0.2, -1.4]).unwrap();
        let dev = grad_check(
            |tape, x| {
                let left = tape.slice_cols(x, 0, 1)?;
                let right = tape.slice_cols(x, 1, 2)?;
                let sl = tape.sin(left);
                let glued = tape.concat_cols(&[sl, right])?;
                let sq = tape.square(glued);
                Ok(tape.sum(sq))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(dev < 1e-7, "deviation {dev:.3e}");
    }

    #[test]
    fn division_by_exact_zero_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row_vector(&[1.0, 2.0]));
        let b = tape.leaf(Tensor::row_vector(&[3.0, 0.0]));
        assert!(matches!(tape.div(a, b), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 2));
        let b = tape.sin(a);
        assert!(tape.backward(b).is_err());
    }

    #[test]
    fn backward_visits_each_node_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.4));
        let s = tape.sin(x);
        let q = tape.square(s);
        let y = tape.sum(q);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.visits(), tape.len());
    }

    #[test]
    fn gradients_accumulate_across_shared_subexpressions() {
        // y = x*x + x => dy/dx = 2x + 1, with x used by three nodes.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.7));
        let xx = tape.mul(x, x).unwrap();
        let y = tape.add(xx, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!((g.wrt(x).unwrap().get(0, 0) - (2.0 * 1.7 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn nan_propagates_unmasked() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(f64::NAN));
        let y = tape.sin(x);
        assert!(tape.value(y).get(0, 0).is_nan());
    }
}
