//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass as a node
//! in a DAG (inputs always precede outputs, so construction order is a
//! topological order). [`Tape::backward`] walks the tape once in reverse,
//! accumulating gradients additively wherever a node fans out, and deposits
//! `dLoss/dtheta` into the [`ParameterStore`] slots.
//!
//! The tape is rebuilt for every training step: the model here is small, and
//! a fresh tape keeps lifetimes and reuse rules trivial. One tape must never
//! be shared across threads; run one per worker instead.
//!
//! Only one broadcast form exists, row-vector bias addition (plus the
//! structurally similar per-row scaling used by attention); every other
//! primitive demands exact shape agreement, which turns most wiring mistakes
//! into immediate [`Error::ShapeError`]s rather than silent bugs.

mod store;

pub use store::ParameterStore;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    /// Scales row `i` of the left operand by entry `i` of an Nx1 column.
    ScaleRows(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    SoftmaxCols(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    Transpose(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sum(NodeId),
    Mse(NodeId, Tensor2),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor2,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Sigmoid with the exponent clamped far inside the double range; keeps the
/// output in (0, 1) without risking overflow on extreme pre-activations.
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-500.0, 500.0)).exp())
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

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor2) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Trainable leaf bound to a store parameter; gradients land back in the
    /// store after [`Tape::backward`].
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        Ok(self.push(Op::Param(idx), store.value_at(idx).clone()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// `a + bias` with `bias` a 1xM row broadcast down every row of `a`.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::ShapeError(format!(
                "row bias {}x{} against {}x{}",
                vb.rows(),
                vb.cols(),
                va.rows(),
                va.cols()
            )));
        }
        let value = Tensor2::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j) + vb.get(0, j));
        Ok(self.push(Op::AddRowBias(a, bias), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    /// Row-wise scaling: `out[i][j] = a[i][j] * s[i][0]`.
    pub fn scale_rows(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (va, vs) = (self.value(a), self.value(s));
        if vs.cols() != 1 || vs.rows() != va.rows() {
            return Err(Error::ShapeError(format!(
                "row scale {}x{} against {}x{}",
                vs.rows(),
                vs.cols(),
                va.rows(),
                va.cols()
            )));
        }
        let value = Tensor2::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j) * vs.get(i, 0));
        Ok(self.push(Op::ScaleRows(a, s), value))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    /// Column-wise softmax, stabilized by max subtraction: every column of
    /// the output is positive and sums to one.
    pub fn softmax_cols(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let mut value = Tensor2::zeros(rows, cols);
        for j in 0..cols {
            let mut hi = f64::NEG_INFINITY;
            for i in 0..rows {
                hi = hi.max(va.get(i, j));
            }
            let mut total = 0.0;
            for i in 0..rows {
                let e = (va.get(i, j) - hi).exp();
                value.set(i, j, e);
                total += e;
            }
            for i in 0..rows {
                value.set(i, j, value.get(i, j) / total);
            }
        }
        self.push(Op::SoftmaxCols(a), value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptySequence("concat of zero tensors".into()));
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::ShapeError("concat_cols row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Tensor2::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            for i in 0..rows {
                for j in 0..vp.cols() {
                    value.set(i, offset + j, vp.get(i, j));
                }
            }
            offset += vp.cols();
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start >= end || end > va.cols() {
            return Err(Error::ShapeError(format!(
                "slice [{start}, {end}) of {} columns",
                va.cols()
            )));
        }
        let value = Tensor2::from_fn(va.rows(), end - start, |i, j| va.get(i, start + j));
        Ok(self.push(Op::SliceCols(a, start, end), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|v| v + c);
        self.push(Op::AddScalar(a), value)
    }

    /// `1 - a`, used for the GRU update-gate mix.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor2::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Mean squared error against a constant target; yields a 1x1 node.
    pub fn mse(&mut self, pred: NodeId, target: &Tensor2) -> Result<NodeId> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return Err(Error::ShapeError(format!(
                "mse prediction {:?} vs target {:?}",
                vp.shape(),
                target.shape()
            )));
        }
        let n = (vp.rows() * vp.cols()) as f64;
        let sse: f64 = vp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let value = Tensor2::scalar(sse / n);
        Ok(self.push(Op::Mse(pred, target.clone()), value))
    }

    /// Mean of several 1x1 nodes, the batch-loss reduction.
    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptySequence("mean of zero scalars".into()));
        }
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p)?;
        }
        Ok(self.scale(acc, 1.0 / parts.len() as f64))
    }

    /// Propagates `dLoss/d(node)` from a scalar loss back to every parameter
    /// leaf, writing gradients into the store (zero for parameters the loss
    /// does not reach). Consumes the tape: a second call fails.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParameterStore) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(Error::EmptyInput("empty tape".into()));
        }
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(Error::ShapeError(format!(
                "backward needs a scalar loss, got {:?}",
                loss_value.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::Param(p) => store.accumulate_grad(*p, &grad)?,
                Op::MatMul(a, b) => {
                    let da = grad.matmul(&self.nodes[b.0].value.transpose())?;
                    let db = self.nodes[a.0].value.transpose().matmul(&grad)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone())?;
                    accumulate(&mut grads, *b, grad)?;
                }
                Op::AddRowBias(a, bias) => {
                    let cols = grad.cols();
                    let mut db = Tensor2::zeros(1, cols);
                    for i in 0..grad.rows() {
                        for j in 0..cols {
                            db.set(0, j, db.get(0, j) + grad.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *a, grad)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::Hadamard(a, b) => {
                    let da = grad.hadamard(&self.nodes[b.0].value)?;
                    let db = grad.hadamard(&self.nodes[a.0].value)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::ScaleRows(a, s) => {
                    let va = &self.nodes[a.0].value;
                    let vs = &self.nodes[s.0].value;
                    let da = Tensor2::from_fn(grad.rows(), grad.cols(), |i, j| {
                        grad.get(i, j) * vs.get(i, 0)
                    });
                    let ds = Tensor2::from_fn(grad.rows(), 1, |i, _| {
                        (0..grad.cols()).map(|j| grad.get(i, j) * va.get(i, j)).sum()
                    });
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *s, ds)?;
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    let da = grad.zip_map(y, |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let da = grad.zip_map(y, |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = grad.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, *a, da)?;
                }
                Op::SoftmaxCols(a) => {
                    let y = &self.nodes[id].value;
                    let (rows, cols) = y.shape();
                    let mut da = Tensor2::zeros(rows, cols);
                    for j in 0..cols {
                        let dot: f64 = (0..rows).map(|i| y.get(i, j) * grad.get(i, j)).sum();
                        for i in 0..rows {
                            da.set(i, j, y.get(i, j) * (grad.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let dp = Tensor2::from_fn(grad.rows(), w, |i, j| grad.get(i, offset + j));
                        accumulate(&mut grads, p, dp)?;
                        offset += w;
                    }
                }
                Op::SliceCols(a, start, _end) => {
                    let va = &self.nodes[a.0].value;
                    let (rows, cols) = va.shape();
                    let start = *start;
                    let mut da = Tensor2::zeros(rows, cols);
                    for i in 0..grad.rows() {
                        for j in 0..grad.cols() {
                            da.set(i, start + j, grad.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, grad.transpose())?;
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, grad.scale(*c))?;
                }
                Op::AddScalar(a) => {
                    accumulate(&mut grads, *a, grad)?;
                }
                Op::Sum(a) => {
                    let g = grad.item()?;
                    let shape = self.nodes[a.0].value.shape();
                    let da = Tensor2::from_fn(shape.0, shape.1, |_, _| g);
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Mse(pred, target) => {
                    let g = grad.item()?;
                    let vp = &self.nodes[pred.0].value;
                    let n = (vp.rows() * vp.cols()) as f64;
                    let da = vp.zip_map(target, |p, t| g * 2.0 * (p - t) / n)?;
                    accumulate(&mut grads, *pred, da)?;
                }
            }
        }
        store.fill_missing_grads();
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: NodeId, delta: Tensor2) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(11);
        Tensor2::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
    }

    #[test]
    fn forward_primitive_values() {
        let mut tape = Tape::new();
        let x = tape.constant(fixture(3, 2, 1));
        let i = tape.constant(Tensor2::identity(3));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let z = tape.constant(Tensor2::zeros(1, 3));
        let s = tape.sigmoid(z);
        assert!(tape.value(s).data().iter().all(|v| *v == 0.5));
        let t = tape.tanh(z);
        assert!(tape.value(t).data().iter().all(|v| *v == 0.0));

        let sm = tape.softmax_cols(z);
        // softmax_cols of a 1x3 has singleton columns.
        assert!(tape.value(sm).data().iter().all(|v| *v == 1.0));
        let zc = tape.transpose(z);
        let smc = tape.softmax_cols(zc);
        for v in tape.value(smc).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let p = tape.constant(Tensor2::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
        let loss = tape.mse(p, &Tensor2::from_vec(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 0.0);
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(fixture(7, 4, 3).scale(40.0));
        let y = tape.softmax_cols(x);
        let v = tape.value(y);
        for j in 0..4 {
            let total: f64 = (0..7).map(|i| v.get(i, j)).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((0..7).all(|i| v.get(i, j) > 0.0));
        }
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut store = ParameterStore::new();
        store.insert("w", fixture(2, 2, 5)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        let grad = store.grad("w").unwrap();
        assert!(grad.data().iter().all(|v| *v == 1.0));
    }

    /// Central finite differences around the current parameter values.
    fn finite_difference(
        store: &mut ParameterStore,
        name: &str,
        mut loss_of: impl FnMut(&ParameterStore) -> f64,
    ) -> Tensor2 {
        let h = 1e-5;
        let shape = store.get(name).unwrap().shape();
        let mut out = Tensor2::zeros(shape.0, shape.1);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let original = store.get(name).unwrap().get(i, j);
                store.get_mut(name).unwrap().set(i, j, original + h);
                let up = loss_of(store);
                store.get_mut(name).unwrap().set(i, j, original - h);
                let down = loss_of(store);
                store.get_mut(name).unwrap().set(i, j, original);
                out.set(i, j, (up - down) / (2.0 * h));
            }
        }
        out
    }

    fn assert_close_rel(got: &Tensor2, want: &Tensor2, tol: f64) {
        for (g, w) in got.data().iter().zip(want.data()) {
            let denom = g.abs().max(w.abs()).max(1e-6);
            assert!(
                ((g - w).abs() / denom) < tol,
                "gradient mismatch: {g} vs {w}"
            );
        }
    }

    #[test]
    fn linear_mse_gradient_matches_finite_differences() {
        let mut store = ParameterStore::new();
        store.insert("w", fixture(2, 2, 7)).unwrap();
        let x = fixture(2, 2, 8);
        let y = fixture(2, 2, 9);

        let loss_of = |s: &ParameterStore| {
            let mut tape = Tape::new();
            let w = tape.param(s, "w").unwrap();
            let xc = tape.constant(x.clone());
            let pred = tape.matmul(w, xc).unwrap();
            let loss = tape.mse(pred, &y).unwrap();
            tape.value(loss).item().unwrap()
        };

        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let xc = tape.constant(x.clone());
        let pred = tape.matmul(w, xc).unwrap();
        let loss = tape.mse(pred, &y).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let got = store.grad("w").unwrap().clone();
        let want = finite_difference(&mut store, "w", loss_of);
        assert_close_rel(&got, &want, 1e-4);
    }

    #[test]
    fn fan_out_gradient_sums_branches() {
        // w is used twice; the finite-difference oracle sees the composite.
        let mut store = ParameterStore::new();
        store.insert("w", fixture(2, 2, 21)).unwrap();
        let x1 = fixture(2, 2, 22);
        let x2 = fixture(2, 2, 23);
        let y = fixture(2, 2, 24);

        let loss_of = |s: &ParameterStore| {
            let mut tape = Tape::new();
            let w = tape.param(s, "w").unwrap();
            let a = tape.constant(x1.clone());
            let b = tape.constant(x2.clone());
            let p1 = tape.matmul(w, a).unwrap();
            let p2 = tape.matmul(w, b).unwrap();
            let p = tape.add(p1, p2).unwrap();
            let loss = tape.mse(p, &y).unwrap();
            tape.value(loss).item().unwrap()
        };

        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let a = tape.constant(x1.clone());
        let b = tape.constant(x2.clone());
        let p1 = tape.matmul(w, a).unwrap();
        let p2 = tape.matmul(w, b).unwrap();
        let p = tape.add(p1, p2).unwrap();
        let loss = tape.mse(p, &y).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let got = store.grad("w").unwrap().clone();
        let want = finite_difference(&mut store, "w", loss_of);
        assert_close_rel(&got, &want, 1e-4);
    }

    #[test]
    fn mixed_primitive_chain_matches_finite_differences() {
        // Exercises sigmoid/tanh/relu/softmax/concat/slice/scale_rows together.
        let mut store = ParameterStore::new();
        store.insert("w", fixture(4, 3, 31)).unwrap();
        store.insert("b", fixture(1, 3, 32)).unwrap();
        let x = fixture(5, 4, 33);
        let s = fixture(5, 1, 34);
        let y = fixture(5, 2, 35);

        let build = |tape: &mut Tape, st: &ParameterStore| -> NodeId {
            let w = tape.param(st, "w").unwrap();
            let b = tape.param(st, "b").unwrap();
            let xc = tape.constant(x.clone());
            let sc = tape.constant(s.clone());
            let lin = tape.matmul(xc, w).unwrap();
            let lin = tape.add_row_bias(lin, b).unwrap();
            let t = tape.tanh(lin);
            let g = tape.sigmoid(lin);
            let mix = tape.hadamard(t, g).unwrap();
            let r = tape.relu(mix);
            let sm = tape.softmax_cols(r);
            let cat = tape.concat_cols(&[sm, r]).unwrap();
            let sl = tape.slice_cols(cat, 1, 3).unwrap();
            let scaled = tape.scale_rows(sl, sc).unwrap();
            tape.mse(scaled, &y).unwrap()
        };

        let loss_of = |st: &ParameterStore| {
            let mut tape = Tape::new();
            let loss = build(&mut tape, st);
            tape.value(loss).item().unwrap()
        };

        let mut tape = Tape::new();
        let loss = build(&mut tape, &store);
        tape.backward(loss, &mut store).unwrap();
        for name in ["w", "b"] {
            let got = store.grad(name).unwrap().clone();
            let want = finite_difference(&mut store, name, loss_of);
            assert_close_rel(&got, &want, 1e-4);
        }
    }

    #[test]
    fn gradient_accumulation_is_linear() {
        // grad(a*f + b*g) = a*grad(f) + b*grad(g) on a shared parameter.
        let mut store = ParameterStore::new();
        store.insert("w", fixture(3, 3, 41)).unwrap();
        let x = fixture(3, 3, 42);
        let y1 = fixture(3, 3, 43);
        let y2 = fixture(3, 3, 44);
        let (a, b) = (0.7, -1.3);

        let grad_of = |st: &mut ParameterStore, which: u8| -> Tensor2 {
            let mut tape = Tape::new();
            let w = tape.param(st, "w").unwrap();
            let xc = tape.constant(x.clone());
            let p = tape.matmul(w, xc).unwrap();
            let f = tape.mse(p, &y1).unwrap();
            let g = tape.mse(p, &y2).unwrap();
            let loss = match which {
                0 => f,
                1 => g,
                _ => {
                    let fa = tape.scale(f, a);
                    let gb = tape.scale(g, b);
                    tape.add(fa, gb).unwrap()
                }
            };
            tape.backward(loss, st).unwrap();
            let out = st.grad("w").unwrap().clone();
            st.zero_grads();
            out
        };

        let gf = grad_of(&mut store, 0);
        let gg = grad_of(&mut store, 1);
        let gmix = grad_of(&mut store, 2);
        let want = gf.scale(a).add(&gg.scale(b)).unwrap();
        assert!(gmix.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", fixture(1, 1, 51)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        assert!(matches!(
            tape.backward(loss, &mut store),
            Err(Error::TapeConsumed)
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut store = ParameterStore::new();
        store.insert("w", fixture(2, 2, 52)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        assert!(matches!(
            tape.backward(w, &mut store),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor2::zeros(2, 3));
        let b = tape.constant(Tensor2::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeError(_))));
        let c = tape.constant(Tensor2::zeros(3, 2));
        assert!(matches!(tape.add(a, c), Err(Error::ShapeError(_))));
        let bias = tape.constant(Tensor2::zeros(1, 4));
        assert!(matches!(tape.add_row_bias(a, bias), Err(Error::ShapeError(_))));
    }

    #[test]
    fn primitives_stay_finite_on_extreme_inputs() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor2::from_vec(1, 4, vec![-1e300, -708.0, 708.0, 1e300]).unwrap());
        let s = tape.sigmoid(x);
        assert!(tape.value(s).is_finite());
        let t = tape.tanh(x);
        assert!(tape.value(t).is_finite());
        let xc = tape.transpose(x);
        let sm = tape.softmax_cols(xc);
        assert!(tape.value(sm).is_finite());
    }
}
