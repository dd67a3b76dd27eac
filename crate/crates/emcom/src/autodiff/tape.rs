//! The op tape: forward recording and reverse-order gradient replay.

use super::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

/// Forward op kinds exposed through the generic [`Tape::forward_op`]
/// dispatcher. The builder methods on [`Tape`] are the primary API; this enum
/// exists so callers can drive the engine data-directed (tests, fuzzing).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    MulElem,
    Scale,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    LogSoftmax,
    GatherRow,
    Concat,
    Sum,
    Mean,
    Square,
    Dot,
}

enum Op<S: Scalar> {
    Leaf,
    /// a[m,k] @ b[k,n]
    Matmul(ValueId, ValueId),
    /// a[m,k] @ b[n,k]^T — the layout used by linear layers (weight stored
    /// as [out, in]).
    MatmulTB(ValueId, ValueId),
    /// Same shape, or bias broadcast [r,n] + [n].
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    MulElem(ValueId, ValueId),
    Scale(ValueId, S),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Exp(ValueId),
    Relu(ValueId),
    Softmax(ValueId),
    LogSoftmax(ValueId),
    /// Rows of a table selected by index; backward scatter-adds.
    GatherRows(ValueId, Vec<usize>),
    ConcatCols(ValueId, ValueId),
    SliceCols(ValueId, usize, usize),
    Sum(ValueId),
    Mean(ValueId),
    SumRows(ValueId),
    Square(ValueId),
    Dot(ValueId, ValueId),
    /// One element per row: out[r] = a[r, idx[r]].
    TakePerRow(ValueId, Vec<usize>),
    /// out[b, c] = a.row(b) . b.row(b*group + c)
    BatchedDot(ValueId, ValueId, usize),
    /// Rowwise x / max(||x||, eps); saved norms for backward.
    L2NormalizeRows(ValueId, S, Vec<S>),
    Reshape(ValueId),
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Tensor<S>,
    requires_grad: bool,
}

/// Records forward ops in order; `backward` replays them strictly in reverse.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    spent: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf; gradients flow to it iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> ValueId {
        let rg = tensor.requires_grad;
        self.push(Op::Leaf, tensor, rg)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, tensor: Tensor<S>) -> ValueId {
        self.push(Op::Leaf, tensor, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, requires_grad: bool) -> ValueId {
        assert!(
            !self.spent,
            "tape already consumed by backward; build a new tape for another pass"
        );
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn rg(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ---- forward ops -----------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_matrix(ta, "matmul lhs");
        let (k2, n) = as_matrix(tb, "matmul rhs");
        assert_eq!(
            k,
            k2,
            "matmul: inner dims differ, lhs {:?} rhs {:?}",
            ta.shape(),
            tb.shape()
        );
        let mut out = Tensor::zeros(vec![m, n]);
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::ONE,
                ta.data().as_ptr(),
                k as isize,
                1,
                tb.data().as_ptr(),
                n as isize,
                1,
                S::ZERO,
                out.data_mut().as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Matmul(a, b), out, rg)
    }

    /// `a @ b^T` where `b` is stored row-major as [n, k].
    pub fn matmul_tb(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_matrix(ta, "matmul_tb lhs");
        let (n, k2) = as_matrix(tb, "matmul_tb rhs");
        assert_eq!(
            k,
            k2,
            "matmul_tb: inner dims differ, lhs {:?} rhs {:?}",
            ta.shape(),
            tb.shape()
        );
        let mut out = Tensor::zeros(vec![m, n]);
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::ONE,
                ta.data().as_ptr(),
                k as isize,
                1,
                tb.data().as_ptr(),
                1,
                k as isize,
                S::ZERO,
                out.data_mut().as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatmulTB(a, b), out, rg)
    }

    /// Elementwise add; also accepts a bias vector broadcast over rows.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| *x + *y)
                .collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.shape().len() == 1 && tb.last_dim() == ta.last_dim() {
            // bias broadcast: [r, n] + [n]
            let n = ta.last_dim();
            let mut data = ta.data().to_vec();
            for (i, v) in data.iter_mut().enumerate() {
                *v += tb.data()[i % n];
            }
            Tensor::new(ta.shape().to_vec(), data)
        } else {
            panic!(
                "add: shape mismatch {:?} vs {:?} (only bias-vector broadcast allowed)",
                ta.shape(),
                tb.shape()
            );
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), out, rg)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "sub: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| *x - *y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), out, rg)
    }

    pub fn mul_elem(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "mul_elem: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MulElem(a, b), out, rg)
    }

    pub fn scale(&mut self, a: ValueId, c: S) -> ValueId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| *x * c).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), out, rg)
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.tanh()).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Tanh(a), out, rg)
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.exp()).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Exp(a), out, rg)
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let one = S::ONE;
        let data = ta
            .data()
            .iter()
            .map(|x| one / (one + (-*x).exp()))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), out, rg)
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|x| if *x > S::ZERO { *x } else { S::ZERO })
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Relu(a), out, rg)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let n = ta.last_dim();
        let mut data = vec![S::ZERO; ta.numel()];
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let mut max = row[0];
            for v in row {
                max = max.maximum(*v);
            }
            let mut sum = S::ZERO;
            for (j, v) in row.iter().enumerate() {
                let e = (*v - max).exp();
                data[r * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[r * n + j] = data[r * n + j] / sum;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Softmax(a), out, rg)
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let n = ta.last_dim();
        let mut data = vec![S::ZERO; ta.numel()];
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let mut max = row[0];
            for v in row {
                max = max.maximum(*v);
            }
            let mut sum = S::ZERO;
            for v in row {
                sum += (*v - max).exp();
            }
            let log_z = max + sum.ln();
            for j in 0..n {
                data[r * n + j] = row[j] - log_z;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::LogSoftmax(a), out, rg)
    }

    /// Select table rows by index (embedding lookup). Backward scatter-adds
    /// into a zero tensor of the table's shape.
    pub fn gather_rows(&mut self, table: ValueId, indices: &[usize]) -> ValueId {
        let tt = self.value(table);
        let (rows, dim) = as_matrix(tt, "gather_rows table");
        assert!(!indices.is_empty(), "gather_rows: empty index list");
        for &i in indices {
            assert!(
                i < rows,
                "gather_rows: index {i} out of range for {rows} rows"
            );
        }
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::new(vec![indices.len(), dim], data);
        let rg = self.rg(table);
        self.push(Op::GatherRows(table, indices.to_vec()), out, rg)
    }

    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r1, n1) = as_matrix(ta, "concat lhs");
        let (r2, n2) = as_matrix(tb, "concat rhs");
        assert_eq!(
            r1,
            r2,
            "concat: row counts differ, {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let mut data = Vec::with_capacity(r1 * (n1 + n2));
        for r in 0..r1 {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::new(vec![r1, n1 + n2], data);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::ConcatCols(a, b), out, rg)
    }

    /// Columns [start, end) of a matrix.
    pub fn slice_cols(&mut self, a: ValueId, start: usize, end: usize) -> ValueId {
        let ta = self.value(a);
        let (rows, n) = as_matrix(ta, "slice_cols");
        assert!(
            start < end && end <= n,
            "slice_cols: [{start}, {end}) out of range for width {n}"
        );
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, w], data);
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start, end), out, rg)
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let total: S = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(total), rg)
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let total: S = ta.data().iter().copied().sum();
        let m = total / S::from_f64(ta.numel() as f64);
        let rg = self.rg(a);
        self.push(Op::Mean(a), Tensor::scalar(m), rg)
    }

    /// Sum over the last axis: [r, n] -> [r].
    pub fn sum_rows(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let (rows, _) = as_matrix(ta, "sum_rows");
        let data = (0..rows).map(|r| ta.row(r).iter().copied().sum()).collect();
        let out = Tensor::new(vec![rows], data);
        let rg = self.rg(a);
        self.push(Op::SumRows(a), out, rg)
    }

    pub fn square(&mut self, a: ValueId) -> ValueId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| *x * *x).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Square(a), out, rg)
    }

    /// Inner product of two equal-length tensors (flattened).
    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.numel(),
            tb.numel(),
            "dot: length mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let mut acc = S::ZERO;
        for (x, y) in ta.data().iter().zip(tb.data()) {
            acc += *x * *y;
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Dot(a, b), Tensor::scalar(acc), rg)
    }

    /// out[r] = a[r, idx[r]] — per-row element selection.
    pub fn take_per_row(&mut self, a: ValueId, indices: &[usize]) -> ValueId {
        let ta = self.value(a);
        let (rows, n) = as_matrix(ta, "take_per_row");
        assert_eq!(
            indices.len(),
            rows,
            "take_per_row: {} indices for {rows} rows",
            indices.len()
        );
        for &i in indices {
            assert!(i < n, "take_per_row: column {i} out of range for width {n}");
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| ta.row(r)[i])
            .collect();
        let out = Tensor::new(vec![rows], data);
        let rg = self.rg(a);
        self.push(Op::TakePerRow(a, indices.to_vec()), out, rg)
    }

    /// out[b, c] = a.row(b) . flat.row(b * group + c). Computes one score per
    /// (row, group member) pair; used for per-episode candidate scoring.
    pub fn batched_dot(&mut self, a: ValueId, flat: ValueId, group: usize) -> ValueId {
        let (ta, tf) = (self.value(a), self.value(flat));
        let (b, e) = as_matrix(ta, "batched_dot lhs");
        let (rows, e2) = as_matrix(tf, "batched_dot rhs");
        assert_eq!(e, e2, "batched_dot: feature dims differ {e} vs {e2}");
        assert_eq!(
            rows,
            b * group,
            "batched_dot: rhs has {rows} rows, expected {b} * {group}"
        );
        let mut data = vec![S::ZERO; b * group];
        for i in 0..b {
            let av = ta.row(i);
            for c in 0..group {
                let fv = tf.row(i * group + c);
                let mut acc = S::ZERO;
                for (x, y) in av.iter().zip(fv) {
                    acc += *x * *y;
                }
                data[i * group + c] = acc;
            }
        }
        let out = Tensor::new(vec![b, group], data);
        let rg = self.rg(a) || self.rg(flat);
        self.push(Op::BatchedDot(a, flat, group), out, rg)
    }

    /// Rowwise x / max(||x||_2, eps).
    pub fn l2_normalize_rows(&mut self, a: ValueId, eps: S) -> ValueId {
        let ta = self.value(a);
        let (rows, n) = as_matrix(ta, "l2_normalize_rows");
        let mut norms = Vec::with_capacity(rows);
        let mut data = vec![S::ZERO; ta.numel()];
        for r in 0..rows {
            let row = ta.row(r);
            let mut sq = S::ZERO;
            for v in row {
                sq += *v * *v;
            }
            let norm = sq.sqrt().maximum(eps);
            norms.push(norm);
            for j in 0..n {
                data[r * n + j] = row[j] / norm;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::L2NormalizeRows(a, eps, norms), out, rg)
    }

    /// Shape reinterpretation; gradient-transparent.
    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> ValueId {
        let out = self.value(a).reshaped(shape);
        let rg = self.rg(a);
        self.push(Op::Reshape(a), out, rg)
    }

    /// Data-directed dispatcher over the basic op set. Parameterized ops take
    /// their parameter as a trailing tensor input (scale factor, gather
    /// indices).
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[ValueId]) -> ValueId {
        let need = |n: usize| {
            assert_eq!(
                inputs.len(),
                n,
                "forward_op {kind:?}: expected {n} inputs, got {}",
                inputs.len()
            );
        };
        match kind {
            OpKind::Matmul => {
                need(2);
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                need(2);
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                need(2);
                self.sub(inputs[0], inputs[1])
            }
            OpKind::MulElem => {
                need(2);
                self.mul_elem(inputs[0], inputs[1])
            }
            OpKind::Scale => {
                need(2);
                let c = self.value(inputs[1]).item();
                self.scale(inputs[0], c)
            }
            OpKind::Tanh => {
                need(1);
                self.tanh(inputs[0])
            }
            OpKind::Sigmoid => {
                need(1);
                self.sigmoid(inputs[0])
            }
            OpKind::Relu => {
                need(1);
                self.relu(inputs[0])
            }
            OpKind::Softmax => {
                need(1);
                self.softmax(inputs[0])
            }
            OpKind::LogSoftmax => {
                need(1);
                self.log_softmax(inputs[0])
            }
            OpKind::GatherRow => {
                need(2);
                let idx: Vec<usize> = self
                    .value(inputs[1])
                    .data()
                    .iter()
                    .map(|v| v.to_f64() as usize)
                    .collect();
                self.gather_rows(inputs[0], &idx)
            }
            OpKind::Concat => {
                need(2);
                self.concat_cols(inputs[0], inputs[1])
            }
            OpKind::Sum => {
                need(1);
                self.sum(inputs[0])
            }
            OpKind::Mean => {
                need(1);
                self.mean(inputs[0])
            }
            OpKind::Square => {
                need(1);
                self.square(inputs[0])
            }
            OpKind::Dot => {
                need(2);
                self.dot(inputs[0], inputs[1])
            }
        }
    }

    // ---- backward --------------------------------------------------------

    /// Gradients of a scalar root w.r.t. every `requires_grad` node, by
    /// replaying the tape in exact reverse order. Consumes the tape's
    /// differentiability: a second backward without a fresh forward panics.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&mut self, root: ValueId) -> Gradients<S> {
        assert!(
            !self.spent,
            "backward called twice on the same tape; re-run the forward pass"
        );
        assert!(
            self.value(root).is_scalar(),
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        self.spent = true;

        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(S::ONE));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    #[allow(clippy::needless_range_loop)]
    fn accumulate_inputs(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        // Adds `g`'s contribution to each differentiable input of node `i`.
        let val = |id: ValueId| &self.nodes[id.0].value;
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = as_matrix(val(*a), "matmul lhs");
                let n = val(*b).last_dim();
                if self.rg(*a) {
                    // dA += G @ B^T
                    let ga = ensure(grads, a.0, val(*a).shape());
                    unsafe {
                        S::gemm(
                            m,
                            n,
                            k,
                            S::ONE,
                            g.data().as_ptr(),
                            n as isize,
                            1,
                            val(*b).data().as_ptr(),
                            1,
                            n as isize,
                            S::ONE,
                            ga.data_mut().as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if self.rg(*b) {
                    // dB += A^T @ G
                    let gb = ensure(grads, b.0, val(*b).shape());
                    unsafe {
                        S::gemm(
                            k,
                            m,
                            n,
                            S::ONE,
                            val(*a).data().as_ptr(),
                            1,
                            k as isize,
                            g.data().as_ptr(),
                            n as isize,
                            1,
                            S::ONE,
                            gb.data_mut().as_mut_ptr(),
                            n as isize,
                            1,
                        );
                    }
                }
            }
            Op::MatmulTB(a, b) => {
                let (m, k) = as_matrix(val(*a), "matmul_tb lhs");
                let n = val(*b).shape()[0];
                if self.rg(*a) {
                    // dA += G @ B
                    let ga = ensure(grads, a.0, val(*a).shape());
                    unsafe {
                        S::gemm(
                            m,
                            n,
                            k,
                            S::ONE,
                            g.data().as_ptr(),
                            n as isize,
                            1,
                            val(*b).data().as_ptr(),
                            k as isize,
                            1,
                            S::ONE,
                            ga.data_mut().as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if self.rg(*b) {
                    // dB += G^T @ A
                    let gb = ensure(grads, b.0, val(*b).shape());
                    unsafe {
                        S::gemm(
                            n,
                            m,
                            k,
                            S::ONE,
                            g.data().as_ptr(),
                            1,
                            n as isize,
                            val(*a).data().as_ptr(),
                            k as isize,
                            1,
                            S::ONE,
                            gb.data_mut().as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    add_into(ensure(grads, a.0, val(*a).shape()), g.data());
                }
                if self.rg(*b) {
                    let tb_shape_len = val(*b).shape().len();
                    if val(*b).shape() == val(*a).shape() {
                        add_into(ensure(grads, b.0, val(*b).shape()), g.data());
                    } else {
                        // bias broadcast: sum over rows
                        debug_assert_eq!(tb_shape_len, 1);
                        let n = val(*b).last_dim();
                        let gb = ensure(grads, b.0, val(*b).shape());
                        for (idx, v) in g.data().iter().enumerate() {
                            gb.data_mut()[idx % n] += *v;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    add_into(ensure(grads, a.0, val(*a).shape()), g.data());
                }
                if self.rg(*b) {
                    let gb = ensure(grads, b.0, val(*b).shape());
                    for (dst, v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *dst -= *v;
                    }
                }
            }
            Op::MulElem(a, b) => {
                if self.rg(*a) {
                    let gb = val(*b).data().to_vec();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for ((dst, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(&gb) {
                        *dst += *gv * *bv;
                    }
                }
                if self.rg(*b) {
                    let av = val(*a).data().to_vec();
                    let gbuf = ensure(grads, b.0, val(*b).shape());
                    for ((dst, gv), a_) in gbuf.data_mut().iter_mut().zip(g.data()).zip(&av) {
                        *dst += *gv * *a_;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    let c = *c;
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for (dst, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *dst += *gv * c;
                    }
                }
            }
            Op::Tanh(a) => {
                if self.rg(*a) {
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for ((dst, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *dst += *gv * (S::ONE - *y * *y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.rg(*a) {
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for ((dst, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *dst += *gv * *y * (S::ONE - *y);
                    }
                }
            }
            Op::Exp(a) => {
                if self.rg(*a) {
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for ((dst, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *dst += *gv * *y;
                    }
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let xs = val(*a).data().to_vec();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for ((dst, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(&xs) {
                        if *x > S::ZERO {
                            *dst += *gv;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if self.rg(*a) {
                    let n = out.last_dim();
                    let rows = out.rows();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for r in 0..rows {
                        let y = out.row(r);
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let mut gy = S::ZERO;
                        for (gv, yv) in gr.iter().zip(y) {
                            gy += *gv * *yv;
                        }
                        for j in 0..n {
                            ga.data_mut()[r * n + j] += y[j] * (gr[j] - gy);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if self.rg(*a) {
                    let n = out.last_dim();
                    let rows = out.rows();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for r in 0..rows {
                        let y = out.row(r);
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let gsum: S = gr.iter().copied().sum();
                        for j in 0..n {
                            ga.data_mut()[r * n + j] += gr[j] - y[j].exp() * gsum;
                        }
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                if self.rg(*table) {
                    let dim = out.last_dim();
                    let gt = ensure(grads, table.0, val(*table).shape());
                    for (r, &idx) in indices.iter().enumerate() {
                        let src = &g.data()[r * dim..(r + 1) * dim];
                        let dst = &mut gt.data_mut()[idx * dim..(idx + 1) * dim];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let n1 = val(*a).last_dim();
                let n2 = val(*b).last_dim();
                let rows = out.rows();
                if self.rg(*a) {
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for r in 0..rows {
                        let src = &g.data()[r * (n1 + n2)..r * (n1 + n2) + n1];
                        let dst = &mut ga.data_mut()[r * n1..(r + 1) * n1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
                if self.rg(*b) {
                    let gb = ensure(grads, b.0, val(*b).shape());
                    for r in 0..rows {
                        let src = &g.data()[r * (n1 + n2) + n1..(r + 1) * (n1 + n2)];
                        let dst = &mut gb.data_mut()[r * n2..(r + 1) * n2];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
            Op::SliceCols(a, start, _end) => {
                if self.rg(*a) {
                    let (rows, w) = (out.rows(), out.last_dim());
                    let n = val(*a).last_dim();
                    let start = *start;
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for r in 0..rows {
                        let src = &g.data()[r * w..(r + 1) * w];
                        let dst = &mut ga.data_mut()[r * n + start..r * n + start + w];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let gv = g.item();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for dst in ga.data_mut() {
                        *dst += gv;
                    }
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let gv = g.item() / S::from_f64(val(*a).numel() as f64);
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for dst in ga.data_mut() {
                        *dst += gv;
                    }
                }
            }
            Op::SumRows(a) => {
                if self.rg(*a) {
                    let n = val(*a).last_dim();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for (idx, dst) in ga.data_mut().iter_mut().enumerate() {
                        *dst += g.data()[idx / n];
                    }
                }
            }
            Op::Square(a) => {
                if self.rg(*a) {
                    let xs = val(*a).data().to_vec();
                    let two = S::from_f64(2.0);
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for ((dst, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(&xs) {
                        *dst += two * *x * *gv;
                    }
                }
            }
            Op::Dot(a, b) => {
                let gv = g.item();
                if self.rg(*a) {
                    let bs = val(*b).data().to_vec();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for (dst, bv) in ga.data_mut().iter_mut().zip(&bs) {
                        *dst += gv * *bv;
                    }
                }
                if self.rg(*b) {
                    let avs = val(*a).data().to_vec();
                    let gb = ensure(grads, b.0, val(*b).shape());
                    for (dst, av) in gb.data_mut().iter_mut().zip(&avs) {
                        *dst += gv * *av;
                    }
                }
            }
            Op::TakePerRow(a, indices) => {
                if self.rg(*a) {
                    let n = val(*a).last_dim();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for (r, &idx) in indices.iter().enumerate() {
                        ga.data_mut()[r * n + idx] += g.data()[r];
                    }
                }
            }
            Op::BatchedDot(a, flat, group) => {
                let e = val(*a).last_dim();
                let b_rows = val(*a).rows();
                let group = *group;
                if self.rg(*a) {
                    let fv = val(*flat).data().to_vec();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for i in 0..b_rows {
                        for c in 0..group {
                            let gv = g.data()[i * group + c];
                            let frow = &fv[(i * group + c) * e..(i * group + c + 1) * e];
                            let dst = &mut ga.data_mut()[i * e..(i + 1) * e];
                            for (d, f) in dst.iter_mut().zip(frow) {
                                *d += gv * *f;
                            }
                        }
                    }
                }
                if self.rg(*flat) {
                    let av = val(*a).data().to_vec();
                    let gf = ensure(grads, flat.0, val(*flat).shape());
                    for i in 0..b_rows {
                        let arow = &av[i * e..(i + 1) * e];
                        for c in 0..group {
                            let gv = g.data()[i * group + c];
                            let dst =
                                &mut gf.data_mut()[(i * group + c) * e..(i * group + c + 1) * e];
                            for (d, a_) in dst.iter_mut().zip(arow) {
                                *d += gv * *a_;
                            }
                        }
                    }
                }
            }
            Op::L2NormalizeRows(a, eps, norms) => {
                if self.rg(*a) {
                    let n = out.last_dim();
                    let rows = out.rows();
                    let eps = *eps;
                    let norms = norms.clone();
                    let ga = ensure(grads, a.0, val(*a).shape());
                    for r in 0..rows {
                        let y = out.row(r);
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let norm = norms[r];
                        if norm > eps {
                            let mut gy = S::ZERO;
                            for (gv, yv) in gr.iter().zip(y) {
                                gy += *gv * *yv;
                            }
                            for j in 0..n {
                                ga.data_mut()[r * n + j] += (gr[j] - y[j] * gy) / norm;
                            }
                        } else {
                            // clamped: y = x / eps is linear
                            for j in 0..n {
                                ga.data_mut()[r * n + j] += gr[j] / eps;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    add_into(ensure(grads, a.0, val(*a).shape()), g.data());
                }
            }
        }
    }
}

/// Per-node gradient table produced by [`Tape::backward`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a node, if any flowed to it.
    pub fn get(&self, id: ValueId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor<S>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn as_matrix<S: Scalar>(t: &Tensor<S>, what: &str) -> (usize, usize) {
    assert!(
        !t.shape().is_empty(),
        "{what}: expected a matrix-like tensor"
    );
    let _ = t;
    (t.rows(), t.last_dim())
}

fn ensure<'g, S: Scalar>(
    grads: &'g mut [Option<Tensor<S>>],
    idx: usize,
    shape: &[usize],
) -> &'g mut Tensor<S> {
    if grads[idx].is_none() {
        grads[idx] = Some(Tensor::zeros(shape.to_vec()));
    }
    grads[idx].as_mut().unwrap()
}

fn add_into<S: Scalar>(dst: &mut Tensor<S>, src: &[S]) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_returns_input() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let eye = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let y = t.matmul(a, eye);
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn tanh_is_zero_at_origin() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.tanh(x);
        assert_eq!(t.value(y).item(), 0.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 4], vec![0.0; 4]));
        let y = t.softmax(x);
        for v in t.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut t: Tape<f64> = Tape::new();
        let logits = vec![3.1, -2.0, 0.5, 7.3, -1.1, 0.0, 2.2, 4.4];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        let a = t.constant(Tensor::new(vec![2, 4], logits));
        let b = t.constant(Tensor::new(vec![2, 4], shifted));
        let sa = t.softmax(a);
        let sb = t.softmax(b);
        for r in 0..2 {
            let sum: f64 = t.value(sa).row(r).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
        for (x, y) in t.value(sa).data().iter().zip(t.value(sb).data()) {
            assert!((x - y).abs() < 1e-12, "shift changed softmax: {x} vs {y}");
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let mut t: Tape<f32> = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 3], vec![1000.0, -1000.0, 999.0]));
        let y = t.softmax(x);
        assert!(t.value(y).all_finite());
        let z = t.log_softmax(x);
        assert!(t.value(z).all_finite());
    }

    #[test]
    #[should_panic(expected = "backward called twice")]
    fn backward_twice_is_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0).with_grad());
        let y = t.square(x);
        let root = t.sum(y);
        let _ = t.backward(root);
        let _ = t.backward(root);
    }

    #[test]
    #[should_panic(expected = "root must be scalar")]
    fn non_scalar_root_is_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).with_grad());
        let _ = t.backward(x);
    }

    #[test]
    #[should_panic(expected = "matmul: inner dims differ")]
    fn matmul_shape_mismatch_names_op_and_shapes() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.constant(Tensor::zeros(vec![2, 3]));
        let b = t.constant(Tensor::zeros(vec![2, 3]));
        let _ = t.matmul(a, b);
    }

    #[test]
    fn fan_in_gradients_accumulate() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0).with_grad());
        let sq = t.mul_elem(x, x);
        let y = t.add(sq, x);
        let root = t.sum(y);
        let mut grads = t.backward(root);
        assert_eq!(grads.take(x).unwrap().item(), 7.0);
    }

    #[test]
    fn forward_op_dispatch_matches_builders() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = t.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let via_dispatch = t.forward_op(OpKind::Matmul, &[a, b]);
        let via_method = t.matmul(a, b);
        assert_eq!(t.value(via_dispatch).data(), t.value(via_method).data());

        let idx = t.constant(Tensor::new(vec![2], vec![1.0, 0.0]));
        let gathered = t.forward_op(OpKind::GatherRow, &[a, idx]);
        assert_eq!(t.value(gathered).data(), &[3.0, 4.0, 1.0, 2.0]);

        let c = t.constant(Tensor::scalar(2.0));
        let scaled = t.forward_op(OpKind::Scale, &[a, c]);
        assert_eq!(t.value(scaled).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn no_grad_branches_are_skipped() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0).with_grad());
        let frozen = t.constant(Tensor::scalar(5.0));
        let fsq = t.square(frozen); // constant branch
        let prod = t.mul_elem(x, fsq);
        let root = t.sum(prod);
        let mut grads = t.backward(root);
        assert_eq!(grads.take(x).unwrap().item(), 25.0);
        assert!(grads.get(frozen).is_none());
        assert!(grads.get(fsq).is_none());
    }
}
