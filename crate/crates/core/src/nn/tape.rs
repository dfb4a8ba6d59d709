//! Reverse-mode gradient tape over dense 2D tensors.
//!
//! Forward calls record one node per operation and evaluate eagerly;
//! [`Tape::backward`] then walks the recording once in reverse, accumulating
//! gradients into every node. Parameters enter the graph through
//! [`Tape::param`], which remembers the parameter's index in the
//! [`ParamStore`](super::ParamStore) so that
//! [`Tape::accumulate_param_grads`] can later push gradients back into the
//! store — restricted to whichever parameter subset the caller is training.

use super::store::{ParamStore, ParamSubset};
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `A * B^T` without materializing the transpose.
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    /// Broadcast a `[1, n]` bias over the rows of an `[m, n]` input.
    AddRowBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    ConcatRows(Vec<NodeId>),
    SelectRow(NodeId, usize),
    /// Running sums down the rows: `out[i] = sum_{k<=i} in[k]`.
    CumsumRows(NodeId),
    SumAll(NodeId),
    /// Same data, different row/column split.
    Reshape(NodeId),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    /// Index into the [`ParamStore`] when this leaf mirrors a parameter.
    param: Option<usize>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to this node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, op, param: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf mirroring a named parameter from the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId, NnError> {
        let idx = store.index_of(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        let id = self.push(store.value_at(idx).clone(), Op::Leaf);
        self.nodes[id.0].param = Some(idx);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.cols, vb.rows, "matmul inner dimensions");
        let (m, k, n) = (va.rows, va.cols, vb.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let aip = va.get(i, p);
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += aip * vb.get(p, j);
                }
            }
        }
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.cols, vb.cols, "matmul_nt inner dimensions");
        let (m, k, n) = (va.rows, va.cols, vb.rows);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += va.get(i, p) * vb.get(j, p);
                }
                out.data[i * n + j] = acc;
            }
        }
        self.push(out, Op::MatMulNT(a, b))
    }

    fn zip_shapes(&self, a: NodeId, b: NodeId, what: &str) -> (usize, usize) {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(va.same_shape(vb), "{what} shape mismatch");
        (va.rows, va.cols)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.zip_shapes(a, b, "add");
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Tensor::from_vec(r, c, data), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.zip_shapes(a, b, "sub");
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x - y)
            .collect();
        self.push(Tensor::from_vec(r, c, data), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.zip_shapes(a, b, "mul");
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        self.push(Tensor::from_vec(r, c, data), Op::MulElem(a, b))
    }

    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        assert_eq!(vb.rows, 1, "bias must be a row vector");
        assert_eq!(va.cols, vb.cols, "bias width mismatch");
        let mut out = va.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] += vb.data[c];
            }
        }
        self.push(out, Op::AddRowBias(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let out = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|x| x * k).collect());
        self.push(out, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let out = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|x| x.tanh()).collect());
        self.push(out, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let mut out = va.clone();
        for r in 0..out.rows {
            let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.cols;
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&v.data);
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn select_row(&mut self, a: NodeId, row: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        assert!(row < va.rows, "select_row out of range");
        let out = Tensor::row_vec(va.row(row).to_vec());
        self.push(out, Op::SelectRow(a, row))
    }

    pub fn cumsum_rows(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let mut out = va.clone();
        for r in 1..out.rows {
            for c in 0..out.cols {
                let prev = out.data[(r - 1) * out.cols + c];
                out.data[r * out.cols + c] += prev;
            }
        }
        self.push(out, Op::CumsumRows(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        assert_eq!(va.len(), rows * cols, "reshape element count mismatch");
        let out = Tensor::from_vec(rows, cols, va.data.clone());
        self.push(out, Op::Reshape(a))
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id.0].value;
        assert_eq!((v.rows, v.cols), (1, 1), "scalar() needs a 1x1 node");
        v.data[0]
    }

    /// Error if any recorded value is non-finite.
    pub fn check_finite(&self) -> Result<(), NnError> {
        for n in &self.nodes {
            if !n.value.all_finite() {
                return Err(NnError::NumericalBlowup);
            }
        }
        Ok(())
    }

    fn add_grad(&mut self, id: NodeId, delta: &Tensor) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.data.iter_mut().zip(&delta.data) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Reverse sweep from a scalar loss node. Gradients accumulate into every
    /// node reachable from the loss; leaves keep them until the tape drops.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::NoTape);
        }
        let lv = &self.nodes[loss.0].value;
        if (lv.rows, lv.cols) != (1, 1) {
            return Err(NnError::Shape(format!(
                "backward target must be 1x1, got {}x{}",
                lv.rows, lv.cols
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.clone() else { continue };
            // Ops are enumerated here rather than as closures so the reverse
            // sweep stays a single allocation-light loop.
            match &self.nodes[i].op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let va = self.nodes[a.0].value.clone();
                    let vb = self.nodes[b.0].value.clone();
                    let (m, k, n) = (va.rows, va.cols, vb.cols);
                    let mut ga = Tensor::zeros(m, k);
                    for r in 0..m {
                        for j in 0..n {
                            let gij = g.get(r, j);
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga.data[r * k + p] += gij * vb.get(p, j);
                            }
                        }
                    }
                    let mut gb = Tensor::zeros(k, n);
                    for p in 0..k {
                        for r in 0..m {
                            let arp = va.get(r, p);
                            if arp == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb.data[p * n + j] += arp * g.get(r, j);
                            }
                        }
                    }
                    self.add_grad(a, &ga);
                    self.add_grad(b, &gb);
                }
                &Op::MatMulNT(a, b) => {
                    let va = self.nodes[a.0].value.clone();
                    let vb = self.nodes[b.0].value.clone();
                    let (m, k, n) = (va.rows, va.cols, vb.rows);
                    let mut ga = Tensor::zeros(m, k);
                    let mut gb = Tensor::zeros(n, k);
                    for r in 0..m {
                        for j in 0..n {
                            let gij = g.get(r, j);
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga.data[r * k + p] += gij * vb.get(j, p);
                                gb.data[j * k + p] += gij * va.get(r, p);
                            }
                        }
                    }
                    self.add_grad(a, &ga);
                    self.add_grad(b, &gb);
                }
                &Op::Add(a, b) => {
                    self.add_grad(a, &g);
                    self.add_grad(b, &g);
                }
                &Op::Sub(a, b) => {
                    self.add_grad(a, &g);
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                    self.add_grad(b, &neg);
                }
                &Op::MulElem(a, b) => {
                    let vb = self.nodes[b.0].value.clone();
                    let va = self.nodes[a.0].value.clone();
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect(),
                    );
                    let gb = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect(),
                    );
                    self.add_grad(a, &ga);
                    self.add_grad(b, &gb);
                }
                &Op::AddRowBias(a, bias) => {
                    let cols = g.cols;
                    let mut gb = Tensor::zeros(1, cols);
                    for r in 0..g.rows {
                        for c in 0..cols {
                            gb.data[c] += g.get(r, c);
                        }
                    }
                    self.add_grad(a, &g);
                    self.add_grad(bias, &gb);
                }
                &Op::Scale(a, k) => {
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * k).collect());
                    self.add_grad(a, &ga);
                }
                &Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&y.data).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect(),
                    );
                    self.add_grad(a, &ga);
                }
                &Op::SoftmaxRows(a) => {
                    let y = self.nodes[i].value.clone();
                    let mut ga = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let mut dot = 0.0;
                        for c in 0..y.cols {
                            dot += g.get(r, c) * y.get(r, c);
                        }
                        for c in 0..y.cols {
                            ga.data[r * y.cols + c] = y.get(r, c) * (g.get(r, c) - dot);
                        }
                    }
                    self.add_grad(a, &ga);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let cols = g.cols;
                    let mut offset = 0usize;
                    for p in parts {
                        let rows = self.nodes[p.0].value.rows;
                        let slice = Tensor::from_vec(
                            rows,
                            cols,
                            g.data[offset * cols..(offset + rows) * cols].to_vec(),
                        );
                        self.add_grad(p, &slice);
                        offset += rows;
                    }
                }
                &Op::SelectRow(a, row) => {
                    let va = &self.nodes[a.0].value;
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    ga.data[row * va.cols..(row + 1) * va.cols].copy_from_slice(&g.data);
                    self.add_grad(a, &ga);
                }
                &Op::CumsumRows(a) => {
                    let mut ga = g.clone();
                    for r in (0..ga.rows.saturating_sub(1)).rev() {
                        for c in 0..ga.cols {
                            let next = ga.data[(r + 1) * ga.cols + c];
                            ga.data[r * ga.cols + c] += next;
                        }
                    }
                    self.add_grad(a, &ga);
                }
                &Op::SumAll(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    ga.fill(g.data[0]);
                    self.add_grad(a, &ga);
                }
                &Op::Reshape(a) => {
                    let va = &self.nodes[a.0].value;
                    let ga = Tensor::from_vec(va.rows, va.cols, g.data.clone());
                    self.add_grad(a, &ga);
                }
            }
        }
        Ok(())
    }

    /// Push leaf gradients into the store for every parameter in `subset`.
    /// Parameters outside the subset are left untouched, so a frozen group
    /// never sees a gradient at all.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore, subset: ParamSubset) {
        for n in &self.nodes {
            let (Some(idx), Some(g)) = (n.param, n.grad.as_ref()) else { continue };
            if subset.contains(store.group_at(idx)) {
                store.add_grad_at(idx, g);
            }
        }
    }
}
