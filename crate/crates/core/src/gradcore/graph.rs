use super::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op<T> {
    Leaf,
    Matmul(NodeId, NodeId),
    /// Elementwise add of two same-shape tensors.
    Add(NodeId, NodeId),
    /// `[B, N] + [N]` row broadcast.
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// Row-wise softmax over the last axis.
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// `table[ids[r], :]` per output row.
    Embedding(NodeId, Vec<u32>),
    /// Concatenate rank-2 tensors along columns.
    Concat(Vec<NodeId>),
    /// 1-D: inner product -> `[1]`; 2-D same shape: per-row dot -> `[B, 1]`.
    Dot(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// `[B, N] -> [B, 1]`.
    SumRows(NodeId),
    /// `out[r] = t[r, ids[r]]` -> `[B, 1]`.
    GatherRows(NodeId, Vec<u32>),
    SliceCols(NodeId, usize, usize),
    /// `max(x, floor)`; gradient passes only where `x > floor`.
    ClampMin(NodeId, T),
    /// Forward emits a stored hard value; backward is the identity.
    StraightThrough(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.slots[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.slots[id.0].take()
    }
}

/// A reverse-mode tape. Ops append nodes; parents always precede children,
/// so the creation order is already topological.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A trainable input; `backward` will produce a gradient for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(),
            "matmul shape mismatch: {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let value = matmul_values(av, bv, false, false);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Matmul(a, b), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
            let value = Tensor::new(av.shape(), data);
            let ng = self.needs(a) || self.needs(b);
            self.push(value, Op::Add(a, b), ng)
        } else if av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.cols() {
            let (rows, cols) = (av.rows(), av.cols());
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for (x, y) in av.row(r).iter().zip(bv.data()) {
                    data.push(*x + *y);
                }
            }
            let value = Tensor::new(&[rows, cols], data);
            let ng = self.needs(a) || self.needs(b);
            self.push(value, Op::AddBias(a, b), ng)
        } else {
            panic!("add shape mismatch: {:?} + {:?}", av.shape(), bv.shape());
        }
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, T::from_f64(-1.0));
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "mul shape mismatch: {:?} * {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        let value = self.value(a).map(|x| x * k);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x.tanh());
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = T::one();
        let value = self.value(a).map(|x| one / (one + (-x).exp()));
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = rowwise(self.value(a), softmax_row);
        let ng = self.needs(a);
        self.push(value, Op::Softmax(a), ng)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let value = rowwise(self.value(a), log_softmax_row);
        let ng = self.needs(a);
        self.push(value, Op::LogSoftmax(a), ng)
    }

    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[u32]) -> NodeId {
        let tv = self.value(table);
        assert_eq!(tv.rank(), 2, "embedding table must be rank 2, got {:?}", tv.shape());
        let (v, e) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            assert!((id as usize) < v, "embedding id {} out of table rows {}", id, v);
            data.extend_from_slice(tv.row(id as usize));
        }
        let value = Tensor::new(&[ids.len(), e], data);
        let ng = self.needs(table);
        self.push(value, Op::Embedding(table, ids.to_vec()), ng)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert!(
                    v.rank() == 2 && v.rows() == rows,
                    "concat part shape {:?} incompatible with {} rows",
                    v.shape(),
                    rows
                );
                v.cols()
            })
            .sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(&[rows, total], data);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::Concat(parts.to_vec()), ng)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "dot shape mismatch: {:?} . {:?}",
            av.shape(),
            bv.shape()
        );
        let value = if av.rank() <= 1 {
            let s = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).sum();
            Tensor::scalar(s)
        } else {
            let mut out = Vec::with_capacity(av.rows());
            for r in 0..av.rows() {
                out.push(av.row(r).iter().zip(bv.row(r)).map(|(&x, &y)| x * y).sum());
            }
            Tensor::new(&[av.rows(), 1], out)
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Dot(a, b), ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let n = T::from_f64(v.len() as f64);
        let s: T = v.data().iter().copied().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s / n), Op::MeanAll(a), ng)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        assert_eq!(v.rank(), 2, "sum_rows on rank-{} tensor {:?}", v.rank(), v.shape());
        let mut out = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            out.push(v.row(r).iter().copied().sum());
        }
        let ng = self.needs(a);
        self.push(Tensor::new(&[v.rows(), 1], out), Op::SumRows(a), ng)
    }

    pub fn gather_rows(&mut self, a: NodeId, ids: &[u32]) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 2 && v.rows() == ids.len(),
            "gather_rows needs [B, N] with one id per row: {:?} vs {} ids",
            v.shape(),
            ids.len()
        );
        let mut out = Vec::with_capacity(ids.len());
        for (r, &id) in ids.iter().enumerate() {
            assert!((id as usize) < v.cols(), "gather id {} out of {} cols", id, v.cols());
            out.push(v.at(r, id as usize));
        }
        let ng = self.needs(a);
        self.push(Tensor::new(&[ids.len(), 1], out), Op::GatherRows(a, ids.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 2 && lo < hi && hi <= v.cols(),
            "slice_cols {}..{} out of shape {:?}",
            lo,
            hi,
            v.shape()
        );
        let mut data = Vec::with_capacity(v.rows() * (hi - lo));
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row(r)[lo..hi]);
        }
        let ng = self.needs(a);
        self.push(Tensor::new(&[v.rows(), hi - lo], data), Op::SliceCols(a, lo, hi), ng)
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: T) -> NodeId {
        let value = self.value(a).map(|x| if x > floor { x } else { floor });
        let ng = self.needs(a);
        self.push(value, Op::ClampMin(a, floor), ng)
    }

    /// Emit `hard` in the forward pass while gradients flow to `soft`.
    pub fn straight_through(&mut self, soft: NodeId, hard: Tensor<T>) -> NodeId {
        assert_eq!(
            self.value(soft).shape(),
            hard.shape(),
            "straight_through shape mismatch: {:?} vs {:?}",
            self.value(soft).shape(),
            hard.shape()
        );
        let ng = self.needs(soft);
        self.push(hard, Op::StraightThrough(soft), ng)
    }

    /// Reverse pass from a scalar `loss` node. Gradients accumulate; shared
    /// subexpressions receive the sum of their downstream contributions.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        assert_eq!(
            self.value(loss).len(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        slots[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                slots[i] = None;
                continue;
            }
            let Some(g) = slots[i].take() else { continue };
            self.propagate(i, &g, &mut slots);
            slots[i] = Some(g);
        }
        Gradients { slots }
    }

    fn accumulate(&self, slots: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut slots[id.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, slots: &mut [Option<Tensor<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(slots, *a, matmul_values(g, bv, false, true));
                }
                if self.needs(*b) {
                    self.accumulate(slots, *b, matmul_values(av, g, true, false));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(slots, *a, g.clone());
                self.accumulate(slots, *b, g.clone());
            }
            Op::AddBias(a, b) => {
                self.accumulate(slots, *a, g.clone());
                if self.needs(*b) {
                    let cols = g.cols();
                    let mut db = vec![T::zero(); cols];
                    for r in 0..g.rows() {
                        for (acc, x) in db.iter_mut().zip(g.row(r)) {
                            *acc = *acc + *x;
                        }
                    }
                    self.accumulate(slots, *b, Tensor::new(&[cols], db));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = zip_tensors(g, bv, |x, y| x * y);
                    self.accumulate(slots, *a, d);
                }
                if self.needs(*b) {
                    let d = zip_tensors(g, av, |x, y| x * y);
                    self.accumulate(slots, *b, d);
                }
            }
            Op::Scale(a, k) => {
                self.accumulate(slots, *a, g.map(|x| x * *k));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let d = zip_tensors(g, y, |gx, yx| gx * (T::one() - yx * yx));
                self.accumulate(slots, *a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = zip_tensors(g, x, |gx, xv| if xv > T::zero() { gx } else { T::zero() });
                self.accumulate(slots, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let d = zip_tensors(g, y, |gx, yx| gx * yx * (T::one() - yx));
                self.accumulate(slots, *a, d);
            }
            Op::Softmax(a) => {
                // dx = y * (g - sum(g * y)) per row
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let mut d = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let s: T = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for c in 0..cols {
                        d.data_mut()[r * cols + c] = yr[c] * (gr[c] - s);
                    }
                }
                self.accumulate(slots, *a, d);
            }
            Op::LogSoftmax(a) => {
                // dx = g - softmax(x) * sum(g) per row
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let mut d = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let s: T = gr.iter().copied().sum();
                    for c in 0..cols {
                        d.data_mut()[r * cols + c] = gr[c] - yr[c].exp() * s;
                    }
                }
                self.accumulate(slots, *a, d);
            }
            Op::Embedding(table, ids) => {
                let tv = self.value(*table);
                let mut d = Tensor::zeros(tv.shape());
                let e = tv.cols();
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut d.data_mut()[id as usize * e..(id as usize + 1) * e];
                    for (dx, gx) in dst.iter_mut().zip(g.row(r)) {
                        *dx = *dx + *gx;
                    }
                }
                self.accumulate(slots, *table, d);
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(slots, p, Tensor::new(&[rows, cols], d));
                    }
                    offset += cols;
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if av.rank() <= 1 {
                    let gv = g.item();
                    if self.needs(*a) {
                        self.accumulate(slots, *a, bv.map(|x| x * gv));
                    }
                    if self.needs(*b) {
                        self.accumulate(slots, *b, av.map(|x| x * gv));
                    }
                } else {
                    if self.needs(*a) {
                        self.accumulate(slots, *a, rowscale(bv, g));
                    }
                    if self.needs(*b) {
                        self.accumulate(slots, *b, rowscale(av, g));
                    }
                }
            }
            Op::SumAll(a) => {
                let gv = g.item();
                let d = Tensor::full(self.value(*a).shape(), gv);
                self.accumulate(slots, *a, d);
            }
            Op::MeanAll(a) => {
                let n = T::from_f64(self.value(*a).len() as f64);
                let d = Tensor::full(self.value(*a).shape(), g.item() / n);
                self.accumulate(slots, *a, d);
            }
            Op::SumRows(a) => {
                let v = self.value(*a);
                let cols = v.cols();
                let mut d = Tensor::zeros(v.shape());
                for r in 0..v.rows() {
                    let gv = g.data()[r];
                    for c in 0..cols {
                        d.data_mut()[r * cols + c] = gv;
                    }
                }
                self.accumulate(slots, *a, d);
            }
            Op::GatherRows(a, ids) => {
                let v = self.value(*a);
                let mut d = Tensor::zeros(v.shape());
                for (r, &id) in ids.iter().enumerate() {
                    d.data_mut()[r * v.cols() + id as usize] = g.data()[r];
                }
                self.accumulate(slots, *a, d);
            }
            Op::SliceCols(a, lo, _hi) => {
                let v = self.value(*a);
                let mut d = Tensor::zeros(v.shape());
                for r in 0..v.rows() {
                    let dst = &mut d.data_mut()[r * v.cols() + lo..];
                    for (c, gx) in g.row(r).iter().enumerate() {
                        dst[c] = *gx;
                    }
                }
                self.accumulate(slots, *a, d);
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a);
                let d = zip_tensors(g, x, |gx, xv| if xv > *floor { gx } else { T::zero() });
                self.accumulate(slots, *a, d);
            }
            Op::StraightThrough(a) => {
                self.accumulate(slots, *a, g.clone());
            }
        }
    }
}

fn zip_tensors<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}

/// `diag(col) * m`: scale each row of `m` by the matching entry of `col`.
fn rowscale<T: Real>(m: &Tensor<T>, col: &Tensor<T>) -> Tensor<T> {
    let cols = m.cols();
    let mut out = Tensor::zeros(m.shape());
    for r in 0..m.rows() {
        let k = col.data()[r];
        let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for (d, x) in dst.iter_mut().zip(m.row(r)) {
            *d = *x * k;
        }
    }
    out
}

fn rowwise<T: Real>(t: &Tensor<T>, f: impl Fn(&[T], &mut [T])) -> Tensor<T> {
    assert!(t.rank() >= 1 && t.rank() <= 2, "rowwise op on shape {:?}", t.shape());
    let cols = t.cols();
    let mut out = Tensor::zeros(t.shape());
    for r in 0..t.rows() {
        f(&t.data()[r * cols..(r + 1) * cols], &mut out.data_mut()[r * cols..(r + 1) * cols]);
    }
    out
}

fn softmax_row<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn log_softmax_row<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &v in x {
        sum = sum + (v - max).exp();
    }
    let log_z = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - log_z;
    }
}

/// Dense matmul with optional transposes, `op(a) * op(b)`.
fn matmul_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
    let (kb, n) = if tb { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
    assert_eq!(k, kb, "matmul inner dims: {:?} x {:?} (ta={}, tb={})", a.shape(), b.shape(), ta, tb);
    let mut out = Tensor::zeros(&[m, n]);

    if !ta && !tb {
        // ikj: stream rows of b, autovectorizes well.
        for i in 0..m {
            let arow = a.row(i);
            let dst = &mut out.data_mut()[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                for (d, &bkj) in dst.iter_mut().zip(b.row(kk)) {
                    *d = *d + aik * bkj;
                }
            }
        }
    } else if ta && !tb {
        // out[i][j] += a[kk][i] * b[kk][j]
        for kk in 0..k {
            let arow = a.row(kk);
            let brow = b.row(kk);
            for (i, &aki) in arow.iter().enumerate() {
                if aki == T::zero() {
                    continue;
                }
                let dst = &mut out.data_mut()[i * n..(i + 1) * n];
                for (d, &bkj) in dst.iter_mut().zip(brow) {
                    *d = *d + aki * bkj;
                }
            }
        }
    } else if !ta && tb {
        // out[i][j] = dot(a.row(i), b.row(j))
        for i in 0..m {
            let arow = a.row(i);
            for j in 0..n {
                let s: T = arow.iter().zip(b.row(j)).map(|(&x, &y)| x * y).sum();
                out.data_mut()[i * n + j] = s;
            }
        }
    } else {
        unreachable!("both-transposed matmul is never emitted");
    }
    out
}

/// Parameter handles of one LSTM cell: `wx [E, 4H]`, `wh [H, 4H]`, `b [4H]`,
/// gate layout `[input | forget | cell | output]`.
#[derive(Copy, Clone)]
pub struct LstmParamIds {
    pub wx: NodeId,
    pub wh: NodeId,
    pub b: NodeId,
}

/// One step of a standard LSTM cell, built from primitive ops so gradients
/// flow through both returned states.
pub fn lstm_cell<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    params: LstmParamIds,
) -> (NodeId, NodeId) {
    let hidden = g.value(h).cols();
    let gates_x = g.matmul(x, params.wx);
    let gates_h = g.matmul(h, params.wh);
    let pre = g.add(gates_x, gates_h);
    let pre = g.add(pre, params.b);
    assert_eq!(
        g.value(pre).cols(),
        4 * hidden,
        "lstm gate width {} != 4 * hidden {}",
        g.value(pre).cols(),
        hidden
    );
    let i_pre = g.slice_cols(pre, 0, hidden);
    let f_pre = g.slice_cols(pre, hidden, 2 * hidden);
    let c_pre = g.slice_cols(pre, 2 * hidden, 3 * hidden);
    let o_pre = g.slice_cols(pre, 3 * hidden, 4 * hidden);
    let i_gate = g.sigmoid(i_pre);
    let f_gate = g.sigmoid(f_pre);
    let c_cand = g.tanh(c_pre);
    let o_gate = g.sigmoid(o_pre);
    let keep = g.mul(f_gate, c);
    let write = g.mul(i_gate, c_cand);
    let c_next = g.add(keep, write);
    let c_act = g.tanh(c_next);
    let h_next = g.mul(o_gate, c_act);
    (h_next, c_next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero_has_unit_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let y = g.tanh(x);
        let loss = g.sum(y);
        assert_eq!(g.value(y).item(), 0.0);
        let grads = g.backward(loss);
        assert_eq!(grads.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.3, -2.0, 5.0], vec![10.0, 10.0, 10.0]]));
        let y = g.softmax(x);
        for r in 0..2 {
            let s: f32 = g.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row {} sums to {}", r, s);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.add(x, x);
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let x = g.leaf(t.clone());
        let w = g.leaf(Tensor::from_rows(&[vec![1.0], vec![-1.0]]));
        let _ = g.matmul(x, w);
        let _ = g.tanh(x);
        let _ = g.softmax(x);
        assert_eq!(g.value(x), &t);
    }

    #[test]
    fn lstm_zero_everything_is_fixed_point() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let h = g.constant(Tensor::zeros(&[2, 4]));
        let c = g.constant(Tensor::zeros(&[2, 4]));
        let wx = g.leaf(Tensor::zeros(&[3, 16]));
        let wh = g.leaf(Tensor::zeros(&[4, 16]));
        let b = g.leaf(Tensor::zeros(&[16]));
        let (h2, c2) = lstm_cell(&mut g, x, h, c, LstmParamIds { wx, wh, b });
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_rows_are_independent() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.5, -0.2], vec![0.5, -0.2]]));
        let h = g.constant(Tensor::from_rows(&[vec![0.1, 0.3], vec![0.1, 0.3]]));
        let c = g.constant(Tensor::from_rows(&[vec![-0.4, 0.2], vec![-0.4, 0.2]]));
        let wx = g.constant(Tensor::new(&[2, 8], (0..16).map(|i| (i as f32) * 0.1 - 0.8).collect()));
        let wh = g.constant(Tensor::new(&[2, 8], (0..16).map(|i| 0.7 - (i as f32) * 0.09).collect()));
        let b = g.constant(Tensor::new(&[8], (0..8).map(|i| (i as f32) * 0.01).collect()));
        let (h2, _) = lstm_cell(&mut g, x, h, c, LstmParamIds { wx, wh, b });
        let v = g.value(h2);
        assert_eq!(v.row(0), v.row(1));
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn matmul_reports_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let _ = g.matmul(a, b);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[1, 2], vec![0.3, 0.7]));
        let soft = g.softmax(x);
        let hard = Tensor::new(&[1, 2], vec![0.0, 1.0]);
        let st = g.straight_through(soft, hard.clone());
        assert_eq!(g.value(st), &hard);
        let picked = g.gather_rows(st, &[1]);
        let loss = g.sum(picked);
        let grads = g.backward(loss);
        assert!(grads.get(x).is_some());
    }
}
