//! Dense-array substrate with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable row-major array plus an optional record of
//! the operation that produced it. Ops on tracked tensors (anything with a
//! parameter upstream) build a compute graph; [`Tensor::backward`] walks the
//! graph in reverse topological order and accumulates gradients into every
//! tensor created with [`Tensor::param`].
//!
//! Shape violations are programmer errors and panic with both shapes in the
//! message. Fallible, data-dependent failures live at the module layers
//! above.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::scalar::{lit, Scalar};

pub(crate) mod kernels;
mod op;

use op::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

struct Node<E: Scalar> {
    id: u64,
    shape: Box<[usize]>,
    data: Arc<[E]>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
    parents: Box<[Tensor<E>]>,
    op: Option<Op<E>>,
}

/// Immutable dense array; gradient accumulation is the only interior mutation.
pub struct Tensor<E: Scalar> {
    inner: Arc<Node<E>>,
}

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Scalar> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_numel<E: Scalar>(data: &[E], shape: &[usize]) {
    let numel: usize = shape.iter().product();
    assert_eq!(
        data.len(),
        numel,
        "data length {} does not match shape {:?}",
        data.len(),
        shape
    );
    assert!(
        shape.iter().all(|&d| d > 0),
        "shape extents must be positive, got {:?}",
        shape
    );
}

impl<E: Scalar> Tensor<E> {
    fn new_node(
        data: Vec<E>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor<E>>,
        op: Option<Op<E>>,
    ) -> Self {
        check_numel(&data, &shape);
        Tensor {
            inner: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.into_boxed_slice(),
                data: data.into(),
                requires_grad,
                grad: Mutex::new(None),
                parents: parents.into_boxed_slice(),
                op,
            }),
        }
    }

    /// Leaf tensor that does not receive gradients.
    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Self {
        Self::new_node(data, shape.to_vec(), false, Vec::new(), None)
    }

    /// Leaf parameter; `backward` accumulates its gradient.
    pub fn param(data: Vec<E>, shape: &[usize]) -> Self {
        Self::new_node(data, shape.to_vec(), true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_vec(vec![E::zero(); numel], shape)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_vec(vec![value; numel], shape)
    }

    pub fn scalar(value: E) -> Self {
        Self::from_vec(vec![value], &[1])
    }

    /// Node produced by an op; drops the graph record when no input is tracked.
    fn from_op(data: Vec<E>, shape: Vec<usize>, parents: Vec<Tensor<E>>, op: Op<E>) -> Self {
        if parents.iter().any(Tensor::tracked) {
            Self::new_node(data, shape, false, parents, Some(op))
        } else {
            Self::new_node(data, shape, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor participates in gradient computation.
    pub fn tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.op.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(
            self.numel(),
            1,
            "item() requires a scalar tensor, got shape {:?}",
            self.shape()
        );
        self.inner.data[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Leaf view of the same storage, cut off from the graph.
    pub fn detach(&self) -> Tensor<E> {
        Tensor {
            inner: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: Arc::clone(&self.inner.data),
                requires_grad: false,
                grad: Mutex::new(None),
                parents: Box::new([]),
                op: None,
            }),
        }
    }

    fn accumulate_grad(&self, g: &[E]) {
        let mut lock = self.inner.grad.lock().unwrap();
        match &mut *lock {
            Some(v) => {
                for (a, b) in v.iter_mut().zip(g) {
                    *a += *b;
                }
            }
            None => *lock = Some(g.to_vec()),
        }
    }

    /// Reverse-mode gradient of a scalar loss. Repeated calls accumulate;
    /// callers that step an optimizer reset grads in between.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward() requires a scalar loss, got shape {:?}",
            self.shape()
        );
        if !self.tracked() {
            return;
        }
        let order = topo_order(self);
        let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
        grads.insert(self.id(), vec![E::one()]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            if node.inner.requires_grad {
                node.accumulate_grad(&g);
            }
            if let Some(op) = &node.inner.op {
                let parents = &node.inner.parents;
                op.backward(node, parents, &g, &mut |idx, contrib| {
                    let parent = &parents[idx];
                    if !parent.tracked() {
                        return;
                    }
                    match grads.entry(parent.id()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (a, b) in e.get_mut().iter_mut().zip(&contrib) {
                                *a += *b;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(contrib);
                        }
                    }
                });
            }
        }
    }
}

/// Post-order over the graph reached from `root` via parent edges: inputs first.
fn topo_order<E: Scalar>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor<E>, usize)> = Vec::new();
    visited.insert(root.id());
    stack.push((root.clone(), 0));
    while let Some((node, child)) = stack.pop() {
        if child < node.inner.parents.len() {
            stack.push((node.clone(), child + 1));
            let parent = node.inner.parents[child].clone();
            if parent.tracked() && visited.insert(parent.id()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

enum PairKind {
    Same,
    ScalarRhs,
    ScalarLhs,
}

fn pair_kind<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> PairKind {
    if a.shape() == b.shape() {
        PairKind::Same
    } else if b.numel() == 1 {
        PairKind::ScalarRhs
    } else if a.numel() == 1 {
        PairKind::ScalarLhs
    } else {
        panic!(
            "elementwise op requires equal shapes or a scalar operand: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
    }
}

fn zip_map<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> (Vec<E>, Vec<usize>) {
    match pair_kind(a, b) {
        PairKind::Same => (
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
            a.shape().to_vec(),
        ),
        PairKind::ScalarRhs => {
            let s = b.data()[0];
            (
                a.data().iter().map(|&x| f(x, s)).collect(),
                a.shape().to_vec(),
            )
        }
        PairKind::ScalarLhs => {
            let s = a.data()[0];
            (
                b.data().iter().map(|&y| f(s, y)).collect(),
                b.shape().to_vec(),
            )
        }
    }
}

impl<E: Scalar> Tensor<E> {
    pub fn add(&self, rhs: &Tensor<E>) -> Tensor<E> {
        let (data, shape) = zip_map(self, rhs, |x, y| x + y);
        Tensor::from_op(data, shape, vec![self.clone(), rhs.clone()], Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Tensor<E> {
        let (data, shape) = zip_map(self, rhs, |x, y| x - y);
        Tensor::from_op(data, shape, vec![self.clone(), rhs.clone()], Op::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<E>) -> Tensor<E> {
        let (data, shape) = zip_map(self, rhs, |x, y| x * y);
        Tensor::from_op(data, shape, vec![self.clone(), rhs.clone()], Op::Mul)
    }

    pub fn div(&self, rhs: &Tensor<E>) -> Tensor<E> {
        let (data, shape) = zip_map(self, rhs, |x, y| x / y);
        Tensor::from_op(data, shape, vec![self.clone(), rhs.clone()], Op::Div)
    }

    pub fn neg(&self) -> Tensor<E> {
        let data = self.data().iter().map(|&x| -x).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Op::Neg)
    }

    pub fn scale(&self, c: E) -> Tensor<E> {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Op::Scale(c),
        )
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        let data = self
            .data()
            .iter()
            .map(|&x| E::one() / (E::one() + (-x).exp()))
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Op::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor<E> {
        let data = self.data().iter().map(|&x| x.tanh()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Op::Tanh)
    }

    pub fn relu(&self) -> Tensor<E> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x > E::zero() { x } else { E::zero() })
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Op::Relu)
    }

    /// tanh-approximation GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
    pub fn gelu(&self) -> Tensor<E> {
        let c: E = lit((2.0 / std::f64::consts::PI).sqrt());
        let a: E = lit(0.044715);
        let half: E = lit(0.5);
        let data = self
            .data()
            .iter()
            .map(|&x| half * x * (E::one() + (c * (x + a * x * x * x)).tanh()))
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Op::Gelu)
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Tensor<E> {
        let data = self.data().iter().map(|&x| x.ln()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Op::Ln)
    }

    pub fn matmul(&self, rhs: &Tensor<E>) -> Tensor<E> {
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        assert!(
            a_shape.len() == 2 && b_shape.len() == 2 && a_shape[1] == b_shape[0],
            "matmul dimension mismatch: {:?} x {:?}",
            a_shape,
            b_shape
        );
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let data = kernels::matmul(self.data(), rhs.data(), m, k, n);
        Tensor::from_op(
            data,
            vec![m, n],
            vec![self.clone(), rhs.clone()],
            Op::Matmul,
        )
    }

    pub fn transpose2(&self) -> Tensor<E> {
        assert_eq!(
            self.shape().len(),
            2,
            "transpose2 requires rank 2, got {:?}",
            self.shape()
        );
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = kernels::transpose2(self.data(), r, c);
        Tensor::from_op(data, vec![c, r], vec![self.clone()], Op::Transpose2)
    }

    /// Adds a [D] bias to the last axis of x[..., D].
    pub fn add_bias(&self, bias: &Tensor<E>) -> Tensor<E> {
        let d = *self.shape().last().expect("add_bias on empty shape");
        assert_eq!(
            bias.shape(),
            &[d],
            "bias shape {:?} does not match last axis of {:?}",
            bias.shape(),
            self.shape()
        );
        let b = bias.data();
        let data = self
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &bv)| x + bv))
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            Op::AddBias,
        )
    }

    /// Adds a [C] bias to every (h, w) location of x[C, H, W].
    pub fn add_chan_bias(&self, bias: &Tensor<E>) -> Tensor<E> {
        assert_eq!(
            self.shape().len(),
            3,
            "add_chan_bias requires rank 3, got {:?}",
            self.shape()
        );
        let c = self.shape()[0];
        assert_eq!(
            bias.shape(),
            &[c],
            "bias shape {:?} does not match channels of {:?}",
            bias.shape(),
            self.shape()
        );
        let hw = self.numel() / c;
        let mut data = self.data().to_vec();
        for ch in 0..c {
            let bv = bias.data()[ch];
            for v in &mut data[ch * hw..(ch + 1) * hw] {
                *v += bv;
            }
        }
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            Op::AddChanBias,
        )
    }

    /// Per-last-axis normalization with affine gain/bias.
    pub fn layer_norm(&self, gain: &Tensor<E>, bias: &Tensor<E>, eps: E) -> Tensor<E> {
        let d = *self.shape().last().expect("layer_norm on empty shape");
        assert!(
            gain.shape() == [d] && bias.shape() == [d],
            "layer_norm affine shapes {:?}/{:?} do not match last axis of {:?}",
            gain.shape(),
            bias.shape(),
            self.shape()
        );
        let data = kernels::layer_norm(self.data(), d, gain.data(), bias.data(), eps);
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), gain.clone(), bias.clone()],
            Op::LayerNorm { eps },
        )
    }

    /// Normalizes over all elements of x[C, H, W]; per-channel affine.
    pub fn global_layer_norm(&self, gain: &Tensor<E>, bias: &Tensor<E>, eps: E) -> Tensor<E> {
        assert_eq!(
            self.shape().len(),
            3,
            "global_layer_norm requires rank 3, got {:?}",
            self.shape()
        );
        let c = self.shape()[0];
        assert!(
            gain.shape() == [c] && bias.shape() == [c],
            "global_layer_norm affine shapes {:?}/{:?} do not match channels of {:?}",
            gain.shape(),
            bias.shape(),
            self.shape()
        );
        let hw = self.numel() / c;
        let data = kernels::global_layer_norm(self.data(), c, hw, gain.data(), bias.data(), eps);
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), gain.clone(), bias.clone()],
            Op::GlobalLayerNorm { eps },
        )
    }

    pub fn softmax(&self, axis: usize) -> Tensor<E> {
        assert!(
            axis < self.shape().len(),
            "softmax axis {} out of range for shape {:?}",
            axis,
            self.shape()
        );
        let data = kernels::softmax(self.data(), self.shape(), axis);
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Op::Softmax { axis },
        )
    }

    pub fn sum_all(&self) -> Tensor<E> {
        let mut s = E::zero();
        for &v in self.data() {
            s += v;
        }
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], Op::SumAll)
    }

    pub fn mean_all(&self) -> Tensor<E> {
        let n: E = lit(self.numel() as f64);
        let mut s = E::zero();
        for &v in self.data() {
            s += v;
        }
        Tensor::from_op(vec![s / n], vec![1], vec![self.clone()], Op::MeanAll)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<E> {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Op::Reshape,
        )
    }

    /// Permutes the axes of a rank-3 tensor.
    pub fn permute3(&self, perm: [usize; 3]) -> Tensor<E> {
        assert_eq!(
            self.shape().len(),
            3,
            "permute3 requires rank 3, got {:?}",
            self.shape()
        );
        let data = op::apply_permute3(self.data(), self.shape(), perm);
        let shape = vec![
            self.shape()[perm[0]],
            self.shape()[perm[1]],
            self.shape()[perm[2]],
        ];
        Tensor::from_op(data, shape, vec![self.clone()], Op::Permute3 { perm })
    }

    /// Selects block `index` along axis 0, dropping that axis.
    pub fn index0(&self, index: usize) -> Tensor<E> {
        assert!(
            !self.shape().is_empty() && index < self.shape()[0],
            "index0 {} out of range for shape {:?}",
            index,
            self.shape()
        );
        let block = self.numel() / self.shape()[0];
        let data = self.data()[index * block..(index + 1) * block].to_vec();
        let shape = self.shape()[1..].to_vec();
        Tensor::from_op(data, shape, vec![self.clone()], Op::Index0 { index })
    }

    /// Columns [lo, hi) of a rank-2 tensor.
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Tensor<E> {
        assert_eq!(
            self.shape().len(),
            2,
            "slice_cols requires rank 2, got {:?}",
            self.shape()
        );
        let (r, c) = (self.shape()[0], self.shape()[1]);
        assert!(
            lo < hi && hi <= c,
            "slice_cols [{lo}, {hi}) out of range for {:?}",
            self.shape()
        );
        let w = hi - lo;
        let mut data = Vec::with_capacity(r * w);
        for row in self.data().chunks_exact(c) {
            data.extend_from_slice(&row[lo..hi]);
        }
        Tensor::from_op(
            data,
            vec![r, w],
            vec![self.clone()],
            Op::SliceCols { lo, hi },
        )
    }

    /// Blocks [lo, hi) along axis 1 of a rank-3 tensor.
    pub fn slice_axis1(&self, lo: usize, hi: usize) -> Tensor<E> {
        assert_eq!(
            self.shape().len(),
            3,
            "slice_axis1 requires rank 3, got {:?}",
            self.shape()
        );
        let (a, b, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert!(
            lo < hi && hi <= b,
            "slice_axis1 [{lo}, {hi}) out of range for {:?}",
            self.shape()
        );
        let w = hi - lo;
        let mut data = Vec::with_capacity(a * w * c);
        for i in 0..a {
            data.extend_from_slice(&self.data()[(i * b + lo) * c..(i * b + hi) * c]);
        }
        Tensor::from_op(
            data,
            vec![a, w, c],
            vec![self.clone()],
            Op::SliceAxis1 { lo, hi },
        )
    }

    /// Valid cross-correlation of x[Cin, L] with w[Cout, Cin, K].
    pub fn conv1d(&self, w: &Tensor<E>, stride: usize) -> Tensor<E> {
        assert!(stride >= 1, "conv1d stride must be positive");
        assert!(
            self.shape().len() == 2 && w.shape().len() == 3 && w.shape()[1] == self.shape()[0],
            "conv1d dimension mismatch: x {:?} vs w {:?}",
            self.shape(),
            w.shape()
        );
        let (cin, l) = (self.shape()[0], self.shape()[1]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        assert!(l >= k, "conv1d input too short: length {l} < kernel {k}");
        let t_out = kernels::conv1d_out_len(l, k, stride);
        // out[t, co] = col[t, :] . w[co, :] with w flattened to [Cout, Cin*K]
        let col = kernels::im2col_1d(self.data(), cin, l, k, stride);
        let wt = kernels::transpose2(w.data(), cout, cin * k);
        let out_tc = kernels::matmul(&col, &wt, t_out, cin * k, cout);
        let data = kernels::transpose2(&out_tc, t_out, cout);
        Tensor::from_op(
            data,
            vec![cout, t_out],
            vec![self.clone(), w.clone()],
            Op::Conv1d { stride },
        )
    }

    /// Adjoint of conv1d with the same stride: x[Cin, T] with w[Cin, Cout, K].
    pub fn conv_transpose1d(&self, w: &Tensor<E>, stride: usize) -> Tensor<E> {
        assert!(stride >= 1, "conv_transpose1d stride must be positive");
        assert!(
            self.shape().len() == 2 && w.shape().len() == 3 && w.shape()[0] == self.shape()[0],
            "conv_transpose1d dimension mismatch: x {:?} vs w {:?}",
            self.shape(),
            w.shape()
        );
        let (cin, t_in) = (self.shape()[0], self.shape()[1]);
        let (cout, k) = (w.shape()[1], w.shape()[2]);
        let l_out = (t_in - 1) * stride + k;
        let data = kernels::conv_transpose1d(self.data(), w.data(), cin, t_in, cout, k, stride);
        Tensor::from_op(
            data,
            vec![cout, l_out],
            vec![self.clone(), w.clone()],
            Op::ConvTranspose1d { stride },
        )
    }

    /// 2D cross-correlation of x[Cin, H, W] with w[Cout, Cin, K, K] and
    /// symmetric zero padding.
    pub fn conv2d(&self, w: &Tensor<E>, padding: usize) -> Tensor<E> {
        assert!(
            self.shape().len() == 3
                && w.shape().len() == 4
                && w.shape()[1] == self.shape()[0]
                && w.shape()[2] == w.shape()[3],
            "conv2d dimension mismatch: x {:?} vs w {:?}",
            self.shape(),
            w.shape()
        );
        let (cin, h, wid) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        assert!(
            h + 2 * padding >= k && wid + 2 * padding >= k,
            "conv2d padded extents smaller than kernel: x {:?}, k {k}, padding {padding}",
            self.shape()
        );
        let ho = kernels::conv2d_out_dim(h, k, padding);
        let wo = kernels::conv2d_out_dim(wid, k, padding);
        let col = kernels::im2col_2d(self.data(), cin, h, wid, k, padding);
        let wt = kernels::transpose2(w.data(), cout, cin * k * k);
        let out_pc = kernels::matmul(&col, &wt, ho * wo, cin * k * k, cout);
        let data = kernels::transpose2(&out_pc, ho * wo, cout);
        Tensor::from_op(
            data,
            vec![cout, ho, wo],
            vec![self.clone(), w.clone()],
            Op::Conv2d { padding },
        )
    }

    /// Splits x[D, L] into 50%-overlapping chunks [D, 2*hop, S], zero-padding
    /// the tail.
    pub fn segment(&self, hop: usize) -> Tensor<E> {
        assert!(hop >= 1, "segment hop must be positive");
        assert_eq!(
            self.shape().len(),
            2,
            "segment requires rank 2, got {:?}",
            self.shape()
        );
        let (d, l) = (self.shape()[0], self.shape()[1]);
        let s_cnt = kernels::chunk_count(l, hop);
        let data = kernels::segment(self.data(), d, l, hop);
        Tensor::from_op(
            data,
            vec![d, 2 * hop, s_cnt],
            vec![self.clone()],
            Op::Segment { hop },
        )
    }

    /// Coverage-normalized inverse of [`Tensor::segment`], truncated to `out_len`.
    pub fn overlap_add(&self, hop: usize, out_len: usize) -> Tensor<E> {
        assert_eq!(
            self.shape().len(),
            3,
            "overlap_add requires rank 3, got {:?}",
            self.shape()
        );
        let (d, width, s_cnt) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert_eq!(
            width,
            2 * hop,
            "chunk width {} does not equal 2*hop for hop {}",
            width,
            hop
        );
        assert!(
            out_len >= 1 && out_len <= (s_cnt + 1) * hop,
            "overlap_add output length {} inconsistent with {} chunks of hop {}",
            out_len,
            s_cnt,
            hop
        );
        let data = kernels::overlap_add(self.data(), d, width, s_cnt, hop, out_len);
        Tensor::from_op(
            data,
            vec![d, out_len],
            vec![self.clone()],
            Op::OverlapAdd { hop, out_len },
        )
    }
}

/// Stacks equally-shaped tensors along a new leading axis.
pub fn stack0<E: Scalar>(parts: &[Tensor<E>]) -> Tensor<E> {
    assert!(!parts.is_empty(), "stack0 of zero tensors");
    let base = parts[0].shape().to_vec();
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        assert_eq!(
            p.shape(),
            &base[..],
            "stack0 shape mismatch: {:?} vs {:?}",
            p.shape(),
            base
        );
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(&base);
    Tensor::from_op(data, shape, parts.to_vec(), Op::Stack0)
}

/// Concatenates tensors with equal leading axes along the last axis.
pub fn concat_last<E: Scalar>(parts: &[Tensor<E>]) -> Tensor<E> {
    assert!(!parts.is_empty(), "concat_last of zero tensors");
    let lead = &parts[0].shape()[..parts[0].shape().len() - 1];
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            assert_eq!(
                &p.shape()[..p.shape().len() - 1],
                lead,
                "concat_last leading-axis mismatch: {:?} vs {:?}",
                p.shape(),
                parts[0].shape()
            );
            *p.shape().last().unwrap()
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::from_op(data, shape, parts.to_vec(), Op::ConcatLast)
}

/// Concatenates rank-3 tensors along axis 1.
pub fn concat_axis1<E: Scalar>(parts: &[Tensor<E>]) -> Tensor<E> {
    assert!(!parts.is_empty(), "concat_axis1 of zero tensors");
    let (a, c) = (parts[0].shape()[0], parts[0].shape()[2]);
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            assert!(
                p.shape().len() == 3 && p.shape()[0] == a && p.shape()[2] == c,
                "concat_axis1 shape mismatch: {:?} vs {:?}",
                p.shape(),
                parts[0].shape()
            );
            p.shape()[1]
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(a * total * c);
    for i in 0..a {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[i * w * c..(i + 1) * w * c]);
        }
    }
    Tensor::from_op(data, vec![a, total, c], parts.to_vec(), Op::ConcatAxis1)
}
