//! Reverse-mode tape over dense tensors.
//!
//! Every op records its inputs and whatever it needs for the backward pass.
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! tape visits each node after all of its consumers.

use super::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    AddConst(Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    SplitHeads(Var, usize),
    MergeHeads(Var, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    MaskMeanPool(Var, Vec<T>),
    Stack(Vec<Var>),
    PickNll(Var, Vec<Option<usize>>, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads[var.0].take()
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x);
    (y, dy)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// `x[.., n] + bias[n]`
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vx.last_dim();
        assert_eq!(vb.shape(), [n], "bias shape mismatch");
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (d, &b) in row.iter_mut().zip(vb.data()) {
                *d += b;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data);
        self.push(out, Op::AddBias(x, bias), &[x, bias])
    }

    /// Adds a constant tensor of the same shape (masks, positional codes).
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.shape(), c.shape(), "add_const shape mismatch");
        let data = vx.data().iter().zip(c.data()).map(|(&a, &b)| a + b).collect();
        let out = Tensor::new(vx.shape().to_vec(), data);
        self.push(out, Op::AddConst(x), &[x])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&a| a * s).collect();
        let out = Tensor::new(vx.shape().to_vec(), data);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.len(), c.len(), "mul_const length mismatch");
        let data = vx.data().iter().zip(&c).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(vx.shape().to_vec(), data);
        self.push(out, Op::MulConst(x, c), &[x])
    }

    /// `x[.., n] · w[n, m] -> [.., m]`
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vw.rank(), 2, "matmul weight must be 2-d");
        let (n, m) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(vx.last_dim(), n, "matmul inner dim mismatch");
        let rows = vx.len() / n.max(1);
        let mut out = vec![T::zero(); rows * m];
        T::gemm(
            rows,
            n,
            m,
            vx.data(),
            n as isize,
            1,
            vw.data(),
            m as isize,
            1,
            T::zero(),
            &mut out,
            m as isize,
            1,
        );
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        self.push(Tensor::new(shape, out), Op::MatMul(x, w), &[x, w])
    }

    /// Batched product `a[G, n, k] · b[G, k, m]`, or `a · b^T` with
    /// `b[G, m, k]` when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rank(), 3);
        assert_eq!(vb.rank(), 3);
        let (g, n, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        assert_eq!(vb.shape()[0], g, "bmm batch mismatch");
        let m = if trans_b {
            assert_eq!(vb.shape()[2], k, "bmm inner mismatch");
            vb.shape()[1]
        } else {
            assert_eq!(vb.shape()[1], k, "bmm inner mismatch");
            vb.shape()[2]
        };
        let mut out = vec![T::zero(); g * n * m];
        for gi in 0..g {
            let sa = &va.data()[gi * n * k..(gi + 1) * n * k];
            let sb = &vb.data()[gi * k * m..(gi + 1) * k * m];
            let sc = &mut out[gi * n * m..(gi + 1) * n * m];
            let (rsb, csb) = if trans_b { (1, k as isize) } else { (m as isize, 1) };
            T::gemm(n, k, m, sa, k as isize, 1, sb, rsb, csb, T::zero(), sc, m as isize, 1);
        }
        self.push(
            Tensor::new(vec![g, n, m], out),
            Op::Bmm { a, b, trans_b },
            &[a, b],
        )
    }

    /// `[B, L, H*dh] -> [B*H, L, dh]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Var {
        let vx = self.value(x);
        let (b, l, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let mut out = vec![T::zero(); vx.len()];
        let src = vx.data();
        for bi in 0..b {
            for li in 0..l {
                for h in 0..heads {
                    let s = (bi * l + li) * d + h * dh;
                    let t = ((bi * heads + h) * l + li) * dh;
                    out[t..t + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        self.push(
            Tensor::new(vec![b * heads, l, dh], out),
            Op::SplitHeads(x, heads),
            &[x],
        )
    }

    /// `[B*H, L, dh] -> [B, L, H*dh]`
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Var {
        let vx = self.value(x);
        let (bh, l, dh) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let b = bh / heads;
        let d = heads * dh;
        let mut out = vec![T::zero(); vx.len()];
        let src = vx.data();
        for bi in 0..b {
            for li in 0..l {
                for h in 0..heads {
                    let s = ((bi * heads + h) * l + li) * dh;
                    let t = (bi * l + li) * d + h * dh;
                    out[t..t + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        self.push(
            Tensor::new(vec![b, l, d], out),
            Op::MergeHeads(x, heads),
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape);
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Row lookup `table[V, d]` at `ids` -> `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let vt = self.value(table);
        let d = vt.last_dim();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in &ids {
            out.extend_from_slice(vt.row(id));
        }
        let shape = vec![ids.len(), d];
        self.push(Tensor::new(shape, out), Op::Gather(table, ids), &[table])
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let n = vx.last_dim();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::new(vx.shape().to_vec(), data);
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let n = vx.last_dim();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            log_softmax_in_place(row);
        }
        let out = Tensor::new(vx.shape().to_vec(), data);
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = vx.last_dim();
        assert_eq!(vg.shape(), [n]);
        assert_eq!(vb.shape(), [n]);
        let rows = vx.len() / n;
        let eps = T::from_f64_lossy(eps);
        let nf = T::from_usize(n).unwrap();
        let mut xhat = vec![T::zero(); vx.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        let shape = vx.shape().to_vec();
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| gelu_parts(v).0).collect();
        let out = Tensor::new(vx.shape().to_vec(), data);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Mean over the positions of `x[B, L, d]` where `mask[B, L]` is set.
    /// Rows with no set position pool to zero.
    pub fn mask_mean_pool(&mut self, x: Var, mask: &[bool]) -> Var {
        let vx = self.value(x);
        let (b, l, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        assert_eq!(mask.len(), b * l);
        let mut weights = vec![T::zero(); b * l];
        for bi in 0..b {
            let count = mask[bi * l..(bi + 1) * l].iter().filter(|&&m| m).count();
            if count == 0 {
                continue;
            }
            let w = T::one() / T::from_usize(count).unwrap();
            for li in 0..l {
                if mask[bi * l + li] {
                    weights[bi * l + li] = w;
                }
            }
        }
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            for li in 0..l {
                let w = weights[bi * l + li];
                if w == T::zero() {
                    continue;
                }
                let src = &vx.data()[(bi * l + li) * d..(bi * l + li + 1) * d];
                for (o, &s) in out[bi * d..(bi + 1) * d].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        self.push(
            Tensor::new(vec![b, d], out),
            Op::MaskMeanPool(x, weights),
            &[x],
        )
    }

    /// Stacks `[B, rest..]` inputs along a new axis 1 -> `[B, n, rest..]`.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let first = self.value(xs[0]).shape().to_vec();
        let b = first[0];
        let inner: usize = first[1..].iter().product();
        for &x in xs {
            assert_eq!(self.value(x).shape(), first.as_slice(), "stack shape mismatch");
        }
        let n = xs.len();
        let mut out = vec![T::zero(); b * n * inner];
        for (k, &x) in xs.iter().enumerate() {
            let src = self.value(x).data();
            for bi in 0..b {
                let t = (bi * n + k) * inner;
                out[t..t + inner].copy_from_slice(&src[bi * inner..(bi + 1) * inner]);
            }
        }
        let mut shape = vec![b, n];
        shape.extend_from_slice(&first[1..]);
        self.push(Tensor::new(shape, out), Op::Stack(xs.to_vec()), xs)
    }

    /// Mean negative log-likelihood over rows of `logp[N, C]` whose target
    /// is `Some`. Returns a scalar; zero when no row has a target.
    pub fn pick_nll(&mut self, logp: Var, targets: Vec<Option<usize>>) -> Var {
        let vl = self.value(logp);
        let c = vl.last_dim();
        assert_eq!(vl.len() / c, targets.len(), "one target per row");
        let count = targets.iter().filter(|t| t.is_some()).count();
        let inv = if count == 0 {
            T::zero()
        } else {
            T::one() / T::from_usize(count).unwrap()
        };
        let mut total = T::zero();
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                assert!(t < c, "target {t} out of range for {c} classes");
                total += vl.data()[i * c + t];
            }
        }
        let out = Tensor::scalar(-total * inv);
        self.push(out, Op::PickNll(logp, targets, inv), &[logp])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Grads { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop(&self, node: &Node<T>, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let g = gout.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &v in [a, b].into_iter() {
                    if self.needs(v) {
                        acc(grads, v, self.value(v).shape(), |buf| {
                            for (o, &x) in buf.iter_mut().zip(g) {
                                *o += x;
                            }
                        });
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.needs(*x) {
                    acc(grads, *x, self.value(*x).shape(), |buf| {
                        for (o, &v) in buf.iter_mut().zip(g) {
                            *o += v;
                        }
                    });
                }
                if self.needs(*bias) {
                    let n = self.value(*bias).len();
                    acc(grads, *bias, &[n], |buf| {
                        for row in g.chunks(n) {
                            for (o, &v) in buf.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    });
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                if self.needs(*x) {
                    acc(grads, *x, self.value(*x).shape(), |buf| {
                        for (o, &v) in buf.iter_mut().zip(g) {
                            *o += v;
                        }
                    });
                }
            }
            Op::Scale(x, s) => {
                if self.needs(*x) {
                    acc(grads, *x, self.value(*x).shape(), |buf| {
                        for (o, &v) in buf.iter_mut().zip(g) {
                            *o += v * *s;
                        }
                    });
                }
            }
            Op::MulConst(x, c) => {
                if self.needs(*x) {
                    acc(grads, *x, self.value(*x).shape(), |buf| {
                        for ((o, &v), &k) in buf.iter_mut().zip(g).zip(c) {
                            *o += v * k;
                        }
                    });
                }
            }
            Op::MatMul(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (n, m) = (vw.shape()[0], vw.shape()[1]);
                let rows = vx.len() / n.max(1);
                if self.needs(*x) {
                    // dX = dY · W^T
                    acc(grads, *x, vx.shape(), |buf| {
                        T::gemm(rows, m, n, g, m as isize, 1, vw.data(), 1, m as isize, T::one(), buf, n as isize, 1);
                    });
                }
                if self.needs(*w) {
                    // dW = X^T · dY
                    acc(grads, *w, vw.shape(), |buf| {
                        T::gemm(n, rows, m, vx.data(), 1, n as isize, g, m as isize, 1, T::one(), buf, m as isize, 1);
                    });
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (gn, n, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let m = if *trans_b { vb.shape()[1] } else { vb.shape()[2] };
                if self.needs(*a) {
                    acc(grads, *a, va.shape(), |buf| {
                        for gi in 0..gn {
                            let dc = &g[gi * n * m..(gi + 1) * n * m];
                            let sb = &vb.data()[gi * k * m..(gi + 1) * k * m];
                            let da = &mut buf[gi * n * k..(gi + 1) * n * k];
                            // trans_b: dA = dC · B with B[m, k]; else dA = dC · B^T with B[k, m]
                            let (rsb, csb) = if *trans_b { (k as isize, 1) } else { (1, m as isize) };
                            T::gemm(n, m, k, dc, m as isize, 1, sb, rsb, csb, T::one(), da, k as isize, 1);
                        }
                    });
                }
                if self.needs(*b) {
                    acc(grads, *b, vb.shape(), |buf| {
                        for gi in 0..gn {
                            let dc = &g[gi * n * m..(gi + 1) * n * m];
                            let sa = &va.data()[gi * n * k..(gi + 1) * n * k];
                            let db = &mut buf[gi * k * m..(gi + 1) * k * m];
                            if *trans_b {
                                // dB[m, k] = dC^T · A
                                T::gemm(m, n, k, dc, 1, m as isize, sa, k as isize, 1, T::one(), db, k as isize, 1);
                            } else {
                                // dB[k, m] = A^T · dC
                                T::gemm(k, n, m, sa, 1, k as isize, dc, m as isize, 1, T::one(), db, m as isize, 1);
                            }
                        }
                    });
                }
            }
            Op::SplitHeads(x, heads) => {
                if self.needs(*x) {
                    let vx = self.value(*x);
                    let (b, l, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                    let dh = d / heads;
                    acc(grads, *x, vx.shape(), |buf| {
                        for bi in 0..b {
                            for li in 0..l {
                                for h in 0..*heads {
                                    let s = (bi * l + li) * d + h * dh;
                                    let t = ((bi * heads + h) * l + li) * dh;
                                    for j in 0..dh {
                                        buf[s + j] += g[t + j];
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::MergeHeads(x, heads) => {
                if self.needs(*x) {
                    let vx = self.value(*x);
                    let (bh, l, dh) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                    let b = bh / heads;
                    let d = heads * dh;
                    acc(grads, *x, vx.shape(), |buf| {
                        for bi in 0..b {
                            for li in 0..l {
                                for h in 0..*heads {
                                    let s = ((bi * heads + h) * l + li) * dh;
                                    let t = (bi * l + li) * d + h * dh;
                                    for j in 0..dh {
                                        buf[s + j] += g[t + j];
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Gather(table, ids) => {
                if self.needs(*table) {
                    let vt = self.value(*table);
                    let d = vt.last_dim();
                    acc(grads, *table, vt.shape(), |buf| {
                        for (i, &id) in ids.iter().enumerate() {
                            for j in 0..d {
                                buf[id * d + j] += g[i * d + j];
                            }
                        }
                    });
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let y = node.value.data();
                    let n = node.value.last_dim();
                    acc(grads, *x, node.value.shape(), |buf| {
                        for ((yr, gr), br) in y.chunks(n).zip(g.chunks(n)).zip(buf.chunks_mut(n)) {
                            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            for j in 0..n {
                                br[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::LogSoftmax(x) => {
                if self.needs(*x) {
                    let y = node.value.data();
                    let n = node.value.last_dim();
                    acc(grads, *x, node.value.shape(), |buf| {
                        for ((yr, gr), br) in y.chunks(n).zip(g.chunks(n)).zip(buf.chunks_mut(n)) {
                            let total: T = gr.iter().copied().sum();
                            for j in 0..n {
                                br[j] += gr[j] - yr[j].exp() * total;
                            }
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = node.value.last_dim();
                let vg = self.value(*gamma).data();
                if self.needs(*gamma) {
                    acc(grads, *gamma, &[n], |buf| {
                        for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                            for j in 0..n {
                                buf[j] += gr[j] * hr[j];
                            }
                        }
                    });
                }
                if self.needs(*beta) {
                    acc(grads, *beta, &[n], |buf| {
                        for gr in g.chunks(n) {
                            for j in 0..n {
                                buf[j] += gr[j];
                            }
                        }
                    });
                }
                if self.needs(*x) {
                    let nf = T::from_usize(n).unwrap();
                    acc(grads, *x, node.value.shape(), |buf| {
                        for (r, ((gr, hr), br)) in g
                            .chunks(n)
                            .zip(xhat.chunks(n))
                            .zip(buf.chunks_mut(n))
                            .enumerate()
                        {
                            let mut mean_dh = T::zero();
                            let mut mean_dh_h = T::zero();
                            for j in 0..n {
                                let dh = gr[j] * vg[j];
                                mean_dh += dh;
                                mean_dh_h += dh * hr[j];
                            }
                            mean_dh /= nf;
                            mean_dh_h /= nf;
                            for j in 0..n {
                                let dh = gr[j] * vg[j];
                                br[j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                    });
                }
            }
            Op::Gelu(x) => {
                if self.needs(*x) {
                    let vx = self.value(*x);
                    acc(grads, *x, vx.shape(), |buf| {
                        for ((o, &xv), &gv) in buf.iter_mut().zip(vx.data()).zip(g) {
                            *o += gv * gelu_parts(xv).1;
                        }
                    });
                }
            }
            Op::MaskMeanPool(x, weights) => {
                if self.needs(*x) {
                    let vx = self.value(*x);
                    let (b, l, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                    acc(grads, *x, vx.shape(), |buf| {
                        for bi in 0..b {
                            for li in 0..l {
                                let w = weights[bi * l + li];
                                if w == T::zero() {
                                    continue;
                                }
                                for j in 0..d {
                                    buf[(bi * l + li) * d + j] += w * g[bi * d + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Stack(xs) => {
                let n = xs.len();
                let b = node.value.shape()[0];
                let inner = node.value.len() / (b * n);
                for (k, &x) in xs.iter().enumerate() {
                    if !self.needs(x) {
                        continue;
                    }
                    acc(grads, x, self.value(x).shape(), |buf| {
                        for bi in 0..b {
                            let s = (bi * n + k) * inner;
                            for j in 0..inner {
                                buf[bi * inner + j] += g[s + j];
                            }
                        }
                    });
                }
            }
            Op::PickNll(logp, targets, inv) => {
                if self.needs(*logp) {
                    let vl = self.value(*logp);
                    let c = vl.last_dim();
                    let scale = g[0] * *inv;
                    acc(grads, *logp, vl.shape(), |buf| {
                        for (i, t) in targets.iter().enumerate() {
                            if let Some(t) = *t {
                                buf[i * c + t] -= scale;
                            }
                        }
                    });
                }
            }
        }
    }
}

fn acc<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
    f: impl FnOnce(&mut [T]),
) {
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
    f(slot.data_mut());
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn log_softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}
