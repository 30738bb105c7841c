//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records primitive operations in topological order. Each
//! node owns its forward value; `backward` sweeps the tape once in
//! reverse, accumulating gradients into the `requires_grad` leaves.
//! Leaf gradients persist across calls (repeated backward accumulates);
//! interior gradients are scratch storage local to one sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId),
    AddScalar(NodeId),
    MaxScalar(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Tanh(NodeId),
    Logistic(NodeId),
    Silu(NodeId),
    Relu(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Conv1d { x: NodeId, w: NodeId, b: NodeId, pad: usize },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    SoftmaxCols(NodeId),
    LogSoftmaxRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanCols(NodeId),
    AddRowVec(NodeId, NodeId),
    MulRowVec(NodeId, NodeId),
    AddChan(NodeId, NodeId),
    MulChan(NodeId, NodeId),
    BroadcastCols(NodeId),
    SliceRows { a: NodeId, lo: usize, hi: usize },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    TimeSlice { x: NodeId, frame: usize },
    GatherRowsT { table: NodeId, idx: Vec<usize> },
    StopGrad(NodeId),
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op,
    requires: bool,
    /// Persistent gradient, leaves only.
    leaf_grad: Option<Vec<F>>,
    /// Scalar attached to Scale / AddScalar / MaxScalar.
    scalar: F,
    /// Batch-norm saved statistics: (mean, var, inv_std) per channel.
    bn_stats: Option<(Vec<F>, Vec<F>, Vec<F>)>,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    last_backward_visits: usize,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn axpy<F: Scalar>(dst: &mut [F], a: F, src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d = *d + a * s;
    }
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc = acc + x * y;
    }
    acc
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Graph<F> {
        Graph { nodes: Vec::new(), last_backward_visits: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a leaf, shaped like its value.
    pub fn leaf_grad(&self, id: NodeId) -> Option<Tensor<F>> {
        let node = &self.nodes[id.0];
        node.leaf_grad.as_ref().map(|g| {
            Tensor::from_vec(node.value.shape().to_vec(), g.clone()).expect("grad shape")
        })
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.leaf_grad.as_mut() {
                g.iter_mut().for_each(|x| *x = F::zero());
            }
        }
    }

    /// Number of nodes examined by the most recent backward sweep.
    pub fn last_backward_visits(&self) -> usize {
        self.last_backward_visits
    }

    fn push(&mut self, value: Tensor<F>, op: Op, requires: bool, scalar: F) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires,
            leaf_grad: None,
            scalar,
            bn_stats: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires
    }

    /// Inserts a tensor as a leaf. Gradients accumulate on it iff the
    /// tensor was marked `with_grad`.
    pub fn leaf(&mut self, t: Tensor<F>) -> NodeId {
        let requires = t.requires_grad();
        let id = self.push(t, Op::Leaf, requires, F::zero());
        if requires {
            let n = self.nodes[id.0].value.numel();
            self.nodes[id.0].leaf_grad = Some(vec![F::zero(); n]);
        }
        id
    }

    /// Inserts a constant (never differentiated).
    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, false, F::zero())
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa != sb {
            return Err(Error::shape(op, "shape", format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x + y)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(v, Op::Add(a, b), req, F::zero()))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x - y)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(v, Op::Sub(a, b), req, F::zero()))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x * y)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(v, Op::Mul(a, b), req, F::zero()))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| -x);
        let req = self.requires(a);
        self.push(v, Op::Neg(a), req, F::zero())
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x * c);
        let req = self.requires(a);
        self.push(v, Op::Scale(a), req, c)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x + c);
        let req = self.requires(a);
        self.push(v, Op::AddScalar(a), req, c)
    }

    /// Elementwise `max(a, c)`; gradient flows only where `a > c`.
    pub fn max_scalar(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.max(c));
        let req = self.requires(a);
        self.push(v, Op::MaxScalar(a), req, c)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.exp());
        let req = self.requires(a);
        self.push(v, Op::Exp(a), req, F::zero())
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.ln());
        let req = self.requires(a);
        self.push(v, Op::Ln(a), req, F::zero())
    }

    pub fn tanh_of(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.tanh());
        let req = self.requires(a);
        self.push(v, Op::Tanh(a), req, F::zero())
    }

    pub fn logistic(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| F::one() / (F::one() + (-x).exp()));
        let req = self.requires(a);
        self.push(v, Op::Logistic(a), req, F::zero())
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x / (F::one() + (-x).exp()));
        let req = self.requires(a);
        self.push(v, Op::Silu(a), req, F::zero())
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x.max(F::zero()));
        let req = self.requires(a);
        self.push(v, Op::Relu(a), req, F::zero())
    }

    /// Identity in the forward pass; blocks gradient flow in backward.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.clone();
        self.push(v, Op::StopGrad(a), false, F::zero())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape().to_vec();
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", "rank", 2, format!("{} and {}", sa.len(), sb.len())));
        }
        if sa[1] != sb[0] {
            return Err(Error::shape("matmul", "inner dimension", sa[1], sb[0]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        {
            let da = self.nodes[a.0].value.data();
            let db = self.nodes[b.0].value.data();
            for i in 0..m {
                let out_row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    axpy(out_row, da[i * k + p], &db[p * n..(p + 1) * n]);
                }
            }
        }
        let v = Tensor::from_vec(vec![m, n], out)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(v, Op::MatMul(a, b), req, F::zero()))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a.0].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", "rank", 2, s.len()));
        }
        let (r, c) = (s[0], s[1]);
        let da = self.nodes[a.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = da[i * c + j];
            }
        }
        let v = Tensor::from_vec(vec![c, r], out)?;
        let req = self.requires(a);
        Ok(self.push(v, Op::Transpose(a), req, F::zero()))
    }

    /// 1-D cross-correlation along the last axis.
    ///
    /// `x`: `[C_in, L]` or `[B, C_in, L]`; `w`: `[C_out, C_in, K]` with K
    /// odd; `b`: `[C_out]`. Output length is `L + 2*pad - K + 1`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, pad: usize) -> Result<NodeId> {
        let sx = self.nodes[x.0].value.shape().to_vec();
        let sw = self.nodes[w.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape().to_vec();
        if sw.len() != 3 {
            return Err(Error::shape("conv1d", "kernel rank", 3, sw.len()));
        }
        let (batch, c_in, len) = match sx.len() {
            2 => (1, sx[0], sx[1]),
            3 => (sx[0], sx[1], sx[2]),
            r => return Err(Error::shape("conv1d", "input rank", "2 or 3", r)),
        };
        let (c_out, k) = (sw[0], sw[2]);
        if sw[1] != c_in {
            return Err(Error::shape("conv1d", "input channels", sw[1], c_in));
        }
        if sb != [c_out] {
            return Err(Error::shape("conv1d", "bias length", c_out, format!("{sb:?}")));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!("conv1d kernel width must be odd, got {k}")));
        }
        if len + 2 * pad < k {
            return Err(Error::shape("conv1d", "length", format!(">= {k}"), len + 2 * pad));
        }
        let l_out = len + 2 * pad - k + 1;

        let mut out = vec![F::zero(); batch * c_out * l_out];
        {
            let dx = self.nodes[x.0].value.data();
            let dw = self.nodes[w.0].value.data();
            let db = self.nodes[b.0].value.data();
            for bi in 0..batch {
                for co in 0..c_out {
                    let out_row = &mut out[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                    out_row.iter_mut().for_each(|o| *o = db[co]);
                    for ci in 0..c_in {
                        let x_row = &dx[(bi * c_in + ci) * len..(bi * c_in + ci + 1) * len];
                        for kk in 0..k {
                            let wv = dw[(co * c_in + ci) * k + kk];
                            let shift = kk as isize - pad as isize;
                            let lo = (-shift).max(0) as usize;
                            let hi = ((len as isize - shift).min(l_out as isize)).max(0) as usize;
                            if lo < hi {
                                let xs = &x_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                                axpy(&mut out_row[lo..hi], wv, xs);
                            }
                        }
                    }
                }
            }
        }
        let out_shape = if sx.len() == 2 {
            vec![c_out, l_out]
        } else {
            vec![batch, c_out, l_out]
        };
        let v = Tensor::from_vec(out_shape, out)?;
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(v, Op::Conv1d { x, w, b, pad }, req, F::zero()))
    }

    /// Batch normalization over (batch, length) per channel, training
    /// statistics. `x`: `[B, C, L]`; `gamma`, `beta`: `[C]`.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: F) -> Result<NodeId> {
        let sx = self.nodes[x.0].value.shape().to_vec();
        if sx.len() != 3 {
            return Err(Error::shape("batch_norm", "input rank", 3, sx.len()));
        }
        let (batch, ch, len) = (sx[0], sx[1], sx[2]);
        if self.nodes[gamma.0].value.shape() != [ch] {
            return Err(Error::shape(
                "batch_norm",
                "gamma length",
                ch,
                format!("{:?}", self.nodes[gamma.0].value.shape()),
            ));
        }
        if self.nodes[beta.0].value.shape() != [ch] {
            return Err(Error::shape(
                "batch_norm",
                "beta length",
                ch,
                format!("{:?}", self.nodes[beta.0].value.shape()),
            ));
        }
        let n = F::of((batch * len) as f64);
        let mut mean = vec![F::zero(); ch];
        let mut var = vec![F::zero(); ch];
        let mut inv_std = vec![F::zero(); ch];
        let mut out = vec![F::zero(); batch * ch * len];
        {
            let dx = self.nodes[x.0].value.data();
            let g = self.nodes[gamma.0].value.data();
            let be = self.nodes[beta.0].value.data();
            for c in 0..ch {
                let mut s = F::zero();
                for b in 0..batch {
                    let row = &dx[(b * ch + c) * len..(b * ch + c + 1) * len];
                    s = s + row.iter().copied().sum();
                }
                let mu = s / n;
                let mut sq = F::zero();
                for b in 0..batch {
                    let row = &dx[(b * ch + c) * len..(b * ch + c + 1) * len];
                    for &xv in row {
                        let d = xv - mu;
                        sq = sq + d * d;
                    }
                }
                let vv = sq / n;
                let inv = F::one() / (vv + eps).sqrt();
                mean[c] = mu;
                var[c] = vv;
                inv_std[c] = inv;
                let (gc, bc) = (g[c], be[c]);
                for b in 0..batch {
                    let src = &dx[(b * ch + c) * len..(b * ch + c + 1) * len];
                    let dst = &mut out[(b * ch + c) * len..(b * ch + c + 1) * len];
                    for (o, &xv) in dst.iter_mut().zip(src.iter()) {
                        *o = gc * (xv - mu) * inv + bc;
                    }
                }
            }
        }
        let v = Tensor::from_vec(sx, out)?;
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        let id = self.push(v, Op::BatchNorm { x, gamma, beta }, req, eps);
        self.nodes[id.0].bn_stats = Some((mean, var, inv_std));
        Ok(id)
    }

    /// Saved batch statistics (mean, variance) of a batch_norm node.
    pub fn bn_batch_stats(&self, id: NodeId) -> Option<(&[F], &[F])> {
        self.nodes[id.0].bn_stats.as_ref().map(|(m, v, _)| (m.as_slice(), v.as_slice()))
    }

    /// Softmax over the row axis, independently per column.
    pub fn softmax_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a.0].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape("softmax_cols", "rank", 2, s.len()));
        }
        let (r, c) = (s[0], s[1]);
        let da = self.nodes[a.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for j in 0..c {
            let mut m = F::neg_infinity();
            for i in 0..r {
                m = m.max(da[i * c + j]);
            }
            let mut sum = F::zero();
            for i in 0..r {
                let e = (da[i * c + j] - m).exp();
                out[i * c + j] = e;
                sum = sum + e;
            }
            for i in 0..r {
                out[i * c + j] = out[i * c + j] / sum;
            }
        }
        let v = Tensor::from_vec(s, out)?;
        let req = self.requires(a);
        Ok(self.push(v, Op::SoftmaxCols(a), req, F::zero()))
    }

    /// Log-softmax over the column axis, independently per row.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a.0].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape("log_softmax_rows", "rank", 2, s.len()));
        }
        let (r, c) = (s[0], s[1]);
        let da = self.nodes[a.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &da[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(F::neg_infinity(), |a, b| a.max(b));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<F>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let v = Tensor::from_vec(s, out)?;
        let req = self.requires(a);
        Ok(self.push(v, Op::LogSoftmaxRows(a), req, F::zero()))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: F = self.nodes[a.0].value.data().iter().copied().sum();
        let req = self.requires(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), req, F::zero())
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = F::of(self.nodes[a.0].value.numel() as f64);
        let s: F = self.nodes[a.0].value.data().iter().copied().sum();
        let req = self.requires(a);
        self.push(Tensor::scalar(s / n), Op::MeanAll(a), req, F::zero())
    }

    /// Mean over columns: `[r, c] -> [r, 1]`.
    pub fn mean_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a.0].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape("mean_cols", "rank", 2, s.len()));
        }
        let (r, c) = (s[0], s[1]);
        let da = self.nodes[a.0].value.data();
        let inv = F::one() / F::of(c as f64);
        let out: Vec<F> = (0..r)
            .map(|i| da[i * c..(i + 1) * c].iter().copied().sum::<F>() * inv)
            .collect();
        let v = Tensor::from_vec(vec![r, 1], out)?;
        let req = self.requires(a);
        Ok(self.push(v, Op::MeanCols(a), req, F::zero()))
    }

    fn row_vec_check(&self, op: &'static str, a: NodeId, v: NodeId) -> Result<(usize, usize)> {
        let sa = self.nodes[a.0].value.shape().to_vec();
        let sv = self.nodes[v.0].value.shape().to_vec();
        if sa.len() != 2 {
            return Err(Error::shape(op, "rank", 2, sa.len()));
        }
        if sv != [sa[0]] {
            return Err(Error::shape(op, "vector length", sa[0], format!("{sv:?}")));
        }
        Ok((sa[0], sa[1]))
    }

    /// `a[i, j] + v[i]`, broadcasting the vector across columns.
    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = self.row_vec_check("add_row_vec", a, v)?;
        let da = self.nodes[a.0].value.data();
        let dv = self.nodes[v.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let vi = dv[i];
            for j in 0..c {
                out[i * c + j] = da[i * c + j] + vi;
            }
        }
        let t = Tensor::from_vec(vec![r, c], out)?;
        let req = self.requires(a) || self.requires(v);
        Ok(self.push(t, Op::AddRowVec(a, v), req, F::zero()))
    }

    /// `a[i, j] * v[i]`.
    pub fn mul_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (r, c) = self.row_vec_check("mul_row_vec", a, v)?;
        let da = self.nodes[a.0].value.data();
        let dv = self.nodes[v.0].value.data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let vi = dv[i];
            for j in 0..c {
                out[i * c + j] = da[i * c + j] * vi;
            }
        }
        let t = Tensor::from_vec(vec![r, c], out)?;
        let req = self.requires(a) || self.requires(v);
        Ok(self.push(t, Op::MulRowVec(a, v), req, F::zero()))
    }

    fn chan_check(&self, op: &'static str, x: NodeId, v: NodeId) -> Result<(usize, usize, usize)> {
        let sx = self.nodes[x.0].value.shape().to_vec();
        let sv = self.nodes[v.0].value.shape().to_vec();
        if sx.len() != 3 {
            return Err(Error::shape(op, "input rank", 3, sx.len()));
        }
        if sv != [sx[1]] {
            return Err(Error::shape(op, "channel count", sx[1], format!("{sv:?}")));
        }
        Ok((sx[0], sx[1], sx[2]))
    }

    /// `x[b, c, l] + v[c]`.
    pub fn add_chan(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (b, ch, l) = self.chan_check("add_chan", x, v)?;
        let dx = self.nodes[x.0].value.data();
        let dv = self.nodes[v.0].value.data();
        let mut out = vec![F::zero(); b * ch * l];
        for bi in 0..b {
            for c in 0..ch {
                let vi = dv[c];
                let base = (bi * ch + c) * l;
                for j in 0..l {
                    out[base + j] = dx[base + j] + vi;
                }
            }
        }
        let t = Tensor::from_vec(vec![b, ch, l], out)?;
        let req = self.requires(x) || self.requires(v);
        Ok(self.push(t, Op::AddChan(x, v), req, F::zero()))
    }

    /// `x[b, c, l] * v[c]`.
    pub fn mul_chan(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (b, ch, l) = self.chan_check("mul_chan", x, v)?;
        let dx = self.nodes[x.0].value.data();
        let dv = self.nodes[v.0].value.data();
        let mut out = vec![F::zero(); b * ch * l];
        for bi in 0..b {
            for c in 0..ch {
                let vi = dv[c];
                let base = (bi * ch + c) * l;
                for j in 0..l {
                    out[base + j] = dx[base + j] * vi;
                }
            }
        }
        let t = Tensor::from_vec(vec![b, ch, l], out)?;
        let req = self.requires(x) || self.requires(v);
        Ok(self.push(t, Op::MulChan(x, v), req, F::zero()))
    }

    /// Repeats a column `[r, 1]` across `cols` columns.
    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        let s = self.nodes[a.0].value.shape().to_vec();
        if s.len() != 2 || s[1] != 1 {
            return Err(Error::shape("broadcast_cols", "shape", "[r, 1]", format!("{s:?}")));
        }
        let r = s[0];
        let da = self.nodes[a.0].value.data();
        let mut out = vec![F::zero(); r * cols];
        for i in 0..r {
            out[i * cols..(i + 1) * cols].iter_mut().for_each(|x| *x = da[i]);
        }
        let t = Tensor::from_vec(vec![r, cols], out)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::BroadcastCols(a), req, F::zero()))
    }

    /// Rows `lo..hi` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let s = self.nodes[a.0].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape("slice_rows", "rank", 2, s.len()));
        }
        if lo >= hi || hi > s[0] {
            return Err(Error::InvalidArgument(format!(
                "slice_rows: range {lo}..{hi} out of bounds for {} rows",
                s[0]
            )));
        }
        let c = s[1];
        let data = self.nodes[a.0].value.data()[lo * c..hi * c].to_vec();
        let t = Tensor::from_vec(vec![hi - lo, c], data)?;
        let req = self.requires(a);
        Ok(self.push(t, Op::SliceRows { a, lo, hi }, req, F::zero()))
    }

    /// Stacks rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows: empty input list".into()));
        }
        let c = {
            let s0 = self.nodes[parts[0].0].value.shape();
            if s0.len() != 2 {
                return Err(Error::shape("concat_rows", "rank", 2, s0.len()));
            }
            s0[1]
        };
        let mut rows = 0;
        for &p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.len() != 2 || s[1] != c {
                return Err(Error::shape("concat_rows", "columns", c, format!("{s:?}")));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let t = Tensor::from_vec(vec![rows, c], data)?;
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), req, F::zero()))
    }

    /// Stacks rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols: empty input list".into()));
        }
        let r = {
            let s0 = self.nodes[parts[0].0].value.shape();
            if s0.len() != 2 {
                return Err(Error::shape("concat_cols", "rank", 2, s0.len()));
            }
            s0[0]
        };
        let mut cols = 0;
        for &p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.len() != 2 || s[0] != r {
                return Err(Error::shape("concat_cols", "rows", r, format!("{s:?}")));
            }
            cols += s[1];
        }
        let mut data = vec![F::zero(); r * cols];
        let mut off = 0;
        for &p in parts {
            let pc = self.nodes[p.0].value.shape()[1];
            let src = self.nodes[p.0].value.data();
            for i in 0..r {
                data[i * cols + off..i * cols + off + pc].copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        let t = Tensor::from_vec(vec![r, cols], data)?;
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), req, F::zero()))
    }

    /// Extracts frame `frame` of `[B, C, L]` as a `[C, B]` matrix.
    pub fn time_slice(&mut self, x: NodeId, frame: usize) -> Result<NodeId> {
        let s = self.nodes[x.0].value.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape("time_slice", "rank", 3, s.len()));
        }
        let (b, ch, l) = (s[0], s[1], s[2]);
        if frame >= l {
            return Err(Error::InvalidArgument(format!("time_slice: frame {frame} out of {l}")));
        }
        let dx = self.nodes[x.0].value.data();
        let mut out = vec![F::zero(); ch * b];
        for bi in 0..b {
            for c in 0..ch {
                out[c * b + bi] = dx[(bi * ch + c) * l + frame];
            }
        }
        let t = Tensor::from_vec(vec![ch, b], out)?;
        let req = self.requires(x);
        Ok(self.push(t, Op::TimeSlice { x, frame }, req, F::zero()))
    }

    /// Gathers rows of an embedding table, transposed: `table[V, D]` and
    /// `idx` of length P give a `[D, P]` matrix whose column p is row
    /// `idx[p]`.
    pub fn gather_rows_t(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let s = self.nodes[table.0].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape("gather_rows_t", "rank", 2, s.len()));
        }
        let (v, d) = (s[0], s[1]);
        if idx.is_empty() {
            return Err(Error::InvalidArgument("gather_rows_t: empty index list".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!("gather_rows_t: index {bad} out of {v} rows")));
        }
        let p = idx.len();
        let dt = self.nodes[table.0].value.data();
        let mut out = vec![F::zero(); d * p];
        for (pi, &row) in idx.iter().enumerate() {
            for di in 0..d {
                out[di * p + pi] = dt[row * d + di];
            }
        }
        let t = Tensor::from_vec(vec![d, p], out)?;
        let req = self.requires(table);
        Ok(self.push(t, Op::GatherRowsT { table, idx: idx.to_vec() }, req, F::zero()))
    }

    /// Reverse sweep from `loss` (a 1-element tensor). Gradients of
    /// `requires_grad` leaves accumulate across calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        // Scratch gradients for this sweep; leaves flush into leaf_grad.
        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![F::one()]);
        let mut visits = 0usize;

        for i in (0..=loss.0).rev() {
            visits += 1;
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                if let Some(acc) = self.nodes[i].leaf_grad.as_mut() {
                    for (a, &gi) in acc.iter_mut().zip(g.iter()) {
                        *a = *a + gi;
                    }
                }
                continue;
            }
            apply_backward(&self.nodes, i, &g, &mut grads);
        }
        self.last_backward_visits = visits;
        Ok(())
    }
}

fn grad_buf<'a, F: Scalar>(
    grads: &'a mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    id: NodeId,
) -> Option<&'a mut Vec<F>> {
    if !nodes[id.0].requires {
        return None;
    }
    let numel = nodes[id.0].value.numel();
    Some(grads[id.0].get_or_insert_with(|| vec![F::zero(); numel]))
}

fn apply_backward<F: Scalar>(nodes: &[Node<F>], i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
    match &nodes[i].op {
        Op::Leaf => unreachable!("leaf handled by caller"),
        Op::StopGrad(_) => {}
        Op::Add(a, b) => {
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                axpy(ga, F::one(), g);
            }
            if let Some(gb) = grad_buf(grads, nodes, *b) {
                axpy(gb, F::one(), g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                axpy(ga, F::one(), g);
            }
            if let Some(gb) = grad_buf(grads, nodes, *b) {
                axpy(gb, -F::one(), g);
            }
        }
        Op::Mul(a, b) => {
            if nodes[a.0].requires {
                let vb = nodes[b.0].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &bv) in ga.iter_mut().zip(g.iter()).zip(vb.iter()) {
                    *o = *o + gi * bv;
                }
            }
            if nodes[b.0].requires {
                let va = nodes[a.0].value.data();
                let gb = grad_buf(grads, nodes, *b).unwrap();
                for ((o, &gi), &av) in gb.iter_mut().zip(g.iter()).zip(va.iter()) {
                    *o = *o + gi * av;
                }
            }
        }
        Op::Neg(a) => {
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                axpy(ga, -F::one(), g);
            }
        }
        Op::Scale(a) => {
            let c = nodes[i].scalar;
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                axpy(ga, c, g);
            }
        }
        Op::AddScalar(a) => {
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                axpy(ga, F::one(), g);
            }
        }
        Op::MaxScalar(a) => {
            let c = nodes[i].scalar;
            if nodes[a.0].requires {
                let va = nodes[a.0].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &av) in ga.iter_mut().zip(g.iter()).zip(va.iter()) {
                    if av > c {
                        *o = *o + gi;
                    }
                }
            }
        }
        Op::Exp(a) => {
            if nodes[a.0].requires {
                let y = nodes[i].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &yv) in ga.iter_mut().zip(g.iter()).zip(y.iter()) {
                    *o = *o + gi * yv;
                }
            }
        }
        Op::Ln(a) => {
            if nodes[a.0].requires {
                let x = nodes[a.0].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &xv) in ga.iter_mut().zip(g.iter()).zip(x.iter()) {
                    *o = *o + gi / xv;
                }
            }
        }
        Op::Tanh(a) => {
            if nodes[a.0].requires {
                let y = nodes[i].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &yv) in ga.iter_mut().zip(g.iter()).zip(y.iter()) {
                    *o = *o + gi * (F::one() - yv * yv);
                }
            }
        }
        Op::Logistic(a) => {
            if nodes[a.0].requires {
                let y = nodes[i].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &yv) in ga.iter_mut().zip(g.iter()).zip(y.iter()) {
                    *o = *o + gi * yv * (F::one() - yv);
                }
            }
        }
        Op::Silu(a) => {
            if nodes[a.0].requires {
                let x = nodes[a.0].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &xv) in ga.iter_mut().zip(g.iter()).zip(x.iter()) {
                    let s = F::one() / (F::one() + (-xv).exp());
                    *o = *o + gi * s * (F::one() + xv * (F::one() - s));
                }
            }
        }
        Op::Relu(a) => {
            if nodes[a.0].requires {
                let x = nodes[a.0].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for ((o, &gi), &xv) in ga.iter_mut().zip(g.iter()).zip(x.iter()) {
                    if xv > F::zero() {
                        *o = *o + gi;
                    }
                }
            }
        }
        Op::MatMul(a, b) => {
            let sa = nodes[a.0].value.shape();
            let sb = nodes[b.0].value.shape();
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if nodes[a.0].requires {
                let db = nodes[b.0].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for i2 in 0..m {
                    let grow = &g[i2 * n..(i2 + 1) * n];
                    for p in 0..k {
                        ga[i2 * k + p] = ga[i2 * k + p] + dot(grow, &db[p * n..(p + 1) * n]);
                    }
                }
            }
            if nodes[b.0].requires {
                let da = nodes[a.0].value.data();
                let gb = grad_buf(grads, nodes, *b).unwrap();
                for i2 in 0..m {
                    let grow = &g[i2 * n..(i2 + 1) * n];
                    for p in 0..k {
                        axpy(&mut gb[p * n..(p + 1) * n], da[i2 * k + p], grow);
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let s = nodes[a.0].value.shape();
            let (r, c) = (s[0], s[1]);
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                for i2 in 0..r {
                    for j in 0..c {
                        ga[i2 * c + j] = ga[i2 * c + j] + g[j * r + i2];
                    }
                }
            }
        }
        Op::Conv1d { x, w, b, pad } => {
            let sx = nodes[x.0].value.shape();
            let sw = nodes[w.0].value.shape();
            let (batch, c_in, len) = match sx.len() {
                2 => (1, sx[0], sx[1]),
                _ => (sx[0], sx[1], sx[2]),
            };
            let (c_out, k) = (sw[0], sw[2]);
            let l_out = len + 2 * pad - k + 1;
            if nodes[b.0].requires {
                let gb = grad_buf(grads, nodes, *b).unwrap();
                for bi in 0..batch {
                    for co in 0..c_out {
                        let grow = &g[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                        gb[co] = gb[co] + grow.iter().copied().sum();
                    }
                }
            }
            if nodes[w.0].requires {
                let dx = nodes[x.0].value.data();
                let gw = grad_buf(grads, nodes, *w).unwrap();
                for bi in 0..batch {
                    for co in 0..c_out {
                        let grow = &g[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                        for ci in 0..c_in {
                            let x_row = &dx[(bi * c_in + ci) * len..(bi * c_in + ci + 1) * len];
                            for kk in 0..k {
                                let shift = kk as isize - *pad as isize;
                                let lo = (-shift).max(0) as usize;
                                let hi = ((len as isize - shift).min(l_out as isize)).max(0) as usize;
                                if lo < hi {
                                    let xs = &x_row
                                        [(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                                    gw[(co * c_in + ci) * k + kk] =
                                        gw[(co * c_in + ci) * k + kk] + dot(&grow[lo..hi], xs);
                                }
                            }
                        }
                    }
                }
            }
            if nodes[x.0].requires {
                let dw = nodes[w.0].value.data();
                let gx = grad_buf(grads, nodes, *x).unwrap();
                for bi in 0..batch {
                    for co in 0..c_out {
                        let grow = &g[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                        for ci in 0..c_in {
                            let gx_row = &mut gx[(bi * c_in + ci) * len..(bi * c_in + ci + 1) * len];
                            for kk in 0..k {
                                let wv = dw[(co * c_in + ci) * k + kk];
                                let shift = kk as isize - *pad as isize;
                                let lo = (-shift).max(0) as usize;
                                let hi = ((len as isize - shift).min(l_out as isize)).max(0) as usize;
                                if lo < hi {
                                    let dst = &mut gx_row
                                        [(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                                    axpy(dst, wv, &grow[lo..hi]);
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::BatchNorm { x, gamma, beta } => {
            let sx = nodes[x.0].value.shape();
            let (batch, ch, len) = (sx[0], sx[1], sx[2]);
            let n = F::of((batch * len) as f64);
            let (mean, _, inv_std) = nodes[i].bn_stats.as_ref().expect("bn stats saved");
            let dxv = nodes[x.0].value.data();
            let gv = nodes[gamma.0].value.data();
            let mut sum_g = vec![F::zero(); ch];
            let mut sum_gxh = vec![F::zero(); ch];
            for bi in 0..batch {
                for c in 0..ch {
                    let base = (bi * ch + c) * len;
                    for j in 0..len {
                        let xh = (dxv[base + j] - mean[c]) * inv_std[c];
                        sum_g[c] = sum_g[c] + g[base + j];
                        sum_gxh[c] = sum_gxh[c] + g[base + j] * xh;
                    }
                }
            }
            if nodes[beta.0].requires {
                let gb = grad_buf(grads, nodes, *beta).unwrap();
                for c in 0..ch {
                    gb[c] = gb[c] + sum_g[c];
                }
            }
            if nodes[gamma.0].requires {
                let gg = grad_buf(grads, nodes, *gamma).unwrap();
                for c in 0..ch {
                    gg[c] = gg[c] + sum_gxh[c];
                }
            }
            if nodes[x.0].requires {
                let gx = grad_buf(grads, nodes, *x).unwrap();
                for bi in 0..batch {
                    for c in 0..ch {
                        let base = (bi * ch + c) * len;
                        let coef = gv[c] * inv_std[c];
                        for j in 0..len {
                            let xh = (dxv[base + j] - mean[c]) * inv_std[c];
                            gx[base + j] = gx[base + j]
                                + coef * (g[base + j] - sum_g[c] / n - xh * sum_gxh[c] / n);
                        }
                    }
                }
            }
        }
        Op::SoftmaxCols(a) => {
            if nodes[a.0].requires {
                let s = nodes[i].value.shape();
                let (r, c) = (s[0], s[1]);
                let y = nodes[i].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for j in 0..c {
                    let mut d = F::zero();
                    for i2 in 0..r {
                        d = d + y[i2 * c + j] * g[i2 * c + j];
                    }
                    for i2 in 0..r {
                        ga[i2 * c + j] = ga[i2 * c + j] + y[i2 * c + j] * (g[i2 * c + j] - d);
                    }
                }
            }
        }
        Op::LogSoftmaxRows(a) => {
            if nodes[a.0].requires {
                let s = nodes[i].value.shape();
                let (r, c) = (s[0], s[1]);
                let y = nodes[i].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for i2 in 0..r {
                    let gsum: F = g[i2 * c..(i2 + 1) * c].iter().copied().sum();
                    for j in 0..c {
                        let p = y[i2 * c + j].exp();
                        ga[i2 * c + j] = ga[i2 * c + j] + g[i2 * c + j] - p * gsum;
                    }
                }
            }
        }
        Op::SumAll(a) => {
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                let gi = g[0];
                ga.iter_mut().for_each(|o| *o = *o + gi);
            }
        }
        Op::MeanAll(a) => {
            let numel = nodes[a.0].value.numel();
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                let gi = g[0] / F::of(numel as f64);
                ga.iter_mut().for_each(|o| *o = *o + gi);
            }
        }
        Op::MeanCols(a) => {
            let s = nodes[a.0].value.shape();
            let (r, c) = (s[0], s[1]);
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                let inv = F::one() / F::of(c as f64);
                for i2 in 0..r {
                    let gi = g[i2] * inv;
                    ga[i2 * c..(i2 + 1) * c].iter_mut().for_each(|o| *o = *o + gi);
                }
            }
        }
        Op::AddRowVec(a, v) => {
            let s = nodes[a.0].value.shape();
            let (r, c) = (s[0], s[1]);
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                axpy(ga, F::one(), g);
            }
            if let Some(gv) = grad_buf(grads, nodes, *v) {
                for i2 in 0..r {
                    gv[i2] = gv[i2] + g[i2 * c..(i2 + 1) * c].iter().copied().sum();
                }
            }
        }
        Op::MulRowVec(a, v) => {
            let s = nodes[a.0].value.shape();
            let (r, c) = (s[0], s[1]);
            if nodes[a.0].requires {
                let dv = nodes[v.0].value.data();
                let ga = grad_buf(grads, nodes, *a).unwrap();
                for i2 in 0..r {
                    axpy(&mut ga[i2 * c..(i2 + 1) * c], dv[i2], &g[i2 * c..(i2 + 1) * c]);
                }
            }
            if nodes[v.0].requires {
                let da = nodes[a.0].value.data();
                let gv = grad_buf(grads, nodes, *v).unwrap();
                for i2 in 0..r {
                    gv[i2] = gv[i2] + dot(&g[i2 * c..(i2 + 1) * c], &da[i2 * c..(i2 + 1) * c]);
                }
            }
        }
        Op::AddChan(x, v) => {
            let s = nodes[x.0].value.shape();
            let (batch, ch, len) = (s[0], s[1], s[2]);
            if let Some(gx) = grad_buf(grads, nodes, *x) {
                axpy(gx, F::one(), g);
            }
            if let Some(gv) = grad_buf(grads, nodes, *v) {
                for bi in 0..batch {
                    for c in 0..ch {
                        let base = (bi * ch + c) * len;
                        gv[c] = gv[c] + g[base..base + len].iter().copied().sum();
                    }
                }
            }
        }
        Op::MulChan(x, v) => {
            let s = nodes[x.0].value.shape();
            let (batch, ch, len) = (s[0], s[1], s[2]);
            if nodes[x.0].requires {
                let dv = nodes[v.0].value.data();
                let gx = grad_buf(grads, nodes, *x).unwrap();
                for bi in 0..batch {
                    for c in 0..ch {
                        let base = (bi * ch + c) * len;
                        axpy(&mut gx[base..base + len], dv[c], &g[base..base + len]);
                    }
                }
            }
            if nodes[v.0].requires {
                let dx = nodes[x.0].value.data();
                let gv = grad_buf(grads, nodes, *v).unwrap();
                for bi in 0..batch {
                    for c in 0..ch {
                        let base = (bi * ch + c) * len;
                        gv[c] = gv[c] + dot(&g[base..base + len], &dx[base..base + len]);
                    }
                }
            }
        }
        Op::BroadcastCols(a) => {
            let cols = nodes[i].value.shape()[1];
            let r = nodes[a.0].value.shape()[0];
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                for i2 in 0..r {
                    ga[i2] = ga[i2] + g[i2 * cols..(i2 + 1) * cols].iter().copied().sum();
                }
            }
        }
        Op::SliceRows { a, lo, hi: _ } => {
            let c = nodes[a.0].value.shape()[1];
            let rows_out = nodes[i].value.shape()[0];
            if let Some(ga) = grad_buf(grads, nodes, *a) {
                axpy(&mut ga[lo * c..(lo + rows_out) * c], F::one(), g);
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let numel = nodes[p.0].value.numel();
                if nodes[p.0].requires {
                    let gp = grad_buf(grads, nodes, p).unwrap();
                    axpy(gp, F::one(), &g[off..off + numel]);
                }
                off += numel;
            }
        }
        Op::ConcatCols(parts) => {
            let r = nodes[i].value.shape()[0];
            let cols = nodes[i].value.shape()[1];
            let mut off = 0;
            for &p in parts {
                let pc = nodes[p.0].value.shape()[1];
                if nodes[p.0].requires {
                    let gp = grad_buf(grads, nodes, p).unwrap();
                    for i2 in 0..r {
                        axpy(
                            &mut gp[i2 * pc..(i2 + 1) * pc],
                            F::one(),
                            &g[i2 * cols + off..i2 * cols + off + pc],
                        );
                    }
                }
                off += pc;
            }
        }
        Op::TimeSlice { x, frame } => {
            let s = nodes[x.0].value.shape();
            let (b, ch, l) = (s[0], s[1], s[2]);
            if let Some(gx) = grad_buf(grads, nodes, *x) {
                for bi in 0..b {
                    for c in 0..ch {
                        gx[(bi * ch + c) * l + frame] = gx[(bi * ch + c) * l + frame] + g[c * b + bi];
                    }
                }
            }
        }
        Op::GatherRowsT { table, idx } => {
            let d = nodes[table.0].value.shape()[1];
            let p = idx.len();
            if let Some(gt) = grad_buf(grads, nodes, *table) {
                for (pi, &row) in idx.iter().enumerate() {
                    for di in 0..d {
                        gt[row * d + di] = gt[row * d + di] + g[di * p + pi];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph<f64>, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        g.leaf(Tensor::from_vec(shape, data).unwrap().with_grad())
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]);
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert_eq!(g.leaf_grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_half_square_sum_is_x() {
        let mut g = Graph::<f64>::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let x = leaf(&mut g, vec![4], data.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        let half = g.scale(s, 0.5);
        g.backward(half).unwrap();
        assert_eq!(g.leaf_grad(x).unwrap().data(), data.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, vec![2], vec![1.0, 2.0]);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, vec![2], vec![3.0, 4.0]);
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.leaf_grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_touches_each_node_once() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, vec![3], vec![1.0, 2.0, 3.0]);
        let y = g.silu(x);
        let z = g.mul(y, y).unwrap();
        let s = g.mean_all(z);
        g.backward(s).unwrap();
        assert_eq!(g.last_backward_visits(), g.len());
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::from_vec(vec![1, 1, 1], vec![1.0]).unwrap());
        let b = g.constant(Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        let y = g.conv1d(x, w, b, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_delta_reads_reversed_taps() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap());
        let w = g.constant(Tensor::from_vec(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = g.constant(Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        let y = g.conv1d(x, w, b, 1).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn conv1d_rejects_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![2, 4]));
        let w = g.constant(Tensor::zeros(vec![1, 3, 3]));
        let b = g.constant(Tensor::zeros(vec![1]));
        let err = g.conv1d(x, w, b, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("input channels"), "unexpected message: {msg}");
    }

    #[test]
    fn matmul_matches_by_hand() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::from_vec(vec![2, 1], vec![5.0, 6.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, vec![2], vec![1.0, 2.0]);
        let d = g.stop_grad(x);
        let y = g.mul(d, d).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.leaf_grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.constant(Tensor::from_vec(vec![2, 2], vec![0.3, -1.2, 0.7, 2.5]).unwrap());
            let y = g.silu(x);
            let z = g.softmax_cols(y).unwrap();
            g.value(z).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
