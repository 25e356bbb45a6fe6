//! Tape-based reverse-mode autodiff over f32 tensors.
//!
//! A [`Graph`] is a write-once tape: every operation appends a node holding the
//! forward value, the op record, and (once `backward` runs) a gradient
//! accumulator. Nodes reference earlier nodes only, so the tape order is a
//! valid topological order and the backward pass is a single reverse sweep.
//!
//! Gradients accumulate: calling `backward` twice without clearing doubles
//! them. Leaves registered via [`Graph::constant`] are untracked — no gradient
//! is ever allocated for them or for anything computed purely from them, which
//! is how frozen backbone parameters stay cheap during adapter training.

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Label value meaning "exclude this position from the loss".
pub const IGNORE_INDEX: i64 = -1;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k] @ [k,n]
    Matmul { a: NodeId, b: NodeId },
    /// [m,k] @ [n,k]ᵀ
    MatmulNT { a: NodeId, b: NodeId },
    /// [g,m,k] @ [g,k,n] batch-wise
    BatMatmul { a: NodeId, b: NodeId },
    /// [g,m,k] @ [g,n,k]ᵀ batch-wise
    BatMatmulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// [m,n] + broadcast row [n]
    AddRow { a: NodeId, row: NodeId },
    Scale { x: NodeId, c: f32 },
    Relu { x: NodeId },
    /// Normalization over the last axis.
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    /// Softmax over the last axis.
    SoftmaxRows { x: NodeId },
    /// Mean NLL over non-ignored rows of [n,V] logits.
    CrossEntropy { logits: NodeId },
    /// Row gather: out[r] = x[idx[r]].
    GatherRows { x: NodeId },
    /// [b*t, h] -> [b*heads, t, h/heads]
    SplitHeads { x: NodeId, b: usize, t: usize, heads: usize },
    /// [b*heads, t, h/heads] -> [b*t, h]
    MergeHeads { x: NodeId, b: usize, t: usize, heads: usize },
    /// Scalar sum of all elements.
    Sum { x: NodeId },
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    LayerNorm { mean: Vec<f32>, rstd: Vec<f32> },
    CrossEntropy { probs: Vec<f32>, labels: Vec<i64>, ignore: i64, count: usize },
    Gather { idx: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f32>>,
    tracked: bool,
    aux: Aux,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked leaf: participates in gradient computation.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Leaf, value, true, Aux::None)
    }

    /// Untracked leaf: constant input; no gradient is computed through it.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Leaf, value, false, Aux::None)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, if any was produced by `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn is_tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool, aux: Aux) -> Result<NodeId> {
        // Hard invariant: every op output is finite, else training state is
        // already corrupt and we abort with the op's position for diagnosis.
        value.check_finite(&format!("graph node {} ({})", self.nodes.len(), op_name(&op)))?;
        self.nodes.push(Node { op, value, grad: None, tracked, aux });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn tracked_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tracked)
    }

    // ── Ops ──────────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let tracked = self.tracked_any(&[a, b]);
        self.push(Op::Matmul { a, b }, Tensor::from_vec(&[m, n], out)?, tracked, Aux::None)
    }

    /// a @ bᵀ where b is stored row-major as [n, k].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape(format!("matmul_nt {sa:?} x {sb:?}ᵀ")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let bt = transpose(self.value(b).data(), n, k);
        let mut out = vec![0.0; m * n];
        mm(&mut out, self.value(a).data(), &bt, m, k, n);
        let tracked = self.tracked_any(&[a, b]);
        self.push(Op::MatmulNT { a, b }, Tensor::from_vec(&[m, n], out)?, tracked, Aux::None)
    }

    pub fn bat_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Shape(format!("bat_matmul {sa:?} x {sb:?}")));
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            mm(
                &mut out[gi * m * n..(gi + 1) * m * n],
                &self.value(a).data()[gi * m * k..(gi + 1) * m * k],
                &self.value(b).data()[gi * k * n..(gi + 1) * k * n],
                m,
                k,
                n,
            );
        }
        let tracked = self.tracked_any(&[a, b]);
        self.push(Op::BatMatmul { a, b }, Tensor::from_vec(&[g, m, n], out)?, tracked, Aux::None)
    }

    /// Batch-wise a @ bᵀ with b stored as [g, n, k].
    pub fn bat_matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::Shape(format!("bat_matmul_nt {sa:?} x {sb:?}ᵀ")));
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            let bt = transpose(&self.value(b).data()[gi * n * k..(gi + 1) * n * k], n, k);
            mm(
                &mut out[gi * m * n..(gi + 1) * m * n],
                &self.value(a).data()[gi * m * k..(gi + 1) * m * k],
                &bt,
                m,
                k,
                n,
            );
        }
        let tracked = self.tracked_any(&[a, b]);
        self.push(Op::BatMatmulNT { a, b }, Tensor::from_vec(&[g, m, n], out)?, tracked, Aux::None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked_any(&[a, b]);
        self.push(Op::Add { a, b }, Tensor::from_vec(&shape, data)?, tracked, Aux::None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "mul {:?} * {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked_any(&[a, b]);
        self.push(Op::Mul { a, b }, Tensor::from_vec(&shape, data)?, tracked, Aux::None)
    }

    /// Broadcast a row vector over every row of a 2-D tensor.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (sa, sr) = (self.value(a).shape(), self.value(row).shape());
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(Error::Shape(format!("add_row {sa:?} + {sr:?}")));
        }
        let n = sa[1];
        let rowd = self.value(row).data().to_vec();
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + rowd[i % n])
            .collect();
        let shape = sa.to_vec();
        let tracked = self.tracked_any(&[a, row]);
        self.push(Op::AddRow { a, row }, Tensor::from_vec(&shape, data)?, tracked, Aux::None)
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> Result<NodeId> {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let tracked = self.tracked_any(&[x]);
        self.push(Op::Scale { x, c }, Tensor::from_vec(&shape, data)?, tracked, Aux::None)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let tracked = self.tracked_any(&[x]);
        self.push(Op::Relu { x }, Tensor::from_vec(&shape, data)?, tracked, Aux::None)
    }

    /// (x − mean)/sqrt(var + eps) · gain + bias over the last axis.
    pub fn layernorm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f32) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let last = *sx.last().ok_or_else(|| Error::Shape("layernorm on 0-d tensor".into()))?;
        if eps <= 0.0 {
            return Err(Error::Config("layernorm eps must be > 0".into()));
        }
        if self.value(gain).shape() != [last] || self.value(bias).shape() != [last] {
            return Err(Error::Shape(format!(
                "layernorm gain/bias must be [{last}], got {:?}/{:?}",
                self.value(gain).shape(),
                self.value(bias).shape()
            )));
        }
        let rows = self.value(x).numel() / last;
        let mut out = vec![0.0f32; rows * last];
        let mut means = vec![0.0f32; rows];
        let mut rstds = vec![0.0f32; rows];
        {
            let xd = self.value(x).data();
            let gd = self.value(gain).data();
            let bd = self.value(bias).data();
            for r in 0..rows {
                let xr = &xd[r * last..(r + 1) * last];
                let mean = xr.iter().sum::<f32>() / last as f32;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / last as f32;
                // An overflowed variance would silently collapse the row to
                // the bias (rstd = 0) and zero every upstream gradient, so it
                // must fail loudly like any other non-finite intermediate.
                if !var.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "layernorm row {r} variance is not finite"
                    )));
                }
                let rstd = 1.0 / math::sqrtf(var + eps);
                means[r] = mean;
                rstds[r] = rstd;
                let orow = &mut out[r * last..(r + 1) * last];
                for j in 0..last {
                    orow[j] = (xr[j] - mean) * rstd * gd[j] + bd[j];
                }
            }
        }
        let tracked = self.tracked_any(&[x, gain, bias]);
        self.push(
            Op::LayerNorm { x, gain, bias },
            Tensor::from_vec(&sx, out)?,
            tracked,
            Aux::LayerNorm { mean: means, rstd: rstds },
        )
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let last = *sx.last().ok_or_else(|| Error::Shape("softmax on 0-d tensor".into()))?;
        let rows = self.value(x).numel() / last;
        let mut out = vec![0.0f32; rows * last];
        {
            let xd = self.value(x).data();
            for r in 0..rows {
                let xr = &xd[r * last..(r + 1) * last];
                let max = xr.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
                let orow = &mut out[r * last..(r + 1) * last];
                let mut sum = 0.0f32;
                for j in 0..last {
                    let e = math::expf(xr[j] - max);
                    orow[j] = e;
                    sum += e;
                }
                let inv = 1.0 / sum;
                for o in orow.iter_mut() {
                    *o *= inv;
                }
            }
        }
        let tracked = self.tracked_any(&[x]);
        self.push(Op::SoftmaxRows { x }, Tensor::from_vec(&sx, out)?, tracked, Aux::None)
    }

    /// Mean negative log softmax probability over rows whose label is not
    /// `ignore`. Backward writes softmax(logits) − onehot at those rows.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[i64],
        ignore: i64,
    ) -> Result<NodeId> {
        let sl = self.value(logits).shape().to_vec();
        if sl.len() != 2 {
            return Err(Error::Shape(format!("cross_entropy expects [n,V] logits, got {sl:?}")));
        }
        let (n, v) = (sl[0], sl[1]);
        if labels.len() != n {
            return Err(Error::Shape(format!("{n} logit rows but {} labels", labels.len())));
        }
        let mut probs = vec![0.0f32; n * v];
        let mut total = 0.0f64;
        let mut count = 0usize;
        {
            let ld = self.value(logits).data();
            for (r, &label) in labels.iter().enumerate() {
                if label == ignore {
                    continue;
                }
                if label < 0 || label as usize >= v {
                    return Err(Error::Contract(format!(
                        "label {label} out of range [0,{v}) at row {r}"
                    )));
                }
                let zr = &ld[r * v..(r + 1) * v];
                let max = zr.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
                let mut sum = 0.0f32;
                let prow = &mut probs[r * v..(r + 1) * v];
                for j in 0..v {
                    let e = math::expf(zr[j] - max);
                    prow[j] = e;
                    sum += e;
                }
                let inv = 1.0 / sum;
                for p in prow.iter_mut() {
                    *p *= inv;
                }
                let lse = f64::from(max) + math::ln(f64::from(sum));
                total += lse - f64::from(zr[label as usize]);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Empty("cross entropy: all positions ignored, mean undefined".into()));
        }
        let loss = (total / count as f64) as f32;
        let tracked = self.tracked_any(&[logits]);
        self.push(
            Op::CrossEntropy { logits },
            Tensor::from_vec(&[1], vec![loss])?,
            tracked,
            Aux::CrossEntropy { probs, labels: labels.to_vec(), ignore, count },
        )
    }

    /// Row gather; also serves as embedding lookup on a [V,h] table.
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let sx = self.value(x).shape();
        if sx.len() != 2 {
            return Err(Error::Shape(format!("gather_rows expects 2-d input, got {sx:?}")));
        }
        let (rows, cols) = (sx[0], sx[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("gather index {bad} out of {rows} rows")));
        }
        let mut out = vec![0.0f32; idx.len() * cols];
        {
            let xd = self.value(x).data();
            for (r, &i) in idx.iter().enumerate() {
                out[r * cols..(r + 1) * cols].copy_from_slice(&xd[i * cols..(i + 1) * cols]);
            }
        }
        let tracked = self.tracked_any(&[x]);
        self.push(
            Op::GatherRows { x },
            Tensor::from_vec(&[idx.len(), cols], out)?,
            tracked,
            Aux::Gather { idx: idx.to_vec() },
        )
    }

    pub fn split_heads(&mut self, x: NodeId, b: usize, t: usize, heads: usize) -> Result<NodeId> {
        let sx = self.value(x).shape();
        if sx.len() != 2 || sx[0] != b * t || sx[1] % heads != 0 {
            return Err(Error::Shape(format!("split_heads {sx:?} for b={b} t={t} heads={heads}")));
        }
        let h = sx[1];
        let dh = h / heads;
        let mut out = vec![0.0f32; b * t * h];
        {
            let xd = self.value(x).data();
            for bb in 0..b {
                for tt in 0..t {
                    let src = (bb * t + tt) * h;
                    for hd in 0..heads {
                        let dst = ((bb * heads + hd) * t + tt) * dh;
                        out[dst..dst + dh].copy_from_slice(&xd[src + hd * dh..src + (hd + 1) * dh]);
                    }
                }
            }
        }
        let tracked = self.tracked_any(&[x]);
        self.push(
            Op::SplitHeads { x, b, t, heads },
            Tensor::from_vec(&[b * heads, t, dh], out)?,
            tracked,
            Aux::None,
        )
    }

    pub fn merge_heads(&mut self, x: NodeId, b: usize, t: usize, heads: usize) -> Result<NodeId> {
        let sx = self.value(x).shape();
        if sx.len() != 3 || sx[0] != b * heads || sx[1] != t {
            return Err(Error::Shape(format!("merge_heads {sx:?} for b={b} t={t} heads={heads}")));
        }
        let dh = sx[2];
        let h = heads * dh;
        let mut out = vec![0.0f32; b * t * h];
        {
            let xd = self.value(x).data();
            for bb in 0..b {
                for tt in 0..t {
                    let dst = (bb * t + tt) * h;
                    for hd in 0..heads {
                        let src = ((bb * heads + hd) * t + tt) * dh;
                        out[dst + hd * dh..dst + (hd + 1) * dh].copy_from_slice(&xd[src..src + dh]);
                    }
                }
            }
        }
        let tracked = self.tracked_any(&[x]);
        self.push(
            Op::MergeHeads { x, b, t, heads },
            Tensor::from_vec(&[b * t, h], out)?,
            tracked,
            Aux::None,
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f32 = self.value(x).data().iter().sum();
        let tracked = self.tracked_any(&[x]);
        self.push(Op::Sum { x }, Tensor::from_vec(&[1], vec![total])?, tracked, Aux::None)
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Gradients accumulate into the
    /// tracked leaves; repeated calls keep accumulating there. Intermediate
    /// buffers are consumed by the sweep, so each call contributes exactly
    /// one unit of seed gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].tracked {
            return Err(Error::Contract("backward on an untracked (constant-only) loss".into()));
        }
        {
            let node = &mut self.nodes[loss.0];
            let numel = node.value.numel();
            node.grad.get_or_insert_with(|| vec![0.0; numel])[0] += 1.0;
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked || self.nodes[i].grad.is_none() {
                continue;
            }
            let (lo, hi) = self.nodes.split_at_mut(i);
            let node = &hi[0];
            let g = node.grad.as_ref().expect("checked above");
            match &node.op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                    let k = lo[a.0].value.shape()[1];
                    if lo[a.0].tracked {
                        let bt = transpose(lo[b.0].value.data(), k, n);
                        let ga = ensure_grad(&mut lo[a.0]);
                        mm(ga, g, &bt, m, n, k);
                    }
                    if lo[b.0].tracked {
                        let at = transpose(lo[a.0].value.data(), m, k);
                        let gb = ensure_grad(&mut lo[b.0]);
                        mm(gb, &at, g, k, m, n);
                    }
                }
                Op::MatmulNT { a, b } => {
                    let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                    let k = lo[a.0].value.shape()[1];
                    if lo[a.0].tracked {
                        // ga += g @ b  ([m,n] x [n,k])
                        let bd = lo[b.0].value.data().to_vec();
                        let ga = ensure_grad(&mut lo[a.0]);
                        mm(ga, g, &bd, m, n, k);
                    }
                    if lo[b.0].tracked {
                        // gb += gᵀ @ a ([n,m] x [m,k])
                        let gt = transpose(g, m, n);
                        let ad = lo[a.0].value.data().to_vec();
                        let gb = ensure_grad(&mut lo[b.0]);
                        mm(gb, &gt, &ad, n, m, k);
                    }
                }
                Op::BatMatmul { a, b } => {
                    let sh = node.value.shape();
                    let (gn, m, n) = (sh[0], sh[1], sh[2]);
                    let k = lo[a.0].value.shape()[2];
                    if lo[a.0].tracked {
                        let bd = lo[b.0].value.data().to_vec();
                        let ga = ensure_grad(&mut lo[a.0]);
                        for gi in 0..gn {
                            let bt = transpose(&bd[gi * k * n..(gi + 1) * k * n], k, n);
                            mm(&mut ga[gi * m * k..(gi + 1) * m * k], &g[gi * m * n..(gi + 1) * m * n], &bt, m, n, k);
                        }
                    }
                    if lo[b.0].tracked {
                        let ad = lo[a.0].value.data().to_vec();
                        let gb = ensure_grad(&mut lo[b.0]);
                        for gi in 0..gn {
                            let at = transpose(&ad[gi * m * k..(gi + 1) * m * k], m, k);
                            mm(&mut gb[gi * k * n..(gi + 1) * k * n], &at, &g[gi * m * n..(gi + 1) * m * n], k, m, n);
                        }
                    }
                }
                Op::BatMatmulNT { a, b } => {
                    let sh = node.value.shape();
                    let (gn, m, n) = (sh[0], sh[1], sh[2]);
                    let k = lo[a.0].value.shape()[2];
                    if lo[a.0].tracked {
                        let bd = lo[b.0].value.data().to_vec();
                        let ga = ensure_grad(&mut lo[a.0]);
                        for gi in 0..gn {
                            mm(
                                &mut ga[gi * m * k..(gi + 1) * m * k],
                                &g[gi * m * n..(gi + 1) * m * n],
                                &bd[gi * n * k..(gi + 1) * n * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                    if lo[b.0].tracked {
                        let ad = lo[a.0].value.data().to_vec();
                        let gb = ensure_grad(&mut lo[b.0]);
                        for gi in 0..gn {
                            let gt = transpose(&g[gi * m * n..(gi + 1) * m * n], m, n);
                            mm(
                                &mut gb[gi * n * k..(gi + 1) * n * k],
                                &gt,
                                &ad[gi * m * k..(gi + 1) * m * k],
                                n,
                                m,
                                k,
                            );
                        }
                    }
                }
                Op::Add { a, b } => {
                    for id in [a, b] {
                        if lo[id.0].tracked {
                            let gx = ensure_grad(&mut lo[id.0]);
                            for (o, &gv) in gx.iter_mut().zip(g) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if lo[a.0].tracked {
                        let bd = lo[b.0].value.data().to_vec();
                        let ga = ensure_grad(&mut lo[a.0]);
                        for i in 0..bd.len() {
                            ga[i] += g[i] * bd[i];
                        }
                    }
                    if lo[b.0].tracked {
                        let ad = lo[a.0].value.data().to_vec();
                        let gb = ensure_grad(&mut lo[b.0]);
                        for i in 0..ad.len() {
                            gb[i] += g[i] * ad[i];
                        }
                    }
                }
                Op::AddRow { a, row } => {
                    let n = node.value.shape()[1];
                    if lo[a.0].tracked {
                        let ga = ensure_grad(&mut lo[a.0]);
                        for (o, &gv) in ga.iter_mut().zip(g) {
                            *o += gv;
                        }
                    }
                    if lo[row.0].tracked {
                        let gr = ensure_grad(&mut lo[row.0]);
                        for (i, &gv) in g.iter().enumerate() {
                            gr[i % n] += gv;
                        }
                    }
                }
                Op::Scale { x, c } => {
                    if lo[x.0].tracked {
                        let c = *c;
                        let gx = ensure_grad(&mut lo[x.0]);
                        for (o, &gv) in gx.iter_mut().zip(g) {
                            *o += gv * c;
                        }
                    }
                }
                Op::Relu { x } => {
                    if lo[x.0].tracked {
                        let xd = lo[x.0].value.data().to_vec();
                        let gx = ensure_grad(&mut lo[x.0]);
                        for i in 0..xd.len() {
                            if xd[i] > 0.0 {
                                gx[i] += g[i];
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (mean, rstd) = match &node.aux {
                        Aux::LayerNorm { mean, rstd } => (mean.clone(), rstd.clone()),
                        _ => unreachable!("layernorm aux"),
                    };
                    let last = *node.value.shape().last().expect("layernorm shape");
                    let rows = node.value.numel() / last;
                    let xd = lo[x.0].value.data().to_vec();
                    let gd = lo[gain.0].value.data().to_vec();
                    let x_tracked = lo[x.0].tracked;
                    if x_tracked {
                        let gx = ensure_grad(&mut lo[x.0]);
                        for r in 0..rows {
                            let xr = &xd[r * last..(r + 1) * last];
                            let gr = &g[r * last..(r + 1) * last];
                            let mut s1 = 0.0f32;
                            let mut s2 = 0.0f32;
                            for j in 0..last {
                                let xhat = (xr[j] - mean[r]) * rstd[r];
                                let dyg = gr[j] * gd[j];
                                s1 += dyg;
                                s2 += dyg * xhat;
                            }
                            let inv_n = 1.0 / last as f32;
                            let gxr = &mut gx[r * last..(r + 1) * last];
                            for j in 0..last {
                                let xhat = (xr[j] - mean[r]) * rstd[r];
                                let dyg = gr[j] * gd[j];
                                gxr[j] += rstd[r] * (dyg - s1 * inv_n - xhat * s2 * inv_n);
                            }
                        }
                    }
                    if lo[gain.0].tracked {
                        let gg = ensure_grad(&mut lo[gain.0]);
                        for r in 0..rows {
                            for j in 0..last {
                                let xhat = (xd[r * last + j] - mean[r]) * rstd[r];
                                gg[j] += g[r * last + j] * xhat;
                            }
                        }
                    }
                    if lo[bias.0].tracked {
                        let gb = ensure_grad(&mut lo[bias.0]);
                        for r in 0..rows {
                            for j in 0..last {
                                gb[j] += g[r * last + j];
                            }
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    if lo[x.0].tracked {
                        let last = *node.value.shape().last().expect("softmax shape");
                        let rows = node.value.numel() / last;
                        let yd = node.value.data();
                        let gx = ensure_grad(&mut lo[x.0]);
                        for r in 0..rows {
                            let yr = &yd[r * last..(r + 1) * last];
                            let gr = &g[r * last..(r + 1) * last];
                            let s: f32 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                            let gxr = &mut gx[r * last..(r + 1) * last];
                            for j in 0..last {
                                gxr[j] += yr[j] * (gr[j] - s);
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits } => {
                    if lo[logits.0].tracked {
                        let (probs, labels, ignore, count) = match &node.aux {
                            Aux::CrossEntropy { probs, labels, ignore, count } => {
                                (probs, labels, *ignore, *count)
                            }
                            _ => unreachable!("cross entropy aux"),
                        };
                        let v = lo[logits.0].value.shape()[1];
                        let coeff = g[0] / count as f32;
                        let gl = ensure_grad(&mut lo[logits.0]);
                        for (r, &label) in labels.iter().enumerate() {
                            if label == ignore {
                                continue;
                            }
                            let prow = &probs[r * v..(r + 1) * v];
                            let grow = &mut gl[r * v..(r + 1) * v];
                            for j in 0..v {
                                let delta = if j as i64 == label { 1.0 } else { 0.0 };
                                grow[j] += (prow[j] - delta) * coeff;
                            }
                        }
                    }
                }
                Op::GatherRows { x } => {
                    if lo[x.0].tracked {
                        let idx = match &node.aux {
                            Aux::Gather { idx } => idx.clone(),
                            _ => unreachable!("gather aux"),
                        };
                        let cols = node.value.shape()[1];
                        let gx = ensure_grad(&mut lo[x.0]);
                        for (r, &i) in idx.iter().enumerate() {
                            let src = &g[r * cols..(r + 1) * cols];
                            let dst = &mut gx[i * cols..(i + 1) * cols];
                            for (o, &gv) in dst.iter_mut().zip(src) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::SplitHeads { x, b, t, heads } => {
                    if lo[x.0].tracked {
                        let (b, t, heads) = (*b, *t, *heads);
                        let dh = node.value.shape()[2];
                        let h = heads * dh;
                        let gx = ensure_grad(&mut lo[x.0]);
                        for bb in 0..b {
                            for tt in 0..t {
                                let dst = (bb * t + tt) * h;
                                for hd in 0..heads {
                                    let src = ((bb * heads + hd) * t + tt) * dh;
                                    for d in 0..dh {
                                        gx[dst + hd * dh + d] += g[src + d];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::MergeHeads { x, b, t, heads } => {
                    if lo[x.0].tracked {
                        let (b, t, heads) = (*b, *t, *heads);
                        let h = node.value.shape()[1];
                        let dh = h / heads;
                        let gx = ensure_grad(&mut lo[x.0]);
                        for bb in 0..b {
                            for tt in 0..t {
                                let src = (bb * t + tt) * h;
                                for hd in 0..heads {
                                    let dst = ((bb * heads + hd) * t + tt) * dh;
                                    for d in 0..dh {
                                        gx[dst + d] += g[src + hd * dh + d];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Sum { x } => {
                    if lo[x.0].tracked {
                        let gv = g[0];
                        let gx = ensure_grad(&mut lo[x.0]);
                        for o in gx.iter_mut() {
                            *o += gv;
                        }
                    }
                }
            }
            // The buffer has been fully handed to the parents; dropping it
            // keeps leaf accumulation exact across repeated backward calls
            // and releases intermediate memory as the sweep descends.
            if !matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = None;
            }
        }
        Ok(())
    }
}

fn ensure_grad(node: &mut Node) -> &mut Vec<f32> {
    let numel = node.value.numel();
    node.grad.get_or_insert_with(|| vec![0.0; numel])
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::MatmulNT { .. } => "matmul_nt",
        Op::BatMatmul { .. } => "bat_matmul",
        Op::BatMatmulNT { .. } => "bat_matmul_nt",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::AddRow { .. } => "add_row",
        Op::Scale { .. } => "scale",
        Op::Relu { .. } => "relu",
        Op::LayerNorm { .. } => "layernorm",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::CrossEntropy { .. } => "softmax_cross_entropy",
        Op::GatherRows { .. } => "gather_rows",
        Op::SplitHeads { .. } => "split_heads",
        Op::MergeHeads { .. } => "merge_heads",
        Op::Sum { .. } => "sum",
    }
}

// ── Kernels ──────────────────────────────────────────────────────────────

/// out += a @ b with a: [m,k], b: [k,n], out: [m,n]. The k-loop is outermost
/// per row so each out element receives its contributions in ascending-k
/// order — the same order as a naive per-element loop, which keeps results
/// bitwise equal to the scalar oracle while letting the inner j-loop vectorize.
fn mm(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

// ── Gradient checking ────────────────────────────────────────────────────

/// Compare an analytic gradient against central finite differences of `f`.
///
/// `f` is evaluated in f64 (the oracle side); `point` and `analytic` are the
/// f32 training-side values. Returns the maximum relative error over all
/// coordinates, with denominator max(|analytic|, |numeric|, 1e−8).
pub fn grad_check<F>(mut f: F, point: &[f32], analytic: &[f32], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if point.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "grad_check: {} point coords vs {} analytic coords",
            point.len(),
            analytic.len()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::Contract("grad_check: h must be positive".into()));
    }
    let mut x: Vec<f64> = point.iter().map(|&v| f64::from(v)).collect();
    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("grad_check: f non-finite at coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = f64::from(analytic[i]);
        let denom = math::abs(a).max(math::abs(numeric)).max(1e-8);
        let err = math::abs(a - numeric) / denom;
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
