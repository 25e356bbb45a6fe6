//! Double-precision loop-based mirror of the stacked task forward pass.
//!
//! [`TaskLossOracle`] recomputes the same mathematics as the graph engine —
//! token and position embeddings, multi-head self-attention with padding
//! masks, layer norm, the feed-forward block, serial bottleneck adapters,
//! a linear head, and mean cross-entropy — in plain f64 loops that share no
//! code with the engine. The test suites take central finite differences of
//! this oracle and compare them against the engine's analytic gradients.
//!
//! The trainable surface (active language- and task-adapter layers plus the
//! head) enters as one flat coordinate vector so the oracle plugs directly
//! into [`crate::graph::grad_check`]. The frozen backbone is copied once at
//! construction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::adapter::Adapter;
use crate::encoder::{Batch, EncoderState, ModelConfig, LN_EPS};
use crate::error::{Error, Result};
use crate::graph::IGNORE_INDEX;
use crate::math;
use crate::specials;
use crate::tensor::Tensor;

/// Additive score for masked (padded) attention keys; mirrors the engine.
const MASK_NEG: f64 = -1.0e9;

struct LayerW {
    wq: Vec<f64>,
    bq: Vec<f64>,
    wk: Vec<f64>,
    bk: Vec<f64>,
    wv: Vec<f64>,
    bv: Vec<f64>,
    wo: Vec<f64>,
    bo: Vec<f64>,
    ln1_g: Vec<f64>,
    ln1_b: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    ln2_g: Vec<f64>,
    ln2_b: Vec<f64>,
}

fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// Frozen-backbone task loss as a function of the flat trainable vector.
pub struct TaskLossOracle {
    cfg: ModelConfig,
    tok_emb: Vec<f64>,
    pos_emb: Vec<f64>,
    layers: Vec<LayerW>,
    ids: Vec<u32>,
    b: usize,
    t: usize,
    labels: Vec<i64>,
    n_classes: usize,
    la_bottleneck: usize,
    ta_bottleneck: usize,
    drop_last_layer: bool,
}

impl TaskLossOracle {
    /// Copy the backbone and batch; adapters are passed only for their
    /// shapes — their weights flow through the coordinate vector.
    pub fn new(
        backbone: &EncoderState,
        la: &Adapter,
        ta: &Adapter,
        n_classes: usize,
        batch: &Batch,
        labels: &[i64],
        drop_last_layer: bool,
    ) -> Result<Self> {
        let cfg = backbone.cfg;
        for (name, a) in [("language", la), ("task", ta)] {
            if a.hidden != cfg.hidden || a.down.len() != cfg.n_layers {
                return Err(Error::Config(format!(
                    "{name} adapter shaped for hidden {} × {} layers, backbone has {} × {}",
                    a.hidden,
                    a.down.len(),
                    cfg.hidden,
                    cfg.n_layers
                )));
            }
        }
        if labels.len() != batch.b * batch.t {
            return Err(Error::Shape(format!(
                "{} labels for a {}×{} batch",
                labels.len(),
                batch.b,
                batch.t
            )));
        }
        if !labels.iter().any(|&l| l != IGNORE_INDEX) {
            return Err(Error::Empty("every label is ignored".into()));
        }
        if n_classes < 2 {
            return Err(Error::Config(format!("{n_classes} classes; need at least 2")));
        }
        let layers = backbone
            .layers
            .iter()
            .map(|p| LayerW {
                wq: to64(&p.wq),
                bq: to64(&p.bq),
                wk: to64(&p.wk),
                bk: to64(&p.bk),
                wv: to64(&p.wv),
                bv: to64(&p.bv),
                wo: to64(&p.wo),
                bo: to64(&p.bo),
                ln1_g: to64(&p.ln1_g),
                ln1_b: to64(&p.ln1_b),
                w1: to64(&p.w1),
                b1: to64(&p.b1),
                w2: to64(&p.w2),
                b2: to64(&p.b2),
                ln2_g: to64(&p.ln2_g),
                ln2_b: to64(&p.ln2_b),
            })
            .collect();
        Ok(TaskLossOracle {
            cfg,
            tok_emb: to64(&backbone.tok_emb),
            pos_emb: to64(&backbone.pos_emb),
            layers,
            ids: batch.ids.clone(),
            b: batch.b,
            t: batch.t,
            labels: labels.to_vec(),
            n_classes,
            la_bottleneck: la.bottleneck,
            ta_bottleneck: ta.bottleneck,
            drop_last_layer,
        })
    }

    /// Number of encoder layers whose adapters are applied.
    pub fn active_layers(&self) -> usize {
        self.cfg.n_layers - usize::from(self.drop_last_layer)
    }

    /// Length of the flat coordinate vector.
    pub fn param_len(&self) -> usize {
        let h = self.cfg.hidden;
        let per_la = 2 * h * self.la_bottleneck;
        let per_ta = 2 * h * self.ta_bottleneck;
        self.active_layers() * (per_la + per_ta) + h * self.n_classes + self.n_classes
    }

    /// Flatten the trainable tensors into the oracle's coordinate layout:
    /// per active layer the language adapter's down then up projection,
    /// then the task adapter's, then the head weight and bias — all
    /// row-major.
    pub fn param_point(
        &self,
        la: &Adapter,
        ta: &Adapter,
        head_w: &Tensor,
        head_b: &Tensor,
    ) -> Result<Vec<f32>> {
        let h = self.cfg.hidden;
        if head_w.shape() != [h, self.n_classes] || head_b.shape() != [self.n_classes] {
            return Err(Error::Shape(format!(
                "head shapes {:?} / {:?}; expected [{h}, {}] / [{}]",
                head_w.shape(),
                head_b.shape(),
                self.n_classes,
                self.n_classes
            )));
        }
        let mut out = Vec::with_capacity(self.param_len());
        for a in [la, ta] {
            for l in 0..self.active_layers() {
                out.extend_from_slice(a.down[l].data());
                out.extend_from_slice(a.up[l].data());
            }
        }
        out.extend_from_slice(head_w.data());
        out.extend_from_slice(head_b.data());
        if out.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "flattened {} coordinates; oracle expects {}",
                out.len(),
                self.param_len()
            )));
        }
        Ok(out)
    }

    /// Mean cross-entropy of the labeled positions at the given coordinates.
    pub fn loss(&self, params: &[f64]) -> Result<f64> {
        Ok(self.forward(params)?.0)
    }

    /// Smallest |pre-activation| over every relu whose input depends on the
    /// coordinate vector: the adapter bottlenecks at active layers and the
    /// feed-forward blocks of later layers. A finite-difference window wider
    /// than this margin can flip a unit between dead and live, at which point
    /// the difference quotient no longer estimates the analytic gradient.
    pub fn relu_margin(&self, params: &[f64]) -> Result<f64> {
        Ok(self.forward(params)?.1)
    }

    fn forward(&self, params: &[f64]) -> Result<(f64, f64)> {
        if params.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "{} coordinates; oracle expects {}",
                params.len(),
                self.param_len()
            )));
        }
        let cfg = &self.cfg;
        let (b, t, h) = (self.b, self.t, cfg.hidden);
        let heads = cfg.n_heads;
        let dh = h / heads;
        let active = self.active_layers();

        // Unpack the coordinate layout.
        let mut ofs = 0;
        let mut take = |n: usize| {
            let s = &params[ofs..ofs + n];
            ofs += n;
            s
        };
        let la_d = self.la_bottleneck;
        let ta_d = self.ta_bottleneck;
        let mut la_down = Vec::with_capacity(active);
        let mut la_up = Vec::with_capacity(active);
        for _ in 0..active {
            la_down.push(take(h * la_d));
            la_up.push(take(la_d * h));
        }
        let mut ta_down = Vec::with_capacity(active);
        let mut ta_up = Vec::with_capacity(active);
        for _ in 0..active {
            ta_down.push(take(h * ta_d));
            ta_up.push(take(ta_d * h));
        }
        let head_w = take(h * self.n_classes);
        let head_b = take(self.n_classes);

        // Embeddings.
        let rows = b * t;
        let mut x = vec![0.0f64; rows * h];
        for r in 0..rows {
            let id = self.ids[r] as usize;
            let pos = r % t;
            for j in 0..h {
                x[r * h + j] = self.tok_emb[id * h + j] + self.pos_emb[pos * h + j];
            }
        }

        let scale = 1.0 / math::sqrt(dh as f64);
        let mut margin = f64::INFINITY;
        for (l, lw) in self.layers.iter().enumerate() {
            // Projections.
            let q = affine(&x, &lw.wq, &lw.bq, rows, h, h);
            let k = affine(&x, &lw.wk, &lw.bk, rows, h, h);
            let v = affine(&x, &lw.wv, &lw.bv, rows, h, h);

            // Attention per batch element and head; padded keys are masked
            // for every query.
            let mut ctx = vec![0.0f64; rows * h];
            for bb in 0..b {
                for hd in 0..heads {
                    for i in 0..t {
                        let qrow = &q[(bb * t + i) * h + hd * dh..][..dh];
                        let mut scores = vec![0.0f64; t];
                        for j in 0..t {
                            let krow = &k[(bb * t + j) * h + hd * dh..][..dh];
                            let mut s = 0.0;
                            for d in 0..dh {
                                s += qrow[d] * krow[d];
                            }
                            s *= scale;
                            if self.ids[bb * t + j] == specials::PAD {
                                s += MASK_NEG;
                            }
                            scores[j] = s;
                        }
                        softmax_in_place(&mut scores);
                        let out = &mut ctx[(bb * t + i) * h + hd * dh..][..dh];
                        for j in 0..t {
                            let vrow = &v[(bb * t + j) * h + hd * dh..][..dh];
                            for d in 0..dh {
                                out[d] += scores[j] * vrow[d];
                            }
                        }
                    }
                }
            }
            let attn_out = affine(&ctx, &lw.wo, &lw.bo, rows, h, h);

            // First residual + norm.
            let mut pre1 = x.clone();
            for i in 0..rows * h {
                pre1[i] += attn_out[i];
            }
            let normed = layernorm(&pre1, &lw.ln1_g, &lw.ln1_b, rows, h);

            // Feed-forward. Pre-activations at layers above an applied
            // adapter move with the coordinates, so they count toward the
            // kink margin.
            let mut f1 = affine(&normed, &lw.w1, &lw.b1, rows, h, cfg.ffn_size);
            for v in &mut f1 {
                if active > 0 && l > 0 {
                    margin = margin.min(math::abs(*v));
                }
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let h_ffn = affine(&f1, &lw.w2, &lw.b2, rows, cfg.ffn_size, h);

            // Serial adapters: language first, its output feeding the task
            // adapter as both hidden and residual; dropped at the last layer.
            let y = if l < active {
                let la_out =
                    bottleneck(&h_ffn, &normed, la_down[l], la_up[l], rows, h, la_d, &mut margin);
                bottleneck(&la_out, &la_out, ta_down[l], ta_up[l], rows, h, ta_d, &mut margin)
            } else {
                normed.clone()
            };

            // Second residual + norm.
            let mut pre2 = y;
            for i in 0..rows * h {
                pre2[i] += h_ffn[i];
            }
            x = layernorm(&pre2, &lw.ln2_g, &lw.ln2_b, rows, h);
        }

        // Linear head + mean cross-entropy over labeled positions.
        let mut total = 0.0f64;
        let mut count = 0usize;
        for r in 0..rows {
            let label = self.labels[r];
            if label == IGNORE_INDEX {
                continue;
            }
            let mut z = vec![0.0f64; self.n_classes];
            for (c, zc) in z.iter_mut().enumerate() {
                let mut s = head_b[c];
                for j in 0..h {
                    s += x[r * h + j] * head_w[j * self.n_classes + c];
                }
                *zc = s;
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &zc in &z {
                sum += math::exp(zc - max);
            }
            total += max + math::ln(sum) - z[label as usize];
            count += 1;
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("reference loss is not finite".into()));
        }
        Ok((loss, margin))
    }
}

/// x [rows, k] · w [k, n] + bias [n].
fn affine(x: &[f64], w: &[f64], bias: &[f64], rows: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; rows * n];
    for r in 0..rows {
        for p in 0..k {
            let xv = x[r * k + p];
            for c in 0..n {
                out[r * n + c] += xv * w[p * n + c];
            }
        }
        for c in 0..n {
            out[r * n + c] += bias[c];
        }
    }
    out
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn layernorm(x: &[f64], gain: &[f64], bias: &[f64], rows: usize, h: usize) -> Vec<f64> {
    let eps = f64::from(LN_EPS);
    let mut out = vec![0.0f64; rows * h];
    for r in 0..rows {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let rstd = 1.0 / math::sqrt(var + eps);
        for j in 0..h {
            out[r * h + j] = (row[j] - mean) * rstd * gain[j] + bias[j];
        }
    }
    out
}

/// relu(h · down) · up + residual, for one layer's [h, d] down and [d, h] up.
/// Folds the bottleneck pre-activations into the running kink margin.
fn bottleneck(
    hin: &[f64],
    residual: &[f64],
    down: &[f64],
    up: &[f64],
    rows: usize,
    h: usize,
    d: usize,
    margin: &mut f64,
) -> Vec<f64> {
    let mut out = residual.to_vec();
    let mut mid = vec![0.0f64; d];
    for r in 0..rows {
        for m in mid.iter_mut() {
            *m = 0.0;
        }
        for j in 0..h {
            let hv = hin[r * h + j];
            for c in 0..d {
                mid[c] += hv * down[j * d + c];
            }
        }
        for m in mid.iter_mut() {
            *margin = margin.min(math::abs(*m));
            if *m < 0.0 {
                *m = 0.0;
            }
        }
        for (c, &m) in mid.iter().enumerate() {
            if m != 0.0 {
                for j in 0..h {
                    out[r * h + j] += m * up[c * h + j];
                }
            }
        }
    }
    out
}
