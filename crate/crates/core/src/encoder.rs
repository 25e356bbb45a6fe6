//! A small trainable transformer encoder with per-layer adapter slots and two
//! heads: tied-embedding MLM logits and CLS pooling for classification.
//!
//! Block layout is post-layernorm: attention → add&norm → FFN → adapter slot →
//! add&norm. The adapter slot receives the FFN output as its hidden input and
//! the first sublayer's normalized output as its residual, so a zero-initialized
//! (or absent) adapter stack leaves the block bitwise identical to the bare
//! backbone.

use crate::adapter::BoundStack;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::specials;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Epsilon used by every layernorm in the model.
pub const LN_EPS: f32 = 1e-5;

/// Standard deviation for fresh backbone weights.
pub const INIT_STD: f32 = 0.02;

/// Additive attention-mask value for padded key positions.
const MASK_NEG: f32 = -1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ffn_size: usize,
    pub vocab: usize,
    pub max_len: usize,
    /// hidden / bottleneck for language adapters.
    pub la_reduction: usize,
    /// hidden / bottleneck for task adapters.
    pub ta_reduction: usize,
}

impl ModelConfig {
    /// Desk-scale default geometry; vocabulary size comes from the language
    /// suite in use.
    pub fn desk_default(vocab: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            hidden: 64,
            n_heads: 4,
            ffn_size: 128,
            vocab,
            max_len: 32,
            la_reduction: 2,
            ta_reduction: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.n_layers == 0 || c.hidden == 0 || c.n_heads == 0 || c.ffn_size == 0 || c.max_len == 0 {
            return Err(Error::Config(format!("all model dimensions must be positive: {c:?}")));
        }
        if c.hidden % c.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by n_heads {}",
                c.hidden, c.n_heads
            )));
        }
        if c.la_reduction == 0 || c.ta_reduction == 0 {
            return Err(Error::Config("adapter reductions must be positive".into()));
        }
        if c.hidden % c.la_reduction != 0 || c.hidden % c.ta_reduction != 0 {
            return Err(Error::Config(format!(
                "hidden {} must be divisible by la_reduction {} and ta_reduction {}",
                c.hidden, c.la_reduction, c.ta_reduction
            )));
        }
        if c.vocab <= specials::COUNT {
            return Err(Error::Config(format!(
                "vocab {} leaves no room beyond the {} reserved tokens",
                c.vocab,
                specials::COUNT
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    /// Total backbone parameter count as a pure function of the config.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let per_layer = 4 * (h * h + h)       // q, k, v, o projections + biases
            + 2 * h                            // first layernorm gain + bias
            + h * self.ffn_size + self.ffn_size // FFN in
            + self.ffn_size * h + h            // FFN out
            + 2 * h; // second layernorm gain + bias
        self.vocab * h                         // token embeddings (tied MLM head)
            + self.max_len * h                 // position embeddings
            + self.n_layers * per_layer
            + self.vocab // MLM bias
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    pub cfg: ModelConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub mlm_bias: Tensor,
}

impl EncoderState {
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                wq: Tensor::randn(&[h, h], INIT_STD, rng),
                bq: Tensor::zeros(&[h]),
                wk: Tensor::randn(&[h, h], INIT_STD, rng),
                bk: Tensor::zeros(&[h]),
                wv: Tensor::randn(&[h, h], INIT_STD, rng),
                bv: Tensor::zeros(&[h]),
                wo: Tensor::randn(&[h, h], INIT_STD, rng),
                bo: Tensor::zeros(&[h]),
                ln1_g: Tensor::full(&[h], 1.0),
                ln1_b: Tensor::zeros(&[h]),
                w1: Tensor::randn(&[h, cfg.ffn_size], INIT_STD, rng),
                b1: Tensor::zeros(&[cfg.ffn_size]),
                w2: Tensor::randn(&[cfg.ffn_size, h], INIT_STD, rng),
                b2: Tensor::zeros(&[h]),
                ln2_g: Tensor::full(&[h], 1.0),
                ln2_b: Tensor::zeros(&[h]),
            })
            .collect();
        Ok(EncoderState {
            cfg,
            tok_emb: Tensor::randn(&[cfg.vocab, h], INIT_STD, rng),
            pos_emb: Tensor::randn(&[cfg.max_len, h], INIT_STD, rng),
            layers,
            mlm_bias: Tensor::zeros(&[cfg.vocab]),
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (l, p) in self.layers.iter().enumerate() {
            for (suffix, t) in [
                ("wq", &p.wq),
                ("bq", &p.bq),
                ("wk", &p.wk),
                ("bk", &p.bk),
                ("wv", &p.wv),
                ("bv", &p.bv),
                ("wo", &p.wo),
                ("bo", &p.bo),
                ("ln1_g", &p.ln1_g),
                ("ln1_b", &p.ln1_b),
                ("w1", &p.w1),
                ("b1", &p.b1),
                ("w2", &p.w2),
                ("b2", &p.b2),
                ("ln2_g", &p.ln2_g),
                ("ln2_b", &p.ln2_b),
            ] {
                out.push((format!("layer{l}.{suffix}"), t));
            }
        }
        out.push(("mlm_bias".into(), &self.mlm_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
        ];
        for (l, p) in self.layers.iter_mut().enumerate() {
            for (suffix, t) in [
                ("wq", &mut p.wq),
                ("bq", &mut p.bq),
                ("wk", &mut p.wk),
                ("bk", &mut p.bk),
                ("wv", &mut p.wv),
                ("bv", &mut p.bv),
                ("wo", &mut p.wo),
                ("bo", &mut p.bo),
                ("ln1_g", &mut p.ln1_g),
                ("ln1_b", &mut p.ln1_b),
                ("w1", &mut p.w1),
                ("b1", &mut p.b1),
                ("w2", &mut p.w2),
                ("b2", &mut p.b2),
                ("ln2_g", &mut p.ln2_g),
                ("ln2_b", &mut p.ln2_b),
            ] {
                out.push((format!("layer{l}.{suffix}"), t));
            }
        }
        out.push(("mlm_bias".into(), &mut self.mlm_bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bits_eq(&self, other: &EncoderState) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
    }

    /// Register all backbone tensors on a graph. With `trainable` false every
    /// tensor is a constant and gradient work below the adapters is skipped.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundEncoder> {
        let reg = |g: &mut Graph, t: &Tensor| -> Result<NodeId> {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let mut params = Vec::new();
        let tok_emb = reg(g, &self.tok_emb)?;
        params.push(("tok_emb".into(), tok_emb));
        let pos_emb = reg(g, &self.pos_emb)?;
        params.push(("pos_emb".into(), pos_emb));
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, p) in self.layers.iter().enumerate() {
            let bl = BoundLayer {
                wq: reg(g, &p.wq)?,
                bq: reg(g, &p.bq)?,
                wk: reg(g, &p.wk)?,
                bk: reg(g, &p.bk)?,
                wv: reg(g, &p.wv)?,
                bv: reg(g, &p.bv)?,
                wo: reg(g, &p.wo)?,
                bo: reg(g, &p.bo)?,
                ln1_g: reg(g, &p.ln1_g)?,
                ln1_b: reg(g, &p.ln1_b)?,
                w1: reg(g, &p.w1)?,
                b1: reg(g, &p.b1)?,
                w2: reg(g, &p.w2)?,
                b2: reg(g, &p.b2)?,
                ln2_g: reg(g, &p.ln2_g)?,
                ln2_b: reg(g, &p.ln2_b)?,
            };
            for (suffix, id) in [
                ("wq", bl.wq),
                ("bq", bl.bq),
                ("wk", bl.wk),
                ("bk", bl.bk),
                ("wv", bl.wv),
                ("bv", bl.bv),
                ("wo", bl.wo),
                ("bo", bl.bo),
                ("ln1_g", bl.ln1_g),
                ("ln1_b", bl.ln1_b),
                ("w1", bl.w1),
                ("b1", bl.b1),
                ("w2", bl.w2),
                ("b2", bl.b2),
                ("ln2_g", bl.ln2_g),
                ("ln2_b", bl.ln2_b),
            ] {
                params.push((format!("layer{l}.{suffix}"), id));
            }
            layers.push(bl);
        }
        let mlm_bias = reg(g, &self.mlm_bias)?;
        params.push(("mlm_bias".into(), mlm_bias));
        Ok(BoundEncoder { cfg: self.cfg, tok_emb, pos_emb, layers, mlm_bias, params })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
    pub ln1_g: NodeId,
    pub ln1_b: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub ln2_g: NodeId,
    pub ln2_b: NodeId,
}

/// A rectangular, PAD-padded batch of token-id rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub b: usize,
    pub t: usize,
}

impl Batch {
    pub fn pad(seqs: &[&[u32]]) -> Result<Batch> {
        if seqs.is_empty() {
            return Err(Error::Empty("batch of zero sequences".into()));
        }
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::Empty("empty sequence in batch".into()));
        }
        let t = seqs.iter().map(|s| s.len()).max().expect("nonempty");
        let b = seqs.len();
        let mut ids = vec![specials::PAD; b * t];
        for (r, s) in seqs.iter().enumerate() {
            ids[r * t..r * t + s.len()].copy_from_slice(s);
        }
        Ok(Batch { ids, b, t })
    }

    pub fn id(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.t + col]
    }
}

/// Backbone tensors registered on a specific graph.
#[derive(Debug)]
pub struct BoundEncoder {
    pub cfg: ModelConfig,
    pub tok_emb: NodeId,
    pub pos_emb: NodeId,
    pub layers: Vec<BoundLayer>,
    pub mlm_bias: NodeId,
    /// (name, node) in the same order as `EncoderState::named_tensors`.
    pub params: Vec<(String, NodeId)>,
}

impl BoundEncoder {
    /// Forward pass. Returns hidden states after the embedding layer and after
    /// every encoder layer: `n_layers + 1` nodes, each of shape [b·t, hidden].
    pub fn encode(
        &self,
        g: &mut Graph,
        batch: &Batch,
        stack: Option<&BoundStack>,
    ) -> Result<Vec<NodeId>> {
        let cfg = &self.cfg;
        if batch.t > cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds max_len {}",
                batch.t, cfg.max_len
            )));
        }
        if let Some(&bad) = batch.ids.iter().find(|&&id| id as usize >= cfg.vocab) {
            return Err(Error::Vocab { id: bad, vocab: cfg.vocab });
        }
        let (b, t, heads) = (batch.b, batch.t, cfg.n_heads);
        let dh = cfg.head_dim();
        let tok_idx: Vec<usize> = batch.ids.iter().map(|&id| id as usize).collect();
        let pos_idx: Vec<usize> = (0..b * t).map(|i| i % t).collect();
        let emb = g.gather_rows(self.tok_emb, &tok_idx)?;
        let pos = g.gather_rows(self.pos_emb, &pos_idx)?;
        let mut x = g.add(emb, pos)?;

        // Additive mask: padded key columns get a large negative value in
        // every head and query row of their batch element.
        let mut mask = vec![0.0f32; b * heads * t * t];
        for bb in 0..b {
            for j in 0..t {
                if batch.id(bb, j) == specials::PAD {
                    for hd in 0..heads {
                        let base = ((bb * heads + hd) * t) * t + j;
                        for q in 0..t {
                            mask[base + q * t] = MASK_NEG;
                        }
                    }
                }
            }
        }
        let mask = g.constant(Tensor::from_vec(&[b * heads, t, t], mask)?)?;

        let scale = 1.0 / crate::math::sqrtf(dh as f32);
        let mut hiddens = Vec::with_capacity(cfg.n_layers + 1);
        hiddens.push(x);
        for (l, lp) in self.layers.iter().enumerate() {
            // Multi-head self-attention.
            let q = g.matmul(x, lp.wq)?;
            let q = g.add_row(q, lp.bq)?;
            let k = g.matmul(x, lp.wk)?;
            let k = g.add_row(k, lp.bk)?;
            let v = g.matmul(x, lp.wv)?;
            let v = g.add_row(v, lp.bv)?;
            let qh = g.split_heads(q, b, t, heads)?;
            let kh = g.split_heads(k, b, t, heads)?;
            let vh = g.split_heads(v, b, t, heads)?;
            let scores = g.bat_matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let scores = g.add(scores, mask)?;
            let attn = g.softmax_rows(scores)?;
            let ctx = g.bat_matmul(attn, vh)?;
            let merged = g.merge_heads(ctx, b, t, heads)?;
            let proj = g.matmul(merged, lp.wo)?;
            let attn_out = g.add_row(proj, lp.bo)?;
            // First residual + norm.
            let pre1 = g.add(x, attn_out)?;
            let normed = g.layernorm(pre1, lp.ln1_g, lp.ln1_b, LN_EPS)?;
            // FFN.
            let f1 = g.matmul(normed, lp.w1)?;
            let f1 = g.add_row(f1, lp.b1)?;
            let f1 = g.relu(f1)?;
            let f2 = g.matmul(f1, lp.w2)?;
            let h_ffn = g.add_row(f2, lp.b2)?;
            // Adapter slot: hidden input is the FFN output, residual is the
            // first sublayer's normalized output.
            let y = match stack {
                Some(s) => s.apply(g, l, cfg.n_layers, h_ffn, normed)?,
                None => normed,
            };
            // Second residual + norm.
            let pre2 = g.add(y, h_ffn)?;
            x = g.layernorm(pre2, lp.ln2_g, lp.ln2_b, LN_EPS)?;
            hiddens.push(x);
        }
        Ok(hiddens)
    }

    /// Vocabulary logits for the given hidden rows via the tied embedding
    /// matrix plus the output bias.
    pub fn mlm_logits(&self, g: &mut Graph, hidden: NodeId) -> Result<NodeId> {
        let scores = g.matmul_nt(hidden, self.tok_emb)?;
        g.add_row(scores, self.mlm_bias)
    }

    /// Final-layer hidden state at position 0 of every sequence. Every row
    /// must begin with the [CLS] token.
    pub fn cls_pool(&self, g: &mut Graph, batch: &Batch, hidden_last: NodeId) -> Result<NodeId> {
        for row in 0..batch.b {
            if batch.id(row, 0) != specials::CLS {
                return Err(Error::Contract(format!(
                    "sequence {row} does not start with the reserved [CLS] token"
                )));
            }
        }
        let idx: Vec<usize> = (0..batch.b).map(|r| r * batch.t).collect();
        g.gather_rows(hidden_last, &idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{Adapter, AdapterStack, Role};
    use crate::graph::Graph;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            hidden: 8,
            n_heads: 2,
            ffn_size: 16,
            vocab: 16,
            max_len: 6,
            la_reduction: 2,
            ta_reduction: 4,
        }
    }

    fn run_encode(state: &EncoderState, seqs: &[&[u32]], stack: Option<&AdapterStack<'_>>) -> Vec<Tensor> {
        let mut g = Graph::new();
        let bound = state.bind(&mut g, false).unwrap();
        let batch = Batch::pad(seqs).unwrap();
        let bs = stack.map(|s| s.bind(&mut g, false, false).unwrap());
        let hiddens = bound.encode(&mut g, &batch, bs.as_ref()).unwrap();
        hiddens.into_iter().map(|id| g.value(id).clone()).collect()
    }

    #[test]
    fn config_validation_catches_bad_geometry() {
        assert!(tiny_cfg().validate().is_ok());
        let mut c = tiny_cfg();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_cfg();
        c.la_reduction = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_cfg();
        c.vocab = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn param_count_formula_matches_actual_tensors() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(state.param_count(), cfg.param_count());
        let desk = ModelConfig::desk_default(300);
        let desk_state = EncoderState::init(desk, &mut Rng::new(2)).unwrap();
        assert_eq!(desk_state.param_count(), desk.param_count());
    }

    #[test]
    fn fresh_adapter_stack_is_bitwise_invisible() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        let la = Adapter::fresh(Role::Language, "xx", cfg.hidden, cfg.la_reduction, cfg.n_layers, &mut rng)
            .unwrap();
        let ta = Adapter::fresh(Role::Task, "t", cfg.hidden, cfg.ta_reduction, cfg.n_layers, &mut rng)
            .unwrap();
        let seqs: &[&[u32]] = &[&[0, 6, 7, 8, 1], &[0, 9, 10, 1]];
        let bare = run_encode(&state, seqs, None);
        for drop_last in [true, false] {
            let stack = AdapterStack::full(&la, &ta, drop_last);
            let with = run_encode(&state, seqs, Some(&stack));
            assert_eq!(bare.len(), with.len());
            for (a, b) in bare.iter().zip(&with) {
                assert!(a.bitwise_eq(b), "drop_last={drop_last}");
            }
        }
    }

    #[test]
    fn single_token_zero_weights_hand_computation() {
        // One layer, one real token. All projection weights zero ⇒ the block
        // reduces to two successive layernorms over embedding + position.
        let cfg = ModelConfig {
            n_layers: 1,
            hidden: 4,
            n_heads: 1,
            ffn_size: 4,
            vocab: 8,
            max_len: 2,
            la_reduction: 2,
            ta_reduction: 2,
        };
        let mut state = EncoderState::init(cfg, &mut Rng::new(5)).unwrap();
        for (name, t) in state.named_tensors_mut() {
            if name.contains(".w") {
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
        }
        let out = run_encode(&state, &[&[6]], None);
        let e = &state.tok_emb.data()[6 * 4..7 * 4];
        let p = &state.pos_emb.data()[0..4];
        let sum: Vec<f64> = e.iter().zip(p).map(|(a, b)| f64::from(*a) + f64::from(*b)).collect();
        let ln = |v: &[f64]| -> Vec<f64> {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let rstd = 1.0 / (var + f64::from(LN_EPS)).sqrt();
            v.iter().map(|x| (x - mean) * rstd).collect()
        };
        let expect = ln(&ln(&sum));
        let got = out[1].data();
        for (g, e) in got.iter().zip(&expect) {
            assert!((f64::from(*g) - e).abs() < 1e-5, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn identical_sequences_produce_identical_rows() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(6)).unwrap();
        let seq: &[u32] = &[0, 6, 7, 1];
        let out = run_encode(&state, &[seq, seq], None);
        let last = &out[cfg.n_layers];
        let (rows, h) = (last.shape()[0], last.shape()[1]);
        assert_eq!(rows, 8);
        let (first, second) = last.data().split_at(rows / 2 * h);
        assert!(crate::tensor::bits_eq(first, second));
    }

    #[test]
    fn batch_order_equivariance() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(7)).unwrap();
        let s1: &[u32] = &[0, 6, 7, 8, 1];
        let s2: &[u32] = &[0, 9, 10, 1];
        let fwd = run_encode(&state, &[s1, s2], None);
        let rev = run_encode(&state, &[s2, s1], None);
        let t = 5 * cfg.hidden;
        for (a, b) in fwd.iter().zip(&rev) {
            assert!(crate::tensor::bits_eq(&a.data()[..t], &b.data()[t..]));
            assert!(crate::tensor::bits_eq(&a.data()[t..], &b.data()[..t]));
        }
    }

    #[test]
    fn out_of_vocab_id_is_rejected() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(8)).unwrap();
        let mut g = Graph::new();
        let bound = state.bind(&mut g, false).unwrap();
        let batch = Batch::pad(&[&[0, 99, 1]]).unwrap();
        let err = bound.encode(&mut g, &batch, None).unwrap_err();
        assert!(matches!(err, Error::Vocab { id: 99, vocab: 16 }));
    }

    #[test]
    fn over_length_batch_is_rejected() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(9)).unwrap();
        let mut g = Graph::new();
        let bound = state.bind(&mut g, false).unwrap();
        let ids: Vec<u32> = vec![6; cfg.max_len + 1];
        let batch = Batch::pad(&[&ids]).unwrap();
        assert!(matches!(bound.encode(&mut g, &batch, None), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_hidden_state_gives_uniform_logits() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(10)).unwrap();
        let mut g = Graph::new();
        let bound = state.bind(&mut g, false).unwrap();
        let zero = g.constant(Tensor::zeros(&[3, cfg.hidden])).unwrap();
        let logits = bound.mlm_logits(&mut g, zero).unwrap();
        assert_eq!(g.value(logits).shape(), &[3, cfg.vocab]);
        assert!(g.value(logits).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tied_head_feeds_gradient_back_into_embeddings() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(11)).unwrap();
        let mut g = Graph::new();
        let bound = state.bind(&mut g, true).unwrap();
        let batch = Batch::pad(&[&[0, 6, 1]]).unwrap();
        let hiddens = bound.encode(&mut g, &batch, None).unwrap();
        let logits = bound.mlm_logits(&mut g, hiddens[cfg.n_layers]).unwrap();
        let loss = g
            .softmax_cross_entropy(logits, &[-1, 7, -1], crate::graph::IGNORE_INDEX)
            .unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(bound.tok_emb).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn cls_pool_returns_position_zero_and_enforces_cls() {
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(12)).unwrap();
        let mut g = Graph::new();
        let bound = state.bind(&mut g, false).unwrap();
        let batch = Batch::pad(&[&[0, 6, 7, 1], &[0, 8, 1]]).unwrap();
        let hiddens = bound.encode(&mut g, &batch, None).unwrap();
        let last = hiddens[cfg.n_layers];
        let pooled = bound.cls_pool(&mut g, &batch, last).unwrap();
        assert_eq!(g.value(pooled).shape(), &[2, cfg.hidden]);
        let h = cfg.hidden;
        let full = g.value(last).data().to_vec();
        let pool = g.value(pooled).data().to_vec();
        assert!(crate::tensor::bits_eq(&pool[..h], &full[..h]));
        assert!(crate::tensor::bits_eq(&pool[h..], &full[batch.t * h..batch.t * h + h]));

        let bad = Batch::pad(&[&[6, 7, 1]]).unwrap();
        let hb = bound.encode(&mut g, &bad, None).unwrap();
        assert!(matches!(
            bound.cls_pool(&mut g, &bad, hb[cfg.n_layers]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn padding_mask_makes_short_rows_independent_of_batch_partner() {
        // The same sequence must encode identically whether batched with a
        // short or long partner (padding alters t but masked attention and
        // per-row ops must keep the real positions' values identical up to
        // its own length).
        let cfg = tiny_cfg();
        let state = EncoderState::init(cfg, &mut Rng::new(13)).unwrap();
        let s: &[u32] = &[0, 6, 7, 1];
        let alone = run_encode(&state, &[s], None);
        let partner: &[u32] = &[0, 9, 10, 11, 1];
        let together = run_encode(&state, &[s, partner], None);
        let h = cfg.hidden;
        // In the joint batch, row 0 occupies the first t=5 positions; compare
        // the first 4 real positions against the solo run (t=4).
        for layer in 0..=cfg.n_layers {
            let solo = &alone[layer].data()[..4 * h];
            let joint = &together[layer].data()[..4 * h];
            for (a, b) in solo.iter().zip(joint) {
                assert!(
                    (a - b).abs() < 1e-5,
                    "layer {layer}: padded batching changed a real position"
                );
            }
        }
    }
}
