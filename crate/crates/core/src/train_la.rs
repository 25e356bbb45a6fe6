//! Language-adapter training on unlabeled text with a masked-token objective.
//!
//! The backbone (including the tied output head) stays frozen; only the
//! language adapter's weights receive updates. Held-out quality is tracked as
//! perplexity under deterministic exhaustive masking — every maskable position
//! of every held-out sentence is masked once — so checkpoint selection is
//! reproducible. The returned adapter is the one with the lowest recorded
//! perplexity; ties keep the earliest.

use crate::adapter::{Adapter, AdapterStack, Role};
use crate::corpora::Corpus;
use crate::encoder::{Batch, EncoderState, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, IGNORE_INDEX};
use crate::math;
use crate::optim::{Adam, AdamConfig, ParamUpdate};
use crate::rng::{mix, mix_str, Rng};
use crate::specials;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Stream salt for adapter weight initialization.
const SALT_INIT: u64 = 0x6c61_696e_6974;
/// Stream salt for batch sampling and masking decisions.
const SALT_TRAIN: u64 = 0x6c61_7472_6169;
/// Forward-pass row budget for held-out evaluation.
const EVAL_ROWS: usize = 64;
/// Consecutive all-ignored batches tolerated before giving up.
const MAX_RESAMPLES: usize = 100;
/// First non-reserved token id.
const FIRST_WORD: u32 = specials::COUNT as u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LATrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Held-out perplexity is evaluated every this many steps (and at step 0).
    pub eval_every: usize,
    /// Fraction of a corpus reserved for held-out evaluation. Consumed when
    /// the corpus is generated; the trainer uses the split recorded on it.
    pub heldout_fraction: f64,
    pub mask_rate: f64,
    pub seed: u64,
}

impl LATrainConfig {
    /// Small-model regime: 2,000 steps at batch 8, learning rate 5e-5.
    pub fn desk_default(seed: u64) -> Self {
        LATrainConfig {
            steps: 2000,
            batch_size: 8,
            lr: 5e-5,
            eval_every: 250,
            heldout_fraction: 0.05,
            mask_rate: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "steps ({}) and batch size ({}) must be positive",
                self.steps, self.batch_size
            )));
        }
        if self.eval_every == 0 || self.steps % self.eval_every != 0 {
            return Err(Error::Config(format!(
                "eval_every ({}) must divide the step budget ({})",
                self.eval_every, self.steps
            )));
        }
        if self.steps / self.eval_every < 2 {
            return Err(Error::Config(format!(
                "budget of {} steps at eval_every {} gives fewer than 2 evaluation points",
                self.steps, self.eval_every
            )));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!(
                "mask rate must lie strictly between 0 and 1, got {}",
                self.mask_rate
            )));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "heldout fraction must lie strictly between 0 and 1, got {}",
                self.heldout_fraction
            )));
        }
        AdamConfig::new(self.lr).validate()
    }
}

/// Wrap a raw sentence with the [CLS]/[SEP] frame expected by the encoder.
pub fn frame(sentence: &[u32]) -> Vec<u32> {
    let mut row = Vec::with_capacity(sentence.len() + 2);
    row.push(specials::CLS);
    row.extend_from_slice(sentence);
    row.push(specials::SEP);
    row
}

/// Select masked-prediction positions on a padded batch.
///
/// Each non-special position is independently selected with probability
/// `mask_rate`; of the selected, 80% become [MASK], 10% a random vocabulary
/// word, 10% stay unchanged. Labels carry the original id at selected
/// positions and the ignore index elsewhere. Special tokens (including
/// padding) are never selected.
pub fn mlm_mask(
    batch: &Batch,
    mask_rate: f64,
    vocab: usize,
    rng: &mut Rng,
) -> Result<(Batch, Vec<i64>)> {
    if vocab <= specials::COUNT {
        return Err(Error::Config(format!(
            "vocabulary of {vocab} has no words beyond the {} reserved ids",
            specials::COUNT
        )));
    }
    if batch.ids.contains(&specials::MASK) {
        return Err(Error::Contract(
            "input batch already contains the reserved mask token".into(),
        ));
    }
    let mut masked = batch.clone();
    let mut labels = Vec::with_capacity(batch.ids.len());
    let n_words = vocab - specials::COUNT;
    for i in 0..masked.ids.len() {
        let id = masked.ids[i];
        if id < FIRST_WORD {
            labels.push(IGNORE_INDEX);
            continue;
        }
        if !rng.bernoulli(mask_rate as f32) {
            labels.push(IGNORE_INDEX);
            continue;
        }
        labels.push(i64::from(id));
        let roll = rng.uniform_f64();
        if roll < 0.8 {
            masked.ids[i] = specials::MASK;
        } else if roll < 0.9 {
            masked.ids[i] = FIRST_WORD + rng.range(n_words) as u32;
        }
        // Final 10%: keep the original token; the model must still predict it.
    }
    Ok((masked, labels))
}

/// Held-out perplexity under exhaustive masking: every maskable position of
/// every sentence is masked once (one forward row per position), and the
/// result is exp of the mean per-position negative log-likelihood, accumulated
/// in wide precision. Deterministic — no sampling is involved.
pub fn perplexity(backbone: &EncoderState, la: &Adapter, heldout: &[&[u32]]) -> Result<f64> {
    ppl_impl(backbone, Some(la), heldout)
}

/// Held-out perplexity of the bare backbone, with no adapter in the loop.
pub fn perplexity_bare(backbone: &EncoderState, heldout: &[&[u32]]) -> Result<f64> {
    ppl_impl(backbone, None, heldout)
}

fn ppl_impl(backbone: &EncoderState, la: Option<&Adapter>, heldout: &[&[u32]]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Empty("held-out set is empty, perplexity undefined".into()));
    }
    // One variant per maskable position: (framed row with that position
    // masked, position index within the framed row, original id).
    let mut variants: Vec<(Vec<u32>, usize, u32)> = Vec::new();
    for sent in heldout {
        let row = frame(sent);
        for (p, &id) in row.iter().enumerate() {
            if id >= FIRST_WORD {
                let mut v = row.clone();
                v[p] = specials::MASK;
                variants.push((v, p, id));
            }
        }
    }
    if variants.is_empty() {
        return Err(Error::Empty(
            "held-out set has no maskable positions, perplexity undefined".into(),
        ));
    }
    let mut total_nll = 0.0f64;
    for chunk in variants.chunks(EVAL_ROWS) {
        let rows: Vec<&[u32]> = chunk.iter().map(|(v, _, _)| v.as_slice()).collect();
        let batch = Batch::pad(&rows)?;
        let mut g = Graph::new();
        let enc = backbone.bind(&mut g, false)?;
        let hiddens = match la {
            Some(la) => {
                let stack = AdapterStack::la_only(la, true);
                let bound = stack.bind(&mut g, false, false)?;
                enc.encode(&mut g, &batch, Some(&bound))?
            }
            None => enc.encode(&mut g, &batch, None)?,
        };
        let flat: Vec<usize> =
            chunk.iter().enumerate().map(|(r, (_, p, _))| r * batch.t + p).collect();
        let rows_node = g.gather_rows(hiddens[backbone.cfg.n_layers], &flat)?;
        let logits_node = enc.mlm_logits(&mut g, rows_node)?;
        let logits = g.value(logits_node).data();
        let v = backbone.cfg.vocab;
        for (r, (_, _, orig)) in chunk.iter().enumerate() {
            let zr = &logits[r * v..(r + 1) * v];
            let max = zr.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0f64;
            for &z in zr {
                sum += math::exp(f64::from(z - max));
            }
            let lse = f64::from(max) + math::ln(sum);
            total_nll += lse - f64::from(zr[*orig as usize]);
        }
    }
    Ok(math::exp(total_nll / variants.len() as f64))
}

/// Index of the history entry with the smallest value; ties keep the earliest.
pub fn argmin_earliest(history: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(_, v)) in history.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if v < history[b].1 => best = Some(i),
            _ => {}
        }
    }
    best
}

fn with_step<T>(step: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("training step {step}: {msg}")),
        other => other,
    })
}

/// One masked-prediction step: forward through the frozen backbone with the
/// adapter stacked, loss on the masked rows only, backward, and return the
/// adapter gradients in `named_tensors` order.
fn mlm_step(
    backbone: &EncoderState,
    adapter: &Adapter,
    batch: &Batch,
    labels: &[i64],
) -> Result<Vec<Option<Vec<f32>>>> {
    let mut g = Graph::new();
    let enc = backbone.bind(&mut g, false)?;
    let stack = AdapterStack::la_only(adapter, true);
    let bound = stack.bind(&mut g, true, false)?;
    let hiddens = enc.encode(&mut g, batch, Some(&bound))?;
    let positions: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l != IGNORE_INDEX)
        .map(|(i, _)| i)
        .collect();
    let picked: Vec<i64> = positions.iter().map(|&i| labels[i]).collect();
    let rows = g.gather_rows(hiddens[backbone.cfg.n_layers], &positions)?;
    let logits = enc.mlm_logits(&mut g, rows)?;
    let loss = g.softmax_cross_entropy(logits, &picked, IGNORE_INDEX)?;
    g.backward(loss)?;
    let la = bound.la.as_ref().expect("stack was built with a language adapter");
    let nodes: Vec<NodeId> = la.down.iter().chain(la.up.iter()).copied().collect();
    Ok(nodes.into_iter().map(|n| g.grad(n).map(|s| s.to_vec())).collect())
}

/// Pool feeding the batch at `step` (1-based): pools rotate every step, so two
/// pools alternate src, tgt, src, tgt, …
pub(crate) fn pool_for_step(step: usize, n_pools: usize) -> usize {
    (step - 1) % n_pools
}

/// Shared trainer: `sources` holds one sentence pool per corpus; step `s`
/// draws its batch from pool `pool_for_step(s)`.
fn train_mlm(
    backbone: &EncoderState,
    tag: &str,
    sources: &[Vec<&[u32]>],
    heldout: &[&[u32]],
    cfg: &LATrainConfig,
) -> Result<(Adapter, Vec<(usize, f64)>)> {
    cfg.validate()?;
    if sources.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("a training pool has no sentences".into()));
    }
    let vocab = backbone.cfg.vocab;
    let mut init_rng = Rng::new(mix(mix_str(cfg.seed, tag), SALT_INIT));
    let mut adapter = Adapter::fresh(
        Role::Language,
        tag,
        backbone.cfg.hidden,
        backbone.cfg.la_reduction,
        backbone.cfg.n_layers,
        &mut init_rng,
    )?;
    let names: Vec<String> =
        adapter.named_tensors().iter().map(|(n, _)| n.clone()).collect();
    let mut opt = Adam::new(AdamConfig::new(cfg.lr))?;
    let mut rng = Rng::new(mix(mix_str(cfg.seed, tag), SALT_TRAIN));

    let p0 = perplexity(backbone, &adapter, heldout)?;
    let mut history = alloc::vec![(0usize, p0)];
    let mut best_ppl = p0;
    let mut best = adapter.clone();

    for step in 1..=cfg.steps {
        let pool = &sources[pool_for_step(step, sources.len())];
        let mut attempt = 0;
        let (batch, labels) = loop {
            attempt += 1;
            let rows: Vec<Vec<u32>> =
                (0..cfg.batch_size).map(|_| frame(pool[rng.range(pool.len())])).collect();
            let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
            let padded = Batch::pad(&refs)?;
            let (masked, labels) = mlm_mask(&padded, cfg.mask_rate, vocab, &mut rng)?;
            if labels.iter().any(|&l| l != IGNORE_INDEX) {
                break (masked, labels);
            }
            if attempt >= MAX_RESAMPLES {
                return Err(Error::Generation(format!(
                    "step {step}: no position selected for masking in {MAX_RESAMPLES} consecutive batches"
                )));
            }
        };
        let grads = with_step(step, mlm_step(backbone, &adapter, &batch, &labels))?;
        let tensors = adapter.named_tensors_mut();
        let mut updates: Vec<ParamUpdate> = names
            .iter()
            .zip(tensors)
            .zip(&grads)
            .map(|((name, (_, t)), grad)| ParamUpdate {
                name,
                param: t.data_mut(),
                grad: grad.as_deref(),
                frozen: false,
            })
            .collect();
        with_step(step, opt.step(&mut updates))?;

        if step % cfg.eval_every == 0 {
            let ppl = perplexity(backbone, &adapter, heldout)?;
            history.push((step, ppl));
            if ppl < best_ppl {
                best_ppl = ppl;
                best = adapter.clone();
            }
        }
    }
    Ok((best, history))
}

/// Train a language adapter on one corpus. Returns the lowest-perplexity
/// checkpoint and the full (step, held-out perplexity) history, which always
/// starts with the untrained adapter at step 0.
pub fn train_language_adapter(
    backbone: &EncoderState,
    corpus: &Corpus,
    cfg: &LATrainConfig,
) -> Result<(Adapter, Vec<(usize, f64)>)> {
    let train: Vec<&[u32]> = corpus.train_sentences().map(|s| s.as_slice()).collect();
    let heldout: Vec<&[u32]> = corpus.heldout_sentences().map(|s| s.as_slice()).collect();
    if heldout.is_empty() {
        return Err(Error::Empty(format!(
            "corpus `{}` has no held-out sentences",
            corpus.language
        )));
    }
    train_mlm(backbone, &corpus.language, &[train], &heldout, cfg)
}

/// Train one adapter on two corpora jointly: batches alternate
/// source, target, source, target, … and perplexity is evaluated on the union
/// of both held-out sets (source's first).
pub fn train_bilingual_la(
    backbone: &EncoderState,
    corpus_src: &Corpus,
    corpus_tgt: &Corpus,
    cfg: &LATrainConfig,
) -> Result<(Adapter, Vec<(usize, f64)>)> {
    let tag = format!("{}+{}", corpus_src.language, corpus_tgt.language);
    let src: Vec<&[u32]> = corpus_src.train_sentences().map(|s| s.as_slice()).collect();
    let tgt: Vec<&[u32]> = corpus_tgt.train_sentences().map(|s| s.as_slice()).collect();
    let mut heldout: Vec<&[u32]> =
        corpus_src.heldout_sentences().map(|s| s.as_slice()).collect();
    heldout.extend(corpus_tgt.heldout_sentences().map(|s| s.as_slice()));
    if heldout.is_empty() {
        return Err(Error::Empty(format!("`{tag}` has no held-out sentences")));
    }
    train_mlm(backbone, &tag, &[src, tgt], &heldout, cfg)
}

/// Stream salt for backbone weight initialization.
const SALT_PT_INIT: u64 = 0x7074_696e_6974;
/// Stream salt for backbone batch sampling and masking decisions.
const SALT_PT_TRAIN: u64 = 0x7074_7472_6169;
/// Stream tag for the shared-encoder pretraining run.
const PRETRAIN_TAG: &str = "backbone";

/// One masked-prediction step with every backbone tensor trainable and no
/// adapters in the loop. Returns gradients in `named_tensors` order.
fn pretrain_step(
    state: &EncoderState,
    batch: &Batch,
    labels: &[i64],
) -> Result<Vec<Option<Vec<f32>>>> {
    let mut g = Graph::new();
    let enc = state.bind(&mut g, true)?;
    let hiddens = enc.encode(&mut g, batch, None)?;
    let positions: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l != IGNORE_INDEX)
        .map(|(i, _)| i)
        .collect();
    let picked: Vec<i64> = positions.iter().map(|&i| labels[i]).collect();
    let rows = g.gather_rows(hiddens[state.cfg.n_layers], &positions)?;
    let logits = enc.mlm_logits(&mut g, rows)?;
    let loss = g.softmax_cross_entropy(logits, &picked, IGNORE_INDEX)?;
    g.backward(loss)?;
    Ok(enc.params.iter().map(|(_, n)| g.grad(*n).map(|s| s.to_vec())).collect())
}

/// Train a fresh shared encoder from scratch with the masked-token objective,
/// drawing batches round-robin from one sentence pool per language. Returns
/// the state with the lowest held-out perplexity and the full
/// (step, perplexity) history, which always starts at step 0.
///
/// This produces the frozen multilingual backbone that language- and
/// task-adapter training build on; it never sees labeled data.
pub fn pretrain_backbone(
    model: ModelConfig,
    pools: &[Vec<&[u32]>],
    heldout: &[&[u32]],
    cfg: &LATrainConfig,
) -> Result<(EncoderState, Vec<(usize, f64)>)> {
    cfg.validate()?;
    if pools.is_empty() || pools.iter().any(|p| p.is_empty()) {
        return Err(Error::Empty("pretraining needs at least one nonempty sentence pool".into()));
    }
    let mut init_rng = Rng::new(mix(mix_str(cfg.seed, PRETRAIN_TAG), SALT_PT_INIT));
    let mut state = EncoderState::init(model, &mut init_rng)?;
    let vocab = state.cfg.vocab;
    let names: Vec<String> = state.named_tensors().iter().map(|(n, _)| n.clone()).collect();
    let mut opt = Adam::new(AdamConfig::new(cfg.lr))?;
    let mut rng = Rng::new(mix(mix_str(cfg.seed, PRETRAIN_TAG), SALT_PT_TRAIN));

    let p0 = perplexity_bare(&state, heldout)?;
    let mut history = alloc::vec![(0usize, p0)];
    let mut best_ppl = p0;
    let mut best = state.clone();

    for step in 1..=cfg.steps {
        let pool = &pools[pool_for_step(step, pools.len())];
        let mut attempt = 0;
        let (batch, labels) = loop {
            attempt += 1;
            let rows: Vec<Vec<u32>> =
                (0..cfg.batch_size).map(|_| frame(pool[rng.range(pool.len())])).collect();
            let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
            let padded = Batch::pad(&refs)?;
            let (masked, labels) = mlm_mask(&padded, cfg.mask_rate, vocab, &mut rng)?;
            if labels.iter().any(|&l| l != IGNORE_INDEX) {
                break (masked, labels);
            }
            if attempt >= MAX_RESAMPLES {
                return Err(Error::Generation(format!(
                    "step {step}: no position selected for masking in {MAX_RESAMPLES} consecutive batches"
                )));
            }
        };
        let grads = with_step(step, pretrain_step(&state, &batch, &labels))?;
        let tensors = state.named_tensors_mut();
        let mut updates: Vec<ParamUpdate> = names
            .iter()
            .zip(tensors)
            .zip(&grads)
            .map(|((name, (_, t)), grad)| ParamUpdate {
                name,
                param: t.data_mut(),
                grad: grad.as_deref(),
                frozen: false,
            })
            .collect();
        with_step(step, opt.step(&mut updates))?;

        if step % cfg.eval_every == 0 {
            let ppl = perplexity_bare(&state, heldout)?;
            history.push((step, ppl));
            if ppl < best_ppl {
                best_ppl = ppl;
                best = state.clone();
            }
        }
    }
    Ok((best, history))
}
