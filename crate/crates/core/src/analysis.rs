//! Representation-alignment analysis and result aggregation.
//!
//! Alignment: per-layer cosine similarity between [CLS] representations of two
//! languages, each encoded through its own language adapter under a shared
//! task adapter. Aggregation: per-variant result rows with an unweighted
//! language average and a strict "better than baseline" count, plus
//! elementwise seed averaging.

use crate::adapter::{Adapter, AdapterStack};
use crate::encoder::{Batch, EncoderState};
use crate::error::{Error, Result};
use crate::math;
use crate::train_la::frame;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Forward-pass row budget for encoding alignment examples.
const ENCODE_ROWS: usize = 64;

/// How the two example sets are compared at each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    /// Cosine between the two mean [CLS] vectors (works for unpaired sets).
    MeanEmbedding,
    /// Mean over examples of the cosine between [CLS] vectors at the same
    /// index; requires the sets to be parallel.
    PairwiseMean,
}

impl PairingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PairingMode::MeanEmbedding => "mean-embedding",
            PairingMode::PairwiseMean => "pairwise-mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentProfile {
    pub src_tag: String,
    pub tgt_tag: String,
    pub mode: PairingMode,
    /// One score per depth: embeddings first, then each encoder layer.
    pub scores: Vec<f64>,
    pub n_examples: usize,
}

/// Cosine similarity in wide precision, clamped to [-1, 1].
pub fn cosine_f64(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::NonFinite(
            "cosine of a zero-norm vector is undefined".into(),
        ));
    }
    // One sqrt of the product keeps exactly-parallel vectors at exactly ±1.
    Ok((dot / math::sqrt(na * nb)).clamp(-1.0, 1.0))
}

/// [CLS] vectors per layer for the first `n` sentences: `out[layer][example]`
/// is a hidden-size vector; layer 0 is the embedding layer.
fn cls_by_layer(
    backbone: &EncoderState,
    la: &Adapter,
    ta: &Adapter,
    sentences: &[Vec<u32>],
    n: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let depth = backbone.cfg.n_layers + 1;
    let h = backbone.cfg.hidden;
    let mut out: Vec<Vec<Vec<f64>>> = alloc::vec![Vec::with_capacity(n); depth];
    for chunk in sentences[..n].chunks(ENCODE_ROWS) {
        let rows: Vec<Vec<u32>> = chunk.iter().map(|s| frame(s)).collect();
        let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
        let batch = Batch::pad(&refs)?;
        let mut g = crate::graph::Graph::new();
        let enc = backbone.bind(&mut g, false)?;
        let stack = AdapterStack::full(la, ta, true);
        let bound = stack.bind(&mut g, false, false)?;
        let hiddens = enc.encode(&mut g, &batch, Some(&bound))?;
        for (l, &node) in hiddens.iter().enumerate() {
            let data = g.value(node).data();
            for r in 0..batch.b {
                let base = (r * batch.t) * h;
                out[l].push(data[base..base + h].iter().map(|&v| f64::from(v)).collect());
            }
        }
    }
    Ok(out)
}

/// Per-layer alignment between two languages' [CLS] representations, each
/// encoded through its own language adapter under the shared task adapter.
#[allow(clippy::too_many_arguments)]
pub fn cls_alignment(
    backbone: &EncoderState,
    ta: &Adapter,
    la_src: &Adapter,
    la_tgt: &Adapter,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    n: usize,
    mode: PairingMode,
) -> Result<AlignmentProfile> {
    if n == 0 {
        return Err(Error::Empty("alignment over zero examples".into()));
    }
    if n > src.len() || n > tgt.len() {
        return Err(Error::Config(format!(
            "requested {n} examples but only {} source and {} target are available",
            src.len(),
            tgt.len()
        )));
    }
    let s = cls_by_layer(backbone, la_src, ta, src, n)?;
    let t = cls_by_layer(backbone, la_tgt, ta, tgt, n)?;
    let h = backbone.cfg.hidden;
    let mut scores = Vec::with_capacity(s.len());
    for (l, (sl, tl)) in s.iter().zip(&t).enumerate() {
        let score = match mode {
            PairingMode::MeanEmbedding => {
                let mean = |vs: &Vec<Vec<f64>>| -> Vec<f64> {
                    let mut m = alloc::vec![0.0f64; h];
                    for v in vs {
                        for (mi, vi) in m.iter_mut().zip(v) {
                            *mi += vi;
                        }
                    }
                    for mi in m.iter_mut() {
                        *mi /= n as f64;
                    }
                    m
                };
                cosine_f64(&mean(sl), &mean(tl)).map_err(|e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("layer {l}: {msg}"))
                    }
                    other => other,
                })?
            }
            PairingMode::PairwiseMean => {
                let mut total = 0.0f64;
                for (i, (a, b)) in sl.iter().zip(tl).enumerate() {
                    total += cosine_f64(a, b).map_err(|e| match e {
                        Error::NonFinite(msg) => {
                            Error::NonFinite(format!("layer {l}, pair {i}: {msg}"))
                        }
                        other => other,
                    })?;
                }
                (total / n as f64).clamp(-1.0, 1.0)
            }
        };
        scores.push(score);
    }
    Ok(AlignmentProfile {
        src_tag: la_src.tag.clone(),
        tgt_tag: la_tgt.tag.clone(),
        mode,
        scores,
        n_examples: n,
    })
}

// ── Result aggregation ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub variant: String,
    pub by_language: BTreeMap<String, f64>,
    /// Unweighted mean over the language set.
    pub avg: f64,
    /// Languages where this row strictly beats the baseline.
    pub better_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub baseline: String,
    pub languages: Vec<String>,
    pub rows: Vec<ResultRow>,
}

/// Build the per-variant summary table against a named baseline variant.
/// Every variant must cover exactly the same language set.
pub fn aggregate(
    results: &BTreeMap<String, BTreeMap<String, f64>>,
    baseline: &str,
) -> Result<ResultTable> {
    let base = results.get(baseline).ok_or_else(|| {
        Error::Config(format!("baseline variant `{baseline}` is not among the results"))
    })?;
    let languages: Vec<String> = base.keys().cloned().collect();
    if languages.is_empty() {
        return Err(Error::Empty(format!("baseline `{baseline}` covers no languages")));
    }
    let mut rows = Vec::with_capacity(results.len());
    for (variant, by_language) in results {
        for l in by_language.keys() {
            if !base.contains_key(l) {
                return Err(Error::Contract(format!(
                    "variant `{variant}` covers `{l}`, which the baseline does not"
                )));
            }
        }
        for l in &languages {
            if !by_language.contains_key(l) {
                return Err(Error::Contract(format!(
                    "variant `{variant}` is missing language `{l}`"
                )));
            }
        }
        let avg = by_language.values().sum::<f64>() / languages.len() as f64;
        let better_count = languages
            .iter()
            .filter(|l| by_language[l.as_str()] > base[l.as_str()])
            .count();
        rows.push(ResultRow {
            variant: variant.clone(),
            by_language: by_language.clone(),
            avg,
            better_count,
        });
    }
    Ok(ResultTable { baseline: baseline.to_string(), languages, rows })
}

impl ResultTable {
    /// Aligned plain-text rendering: one row per variant, one column per
    /// language, then the average and the better-than-baseline count.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = Vec::new();
        let mut header: Vec<String> = alloc::vec!["variant".to_string()];
        header.extend(self.languages.iter().cloned());
        header.push("avg".to_string());
        header.push(format!("better>{}", self.baseline));
        for cell in &header {
            widths.push(cell.len());
        }
        let mut body: Vec<Vec<String>> = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let mut cells = alloc::vec![row.variant.clone()];
            for l in &self.languages {
                cells.push(format!("{:.4}", row.by_language[l.as_str()]));
            }
            cells.push(format!("{:.4}", row.avg));
            cells.push(if row.variant == self.baseline {
                "-".to_string()
            } else {
                format!("{}", row.better_count)
            });
            for (w, c) in widths.iter_mut().zip(&cells) {
                *w = (*w).max(c.len());
            }
            body.push(cells);
        }
        let mut out = String::new();
        let render = |cells: &[String], widths: &[usize], out: &mut String| {
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                out.push_str(c);
                for _ in c.len()..*w {
                    out.push(' ');
                }
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        };
        render(&header, &widths, &mut out);
        for cells in &body {
            render(cells, &widths, &mut out);
        }
        out
    }
}

/// Elementwise mean over runs: every run must cover the same language set.
pub fn seed_average(runs: &[BTreeMap<String, f64>]) -> Result<BTreeMap<String, f64>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Empty("seed average over zero runs".into()))?;
    for (i, run) in runs.iter().enumerate() {
        if run.len() != first.len() || run.keys().zip(first.keys()).any(|(a, b)| a != b) {
            return Err(Error::Contract(format!(
                "run {i} covers a different language set than run 0"
            )));
        }
    }
    let mut out = BTreeMap::new();
    for key in first.keys() {
        let total: f64 = runs.iter().map(|r| r[key.as_str()]).sum();
        out.insert(key.clone(), total / runs.len() as f64);
    }
    Ok(out)
}
