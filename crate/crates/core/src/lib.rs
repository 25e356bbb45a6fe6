//! adapterlab-core: deterministic building blocks for desk-scale cross-lingual
//! transfer experiments with bottleneck adapters.
//!
//! The crate is `no_std`-compatible (requires `alloc`); all float math routes
//! through `libm` so results match between the `std` and `no_std` builds. The
//! companion `adapterlab` crate adds file formats, the pipeline, and the CLI.
//!
//! Layout:
//! - [`tensor`], [`graph`], [`optim`]: row-major f32 tensors, a tape-based
//!   reverse-mode autodiff engine, and Adam with frozen-parameter support.
//! - [`encoder`], [`adapter`]: a small post-layernorm transformer encoder with
//!   one adapter slot per layer, and serial bottleneck adapters (language and
//!   task roles) with last-layer dropping and inference-time LA swapping.
//! - [`corpora`]: synthetic toy languages (lexical ciphers of a pivot), MLM
//!   corpora, and two labeled tasks (BIO token tagging, 3-way pair labels).
//! - [`train_la`], [`schedule`], [`train_tlr`]: MLM language-adapter training
//!   with held-out perplexity selection, the round-robin language schedule
//!   family, task-adapter training, and zero-shot evaluation by LA swap.
//! - [`metrics`], [`analysis`]: span F1 / accuracy, per-layer representation
//!   alignment, and result aggregation.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adapter;
pub mod analysis;
pub mod corpora;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod reference;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train_la;
pub mod train_tlr;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Reserved token ids shared by the tokenizer, the encoder, and the trainers.
pub mod specials {
    pub const CLS: u32 = 0;
    pub const SEP: u32 = 1;
    pub const MASK: u32 = 2;
    pub const PAD: u32 = 3;
    pub const UNK: u32 = 4;
    /// Number of reserved ids; content words start at this id.
    pub const COUNT: usize = 5;
    pub const TOKENS: [&str; COUNT] = ["[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"];
}
