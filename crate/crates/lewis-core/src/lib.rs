//! Coarse-to-fine Levenshtein editing for text style transfer.
//!
//! The pipeline has two halves:
//!
//! 1. **Pair synthesis** — turn single-style corpora into pseudo-parallel
//!    training pairs: an attentive style classifier marks style-bearing
//!    tokens, those tokens are slotted out into style-agnostic templates,
//!    and style-specific infilling models fill the slots once per style.
//!    Pairs whose fills the classifier does not assign to their intended
//!    styles are filtered out.
//! 2. **Editing** — a tagger predicts per-token edit types
//!    (keep/delete/replace plus an insert-before flag), and a fill
//!    generator writes the inserted/replacement phrases, decoded with beam
//!    search and reranked by the style classifier.
//!
//! Everything runs on small from-scratch transformer models (f64 math,
//! f32-representable parameters) so the whole pipeline trains and runs on
//! a single CPU.

pub mod corpus;
pub mod editops;
pub mod neural;
