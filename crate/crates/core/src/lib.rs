//! Corpus construction and evaluation toolkit for instruction-following
//! open-world information extraction.
//!
//! The crate turns wiki-style dumps into weakly supervised, instruction-
//! conditioned entity-profile datasets and scores model predictions on six
//! IE subtasks. The pieces compose as a file-based pipeline:
//!
//! 1. [`wikidata`] streams an entity dump into an [`wikidata::Ontology`].
//! 2. [`wikipedia`] streams an XML export and [`wikitext`] extracts each
//!    article's leading paragraph with anchor spans.
//! 3. [`align`] joins anchors to entity profiles (weak supervision) and
//!    attaches KB relations between co-mentioned entities (distant
//!    supervision).
//! 4. [`instructions`] augments annotated documents into
//!    instruction-conditioned samples with constraint-filtered targets.
//! 5. [`linearize`] serialises targets to the JSON schema models are
//!    trained to emit, and validates model output on the way back in.
//! 6. [`split`] builds a time-difference open-world evaluation corpus and
//!    labels seen/unseen partitions.
//! 7. [`eval`] scores prediction files with per-category, per-partition
//!    breakdowns and instruction-following diagnostics.
//!
//! The `forge` binary wires the stages together; see [`pipeline`].

pub mod align;
pub mod eval;
pub mod instructions;
pub mod jsonl;
pub mod linearize;
pub mod pipeline;
pub mod split;
pub mod testkit;
pub mod wikidata;
pub mod wikipedia;
pub mod wikitext;
