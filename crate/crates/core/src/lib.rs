//! Detection of honesty violations in mobile-app reviews.
//!
//! The pipeline runs corpus ingestion and keyword filtering ([`corpus`]),
//! text normalization ([`textprep`]), mean-pooled embeddings
//! ([`features`]), seven classifier families ([`models`]), cross-validated
//! evaluation ([`eval`]), and supports manual category coding
//! ([`taxonomy`]) and a two-analyst labeling workflow ([`annotate`]).

pub mod annotate;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod models;
pub mod synth;
pub mod taxonomy;
pub mod textprep;
