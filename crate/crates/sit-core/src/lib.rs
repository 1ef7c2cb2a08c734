//! Structure-induced transformer for code summarization.
//!
//! The pipeline: [`minilang`] parses a small imperative language into an AST;
//! [`codegraph`] projects the AST onto its terminal tokens and builds three
//! structural views (abstract syntax, control flow, data dependency) that are
//! combined into one multi-view adjacency matrix; [`sitmodel`] is an
//! encoder-decoder transformer whose encoder self-attention can be restricted
//! by that matrix; [`trainer`] generates synthetic corpora, trains the model,
//! and scores generated summaries with BLEU and ROUGE-L.
//!
//! Everything runs on CPU over a small reverse-mode tape ([`numkit`]).

pub mod codegraph;
pub mod minilang;
pub mod numkit;
pub mod sitmodel;
pub mod trainer;
