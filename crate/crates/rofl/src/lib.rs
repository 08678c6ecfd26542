//! Desk-scale toolkit for robust language-model fingerprinting.
//!
//! The crate trains tiny byte-level decoder-only transformers, derives
//! prompt/response fingerprints for them via greedy coordinate gradient
//! (GCG) optimization over unlikely token sequences, verifies ownership
//! through black-box queries, anchors fingerprints to an append-only
//! commitment ledger, and simulates the attacks relevant to that protocol
//! (front-running poisoning, forgery sprays, perplexity filtering).

pub mod attacks;
pub mod corpus;
mod error;
pub mod fpgen;
pub mod ledger;
pub mod lineage;
pub mod tinylm;
pub mod verify;

pub use error::{Error, Result};
