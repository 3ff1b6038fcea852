//! Rule-based error analysis for black-box model predictions.
//!
//! The crate turns prediction logs into sparse meta-feature datasets, learns
//! high-precision conjunctive rules that describe where a model fails, and
//! applies those rules to route predictions between models or to filter text
//! corpora.

pub mod ingest;
pub mod featurize;
pub mod lexicon;
pub mod select;
pub mod rulekit;
pub mod pipeline;
pub mod downstream;
pub mod synth;
pub mod cli;
