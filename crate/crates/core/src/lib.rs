//! Span-level error annotation of machine-generated text.
//!
//! The crate is organised around a small data model ([`model`]) and the
//! analyses built on top of it:
//!
//! * [`textproc`] tokenizes text into character spans, snaps raw selections
//!   to word boundaries and detects sentence ends.
//! * [`dataset`] reads and writes the JSONL wire formats and validates a
//!   dataset of generations and annotations.
//! * [`metrics`] computes span coverage, coverage × severity and span counts
//!   with bootstrap confidence intervals.
//! * [`agreement`] computes per-token Krippendorff's α, Two-Agree and the
//!   count bootstrap.
//! * [`decoding`] implements the frequency penalty, temperature and nucleus
//!   sampling steps and a length-controlled generation loop over a pluggable
//!   language model.
//! * [`prediction`] builds gold token sets, exports span-classification
//!   training data and scores predictions at the token level.

pub mod agreement;
pub mod dataset;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod prediction;
pub mod rng;
pub mod textproc;

pub use dataset::{Dataset, ValidationReport, Violation, ViolationKind};
pub use error::{Error, Result};
pub use model::{
    Annotation, CharSpan, DecodingConfig, ErrorCategory, ErrorSpan, ErrorType, GenerationRecord,
    Severity,
};
pub use textproc::TokenMap;
