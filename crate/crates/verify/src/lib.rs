//! Reference implementations used to check the main crates.
//!
//! Everything here is written against the data model only: token boundaries
//! come from the generator, not the tokenizer, and all arithmetic is exact.

pub mod oracle;
pub mod synthetic;
