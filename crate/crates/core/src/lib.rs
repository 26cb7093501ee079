//! Clinical text de-identification toolkit.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`corpus_io`] reads and writes i2b2-style XML documents (CDATA text plus
//!    character-offset PHI tags), splits corpora and generates synthetic ones.
//! 2. [`tokenizer_align`] tokenizes text, projects spans onto BIO labels and
//!    encodes words into subword windows.
//! 3. [`model`] is an encoder-only transformer token classifier with a
//!    hand-written backward pass and an exact parameter ledger.
//! 4. [`training`] fine-tunes it and runs resumable hyperparameter sweeps.
//! 5. [`evaluation`] scores collapsed-class predictions and [`deid_output`]
//!    redacts or tags the detected PHI.
//!
//! [`cli`] wires everything into the `deid` binary.

pub mod cli;
pub mod corpus_io;
pub mod deid_output;
pub mod evaluation;
pub mod model;
pub mod tags;
pub mod tokenizer_align;
pub mod training;

pub use corpus_io::{AnnotatedDocument, PhiSpan};
pub use tags::{BioLabel, ClassLabel, PhiClass};
