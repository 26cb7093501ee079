//! Annotated clinical documents: XML I/O, splits, synthetic corpora and
//! per-class statistics.
//!
//! All offsets are Unicode scalar value indices, never byte indices.

mod split;
mod stats;
mod synthetic;
mod xml;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tags::PhiClass;

pub use split::{read_split_manifest, split_corpus, write_split_manifest, CorpusSplit, SplitName, SplitRatios};
pub use stats::{corpus_statistics, render_statistics, ClassCount, CorpusStats};
pub use synthetic::{generate_synthetic_corpus, SyntheticConfig};
pub use xml::{parse_document, write_document, ParseOptions};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed markup at line {line}, column {column}: {message}")]
    Markup {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("tag {tag_id}: text attribute {expected:?} does not match document substring {found:?}")]
    SpanMismatch {
        tag_id: String,
        expected: String,
        found: String,
    },
    #[error("tag {tag_id}: offsets [{start}, {end}) out of range for text of length {len}")]
    Bounds {
        tag_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("tags {first} and {second} overlap")]
    Overlap { first: String, second: String },
    #[error("tag {tag_id}: {message}")]
    InvalidTag { tag_id: String, message: String },
    #[error("document structure: {0}")]
    Structure(String),
    #[error("split: {0}")]
    Sizing(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<CorpusError>,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A gold PHI annotation over `[start, end)` of the document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiSpan {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub phi_type: PhiClass,
    pub surface: String,
}

impl PhiSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &PhiSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub spans: Vec<PhiSpan>,
}

impl AnnotatedDocument {
    /// Length of the text in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Checks the span invariants: in range, surface matches, sorted and
    /// pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let index = CharIndex::new(&self.text);
        let mut prev: Option<&PhiSpan> = None;
        for span in &self.spans {
            if span.start >= span.end || span.end > index.len() {
                return Err(CorpusError::Bounds {
                    tag_id: span.id.clone(),
                    start: span.start,
                    end: span.end,
                    len: index.len(),
                });
            }
            let found = index.slice(&self.text, span.start, span.end);
            if found != span.surface {
                return Err(CorpusError::SpanMismatch {
                    tag_id: span.id.clone(),
                    expected: span.surface.clone(),
                    found: found.to_string(),
                });
            }
            if let Some(p) = prev {
                if p.start > span.start {
                    return Err(CorpusError::Structure(format!(
                        "spans {} and {} are not sorted by start",
                        p.id, span.id
                    )));
                }
                if p.overlaps(span) {
                    return Err(CorpusError::Overlap {
                        first: p.id.clone(),
                        second: span.id.clone(),
                    });
                }
            }
            prev = Some(span);
        }
        Ok(())
    }
}

/// Maps character offsets to byte offsets of one string.
#[derive(Debug, Clone)]
pub struct CharIndex {
    bytes: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        CharIndex { bytes }
    }

    pub fn len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte(&self, char_offset: usize) -> usize {
        self.bytes[char_offset]
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> &'a str {
        &text[self.bytes[start]..self.bytes[end]]
    }
}

/// Reads every `*.xml` file of a directory, sorted by file name. The doc id is
/// the file stem.
pub fn read_corpus_dir(dir: &Path, opts: ParseOptions) -> Result<Vec<AnnotatedDocument>> {
    let io_err = |path: &Path, source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let raw = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let id = p.file_stem().unwrap_or_default().to_string_lossy();
            parse_document(&id, &raw, opts).map_err(|e| CorpusError::InFile {
                path: p.display().to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Writes each document as `<doc_id>.xml` under `dir`.
pub fn write_corpus_dir(dir: &Path, docs: &[AnnotatedDocument]) -> Result<()> {
    let io_err = |path: &Path, source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for doc in docs {
        let path = dir.join(format!("{}.xml", doc.doc_id));
        std::fs::write(&path, write_document(doc)).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
