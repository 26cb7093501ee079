//! Word tokenization, span-to-BIO alignment and subword encoding.

mod encode;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::corpus_io::AnnotatedDocument;
use crate::tags::{BioLabel, ClassLabel, PhiClass, TagKind};

pub use encode::{encode, interior_choice, window_starts, SubwordEncoding, IGNORE_LABEL, NO_WORD};
pub use vocab::{build_vocab, Vocab, VocabError, SPECIAL_TOKENS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    pub labels: Vec<BioLabel>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn classes(&self) -> Vec<ClassLabel> {
        collapse_bio(&self.labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentStatus {
    Aligned,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub doc_id: String,
    pub status: AlignmentStatus,
    /// Ids of spans that could not be projected onto tokens.
    pub reasons: Vec<String>,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace, then peels leading and trailing punctuation off each
/// chunk as one-character tokens. Offsets are in characters.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut push = |start: usize, end: usize| {
        tokens.push(Token {
            surface: chars[start..end].iter().collect(),
            start,
            end,
        })
    };
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let chunk_end = i;

        let mut lo = chunk_start;
        while lo < chunk_end && is_punct(chars[lo]) {
            push(lo, lo + 1);
            lo += 1;
        }
        if lo == chunk_end {
            continue;
        }
        let mut hi = chunk_end;
        while hi > lo && is_punct(chars[hi - 1]) {
            hi -= 1;
        }
        push(lo, hi);
        for p in hi..chunk_end {
            push(p, p + 1);
        }
    }
    tokens
}

/// Tokenizes a document and projects its spans onto BIO labels.
///
/// A document is dropped when any span boundary falls strictly inside a token,
/// when a span covers no token, or when the span would need a tag missing from
/// the inventory (e.g. a two-token ZIP, or any STREET).
pub fn align(doc: &AnnotatedDocument) -> (TokenSequence, AlignmentReport) {
    let tokens = tokenize(&doc.text);
    let mut labels = vec![BioLabel::OUTSIDE; tokens.len()];
    let mut reasons = Vec::new();

    for span in &doc.spans {
        // Tokens are sorted and disjoint, so intersecting tokens are contiguous.
        let first = tokens.partition_point(|t| t.end <= span.start);
        let last = tokens.partition_point(|t| t.start < span.end);
        if first >= last {
            reasons.push(span.id.clone());
            continue;
        }
        let cuts_token = tokens[first].start < span.start || tokens[last - 1].end > span.end;
        let begin = span.phi_type.begin_tag();
        let inside = span.phi_type.inside_tag();
        if cuts_token || begin.is_none() || (last - first > 1 && inside.is_none()) {
            reasons.push(span.id.clone());
            continue;
        }
        labels[first] = begin.unwrap_or(BioLabel::OUTSIDE);
        for label in &mut labels[first + 1..last] {
            *label = inside.unwrap_or(BioLabel::OUTSIDE);
        }
    }

    let status = if reasons.is_empty() {
        AlignmentStatus::Aligned
    } else {
        AlignmentStatus::Dropped
    };
    (
        TokenSequence {
            doc_id: doc.doc_id.clone(),
            tokens,
            labels,
        },
        AlignmentReport {
            doc_id: doc.doc_id.clone(),
            status,
            reasons,
        },
    )
}

/// Aligns every document and keeps only the aligned ones.
pub fn align_corpus(docs: &[AnnotatedDocument]) -> (Vec<TokenSequence>, Vec<AlignmentReport>) {
    let mut seqs = Vec::new();
    let mut reports = Vec::with_capacity(docs.len());
    for doc in docs {
        let (seq, report) = align(doc);
        if report.status == AlignmentStatus::Aligned {
            seqs.push(seq);
        }
        reports.push(report);
    }
    (seqs, reports)
}

/// Maps B-X and I-X to X and Outside to Non-PHI.
pub fn collapse_bio(labels: &[BioLabel]) -> Vec<ClassLabel> {
    labels.iter().map(|l| l.collapse()).collect()
}

/// True when every I-X directly follows B-X or I-X.
pub fn is_bio_valid(labels: &[BioLabel]) -> bool {
    let mut prev: Option<BioLabel> = None;
    for &l in labels {
        if l.kind() == TagKind::Inside {
            match prev {
                Some(p) if p.kind() != TagKind::Outside && p.class() == l.class() => {}
                _ => return false,
            }
        }
        prev = Some(l);
    }
    true
}

/// Merges BIO runs into `(class, first token, last token exclusive)` triples.
/// A stray I-X starts a new run.
pub fn label_runs(labels: &[BioLabel]) -> Vec<(PhiClass, usize, usize)> {
    let mut runs: Vec<(PhiClass, usize, usize)> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let Some(class) = l.class() else { continue };
        match (l.kind(), runs.last_mut()) {
            (TagKind::Inside, Some(run)) if run.0 == class && run.2 == i => run.2 = i + 1,
            _ => runs.push((class, i, i + 1)),
        }
    }
    runs
}

/// Writes aligned sequences as `token<TAB>start<TAB>end<TAB>label` lines with
/// a `#doc <id>` header per document and a blank line between documents.
pub fn write_token_file(seqs: &[TokenSequence]) -> String {
    let mut out = String::new();
    for seq in seqs {
        out.push_str(&format!("#doc {}\n", seq.doc_id));
        for (t, l) in seq.tokens.iter().zip(&seq.labels) {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", t.surface, t.start, t.end, l));
        }
        out.push('\n');
    }
    out
}

pub fn read_token_file(src: &str) -> Result<Vec<TokenSequence>, String> {
    let mut seqs: Vec<TokenSequence> = Vec::new();
    for (n, line) in src.lines().enumerate() {
        if let Some(id) = line.strip_prefix("#doc ") {
            seqs.push(TokenSequence {
                doc_id: id.to_string(),
                tokens: vec![],
                labels: vec![],
            });
            continue;
        }
        if line.is_empty() || (line.starts_with('#') && !line.contains('\t')) {
            continue;
        }
        let bad = || format!("token file line {}: malformed record", n + 1);
        let seq = seqs.last_mut().ok_or_else(bad)?;
        let fields: Vec<&str> = line.split('\t').collect();
        let [surface, start, end, label] = fields[..] else {
            return Err(bad());
        };
        seq.tokens.push(Token {
            surface: surface.to_string(),
            start: start.parse().map_err(|_| bad())?,
            end: end.parse().map_err(|_| bad())?,
        });
        seq.labels.push(label.parse().map_err(|_| bad())?);
    }
    Ok(seqs)
}
