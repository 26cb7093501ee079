//! Redaction and tag insertion driven by per-token class predictions.

use serde::{Deserialize, Serialize};

use crate::corpus_io::CharIndex;
use crate::tags::ClassLabel;
use crate::tokenizer_align::Token;

pub const CLASS_PLACEHOLDER: &str = "{class}";

#[derive(Debug, thiserror::Error)]
pub enum DeidError {
    #[error("{tokens} tokens but {labels} labels")]
    Length { tokens: usize, labels: usize },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("token {index} ({start}..{end}) lies outside a text of {len} characters")]
    TokenBounds { index: usize, start: usize, end: usize, len: usize },
    #[error("manifest does not match the text: {0}")]
    Manifest(String),
}

pub type Result<T, E = DeidError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeidMode {
    /// Each replaced character becomes the glyph.
    Redact,
    /// Each replaced run becomes the template with the class name filled in.
    TagInsert,
}

impl std::str::FromStr for DeidMode {
    type Err = DeidError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "redact" => Ok(DeidMode::Redact),
            "tag-insert" => Ok(DeidMode::TagInsert),
            other => Err(DeidError::Policy(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeidPolicy {
    pub mode: DeidMode,
    pub glyph: String,
    pub template: String,
}

impl Default for DeidPolicy {
    fn default() -> Self {
        DeidPolicy {
            mode: DeidMode::TagInsert,
            glyph: "*".into(),
            template: "[{class}]".into(),
        }
    }
}

impl DeidPolicy {
    pub fn redact(glyph: &str) -> Self {
        DeidPolicy {
            mode: DeidMode::Redact,
            glyph: glyph.into(),
            ..Default::default()
        }
    }

    pub fn tag_insert(template: &str) -> Self {
        DeidPolicy {
            mode: DeidMode::TagInsert,
            template: template.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            DeidMode::Redact if self.glyph.is_empty() => Err(DeidError::Policy("redaction glyph is empty".into())),
            DeidMode::TagInsert if !self.template.contains(CLASS_PLACEHOLDER) => Err(DeidError::Policy(format!(
                "template {:?} has no {CLASS_PLACEHOLDER} placeholder",
                self.template
            ))),
            _ => Ok(()),
        }
    }

    fn replacement(&self, class: ClassLabel, original: &str) -> String {
        match self.mode {
            DeidMode::Redact => self.glyph.repeat(original.chars().count()),
            DeidMode::TagInsert => self.template.replace(CLASS_PLACEHOLDER, class.name()),
        }
    }
}

/// One replaced run. Offsets are characters of the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub start: usize,
    pub end: usize,
    pub class: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeidOutput {
    pub text: String,
    pub manifest: Vec<ManifestEntry>,
}

/// Replaces every maximal run of consecutive tokens sharing a PHI class,
/// including the text between those tokens, as one unit. Everything outside
/// the runs is copied unchanged.
pub fn apply_policy(text: &str, tokens: &[Token], labels: &[ClassLabel], policy: &DeidPolicy) -> Result<DeidOutput> {
    policy.validate()?;
    if tokens.len() != labels.len() {
        return Err(DeidError::Length {
            tokens: tokens.len(),
            labels: labels.len(),
        });
    }
    let index = CharIndex::new(text);
    for (i, t) in tokens.iter().enumerate() {
        if t.start > t.end || t.end > index.len() {
            return Err(DeidError::TokenBounds {
                index: i,
                start: t.start,
                end: t.end,
                len: index.len(),
            });
        }
    }

    let mut out = String::with_capacity(text.len());
    let mut manifest = Vec::new();
    let mut cursor = 0;
    let mut i = 0;
    while i < tokens.len() {
        let class = labels[i];
        if !class.is_phi() {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < tokens.len() && labels[j] == class {
            j += 1;
        }
        let (start, end) = (tokens[i].start.max(cursor), tokens[j - 1].end);
        out.push_str(index.slice(text, cursor, start));
        let replacement = policy.replacement(class, index.slice(text, start, end));
        out.push_str(&replacement);
        manifest.push(ManifestEntry {
            start,
            end,
            class: class.name().to_string(),
            replacement,
        });
        cursor = end;
        i = j;
    }
    out.push_str(index.slice(text, cursor, index.len()));
    Ok(DeidOutput { text: out, manifest })
}

/// Puts the original characters back in place of each manifest replacement.
/// Checks that every replacement sits where the manifest says it does and
/// that the text between replacements matches the original.
pub fn invert_manifest(deid_text: &str, manifest: &[ManifestEntry], original: &str) -> Result<String> {
    let src = CharIndex::new(original);
    let out_index = CharIndex::new(deid_text);
    let mut restored = String::with_capacity(original.len());
    let (mut orig_cursor, mut out_cursor) = (0usize, 0usize);
    for e in manifest {
        if e.start < orig_cursor || e.end < e.start || e.end > src.len() {
            return Err(DeidError::Manifest(format!("entry {}..{} out of order or out of range", e.start, e.end)));
        }
        let kept = e.start - orig_cursor;
        let rep_len = e.replacement.chars().count();
        let rep_start = out_cursor + kept;
        if rep_start + rep_len > out_index.len() {
            return Err(DeidError::Manifest(format!("entry {}..{} runs past the output", e.start, e.end)));
        }
        let kept_out = out_index.slice(deid_text, out_cursor, rep_start);
        if kept_out != src.slice(original, orig_cursor, e.start) {
            return Err(DeidError::Manifest(format!("text before {} differs", e.start)));
        }
        if out_index.slice(deid_text, rep_start, rep_start + rep_len) != e.replacement {
            return Err(DeidError::Manifest(format!("replacement for {}..{} not found", e.start, e.end)));
        }
        restored.push_str(kept_out);
        restored.push_str(src.slice(original, e.start, e.end));
        orig_cursor = e.end;
        out_cursor = rep_start + rep_len;
    }
    let tail = out_index.slice(deid_text, out_cursor, out_index.len());
    if tail != src.slice(original, orig_cursor, src.len()) {
        return Err(DeidError::Manifest(format!("text after {orig_cursor} differs")));
    }
    restored.push_str(tail);
    Ok(restored)
}

pub fn write_manifest(manifest: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in manifest {
        out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        out.push('\n');
    }
    out
}

pub fn read_manifest(src: &str) -> Result<Vec<ManifestEntry>> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DeidError::Manifest(format!("line {}: {e}", i + 1))))
        .collect()
}
