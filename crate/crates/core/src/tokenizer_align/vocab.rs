//! Byte-level subword vocabulary.
//!
//! Layout: five special tokens, then one token per byte value, then learned
//! pieces in merge order. A piece's id doubles as its merge rank, so the
//! vocabulary file alone determines the encoder.

use std::collections::HashMap;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

const BYTE_OFFSET: u32 = SPECIAL_TOKENS.len() as u32;
const FIRST_LEARNED: u32 = BYTE_OFFSET + 256;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("vocab_size {0} is below the minimum of {min} (specials plus byte fallback)", min = FIRST_LEARNED)]
    TooSmall(usize),
    #[error("vocabulary file line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    // Bytes of every non-special token; specials map to empty vectors.
    pieces: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, u32>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;
    pub const MASK: u32 = 4;

    fn with_bytes() -> Self {
        let mut pieces = vec![Vec::new(); SPECIAL_TOKENS.len()];
        pieces.extend((0..=255u8).map(|b| vec![b]));
        let lookup = pieces
            .iter()
            .enumerate()
            .skip(BYTE_OFFSET as usize)
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        Vocab { pieces, lookup }
    }

    fn push(&mut self, piece: Vec<u8>) -> u32 {
        let id = self.pieces.len() as u32;
        self.lookup.insert(piece.clone(), id);
        self.pieces.push(piece);
        id
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        if let Some(i) = SPECIAL_TOKENS.iter().position(|s| *s == piece) {
            return Some(i as u32);
        }
        self.lookup.get(piece.as_bytes()).copied()
    }

    /// Printable form of a token, as written to the vocabulary file.
    pub fn token_string(&self, id: u32) -> String {
        let i = id as usize;
        if i < SPECIAL_TOKENS.len() {
            return SPECIAL_TOKENS[i].to_string();
        }
        let bytes = &self.pieces[i];
        let printable = std::str::from_utf8(bytes).ok().filter(|s| {
            i >= FIRST_LEARNED as usize
                && !s.starts_with("<0x")
                && !s.starts_with('[')
                && !s.chars().any(|c| c.is_whitespace() || c.is_control())
        });
        match printable {
            Some(s) => s.to_string(),
            None => bytes.iter().map(|b| format!("<0x{b:02X}>")).collect(),
        }
    }

    /// Splits one word into piece ids: start from bytes, then keep merging the
    /// adjacent pair whose concatenation has the lowest learned id.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = word.bytes().map(|b| BYTE_OFFSET + b as u32).collect();
        let mut buf = Vec::new();
        loop {
            let mut best: Option<(u32, usize)> = None;
            for i in 0..ids.len().saturating_sub(1) {
                buf.clear();
                buf.extend_from_slice(&self.pieces[ids[i] as usize]);
                buf.extend_from_slice(&self.pieces[ids[i + 1] as usize]);
                if let Some(&id) = self.lookup.get(&buf) {
                    if best.map_or(true, |(b, _)| id < b) {
                        best = Some((id, i));
                    }
                }
            }
            let Some((id, _)) = best else { break };
            merge_pair(&mut ids, id, &self.pieces);
        }
        ids
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for id in 0..self.len() as u32 {
            out.push_str(&self.token_string(id));
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(src: &str) -> Result<Self, VocabError> {
        let mut vocab = Vocab::with_bytes();
        for (n, line) in src.lines().enumerate() {
            let line_no = n + 1;
            let expected = vocab_line_expected(n, &vocab);
            if let Some(expected) = expected {
                if line != expected {
                    return Err(VocabError::Format {
                        line: line_no,
                        message: format!("expected {expected:?}, found {line:?}"),
                    });
                }
                continue;
            }
            let piece = decode_piece(line).ok_or_else(|| VocabError::Format {
                line: line_no,
                message: format!("bad byte escape in {line:?}"),
            })?;
            if piece.len() < 2 || vocab.lookup.contains_key(&piece) {
                return Err(VocabError::Format {
                    line: line_no,
                    message: format!("duplicate or trivial piece {line:?}"),
                });
            }
            vocab.push(piece);
        }
        if vocab.len() < FIRST_LEARNED as usize {
            return Err(VocabError::Format {
                line: src.lines().count(),
                message: "file ends before the byte table is complete".into(),
            });
        }
        Ok(vocab)
    }
}

fn vocab_line_expected(n: usize, vocab: &Vocab) -> Option<String> {
    (n < FIRST_LEARNED as usize).then(|| vocab.token_string(n as u32))
}

fn decode_piece(line: &str) -> Option<Vec<u8>> {
    if !line.starts_with("<0x") {
        return Some(line.as_bytes().to_vec());
    }
    let mut out = Vec::new();
    let mut rest = line;
    while !rest.is_empty() {
        let hex = rest.strip_prefix("<0x")?.get(..3)?;
        let (digits, close) = hex.split_at(2);
        if close != ">" {
            return None;
        }
        out.push(u8::from_str_radix(digits, 16).ok()?);
        rest = &rest[6..];
    }
    Some(out)
}

/// Replaces, left to right, each adjacent pair whose bytes form `target`.
fn merge_pair(ids: &mut Vec<u32>, target: u32, pieces: &[Vec<u8>]) {
    let want = &pieces[target as usize];
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() {
            let a = &pieces[ids[i] as usize];
            let b = &pieces[ids[i + 1] as usize];
            if a.len() + b.len() == want.len() && want.starts_with(a) && want.ends_with(b) {
                out.push(target);
                i += 2;
                continue;
            }
        }
        out.push(ids[i]);
        i += 1;
    }
    *ids = out;
}

/// Learns merges over word surfaces until the vocabulary reaches `vocab_size`
/// or no pair occurs at least `min_freq` times.
///
/// Ties between equally frequent pairs go to the lexicographically smallest
/// concatenation, which makes the result independent of input order.
pub fn build_vocab<'a, I>(surfaces: I, vocab_size: usize, min_freq: usize) -> Result<Vocab, VocabError>
where
    I: IntoIterator<Item = &'a str>,
{
    if vocab_size < FIRST_LEARNED as usize {
        return Err(VocabError::TooSmall(vocab_size));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in surfaces {
        *counts.entry(s).or_default() += 1;
    }
    let mut words: Vec<(Vec<u32>, usize)> = counts
        .into_iter()
        .map(|(w, c)| (w.bytes().map(|b| BYTE_OFFSET + b as u32).collect(), c))
        .collect();
    words.sort();

    let mut vocab = Vocab::with_bytes();
    let min_freq = min_freq.max(1);
    while vocab.len() < vocab_size {
        let mut pairs: HashMap<(u32, u32), usize> = HashMap::new();
        for (ids, c) in &words {
            for w in ids.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += c;
            }
        }
        let concat = |(a, b): (u32, u32)| {
            let mut v = vocab.pieces[a as usize].clone();
            v.extend_from_slice(&vocab.pieces[b as usize]);
            v
        };
        let best = pairs
            .iter()
            .filter(|(_, &c)| c >= min_freq)
            .map(|(&p, &c)| (c, concat(p)))
            .max_by(|x, y| x.0.cmp(&y.0).then_with(|| y.1.cmp(&x.1)));
        let Some((_, piece)) = best else { break };
        let id = match vocab.lookup.get(&piece) {
            Some(&id) => id,
            None => vocab.push(piece),
        };
        for (ids, _) in &mut words {
            merge_pair(ids, id, &vocab.pieces);
        }
    }
    Ok(vocab)
}
