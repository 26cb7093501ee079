//! Word sequences to fixed-budget subword windows.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{TokenSequence, Vocab};

/// Label id on positions excluded from loss and scoring.
pub const IGNORE_LABEL: i32 = -100;
/// `word_index` value for `[CLS]`, `[SEP]` and padding.
pub const NO_WORD: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordEncoding {
    pub doc_id: String,
    pub window_index: usize,
    pub input_ids: Vec<u32>,
    pub word_index: Vec<u32>,
    pub label_ids: Vec<i32>,
    pub attention_mask: Vec<u8>,
}

impl SubwordEncoding {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Number of positions that carry a training label.
    pub fn labeled_positions(&self) -> usize {
        self.label_ids.iter().filter(|&&l| l != IGNORE_LABEL).count()
    }

    /// Appends `[PAD]` positions (mask 0, ignored) up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.input_ids.len() < len {
            self.input_ids.push(Vocab::PAD);
            self.word_index.push(NO_WORD);
            self.label_ids.push(IGNORE_LABEL);
            self.attention_mask.push(0);
        }
    }
}

/// Word ranges `[start, end)` of each window, given per-word subword counts.
///
/// A window holds as many whole words as fit in `capacity` subwords. The next
/// window starts at the first word at least `stride` subwords after the
/// current start, and never later than the current window's end, so every word
/// starts inside some window. Each count must be in `1..=capacity`.
pub fn window_starts(piece_counts: &[usize], capacity: usize, stride: usize) -> Vec<(usize, usize)> {
    let n = piece_counts.len();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut acc = 0;
    offsets.push(0);
    for &c in piece_counts {
        acc += c;
        offsets.push(acc);
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && offsets[end + 1] - offsets[start] <= capacity {
            end += 1;
        }
        windows.push((start, end));
        if end == n {
            break;
        }
        start = (start + 1..=end)
            .find(|&w| offsets[w] - offsets[start] >= stride)
            .unwrap_or(end);
    }
    windows
}

/// Encodes a labeled word sequence into `[CLS] ... [SEP]` windows of at most
/// `max_len` positions with stride `max_len / 2`.
///
/// The first subword of each word carries the word's label id; every other
/// subword and both specials carry [`IGNORE_LABEL`]. A word with more than
/// `max_len - 2` subwords is truncated to fit.
pub fn encode(seq: &TokenSequence, vocab: &Vocab, max_len: usize) -> Vec<SubwordEncoding> {
    assert!(max_len >= 8, "max_len must be at least 8, got {max_len}");
    let capacity = max_len - 2;
    let stride = max_len / 2;

    let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
    let pieces: Vec<Vec<u32>> = seq
        .tokens
        .iter()
        .map(|t| {
            let mut p = cache
                .entry(t.surface.as_str())
                .or_insert_with(|| vocab.encode_word(&t.surface))
                .clone();
            if p.is_empty() {
                p.push(Vocab::UNK);
            }
            p.truncate(capacity);
            p
        })
        .collect();
    let counts: Vec<usize> = pieces.iter().map(Vec::len).collect();

    window_starts(&counts, capacity, stride)
        .into_iter()
        .enumerate()
        .map(|(window_index, (start, end))| {
            let mut enc = SubwordEncoding {
                doc_id: seq.doc_id.clone(),
                window_index,
                input_ids: vec![Vocab::CLS],
                word_index: vec![NO_WORD],
                label_ids: vec![IGNORE_LABEL],
                attention_mask: vec![1],
            };
            for w in start..end {
                let label = seq.labels.get(w).map_or(IGNORE_LABEL, |l| l.id() as i32);
                for (k, &id) in pieces[w].iter().enumerate() {
                    enc.input_ids.push(id);
                    enc.word_index.push(w as u32);
                    enc.label_ids.push(if k == 0 { label } else { IGNORE_LABEL });
                    enc.attention_mask.push(1);
                }
            }
            enc.input_ids.push(Vocab::SEP);
            enc.word_index.push(NO_WORD);
            enc.label_ids.push(IGNORE_LABEL);
            enc.attention_mask.push(1);
            enc
        })
        .collect()
}

/// For every word `0..n_words`, the `(window, position)` of its first subword
/// in the window where it sits farthest from a window edge. Ties go to the
/// earlier window. `None` marks a word no window covers.
pub fn interior_choice(windows: &[SubwordEncoding], n_words: usize) -> Vec<Option<(usize, usize)>> {
    let mut best: Vec<Option<(usize, usize, usize)>> = vec![None; n_words];
    for (wi, enc) in windows.iter().enumerate() {
        let content: Vec<usize> = (0..enc.len())
            .filter(|&p| enc.word_index[p] != NO_WORD)
            .collect();
        let (Some(&lo), Some(&hi)) = (content.first(), content.last()) else {
            continue;
        };
        let mut prev_word = NO_WORD;
        for &p in &content {
            let word = enc.word_index[p];
            if word == prev_word {
                continue;
            }
            prev_word = word;
            let Some(slot) = best.get_mut(word as usize) else { continue };
            let margin = (p - lo).min(hi - p);
            if slot.map_or(true, |(_, _, m)| margin > m) {
                *slot = Some((wi, p, margin));
            }
        }
    }
    best.into_iter().map(|b| b.map(|(w, p, _)| (w, p))).collect()
}
