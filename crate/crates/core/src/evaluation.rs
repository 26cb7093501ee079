//! Token-level scoring over collapsed classes (strict entity matching on
//! request), report rendering, and the subword-to-word prediction rule.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{forward, Mode, ModelError, Real, TaggerModel};
use crate::tags::{BioLabel, ClassLabel, PhiClass, TagKind};
use crate::tokenizer_align::{encode, interior_choice, SubwordEncoding, TokenSequence, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold and predicted labels differ in shape: {0}")]
    Shape(String),
    #[error("word {word} of {doc_id} is not covered by any window")]
    Coverage { doc_id: String, word: usize },
    #[error("unknown report format {0:?} (expected table-text, delimited or bar-data)")]
    Format(String),
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Per-class confusion counts indexed by [`ClassLabel::id`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub correct: u64,
    pub total: u64,
}

impl Default for ConfusionCounts {
    fn default() -> Self {
        ConfusionCounts {
            tp: vec![0; ClassLabel::COUNT],
            fp: vec![0; ClassLabel::COUNT],
            fn_: vec![0; ClassLabel::COUNT],
            correct: 0,
            total: 0,
        }
    }
}

impl ConfusionCounts {
    pub fn add(&mut self, gold: ClassLabel, pred: ClassLabel) {
        self.total += 1;
        if gold == pred {
            self.correct += 1;
            self.tp[gold.id()] += 1;
        } else {
            self.fn_[gold.id()] += 1;
            self.fp[pred.id()] += 1;
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for i in 0..ClassLabel::COUNT {
            self.tp[i] += other.tp[i];
            self.fp[i] += other.fp[i];
            self.fn_[i] += other.fn_[i];
        }
        self.correct += other.correct;
        self.total += other.total;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    /// PHI classes with gold or predicted support, in class order.
    pub classes: Vec<ClassMetrics>,
}

impl EvalReport {
    pub fn from_counts(counts: &ConfusionCounts, model: &str, split: &str) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let mut classes = Vec::new();
        for class in ClassLabel::all().filter(|c| c.is_phi()) {
            let i = class.id();
            let (t, p, n) = (counts.tp[i], counts.fp[i], counts.fn_[i]);
            tp += t;
            fp += p;
            fn_ += n;
            if t + p + n == 0 {
                continue;
            }
            let precision = ratio(t, t + p);
            let recall = ratio(t, t + n);
            classes.push(ClassMetrics {
                class: class.name().to_string(),
                support: t + n,
                tp: t,
                fp: p,
                fn_: n,
                precision,
                recall,
                f1: f1_score(precision, recall),
            });
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        EvalReport {
            model: model.to_string(),
            split: split.to_string(),
            precision,
            recall,
            f1: f1_score(precision, recall),
            accuracy: ratio(counts.correct, counts.total),
            correct: counts.correct,
            total: counts.total,
            classes,
        }
    }

    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == name)
    }
}

pub fn confusion(gold: &[Vec<ClassLabel>], pred: &[Vec<ClassLabel>]) -> Result<ConfusionCounts> {
    if gold.len() != pred.len() {
        return Err(EvalError::Shape(format!("{} gold sequences, {} predicted", gold.len(), pred.len())));
    }
    let mut counts = ConfusionCounts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::Shape(format!(
                "sequence {i}: {} gold labels, {} predicted",
                g.len(),
                p.len()
            )));
        }
        for (&a, &b) in g.iter().zip(p) {
            counts.add(a, b);
        }
    }
    Ok(counts)
}

/// Micro-averaged precision, recall and F1 over PHI classes; accuracy over
/// every token.
pub fn score(gold: &[Vec<ClassLabel>], pred: &[Vec<ClassLabel>]) -> Result<EvalReport> {
    Ok(EvalReport::from_counts(&confusion(gold, pred)?, "model", "eval"))
}

/// Maximal entity runs `(start, end, class)` in word indices. An I tag that
/// does not continue a run of its class starts a new one.
pub fn entity_spans(labels: &[BioLabel]) -> Vec<(usize, usize, PhiClass)> {
    let mut spans: Vec<(usize, usize, PhiClass)> = Vec::new();
    let mut open = false;
    for (i, l) in labels.iter().enumerate() {
        let Some(class) = l.class() else {
            open = false;
            continue;
        };
        match spans.last_mut() {
            Some(last) if open && l.kind() == TagKind::Inside && last.2 == class => last.1 = i + 1,
            _ => spans.push((i, i + 1, class)),
        }
        open = true;
    }
    spans
}

fn collapse_all(seqs: &[Vec<BioLabel>]) -> Vec<Vec<ClassLabel>> {
    seqs.iter().map(|s| crate::tokenizer_align::collapse_bio(s)).collect()
}

/// Strict entity matching: a predicted entity counts only when its bounds and
/// class equal a gold entity. Accuracy stays token-level.
pub fn entity_confusion(gold: &[Vec<BioLabel>], pred: &[Vec<BioLabel>]) -> Result<ConfusionCounts> {
    let tokens = confusion(&collapse_all(gold), &collapse_all(pred))?;
    let mut counts = ConfusionCounts {
        correct: tokens.correct,
        total: tokens.total,
        ..ConfusionCounts::default()
    };
    for (g, p) in gold.iter().zip(pred) {
        let (gs, ps) = (entity_spans(g), entity_spans(p));
        for span in &ps {
            let id = ClassLabel::Phi(span.2).id();
            if gs.contains(span) {
                counts.tp[id] += 1;
            } else {
                counts.fp[id] += 1;
            }
        }
        for span in gs.iter().filter(|s| !ps.contains(s)) {
            counts.fn_[ClassLabel::Phi(span.2).id()] += 1;
        }
    }
    Ok(counts)
}

fn argmax<T: Real>(row: ndarray::ArrayView1<T>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-word BIO predictions from window logits: argmax at the word's first
/// subword, in the window where that word is most interior.
pub fn word_level_predictions<T: Real>(
    logits: &[Array2<T>],
    windows: &[SubwordEncoding],
    n_words: usize,
) -> Result<Vec<BioLabel>> {
    if logits.len() != windows.len() {
        return Err(EvalError::Shape(format!("{} logit blocks for {} windows", logits.len(), windows.len())));
    }
    interior_choice(windows, n_words)
        .into_iter()
        .enumerate()
        .map(|(word, choice)| {
            let (w, p) = choice.ok_or_else(|| EvalError::Coverage {
                doc_id: windows.first().map(|e| e.doc_id.clone()).unwrap_or_default(),
                word,
            })?;
            let id = argmax(logits[w].row(p));
            Ok(BioLabel::from_id(id).unwrap_or(BioLabel::OUTSIDE))
        })
        .collect()
}

/// Runs the model over every window of `seq` and returns per-word labels.
pub fn predict_sequence<T: Real>(
    model: &TaggerModel<T>,
    seq: &TokenSequence,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<BioLabel>> {
    let windows = encode(seq, vocab, max_len);
    let logits = windows
        .iter()
        .map(|enc| forward(model, enc, Mode::Eval).map(|t| t.logits))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    word_level_predictions(&logits, &windows, seq.len())
}

/// Predicts every sequence (in parallel) and scores against its gold labels.
pub fn evaluate<T: Real>(
    model: &TaggerModel<T>,
    seqs: &[TokenSequence],
    vocab: &Vocab,
    max_len: usize,
    split: &str,
) -> Result<EvalReport> {
    evaluate_at(model, seqs, vocab, max_len, split, false)
}

/// [`evaluate`], with strict entity matching when `entities` is set.
pub fn evaluate_at<T: Real>(
    model: &TaggerModel<T>,
    seqs: &[TokenSequence],
    vocab: &Vocab,
    max_len: usize,
    split: &str,
    entities: bool,
) -> Result<EvalReport> {
    let preds = seqs
        .par_iter()
        .map(|s| predict_sequence(model, s, vocab, max_len))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<Vec<BioLabel>> = seqs.iter().map(|s| s.labels.clone()).collect();
    let counts = if entities {
        entity_confusion(&gold, &preds)?
    } else {
        confusion(&collapse_all(&gold), &collapse_all(&preds))?
    };
    Ok(EvalReport::from_counts(&counts, "model", split))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Delimited,
    BarData,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-text" => Ok(ReportFormat::TableText),
            "delimited" => Ok(ReportFormat::Delimited),
            "bar-data" => Ok(ReportFormat::BarData),
            other => Err(EvalError::Format(other.to_string())),
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::TableText => {
            let _ = writeln!(out, "model: {}  split: {}", report.model, report.split);
            let _ = writeln!(out, "{:<16}  {:>6}  {:>6}  {:>6}  {:>8}", "", "P", "R", "F1", "Accuracy");
            let _ = writeln!(
                out,
                "{:<16}  {:.4}  {:.4}  {:.4}  {:.4}",
                "Overall", report.precision, report.recall, report.f1, report.accuracy
            );
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<16}  {:>6}  {:>6}  {:>6}  {:>8}", "class", "P", "R", "F1", "support");
            for c in &report.classes {
                let _ = writeln!(
                    out,
                    "{:<16}  {:.4}  {:.4}  {:.4}  {:>8}",
                    c.class, c.precision, c.recall, c.f1, c.support
                );
            }
        }
        ReportFormat::Delimited => {
            let _ = writeln!(out, "model\t{}", report.model);
            let _ = writeln!(out, "split\t{}", report.split);
            let _ = writeln!(
                out,
                "overall\t{}\t{}\t{}\t{}\t{}\t{}",
                report.precision, report.recall, report.f1, report.accuracy, report.correct, report.total
            );
            for c in &report.classes {
                let _ = writeln!(
                    out,
                    "class\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    c.class, c.support, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
                );
            }
        }
        ReportFormat::BarData => {
            for c in &report.classes {
                let _ = writeln!(out, "{}\t{}\t{:.4}", report.model, c.class, c.f1);
            }
        }
    }
    out
}

/// Parses the output of [`render_report`] in [`ReportFormat::Delimited`].
pub fn parse_delimited_report(src: &str) -> Result<EvalReport> {
    let mut report = EvalReport {
        model: String::new(),
        split: String::new(),
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        accuracy: 0.0,
        correct: 0,
        total: 0,
        classes: Vec::new(),
    };
    let mut seen_overall = false;
    for (i, line) in src.lines().enumerate() {
        let err = |message: String| EvalError::Parse { line: i + 1, message };
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        fn num<N: FromStr>(s: &str, what: &str) -> std::result::Result<N, String> {
            s.parse().map_err(|_| format!("bad {what} {s:?}"))
        }
        match (fields[0], fields.len()) {
            ("model", 2) => report.model = fields[1].to_string(),
            ("split", 2) => report.split = fields[1].to_string(),
            ("overall", 7) => {
                report.precision = num(fields[1], "precision").map_err(err)?;
                report.recall = num(fields[2], "recall").map_err(err)?;
                report.f1 = num(fields[3], "f1").map_err(err)?;
                report.accuracy = num(fields[4], "accuracy").map_err(err)?;
                report.correct = num(fields[5], "count").map_err(err)?;
                report.total = num(fields[6], "count").map_err(err)?;
                seen_overall = true;
            }
            ("class", 9) => report.classes.push(ClassMetrics {
                class: fields[1].to_string(),
                support: num(fields[2], "support").map_err(err)?,
                tp: num(fields[3], "count").map_err(err)?,
                fp: num(fields[4], "count").map_err(err)?,
                fn_: num(fields[5], "count").map_err(err)?,
                precision: num(fields[6], "precision").map_err(err)?,
                recall: num(fields[7], "recall").map_err(err)?,
                f1: num(fields[8], "f1").map_err(err)?,
            }),
            _ => return Err(err(format!("unrecognized record {line:?}"))),
        }
    }
    if !seen_overall {
        return Err(EvalError::Parse {
            line: 0,
            message: "missing overall record".into(),
        });
    }
    Ok(report)
}
