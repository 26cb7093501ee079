use crate::tags::ClassLabel;
use crate::tokenizer_align::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassCount {
    pub class: ClassLabel,
    pub count: usize,
    pub percent: f64,
}

/// Token counts per collapsed class. Rows: Non-PHI first, then PHI classes by
/// descending count (ties in class order). Zero-count classes are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub documents: usize,
    pub total_tokens: usize,
    pub rows: Vec<ClassCount>,
}

impl CorpusStats {
    pub fn count(&self, class: ClassLabel) -> usize {
        self.rows
            .iter()
            .find(|r| r.class == class)
            .map_or(0, |r| r.count)
    }

    pub fn phi_fraction(&self) -> f64 {
        if self.total_tokens == 0 {
            return 0.0;
        }
        1.0 - self.count(ClassLabel::NonPhi) as f64 / self.total_tokens as f64
    }
}

pub fn corpus_statistics(seqs: &[TokenSequence]) -> CorpusStats {
    let mut counts = vec![0usize; ClassLabel::COUNT];
    for seq in seqs {
        for l in &seq.labels {
            counts[l.collapse().id()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let mut rows: Vec<ClassCount> = ClassLabel::all()
        .map(|class| {
            let count = counts[class.id()];
            let percent = if total == 0 {
                0.0
            } else {
                100.0 * count as f64 / total as f64
            };
            ClassCount { class, count, percent }
        })
        .collect();
    rows.sort_by(|a, b| {
        (b.class == ClassLabel::NonPhi)
            .cmp(&(a.class == ClassLabel::NonPhi))
            .then(b.count.cmp(&a.count))
            .then(a.class.cmp(&b.class))
    });
    CorpusStats {
        documents: seqs.len(),
        total_tokens: total,
        rows,
    }
}

/// Renders one or more named columns as `CLASS  count (percent)` rows. Row
/// order follows the first column.
pub fn render_statistics(columns: &[(&str, &CorpusStats)]) -> String {
    let Some((_, first)) = columns.first() else {
        return String::new();
    };
    let mut out = format!("{:<16}", "");
    for (name, stats) in columns {
        out.push_str(&format!("  {:>22}", format!("{name} (n={})", stats.documents)));
    }
    out.push('\n');
    for row in &first.rows {
        out.push_str(&format!("{:<16}", row.class.name()));
        for (_, stats) in columns {
            let r = stats.rows.iter().find(|r| r.class == row.class);
            let (count, pct) = r.map_or((0, 0.0), |r| (r.count, r.percent));
            out.push_str(&format!("  {:>22}", format!("{count} ({pct:.4})")));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<16}", "Total"));
    for (_, stats) in columns {
        out.push_str(&format!("  {:>22}", stats.total_tokens));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::{BioLabel, PhiClass};
    use crate::tokenizer_align::Token;

    fn seq(labels: Vec<BioLabel>) -> TokenSequence {
        let tokens = (0..labels.len())
            .map(|i| Token {
                surface: "x".into(),
                start: 2 * i,
                end: 2 * i + 1,
            })
            .collect();
        TokenSequence {
            doc_id: "d".into(),
            tokens,
            labels,
        }
    }

    #[test]
    fn three_percent_dates() {
        let mut labels = vec![BioLabel::OUTSIDE; 97];
        labels.extend(std::iter::repeat(PhiClass::Date.begin_tag().unwrap()).take(3));
        let stats = corpus_statistics(&[seq(labels)]);
        let date = stats.rows.iter().find(|r| r.class == ClassLabel::Phi(PhiClass::Date)).unwrap();
        assert_eq!(date.count, 3);
        assert!((date.percent - 3.0).abs() < 1e-12);
        let city = stats.rows.iter().find(|r| r.class == ClassLabel::Phi(PhiClass::City)).unwrap();
        assert_eq!((city.count, city.percent), (0, 0.0));
        let sum: f64 = stats.rows.iter().map(|r| r.percent).sum();
        assert!((sum - 100.0).abs() < 1e-6);
        assert_eq!(stats.rows[0].class, ClassLabel::NonPhi);
        assert_eq!(stats.rows[1].class, ClassLabel::Phi(PhiClass::Date));
    }
}
