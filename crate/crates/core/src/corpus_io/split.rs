use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| CorpusError::Config(format!("unknown split name {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.5,
            validation: 0.1,
            test: 0.4,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(CorpusError::Config(format!("split ratios must be positive: {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Floor allocation for validation and test; train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon keeps products like 0.29 * 100 from flooring to 28.
        let floor = |r: f64| (n as f64 * r + 1e-9).floor() as usize;
        let validation = floor(self.validation);
        let test = floor(self.test);
        (n - validation - test, validation, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl CorpusSplit {
    pub fn ids(&self, which: SplitName) -> &[String] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn assignment(&self, doc_id: &str) -> Option<SplitName> {
        SplitName::ALL
            .into_iter()
            .find(|&s| self.ids(s).iter().any(|d| d == doc_id))
    }
}

/// Shuffles the ids with a seeded generator and cuts them into train,
/// validation and test.
pub fn split_corpus(doc_ids: &[String], ratios: SplitRatios, seed: u64) -> Result<CorpusSplit> {
    ratios.validate()?;
    if doc_ids.len() < 3 {
        return Err(CorpusError::Sizing(format!(
            "need at least 3 documents, got {}",
            doc_ids.len()
        )));
    }
    let mut ids = doc_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != doc_ids.len() {
        return Err(CorpusError::Sizing("duplicate document ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let (n_train, n_val, _) = ratios.sizes(ids.len());
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(CorpusSplit {
        train: ids,
        validation,
        test,
        seed,
        ratios,
    })
}

/// One `doc_id<TAB>split` line per document, preceded by a seed comment.
pub fn write_split_manifest(split: &CorpusSplit) -> String {
    let mut out = format!(
        "# seed={} ratios={}/{}/{}\n",
        split.seed, split.ratios.train, split.ratios.validation, split.ratios.test
    );
    for name in SplitName::ALL {
        for id in split.ids(name) {
            out.push_str(&format!("{id}\t{name}\n"));
        }
    }
    out
}

pub fn read_split_manifest(src: &str) -> Result<CorpusSplit> {
    let mut split = CorpusSplit {
        train: vec![],
        validation: vec![],
        test: vec![],
        seed: 0,
        ratios: SplitRatios::default(),
    };
    for (n, line) in src.lines().enumerate() {
        if let Some(header) = line.strip_prefix('#') {
            for field in header.split_whitespace() {
                if let Some(seed) = field.strip_prefix("seed=") {
                    split.seed = seed.parse().unwrap_or(0);
                } else if let Some(r) = field.strip_prefix("ratios=") {
                    let parts: Vec<f64> = r.split('/').filter_map(|x| x.parse().ok()).collect();
                    if let [train, validation, test] = parts[..] {
                        split.ratios = SplitRatios { train, validation, test };
                    }
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or_else(|| {
            CorpusError::Config(format!("split manifest line {}: expected `id<TAB>split`", n + 1))
        })?;
        let list = match name.trim().parse::<SplitName>()? {
            SplitName::Train => &mut split.train,
            SplitName::Validation => &mut split.validation,
            SplitName::Test => &mut split.test,
        };
        list.push(id.to_string());
    }
    Ok(split)
}
