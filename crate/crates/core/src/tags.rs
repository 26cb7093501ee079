//! PHI classes and the fixed 41-entry BIO tag table.
//!
//! The tag table is frozen to the i2b2/UTHealth 2014 inventory used for
//! fine-tuning: 22 `B-` tags, 18 `I-` tags and a single Outside tag. Some
//! classes have no `I-` form (BIOID, DEVICE, EMAIL, USERNAME, ZIP) and STREET
//! only has an `I-` form, so not every span is representable; alignment reports
//! such spans instead of inventing tags.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One PHI entity class (BIO prefix stripped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhiClass {
    Age,
    Bioid,
    City,
    Country,
    Date,
    Device,
    Doctor,
    Email,
    Fax,
    Healthplan,
    Hospital,
    Idnum,
    LocationOther,
    Medicalrecord,
    Organization,
    Patient,
    Phone,
    Profession,
    State,
    Street,
    Url,
    Username,
    Zip,
}

impl PhiClass {
    pub const ALL: [PhiClass; 23] = [
        PhiClass::Age,
        PhiClass::Bioid,
        PhiClass::City,
        PhiClass::Country,
        PhiClass::Date,
        PhiClass::Device,
        PhiClass::Doctor,
        PhiClass::Email,
        PhiClass::Fax,
        PhiClass::Healthplan,
        PhiClass::Hospital,
        PhiClass::Idnum,
        PhiClass::LocationOther,
        PhiClass::Medicalrecord,
        PhiClass::Organization,
        PhiClass::Patient,
        PhiClass::Phone,
        PhiClass::Profession,
        PhiClass::State,
        PhiClass::Street,
        PhiClass::Url,
        PhiClass::Username,
        PhiClass::Zip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhiClass::Age => "AGE",
            PhiClass::Bioid => "BIOID",
            PhiClass::City => "CITY",
            PhiClass::Country => "COUNTRY",
            PhiClass::Date => "DATE",
            PhiClass::Device => "DEVICE",
            PhiClass::Doctor => "DOCTOR",
            PhiClass::Email => "EMAIL",
            PhiClass::Fax => "FAX",
            PhiClass::Healthplan => "HEALTHPLAN",
            PhiClass::Hospital => "HOSPITAL",
            PhiClass::Idnum => "IDNUM",
            PhiClass::LocationOther => "LOCATION-OTHER",
            PhiClass::Medicalrecord => "MEDICALRECORD",
            PhiClass::Organization => "ORGANIZATION",
            PhiClass::Patient => "PATIENT",
            PhiClass::Phone => "PHONE",
            PhiClass::Profession => "PROFESSION",
            PhiClass::State => "STATE",
            PhiClass::Street => "STREET",
            PhiClass::Url => "URL",
            PhiClass::Username => "USERNAME",
            PhiClass::Zip => "ZIP",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Tag that opens a span of this class, if the inventory has one.
    pub fn begin_tag(self) -> Option<BioLabel> {
        BioLabel::find(TagKind::Begin, self)
    }

    /// Tag that continues a span of this class, if the inventory has one.
    pub fn inside_tag(self) -> Option<BioLabel> {
        BioLabel::find(TagKind::Inside, self)
    }

    /// Classes that can label at least a one-token span.
    pub fn taggable() -> Vec<PhiClass> {
        PhiClass::ALL
            .into_iter()
            .filter(|c| c.begin_tag().is_some())
            .collect()
    }
}

impl fmt::Display for PhiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown tag `{0}`")]
pub struct UnknownTag(pub String);

impl FromStr for PhiClass {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PhiClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownTag(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    Begin,
    Inside,
    Outside,
}

// Canonical tag order; the index of an entry is its label id.
const TAG_TABLE: [(TagKind, Option<PhiClass>); 41] = {
    use PhiClass::*;
    use TagKind::*;
    [
        (Begin, Some(Age)),
        (Begin, Some(Bioid)),
        (Begin, Some(City)),
        (Begin, Some(Country)),
        (Begin, Some(Date)),
        (Begin, Some(Device)),
        (Begin, Some(Doctor)),
        (Begin, Some(Email)),
        (Begin, Some(Fax)),
        (Begin, Some(Healthplan)),
        (Begin, Some(Hospital)),
        (Begin, Some(Idnum)),
        (Begin, Some(LocationOther)),
        (Begin, Some(Medicalrecord)),
        (Begin, Some(Organization)),
        (Begin, Some(Patient)),
        (Begin, Some(Phone)),
        (Begin, Some(Profession)),
        (Begin, Some(State)),
        (Begin, Some(Url)),
        (Begin, Some(Username)),
        (Begin, Some(Zip)),
        (Inside, Some(Age)),
        (Inside, Some(City)),
        (Inside, Some(Country)),
        (Inside, Some(Date)),
        (Inside, Some(Doctor)),
        (Inside, Some(Fax)),
        (Inside, Some(Healthplan)),
        (Inside, Some(Hospital)),
        (Inside, Some(Idnum)),
        (Inside, Some(LocationOther)),
        (Inside, Some(Medicalrecord)),
        (Inside, Some(Organization)),
        (Inside, Some(Patient)),
        (Inside, Some(Phone)),
        (Inside, Some(Profession)),
        (Inside, Some(State)),
        (Inside, Some(Street)),
        (Inside, Some(Url)),
        (Outside, None),
    ]
};

/// A BIO tag, stored as its id in the fixed 41-entry table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BioLabel(u8);

impl BioLabel {
    pub const COUNT: usize = 41;
    pub const OUTSIDE: BioLabel = BioLabel(40);

    pub fn from_id(id: usize) -> Option<BioLabel> {
        (id < Self::COUNT).then_some(BioLabel(id as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn kind(self) -> TagKind {
        TAG_TABLE[self.id()].0
    }

    pub fn class(self) -> Option<PhiClass> {
        TAG_TABLE[self.id()].1
    }

    pub fn all() -> impl Iterator<Item = BioLabel> {
        (0..Self::COUNT as u8).map(BioLabel)
    }

    fn find(kind: TagKind, class: PhiClass) -> Option<BioLabel> {
        TAG_TABLE
            .iter()
            .position(|&(k, c)| k == kind && c == Some(class))
            .map(|i| BioLabel(i as u8))
    }

    pub fn collapse(self) -> ClassLabel {
        match self.class() {
            Some(c) => ClassLabel::Phi(c),
            None => ClassLabel::NonPhi,
        }
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind(), self.class()) {
            (TagKind::Begin, Some(c)) => write!(f, "B-{c}"),
            (TagKind::Inside, Some(c)) => write!(f, "I-{c}"),
            _ => f.write_str("O"),
        }
    }
}

impl FromStr for BioLabel {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || UnknownTag(s.to_string());
        if s == "O" {
            return Ok(BioLabel::OUTSIDE);
        }
        let (kind, rest) = if let Some(rest) = s.strip_prefix("B-") {
            (TagKind::Begin, rest)
        } else if let Some(rest) = s.strip_prefix("I-") {
            (TagKind::Inside, rest)
        } else {
            return Err(unknown());
        };
        let class: PhiClass = rest.parse().map_err(|_| unknown())?;
        BioLabel::find(kind, class).ok_or_else(unknown)
    }
}

impl From<BioLabel> for String {
    fn from(l: BioLabel) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for BioLabel {
    type Error = UnknownTag;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Evaluation class: a PHI class or Non-PHI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    NonPhi,
    Phi(PhiClass),
}

impl ClassLabel {
    /// Non-PHI plus every PHI class.
    pub const COUNT: usize = PhiClass::ALL.len() + 1;

    /// 0 is Non-PHI, then PHI classes in [`PhiClass::ALL`] order.
    pub fn id(self) -> usize {
        match self {
            ClassLabel::NonPhi => 0,
            ClassLabel::Phi(c) => c.index() + 1,
        }
    }

    pub fn from_id(id: usize) -> Option<ClassLabel> {
        match id {
            0 => Some(ClassLabel::NonPhi),
            i => PhiClass::ALL.get(i - 1).copied().map(ClassLabel::Phi),
        }
    }

    pub fn all() -> impl Iterator<Item = ClassLabel> {
        (0..Self::COUNT).filter_map(ClassLabel::from_id)
    }

    pub fn is_phi(self) -> bool {
        matches!(self, ClassLabel::Phi(_))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::NonPhi => "Non-PHI",
            ClassLabel::Phi(c) => c.name(),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "Non-PHI" {
            Ok(ClassLabel::NonPhi)
        } else {
            s.parse().map(ClassLabel::Phi)
        }
    }
}
