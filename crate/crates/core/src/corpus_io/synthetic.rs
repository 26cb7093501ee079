//! Template-based synthetic clinical notes with exact gold spans.
//!
//! Each note mixes PHI-bearing sentences (one placeholder per sentence) with
//! PHI-free clinical filler. Surfaces of classes that have no `I-` tag are
//! always a single token so that every generated span is representable.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedDocument, CorpusError, PhiSpan, Result};
use crate::tags::PhiClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub seed: u64,
    pub class_mix: Vec<PhiClass>,
    /// Inclusive range of PHI-bearing sentences per document.
    pub phi_sentences: (usize, usize),
    /// Inclusive range of PHI-free sentences per document.
    pub filler_sentences: (usize, usize),
}

impl SyntheticConfig {
    /// Every class that the tag inventory can label.
    pub fn full_mix(n_docs: usize, seed: u64) -> Self {
        SyntheticConfig {
            n_docs,
            seed,
            class_mix: PhiClass::taggable(),
            phi_sentences: (8, 14),
            filler_sentences: (25, 40),
        }
    }

    /// One PHI sentence per document and no filler.
    pub fn sentences(n_docs: usize, seed: u64, class_mix: Vec<PhiClass>) -> Self {
        SyntheticConfig {
            n_docs,
            seed,
            class_mix,
            phi_sentences: (1, 1),
            filler_sentences: (0, 0),
        }
    }
}

const FIRST_NAMES: &[&str] = &[
    "John", "Mary", "Robert", "Linda", "Michael", "Susan", "William", "Karen", "David", "Nancy",
    "James", "Lisa", "Thomas", "Betty", "Charles", "Helen", "Daniel", "Sandra", "Paul", "Donna",
    "Mark", "Carol", "George", "Ruth", "Kevin", "Sharon", "Brian", "Laura", "Edward", "Emily",
    "Ronald", "Kimberly", "Anthony", "Deborah", "Jason", "Jessica", "Gary", "Shirley", "Eric", "Angela",
];

const LAST_NAMES: &[&str] = &[
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Miller", "Davis", "Wilson", "Anderson", "Taylor",
    "Thomas", "Moore", "Martin", "Jackson", "Thompson", "White", "Harris", "Clark", "Lewis", "Walker",
    "Hall", "Allen", "Young", "King", "Wright", "Scott", "Green", "Baker", "Adams", "Nelson",
    "Hill", "Campbell", "Mitchell", "Roberts", "Carter", "Phillips", "Evans", "Turner", "Parker", "Collins",
];

const CITIES: &[&str] = &[
    "Boston", "New York City", "San Diego", "Springfield", "Worcester", "Lowell", "Cambridge",
    "Salem", "Portland", "Hartford", "Providence", "Los Angeles", "Chicago", "Albany", "Burlington",
];
const STATES: &[&str] = &[
    "Massachusetts", "MA", "New Hampshire", "Rhode Island", "Connecticut", "Maine", "Vermont",
    "New York", "California", "Texas", "Florida", "Ohio",
];
const COUNTRIES: &[&str] = &[
    "Canada", "Mexico", "India", "Ireland", "Italy", "United Kingdom", "Brazil", "Portugal",
    "Germany", "Haiti", "Japan", "China",
];
const HOSPITALS: &[&str] = &[
    "Brigham General Hospital", "Mercy Medical Center", "Lakeside Clinic", "Riverview Hospital",
    "St. Luke's Medical Center", "Northshore Rehab", "Valley Community Hospital", "Harborview Hospital",
];
const ORGANIZATIONS: &[&str] = &[
    "Partners Healthcare", "Acme Logistics", "Fidelity", "Boston Public Schools", "Raytheon",
    "the Red Cross", "General Electric", "Stop and Shop",
];
const LOCATIONS_OTHER: &[&str] = &["Fenway Park", "Cape Cod", "Logan Airport", "Martha's Vineyard", "Walden Pond"];
const PROFESSIONS: &[&str] = &[
    "Orthopedic Surgeon", "teacher", "electrician", "accountant", "nurse", "truck driver",
    "software engineer", "carpenter", "retired police officer", "cashier", "plumber", "lawyer",
];
const DEVICES: &[&str] = &["Medtronic", "Dexcom", "Omnipod", "Tandem", "Abbott", "Biotronik"];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];
const STREET_KINDS: &[&str] = &["Street", "Avenue", "Road", "Lane"];
const DOMAINS: &[&str] = &["example.org", "mail.com", "clinicnet.net", "healthmail.org"];

// Every template holds exactly one `{}` placeholder.
fn templates(class: PhiClass) -> &'static [&'static str] {
    use PhiClass::*;
    match class {
        Age => &[
            "Patient is a {} year old male with type 2 diabetes .",
            "She is {} years old and lives alone .",
            "At age {} he underwent cardiac catheterization .",
        ],
        Bioid => &["Tissue sample {} was sent to pathology .", "Specimen biobank label {} recorded ."],
        City => &[
            "He lives in {} with his wife .",
            "She was transferred from an outside hospital in {} .",
            "Family recently moved to {} from out of state .",
        ],
        Country => &[
            "Patient emigrated from {} ten years ago .",
            "He recently returned from a trip to {} .",
        ],
        Date => &[
            "Seen in clinic on {} for follow up .",
            "Admission date : {} .",
            "Last hemoglobin A1c was checked on {} .",
            "Return visit scheduled for {} .",
        ],
        Device => &["Insulin pump by {} was interrogated today .", "Continuous glucose monitor from {} in place ."],
        Doctor => &[
            "Seen and examined with Dr. {} today .",
            "Case discussed with attending Dr. {} .",
            "Referred by his cardiologist , Dr. {} .",
        ],
        Email => &["Patient may be reached by email at {} .", "Results forwarded to {} ."],
        Fax => &["Records were faxed to fax number {} .", "Please fax the consult note to {} ."],
        Healthplan => &["Insurance plan member number {} verified .", "Health plan id {} on file ."],
        Hospital => &[
            "He was admitted to {} last spring .",
            "Prior workup was done at {} .",
            "She will follow up at {} endocrine clinic .",
        ],
        Idnum => &["Account number {} noted on the requisition .", "Order id {} was placed ."],
        LocationOther => &["She collapsed while walking near {} .", "He works weekends at {} ."],
        Medicalrecord => &["Medical record number : {} .", "MRN {} reviewed in chart ."],
        Organization => &[
            "He is employed by {} full time .",
            "Disability paperwork was sent to {} .",
        ],
        Patient => &[
            "Patient {} presents with chest pain .",
            "Mr. {} is here for routine follow up .",
            "Ms. {} reports improved glucose control .",
        ],
        Phone => &["Call the patient at phone {} with results .", "Home phone number is {} ."],
        Profession => &[
            "He works as a {} .",
            "She is a {} and is on her feet all day .",
        ],
        State => &["Patient was born in {} .", "Her daughter lives in {} ."],
        Street => &["Home address is {} .", "He lives on {} near the park ."],
        Url => &["Education material available at {} .", "Patient portal : {} ."],
        Username => &["Note electronically signed by {} .", "Entered by user {} ."],
        Zip => &["Mailing zip code {} confirmed .", "Lives in zip {} ."],
    }
}

const FILLER: &[&str] = &[
    "No acute distress on examination .",
    "Lungs are clear to auscultation bilaterally .",
    "Heart has regular rate and rhythm without murmurs .",
    "Abdomen is soft , non tender and non distended .",
    "Continue metformin 500 mg twice daily .",
    "Blood pressure is well controlled on lisinopril .",
    "He denies fever , chills or night sweats .",
    "She reports mild fatigue but no chest pain .",
    "Extremities show no edema .",
    "Foot exam reveals intact sensation to monofilament .",
    "Plan to recheck labs in three months .",
    "Diet and exercise counseling provided .",
    "Insulin dose was increased by two units .",
    "Creatinine is stable compared with prior values .",
    "Patient was advised to monitor blood sugars at home .",
    "Ophthalmology referral for retinal screening .",
    "Lipid panel shows elevated LDL cholesterol .",
    "Statin therapy was started today .",
    "He quit smoking several years ago .",
    "No known drug allergies .",
    "Review of systems is otherwise negative .",
    "Neurologic exam is non focal .",
    "Electrocardiogram shows normal sinus rhythm .",
    "Will continue aspirin daily .",
    "Glucose readings are mostly in target range .",
    "Wound on the left foot is healing well .",
    "Urine microalbumin is mildly elevated .",
    "She tolerates the medications without side effects .",
    "Weight is down four pounds since last visit .",
    "Assessment : diabetes mellitus with neuropathy .",
];

// Relative sentence weights, roughly following the skew of real i2b2 data.
fn weight(class: PhiClass) -> f64 {
    use PhiClass::*;
    match class {
        Date => 40.0,
        Doctor => 25.0,
        Hospital => 12.0,
        Patient => 14.0,
        Age => 12.0,
        Street => 5.0,
        Medicalrecord => 7.0,
        City => 6.0,
        Profession => 5.0,
        Phone => 5.0,
        State => 5.0,
        Username => 4.0,
        Idnum => 4.0,
        Organization => 3.0,
        Zip => 3.0,
        Country => 2.0,
        LocationOther => 1.0,
        Fax => 1.0,
        Url => 1.0,
        Email => 1.0,
        Healthplan => 1.0,
        Bioid => 1.0,
        Device => 1.0,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or_default()
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
}

fn phone_number(rng: &mut ChaCha8Rng) -> String {
    let area = rng.gen_range(201..990);
    let mid = rng.gen_range(200..999);
    let last = digits(rng, 4);
    if rng.gen_bool(0.5) {
        format!("({area}) {mid}-{last}")
    } else {
        format!("{area}-{mid}-{last}")
    }
}

/// A surface string for one class.
fn surface(class: PhiClass, rng: &mut ChaCha8Rng) -> String {
    use PhiClass::*;
    match class {
        Age => rng.gen_range(18..100).to_string(),
        Bioid => format!("BX{}{}", digits(rng, 4), char::from(b'A' + rng.gen_range(0..26u8))),
        City => pick(rng, CITIES).into(),
        Country => pick(rng, COUNTRIES).into(),
        Date => {
            let year = rng.gen_range(2060..2100);
            let month = rng.gen_range(1..=12usize);
            let day = rng.gen_range(1..=28);
            match rng.gen_range(0..4) {
                0 => format!("{year}-{month:02}-{day:02}"),
                1 => format!("{month:02}/{day:02}/{year}"),
                2 => format!("{} {day}, {year}", MONTHS[month - 1]),
                _ => format!("{month}/{year}"),
            }
        }
        Device => pick(rng, DEVICES).into(),
        Doctor => {
            let last = pick(rng, LAST_NAMES);
            if rng.gen_bool(0.5) {
                format!("{} {last}", pick(rng, FIRST_NAMES))
            } else {
                last.into()
            }
        }
        Email => format!(
            "{}.{}@{}",
            pick(rng, FIRST_NAMES).to_lowercase(),
            pick(rng, LAST_NAMES).to_lowercase(),
            pick(rng, DOMAINS)
        ),
        Fax | Phone => phone_number(rng),
        Healthplan => format!("HP{}", digits(rng, 7)),
        Hospital => pick(rng, HOSPITALS).into(),
        Idnum => format!("{}-{}", digits(rng, 5), digits(rng, 3)),
        LocationOther => pick(rng, LOCATIONS_OTHER).into(),
        Medicalrecord => digits(rng, 7),
        Organization => pick(rng, ORGANIZATIONS).into(),
        Patient => format!("{} {}", pick(rng, FIRST_NAMES), pick(rng, LAST_NAMES)),
        Profession => pick(rng, PROFESSIONS).into(),
        State => pick(rng, STATES).into(),
        Street => format!(
            "{} {} {}",
            rng.gen_range(1..400),
            pick(rng, LAST_NAMES),
            pick(rng, STREET_KINDS)
        ),
        Url => format!("www.{}", pick(rng, DOMAINS)),
        Username => format!(
            "{}{}{}",
            pick(rng, FIRST_NAMES).chars().next().unwrap_or('x').to_ascii_lowercase(),
            pick(rng, LAST_NAMES).to_lowercase(),
            rng.gen_range(10..100)
        ),
        Zip => digits(rng, 5),
    }
}

struct DocBuilder {
    text: String,
    chars: usize,
    spans: Vec<PhiSpan>,
}

impl DocBuilder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn push_sentence(&mut self, sentence: &str) {
        if !self.text.is_empty() {
            self.push(" ");
        }
        self.push(sentence);
    }

    fn push_phi(&mut self, template: &str, class: PhiClass, value: &str) {
        if !self.text.is_empty() {
            self.push(" ");
        }
        let (before, after) = template.split_once("{}").unwrap_or((template, ""));
        self.push(before);
        let start = self.chars;
        self.push(value);
        self.spans.push(PhiSpan {
            id: format!("P{}", self.spans.len()),
            start,
            end: self.chars,
            phi_type: class,
            surface: value.to_string(),
        });
        self.push(after);
    }
}

/// Generates `n_docs` deterministic notes. Every class in the mix appears at
/// least once across the corpus.
pub fn generate_synthetic_corpus(config: &SyntheticConfig) -> Result<Vec<AnnotatedDocument>> {
    if config.class_mix.is_empty() {
        return Err(CorpusError::Config("class mix is empty".into()));
    }
    if config.n_docs == 0 {
        return Err(CorpusError::Config("n_docs must be at least 1".into()));
    }
    let (phi_lo, phi_hi) = config.phi_sentences;
    let (fill_lo, fill_hi) = config.filler_sentences;
    if phi_lo > phi_hi || fill_lo > fill_hi {
        return Err(CorpusError::Config("sentence ranges must be ordered (lo, hi)".into()));
    }
    let mut mix = config.class_mix.clone();
    mix.sort();
    mix.dedup();
    let weights: Vec<f64> = mix.iter().map(|&c| weight(c)).collect();
    let total_weight: f64 = weights.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_docs.to_string().len().max(4);
    let mut docs = Vec::with_capacity(config.n_docs);
    for d in 0..config.n_docs {
        // Round-robin the coverage requirement over documents.
        let mut classes: Vec<PhiClass> = mix
            .iter()
            .enumerate()
            .filter(|(i, _)| i % config.n_docs == d)
            .map(|(_, &c)| c)
            .collect();
        let n_phi = rng.gen_range(phi_lo..=phi_hi).max(classes.len());
        while classes.len() < n_phi {
            let mut r = rng.gen::<f64>() * total_weight;
            let mut chosen = mix[mix.len() - 1];
            for (c, w) in mix.iter().zip(&weights) {
                if r < *w {
                    chosen = *c;
                    break;
                }
                r -= w;
            }
            classes.push(chosen);
        }
        let n_fill = rng.gen_range(fill_lo..=fill_hi);

        // Interleave: PHI sentences land at random slots among the filler.
        let mut slots: Vec<Option<PhiClass>> = classes.into_iter().map(Some).collect();
        slots.extend(std::iter::repeat(None).take(n_fill));
        slots.shuffle(&mut rng);

        let mut doc = DocBuilder {
            text: String::new(),
            chars: 0,
            spans: Vec::new(),
        };
        for slot in slots {
            match slot {
                Some(class) => {
                    let template = pick(&mut rng, templates(class));
                    let value = surface(class, &mut rng);
                    doc.push_phi(template, class, &value);
                }
                None => doc.push_sentence(pick(&mut rng, FILLER)),
            }
        }
        doc.push("\n");
        docs.push(AnnotatedDocument {
            doc_id: format!("synth-{d:0width$}"),
            text: doc.text,
            spans: doc.spans,
        });
    }
    Ok(docs)
}
