mod common;

use deid::corpus_io::{generate_synthetic_corpus, SyntheticConfig};
use deid::deid_output::{apply_policy, invert_manifest, read_manifest, write_manifest, DeidMode, DeidPolicy};
use deid::tags::{ClassLabel, PhiClass};
use deid::tokenizer_align::{align, tokenize};
use proptest::prelude::*;
use rand::Rng;

fn policies() -> Vec<DeidPolicy> {
    vec![DeidPolicy::default(), DeidPolicy::redact("*"), DeidPolicy::redact("█"), DeidPolicy::tag_insert("<<{class}>>")]
}

#[test]
fn examples() {
    let text = "Seen by John Smith";
    let doctor = ClassLabel::Phi(PhiClass::Doctor);
    let labels = [ClassLabel::NonPhi, ClassLabel::NonPhi, doctor, doctor];
    let out = apply_policy(text, &tokenize(text), &labels, &DeidPolicy::default()).unwrap();
    assert_eq!(out.text, "Seen by [DOCTOR]");
    let plain = apply_policy(text, &tokenize(text), &[ClassLabel::NonPhi; 4], &DeidPolicy::default()).unwrap();
    assert_eq!(plain.text, text);
    assert!(apply_policy(text, &tokenize(text), &labels[..3], &DeidPolicy::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_inverts_and_nothing_leaks(seed in any::<u64>(), noise in 0.0f64..0.3) {
        let doc = &generate_synthetic_corpus(&SyntheticConfig::full_mix(1, seed)).unwrap()[0];
        let (seq, _) = align(doc);
        let mut rng = common::rng(seed);
        // Gold classes with some tokens flipped to simulate model errors.
        let labels: Vec<ClassLabel> = seq
            .classes()
            .into_iter()
            .map(|c| {
                if rng.gen_bool(noise) {
                    ClassLabel::from_id(rng.gen_range(0..ClassLabel::COUNT)).unwrap()
                } else {
                    c
                }
            })
            .collect();
        let chars: Vec<char> = doc.text.chars().collect();

        for policy in policies() {
            let out = apply_policy(&doc.text, &seq.tokens, &labels, &policy).unwrap();
            prop_assert_eq!(invert_manifest(&out.text, &out.manifest, &doc.text).unwrap(), doc.text.clone());
            prop_assert_eq!(read_manifest(&write_manifest(&out.manifest)).unwrap(), out.manifest.clone());

            // Length bookkeeping in characters.
            let removed: usize = out.manifest.iter().map(|e| e.end - e.start).sum();
            let added: usize = out.manifest.iter().map(|e| e.replacement.chars().count()).sum();
            prop_assert_eq!(out.text.chars().count(), chars.len() - removed + added);

            // Rebuild the output from the original alone: kept characters plus
            // a replacement that is a function of class and length only, so no
            // replaced character can survive.
            let mut rebuilt = String::new();
            let mut cursor = 0;
            for e in &out.manifest {
                rebuilt.extend(&chars[cursor..e.start]);
                let want = match policy.mode {
                    DeidMode::Redact => policy.glyph.repeat(e.end - e.start),
                    DeidMode::TagInsert => policy.template.replace("{class}", &e.class),
                };
                prop_assert_eq!(&e.replacement, &want);
                rebuilt.push_str(&want);
                cursor = e.end;
            }
            rebuilt.extend(&chars[cursor..]);
            prop_assert_eq!(&out.text, &rebuilt);

            // Every manifest range is a maximal run of one PHI class.
            for e in &out.manifest {
                let inside: Vec<usize> = (0..seq.len())
                    .filter(|&i| seq.tokens[i].start >= e.start && seq.tokens[i].end <= e.end)
                    .collect();
                prop_assert!(inside.iter().all(|&i| labels[i].name() == e.class));
                let (first, last) = (inside[0], *inside.last().unwrap());
                prop_assert!(first == 0 || labels[first - 1].name() != e.class);
                prop_assert!(last + 1 == seq.len() || labels[last + 1].name() != e.class);
            }
        }

        // Tag-insert output fed back with no PHI predicted is unchanged.
        let once = apply_policy(&doc.text, &seq.tokens, &labels, &DeidPolicy::default()).unwrap();
        let tokens = tokenize(&once.text);
        let again = apply_policy(&once.text, &tokens, &vec![ClassLabel::NonPhi; tokens.len()], &DeidPolicy::default()).unwrap();
        prop_assert_eq!(again.text, once.text);
        prop_assert!(again.manifest.is_empty());
    }
}

#[test]
fn tampered_manifest_is_rejected() {
    let text = "Call 555-1234 today";
    let tokens = tokenize(text);
    let labels = [ClassLabel::NonPhi, ClassLabel::Phi(PhiClass::Phone), ClassLabel::NonPhi];
    let out = apply_policy(text, &tokens, &labels, &DeidPolicy::redact("#")).unwrap();
    assert_eq!(out.text, "Call ######## today");
    let mut bad = out.manifest.clone();
    bad[0].replacement = "#".into();
    assert!(invert_manifest(&out.text, &bad, text).is_err());
    assert!(read_manifest("{not json}\n").is_err());
}
