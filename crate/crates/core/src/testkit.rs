//! Seeded generators for randomized invariant checks. Used by the
//! `selfcheck` command and by the test suites; generators only build
//! inputs, never expected values.

use rand::Rng;

use crate::align::{AnnotatedDocument, EntityProfile, MentionAnnotation, RelationTripletAnnotation};
use crate::instructions::{InstructionCategory, InstructionSpec};
use crate::wikidata::{parse_wikidata_dump, IngestConfig, Ontology};

const WORDS: &[&str] = &[
    "berlin", "tour", "atp", "tennis", "city", "2023", "open", "grand", "champion", "straße",
    "münchen", "café", "α", "club", "venue",
];

const TYPE_VOCAB: &[(&str, &str)] = &[
    ("Q515", "city"),
    ("Q5", "human"),
    ("Q13219666", "tennis tournament"),
    ("Q6256", "country"),
    ("Q41050", "sports season"),
];

const RELATION_VOCAB: &[&str] = &["country", "capital", "home venue of", "part of", "instance of"];

const DESCRIPTIONS: &[&str] = &[
    "capital of Germany",
    "men's tennis circuit",
    "sports club",
    "country in Europe",
];

/// Small fixed ontology backing the generators: the type vocabulary with a
/// hierarchy level above it, plus mentionable entities with distinct
/// sitelink counts.
pub fn test_ontology() -> Ontology {
    let mut lines = vec![
        r#"{"type":"item","id":"Q486972","labels":{"en":{"value":"human settlement"}}}"#.to_string(),
        r#"{"type":"item","id":"Q215627","labels":{"en":{"value":"person"}}}"#.to_string(),
        r#"{"type":"item","id":"Q1656682","labels":{"en":{"value":"event"}}}"#.to_string(),
        r#"{"type":"item","id":"Q515","labels":{"en":{"value":"city"}},"claims":{"P279":[{"mainsnak":{"datavalue":{"value":{"id":"Q486972"},"type":"wikibase-entityid"}}}]}}"#.to_string(),
        r#"{"type":"item","id":"Q5","labels":{"en":{"value":"human"}},"claims":{"P279":[{"mainsnak":{"datavalue":{"value":{"id":"Q215627"},"type":"wikibase-entityid"}}}]}}"#.to_string(),
        r#"{"type":"item","id":"Q13219666","labels":{"en":{"value":"tennis tournament"}},"claims":{"P279":[{"mainsnak":{"datavalue":{"value":{"id":"Q1656682"},"type":"wikibase-entityid"}}}]}}"#.to_string(),
        r#"{"type":"item","id":"Q6256","labels":{"en":{"value":"country"}}}"#.to_string(),
        r#"{"type":"item","id":"Q41050","labels":{"en":{"value":"sports season"}}}"#.to_string(),
    ];
    for i in 1..=40u32 {
        lines.push(format!(
            r#"{{"type":"item","id":"Q{i}","labels":{{"en":{{"value":"entity {i}"}}}},"sitelinks":{{{}}}}}"#,
            (0..(i % 7))
                .map(|j| format!(r#""w{j}wiki":{{"title":"entity {i}"}}"#))
                .collect::<Vec<_>>()
                .join(",")
        ));
    }
    let dump = lines.join("\n");
    parse_wikidata_dump(std::io::Cursor::new(dump), None, &IngestConfig::default())
        .expect("generator ontology parses")
        .0
}

pub fn random_tokens(rng: &mut impl Rng, max_len: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
}

fn random_surface(rng: &mut impl Rng) -> String {
    let words = rng.random_range(1..=3);
    (0..words)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A structurally valid annotated document: spans index the text in unicode
/// scalars, mentions are sorted and non-overlapping, triplets reference
/// mention indices.
pub fn random_document(rng: &mut impl Rng) -> AnnotatedDocument {
    let n_mentions = rng.random_range(0..=6);
    let mut text = String::new();
    let mut char_len = 0usize;
    let mut mentions = Vec::with_capacity(n_mentions);
    for i in 0..n_mentions {
        let filler = format!("w{} ", rng.random_range(0..100));
        text.push_str(&filler);
        char_len += filler.chars().count();
        let surface = random_surface(rng);
        let surface_len = surface.chars().count();
        text.push_str(&surface);

        let n_types = rng.random_range(0..=2);
        let types: Vec<(String, String)> = (0..n_types)
            .map(|_| {
                let (qid, label) = TYPE_VOCAB[rng.random_range(0..TYPE_VOCAB.len())];
                (qid.to_string(), label.to_string())
            })
            .collect();
        let mut type_qids: Vec<String> = Vec::new();
        let mut type_labels: Vec<String> = Vec::new();
        for (qid, label) in types {
            if !type_qids.contains(&qid) {
                type_qids.push(qid);
                type_labels.push(label);
            }
        }
        let description = if rng.random_bool(0.6) {
            Some(DESCRIPTIONS[rng.random_range(0..DESCRIPTIONS.len())].to_string())
        } else {
            None
        };
        let n_aliases = rng.random_range(0..=2);
        let aliases = (0..n_aliases).map(|_| random_surface(rng)).collect();

        mentions.push(MentionAnnotation {
            span: (char_len, char_len + surface_len),
            surface,
            profile: EntityProfile {
                qid: format!("Q{}", rng.random_range(1..=40)),
                title: format!("entity {i}"),
                types: type_labels,
                type_qids,
                description,
                aliases,
            },
        });
        char_len += surface_len;
        text.push(' ');
        char_len += 1;
    }

    let mut triplets = Vec::new();
    if n_mentions >= 2 {
        let n_triplets = rng.random_range(0..=n_mentions.min(4));
        for _ in 0..n_triplets {
            let head_idx = rng.random_range(0..n_mentions);
            let mut tail_idx = rng.random_range(0..n_mentions);
            if tail_idx == head_idx {
                tail_idx = (tail_idx + 1) % n_mentions;
            }
            let n_relations = rng.random_range(1..=2);
            let mut relations: Vec<String> = Vec::new();
            for _ in 0..n_relations {
                let r = RELATION_VOCAB[rng.random_range(0..RELATION_VOCAB.len())].to_string();
                if !relations.contains(&r) {
                    relations.push(r);
                }
            }
            triplets.push(RelationTripletAnnotation { head_idx, tail_idx, relations });
        }
    }

    AnnotatedDocument {
        doc_id: format!("doc{}", rng.random_range(0..10_000)),
        text,
        mentions,
        triplets,
    }
}

/// A random instruction spec; parameters may or may not match the document
/// so filters see both hits and misses. `k` can exceed the mention count.
pub fn random_spec(rng: &mut impl Rng, document: &AnnotatedDocument) -> InstructionSpec {
    let category = InstructionCategory::ALL[rng.random_range(0..InstructionCategory::ALL.len())];
    let mut spec = InstructionSpec { category, types: None, descriptions: None, k: None };
    if category.needs_k() {
        spec.k = Some(rng.random_range(1..=document.mentions.len().max(1) + 2));
    }
    if category.needs_types() {
        let n = rng.random_range(1..=2);
        let mut types = Vec::new();
        for _ in 0..n {
            let label = if rng.random_bool(0.5) {
                TYPE_VOCAB[rng.random_range(0..TYPE_VOCAB.len())].1.to_string()
            } else {
                // Hierarchy-level labels so AbstractType filters can hit.
                ["human settlement", "person", "event", "no such type"]
                    [rng.random_range(0..4)]
                .to_string()
            };
            if !types.contains(&label) {
                types.push(label);
            }
        }
        spec.types = Some(types);
    }
    if category.needs_descriptions() {
        let n = rng.random_range(1..=2);
        let mut descriptions = Vec::new();
        for _ in 0..n {
            let d = DESCRIPTIONS[rng.random_range(0..DESCRIPTIONS.len())].to_string();
            if !descriptions.contains(&d) {
                descriptions.push(d);
            }
        }
        spec.descriptions = Some(descriptions);
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn generated_documents_are_structurally_valid() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..200 {
            let doc = random_document(&mut rng);
            let chars: Vec<char> = doc.text.chars().collect();
            let mut prev_end = 0;
            for m in &doc.mentions {
                assert!(m.span.0 >= prev_end);
                assert!(m.span.1 <= chars.len());
                let slice: String = chars[m.span.0..m.span.1].iter().collect();
                assert_eq!(slice, m.surface);
                prev_end = m.span.1;
                assert_eq!(m.profile.types.len(), m.profile.type_qids.len());
            }
            for t in &doc.triplets {
                assert!(t.head_idx < doc.mentions.len());
                assert!(t.tail_idx < doc.mentions.len());
                assert_ne!(t.head_idx, t.tail_idx);
                assert!(!t.relations.is_empty());
            }
        }
    }

    #[test]
    fn generator_ontology_has_hierarchy() {
        let ontology = test_ontology();
        assert_eq!(
            crate::wikidata::abstract_types_of("Q515", &ontology).unwrap(),
            vec!["Q486972"]
        );
        assert!(ontology.entities.contains_key("Q40"));
    }
}
