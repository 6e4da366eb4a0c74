//! Weak supervision of mention annotations from resolved anchors, distant
//! supervision of relation triplets between co-mentioned entities, and
//! corpus density statistics.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::wikidata::{id_number, resolve_entity_profile, Ontology};
use crate::wikitext::Paragraph;

/// The knowledge-base profile attached to a mention: canonical title, type
/// labels (aligned index-wise with their qids), description and aliases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityProfile {
    pub qid: String,
    pub title: String,
    pub types: Vec<String>,
    pub type_qids: Vec<String>,
    pub description: Option<String>,
    pub aliases: Vec<String>,
}

/// One annotated text span. `span` offsets are unicode scalars, half-open;
/// `surface` equals the text slice at `span`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionAnnotation {
    pub span: (usize, usize),
    pub surface: String,
    pub profile: EntityProfile,
}

/// A relation between two mentions, by index into the mention list.
/// `relations` is non-empty and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTripletAnnotation {
    pub head_idx: usize,
    pub tail_idx: usize,
    pub relations: Vec<String>,
}

/// A document with its gold structure: mentions sorted by span, triplet
/// indices in range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub mentions: Vec<MentionAnnotation>,
    pub triplets: Vec<RelationTripletAnnotation>,
}

/// Drop counters from annotation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignStats {
    /// Anchors dropped because their entity had no resolvable title.
    pub untitled_dropped: usize,
}

/// Turn a paragraph with qid-resolved anchors into an annotated document:
/// one mention per resolved anchor, profile looked up in the ontology.
/// Anchors without a qid, or whose entity lacks a title, are dropped and
/// counted.
pub fn weak_supervise(paragraph: &Paragraph, ontology: &Ontology) -> (AnnotatedDocument, AlignStats) {
    let mut stats = AlignStats::default();
    let mut mentions = Vec::with_capacity(paragraph.anchors.len());
    for anchor in &paragraph.anchors {
        let Some(qid) = anchor.qid.as_deref() else {
            stats.untitled_dropped += 1;
            continue;
        };
        match resolve_entity_profile(qid, ontology) {
            Ok(profile) => mentions.push(MentionAnnotation {
                span: (anchor.char_start, anchor.char_end),
                surface: anchor.surface.clone(),
                profile,
            }),
            Err(_) => stats.untitled_dropped += 1,
        }
    }
    mentions.sort_by_key(|m| m.span);
    (
        AnnotatedDocument {
            doc_id: paragraph.doc_id.clone(),
            text: paragraph.text.clone(),
            mentions,
            triplets: Vec::new(),
        },
        stats,
    )
}

/// Attach KB relations: for every ordered pair of distinct mentioned
/// entities with a claim `(head, pid, tail)` in the ontology, emit one
/// triplet whose relations list holds the property labels, ordered by
/// numeric pid. Endpoints use the first mention of each entity. Claims
/// whose property has no label record are dropped, as are self-relations.
pub fn distant_supervise_relations(mut document: AnnotatedDocument, ontology: &Ontology) -> AnnotatedDocument {
    // First mention index per qid, in document order.
    let mut first_mention: Vec<(String, usize)> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (idx, mention) in document.mentions.iter().enumerate() {
        if seen.insert(mention.profile.qid.as_str()) {
            first_mention.push((mention.profile.qid.clone(), idx));
        }
    }
    let index_of: HashMap<&str, usize> =
        first_mention.iter().map(|(qid, idx)| (qid.as_str(), *idx)).collect();

    let mut triplets = Vec::new();
    for (head_qid, head_idx) in &first_mention {
        let Some(record) = ontology.entities.get(head_qid) else { continue };
        // Claims grouped per tail, keeping pid order numeric.
        let mut per_tail: HashMap<usize, Vec<(u64, &str)>> = HashMap::new();
        for (pid, object) in &record.claims {
            if object == head_qid {
                continue;
            }
            let Some(&tail_idx) = index_of.get(object.as_str()) else { continue };
            let Some(property) = ontology.properties.get(pid) else { continue };
            per_tail
                .entry(tail_idx)
                .or_default()
                .push((id_number(pid), property.label.as_str()));
        }
        let mut tails: Vec<usize> = per_tail.keys().copied().collect();
        tails.sort_unstable();
        for tail_idx in tails {
            let mut labeled = per_tail.remove(&tail_idx).unwrap();
            labeled.sort();
            let mut relations: Vec<String> = Vec::with_capacity(labeled.len());
            for (_, label) in labeled {
                if !relations.iter().any(|r| r == label) {
                    relations.push(label.to_string());
                }
            }
            if !relations.is_empty() {
                triplets.push(RelationTripletAnnotation { head_idx: *head_idx, tail_idx, relations });
            }
        }
    }
    triplets.sort_by_key(|t| (t.head_idx, t.tail_idx));
    document.triplets = triplets;
    document
}

/// Corpus-level counts and entity-information density.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub articles: usize,
    pub mentions: usize,
    pub triplets: usize,
    pub unique_entities: usize,
    pub unique_aliases: usize,
    pub unique_relations: usize,
    pub unique_types: usize,
    /// Percentage of mentions whose profile has a description / any alias /
    /// any type, in [0, 100]. All 0 for an empty corpus.
    pub pct_description: f64,
    pub pct_aliases: f64,
    pub pct_types: f64,
}

impl DatasetStats {
    pub fn tsv_header() -> &'static str {
        "split\tarticles\tmentions\ttriplets\tentities\taliases\trelations\ttypes\tpct_desc\tpct_aliases\tpct_types"
    }

    pub fn tsv_row(&self, split: &str) -> String {
        format!(
            "{split}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.1}",
            self.articles,
            self.mentions,
            self.triplets,
            self.unique_entities,
            self.unique_aliases,
            self.unique_relations,
            self.unique_types,
            self.pct_description,
            self.pct_aliases,
            self.pct_types,
        )
    }
}

/// Count articles, mentions, triplets, unique entities/aliases/relations/
/// types, and the share of mentions carrying descriptions/aliases/types.
pub fn density_stats<'a>(corpus: impl IntoIterator<Item = &'a AnnotatedDocument>) -> DatasetStats {
    let mut stats = DatasetStats::default();
    let mut entities: BTreeSet<&str> = BTreeSet::new();
    let mut aliases: BTreeSet<&str> = BTreeSet::new();
    let mut relations: BTreeSet<&str> = BTreeSet::new();
    let mut types: BTreeSet<&str> = BTreeSet::new();
    let mut with_desc = 0usize;
    let mut with_aliases = 0usize;
    let mut with_types = 0usize;

    for doc in corpus {
        stats.articles += 1;
        stats.mentions += doc.mentions.len();
        stats.triplets += doc.triplets.len();
        for mention in &doc.mentions {
            entities.insert(&mention.profile.qid);
            for alias in &mention.profile.aliases {
                aliases.insert(alias);
            }
            for ty in &mention.profile.types {
                types.insert(ty);
            }
            if mention.profile.description.is_some() {
                with_desc += 1;
            }
            if !mention.profile.aliases.is_empty() {
                with_aliases += 1;
            }
            if !mention.profile.types.is_empty() {
                with_types += 1;
            }
        }
        for triplet in &doc.triplets {
            for rel in &triplet.relations {
                relations.insert(rel);
            }
        }
    }

    stats.unique_entities = entities.len();
    stats.unique_aliases = aliases.len();
    stats.unique_relations = relations.len();
    stats.unique_types = types.len();
    if stats.mentions > 0 {
        let denom = stats.mentions as f64;
        stats.pct_description = 100.0 * with_desc as f64 / denom;
        stats.pct_aliases = 100.0 * with_aliases as f64 / denom;
        stats.pct_types = 100.0 * with_types as f64 / denom;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wikidata::{parse_wikidata_dump, IngestConfig};
    use crate::wikitext::extract_leading_paragraph;
    use crate::wikitext::resolve_anchor_targets;
    use std::io::Cursor;

    fn ontology() -> Ontology {
        let dump = [
            r#"{"type":"item","id":"Q64","labels":{"en":{"value":"Berlin"}},"descriptions":{"en":{"value":"capital of Germany"}},"aliases":{"en":[{"value":"Berlin, Germany"}]},"claims":{"P31":[{"mainsnak":{"datavalue":{"value":{"id":"Q515"},"type":"wikibase-entityid"}}}],"P17":[{"mainsnak":{"datavalue":{"value":{"id":"Q183"},"type":"wikibase-entityid"}}}],"P131":[{"mainsnak":{"datavalue":{"value":{"id":"Q183"},"type":"wikibase-entityid"}}}]},"sitelinks":{"enwiki":{"title":"Berlin"}}}"#,
            r#"{"type":"item","id":"Q183","labels":{"en":{"value":"Germany"}},"descriptions":{"en":{"value":"country in Europe"}},"claims":{"P36":[{"mainsnak":{"datavalue":{"value":{"id":"Q64"},"type":"wikibase-entityid"}}}]},"sitelinks":{"enwiki":{"title":"Germany"}}}"#,
            r#"{"type":"item","id":"Q515","labels":{"en":{"value":"city"}}}"#,
            r#"{"type":"property","id":"P17","labels":{"en":{"value":"country"}},"datatype":"wikibase-item"}"#,
            r#"{"type":"property","id":"P131","labels":{"en":{"value":"located in the administrative territorial entity"}},"datatype":"wikibase-item"}"#,
            r#"{"type":"property","id":"P36","labels":{"en":{"value":"capital"}},"datatype":"wikibase-item"}"#,
        ]
        .join("\n");
        parse_wikidata_dump(Cursor::new(dump), None, &IngestConfig::default())
            .unwrap()
            .0
    }

    fn annotated(text: &str, ontology: &Ontology) -> AnnotatedDocument {
        let paragraph = extract_leading_paragraph("1", "Test", text);
        let (resolved, _) = resolve_anchor_targets(paragraph, &ontology.title_index);
        weak_supervise(&resolved, ontology).0
    }

    #[test]
    fn two_titled_anchors_become_two_mentions() {
        let ontology = ontology();
        let doc = annotated("[[Berlin]] is the capital of [[Germany]].", &ontology);
        assert_eq!(doc.mentions.len(), 2);
        assert_eq!(doc.mentions[0].profile.qid, "Q64");
        assert_eq!(doc.mentions[0].profile.types, vec!["city"]);
        assert_eq!(doc.mentions[1].profile.qid, "Q183");
        assert_eq!(doc.text.chars().skip(doc.mentions[1].span.0).take(7).collect::<String>(), "Germany");
    }

    #[test]
    fn zero_anchor_paragraph_gives_empty_document() {
        let ontology = ontology();
        let doc = annotated("No links at all.", &ontology);
        assert!(doc.mentions.is_empty());
        assert!(doc.triplets.is_empty());
    }

    #[test]
    fn duplicate_anchors_share_profile_with_distinct_spans() {
        let ontology = ontology();
        let doc = annotated("[[Berlin]] loves [[Berlin]].", &ontology);
        assert_eq!(doc.mentions.len(), 2);
        assert_eq!(doc.mentions[0].profile, doc.mentions[1].profile);
        assert_ne!(doc.mentions[0].span, doc.mentions[1].span);
    }

    #[test]
    fn claim_between_mentions_yields_labeled_triplet() {
        let ontology = ontology();
        let doc = annotated("[[Berlin]] lies in [[Germany]].", &ontology);
        let doc = distant_supervise_relations(doc, &ontology);
        // P17 and P131 between the same pair merge into one triplet,
        // labels ordered by numeric pid; the P36 claim points the other way.
        assert_eq!(doc.triplets.len(), 2);
        assert_eq!(doc.triplets[0].head_idx, 0);
        assert_eq!(doc.triplets[0].tail_idx, 1);
        assert_eq!(
            doc.triplets[0].relations,
            vec!["country", "located in the administrative territorial entity"]
        );
        assert_eq!(doc.triplets[1].relations, vec!["capital"]);
    }

    #[test]
    fn no_claims_between_mentions_is_identity() {
        let ontology = ontology();
        let doc = annotated("[[Berlin]] alone.", &ontology);
        let out = distant_supervise_relations(doc.clone(), &ontology);
        assert_eq!(out, doc);
    }

    #[test]
    fn repeated_entity_uses_first_mention_as_endpoint() {
        let ontology = ontology();
        let doc = annotated("[[Germany]] and [[Berlin]] and [[Berlin]] again.", &ontology);
        let doc = distant_supervise_relations(doc, &ontology);
        let head_qids: Vec<&str> = doc
            .triplets
            .iter()
            .map(|t| doc.mentions[t.head_idx].profile.qid.as_str())
            .collect();
        assert!(head_qids.contains(&"Q64"));
        for t in &doc.triplets {
            if doc.mentions[t.head_idx].profile.qid == "Q64" {
                assert_eq!(t.head_idx, 1, "endpoint must be the first Berlin mention");
            }
        }
    }

    #[test]
    fn density_stats_counts_fixture_exactly() {
        let ontology = ontology();
        let a = distant_supervise_relations(annotated("[[Berlin]] lies in [[Germany]].", &ontology), &ontology);
        let b = annotated("[[Berlin]] once more.", &ontology);
        let stats = density_stats([&a, &b]);
        assert_eq!(stats.articles, 2);
        assert_eq!(stats.mentions, 3);
        assert_eq!(stats.triplets, 2);
        assert_eq!(stats.unique_entities, 2);
        assert_eq!(stats.unique_aliases, 1);
        assert_eq!(stats.unique_relations, 3);
        assert_eq!(stats.unique_types, 1);
        assert!((stats.pct_description - 100.0).abs() < 1e-9);
        assert!((stats.pct_aliases - 100.0 * 2.0 / 3.0).abs() < 1e-9);
        assert!((stats.pct_types - 100.0 * 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_corpus_reports_zeros() {
        let stats = density_stats(std::iter::empty::<&AnnotatedDocument>());
        assert_eq!(stats, DatasetStats::default());
    }
}
