//! Per-sample scorers for the six evaluation subtasks: mention detection,
//! entity linking, entity typing, open relation extraction, description
//! generation and alias generation.
//!
//! All scorers compare a predicted [`TargetObject`] against the gold one.
//! Mentions are matched by surface string (the output schema carries no
//! offsets). Gold-side outcomes are reported per gold item so callers can
//! pool partition-restricted recalls.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::rouge::{rouge_l_f1, tokenize};
use crate::linearize::{TargetEntity, TargetObject};

/// Precision/recall/F1 with the shared empty-side convention: a zero
/// denominator scores 1 when the other side is empty too (exact agreement)
/// and 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn prf(matched: f64, pred_total: f64, gold_total: f64) -> Prf {
    let precision = if pred_total > 0.0 {
        matched / pred_total
    } else if gold_total == 0.0 {
        1.0
    } else {
        0.0
    };
    let recall = if gold_total > 0.0 {
        matched / gold_total
    } else if pred_total == 0.0 {
        1.0
    } else {
        0.0
    };
    Prf { precision, recall, f1: harmonic(precision, recall) }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Normalisation for type comparison: case-insensitive with runs of
/// whitespace collapsed.
pub fn normalize_type(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Normalisation for alias comparison: case-insensitive exact.
pub fn normalize_alias(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Greedy one-to-one mention matching by exact surface string: the k-th
/// predicted occurrence of a surface pairs with the k-th gold occurrence.
pub fn mention_pairs(pred: &[TargetEntity], gold: &[TargetEntity]) -> Vec<(usize, usize)> {
    let mut gold_by_surface: HashMap<&str, std::collections::VecDeque<usize>> = HashMap::new();
    for (gi, g) in gold.iter().enumerate() {
        gold_by_surface.entry(g.mention.as_str()).or_default().push_back(gi);
    }
    let mut pairs = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        if let Some(queue) = gold_by_surface.get_mut(p.mention.as_str()) {
            if let Some(gi) = queue.pop_front() {
                pairs.push((pi, gi));
            }
        }
    }
    pairs
}

/// Mention detection outcome: which gold mentions were found, and the
/// prediction count for precision.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub gold_matched: Vec<bool>,
    pub pred_len: usize,
}

impl MatchOutcome {
    pub fn prf(&self) -> Prf {
        let matched = self.gold_matched.iter().filter(|&&m| m).count() as f64;
        prf(matched, self.pred_len as f64, self.gold_matched.len() as f64)
    }
}

pub fn score_mention_detection(pred: &TargetObject, gold: &TargetObject) -> MatchOutcome {
    let mut gold_matched = vec![false; gold.entities.len()];
    for (_, gi) in mention_pairs(&pred.entities, &gold.entities) {
        gold_matched[gi] = true;
    }
    MatchOutcome { gold_matched, pred_len: pred.entities.len() }
}

/// Entity linking: a predicted entity matches a gold mention iff the
/// mention strings are equal and the title ROUGE-L F1 reaches the
/// threshold; one-to-one greedy by descending title score.
pub fn score_entity_linking(pred: &TargetObject, gold: &TargetObject, threshold: f64) -> MatchOutcome {
    let mut gold_by_surface: HashMap<&str, Vec<usize>> = HashMap::new();
    for (gi, g) in gold.entities.iter().enumerate() {
        gold_by_surface.entry(g.mention.as_str()).or_default().push(gi);
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in pred.entities.iter().enumerate() {
        let Some(gis) = gold_by_surface.get(p.mention.as_str()) else { continue };
        let pred_title = tokenize(&p.title);
        for &gi in gis {
            let score = rouge_l_f1(&pred_title, &tokenize(&gold.entities[gi].title));
            if score >= threshold {
                candidates.push((score, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.entities.len()];
    let mut gold_matched = vec![false; gold.entities.len()];
    for (_, pi, gi) in candidates {
        if !pred_used[pi] && !gold_matched[gi] {
            pred_used[pi] = true;
            gold_matched[gi] = true;
        }
    }
    MatchOutcome { gold_matched, pred_len: pred.entities.len() }
}

/// Micro pair-counting outcome for typing and alias generation.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    /// `(pairs, matched pairs)` per gold entity.
    pub per_gold: Vec<(usize, usize)>,
    pub pred_total: usize,
    pub matched_total: usize,
}

impl PairOutcome {
    pub fn prf(&self) -> Prf {
        let gold_total: usize = self.per_gold.iter().map(|(n, _)| n).sum();
        prf(self.matched_total as f64, self.pred_total as f64, gold_total as f64)
    }
}

fn score_string_pairs(
    pred: &TargetObject,
    gold: &TargetObject,
    extract: impl Fn(&TargetEntity) -> Vec<String>,
) -> PairOutcome {
    let pred_sets: Vec<Vec<String>> = pred.entities.iter().map(&extract).collect();
    let gold_sets: Vec<Vec<String>> = gold.entities.iter().map(&extract).collect();
    let pred_total: usize = pred_sets.iter().map(Vec::len).sum();
    let mut per_gold: Vec<(usize, usize)> = gold_sets.iter().map(|s| (s.len(), 0)).collect();
    let mut matched_total = 0usize;
    // Pairs on matched mentions count; pairs on unmatched mentions stay as
    // false positives / false negatives.
    for (pi, gi) in mention_pairs(&pred.entities, &gold.entities) {
        let matched = gold_sets[gi].iter().filter(|g| pred_sets[pi].contains(g)).count();
        per_gold[gi].1 = matched;
        matched_total += matched;
    }
    PairOutcome { per_gold, pred_total, matched_total }
}

/// Entity typing: micro P/R/F1 over `(matched mention, type)` pairs, type
/// strings compared case-insensitively after whitespace normalisation.
pub fn score_entity_typing(pred: &TargetObject, gold: &TargetObject) -> PairOutcome {
    score_string_pairs(pred, gold, |e| {
        let mut types: Vec<String> = e.types.iter().map(|t| normalize_type(t)).collect();
        types.sort();
        types.dedup();
        types
    })
}

/// Alias generation: micro P/R/F1 over `(matched mention, alias)` pairs,
/// case-insensitive exact.
pub fn score_aliases(pred: &TargetObject, gold: &TargetObject) -> PairOutcome {
    score_string_pairs(pred, gold, |e| {
        let mut aliases: Vec<String> = e.aliases.iter().map(|a| normalize_alias(a)).collect();
        aliases.sort();
        aliases.dedup();
        aliases
    })
}

/// Description outcome: one entry per gold entity; `None` when the gold
/// description is null (excluded), `Some(score)` otherwise, with unmatched
/// gold mentions contributing 0.
#[derive(Debug, Clone)]
pub struct DescriptionOutcome {
    pub per_gold: Vec<Option<f64>>,
}

impl DescriptionOutcome {
    /// Mean over gold mentions that carry a description; `None` if none do.
    pub fn mean(&self) -> Option<f64> {
        let scores: Vec<f64> = self.per_gold.iter().flatten().copied().collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

pub fn score_description(pred: &TargetObject, gold: &TargetObject) -> DescriptionOutcome {
    let mut assigned: HashMap<usize, usize> = HashMap::new();
    for (pi, gi) in mention_pairs(&pred.entities, &gold.entities) {
        assigned.insert(gi, pi);
    }
    let per_gold = gold
        .entities
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let gold_desc = g.description.as_deref()?;
            let score = match assigned.get(&gi) {
                Some(&pi) => {
                    let pred_desc = pred.entities[pi].description.as_deref().unwrap_or("");
                    rouge_l_f1(&tokenize(pred_desc), &tokenize(gold_desc))
                }
                None => 0.0,
            };
            Some(score)
        })
        .collect();
    DescriptionOutcome { per_gold }
}

/// One flattened relation tuple: triplets with n relations flatten to n
/// `(head, relation, tail)` tuples.
#[derive(Debug, Clone)]
pub struct RelationTuple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    /// Index of the triplet this tuple came from.
    pub triplet_idx: usize,
}

pub fn flatten_triplets(target: &TargetObject) -> Vec<RelationTuple> {
    let mut tuples = Vec::new();
    for (ti, t) in target.triplets.iter().enumerate() {
        for relation in &t.relations {
            tuples.push(RelationTuple {
                head: t.head.clone(),
                relation: relation.clone(),
                tail: t.tail.clone(),
                triplet_idx: ti,
            });
        }
    }
    tuples
}

/// Open relation extraction outcome.
#[derive(Debug, Clone)]
pub struct OpenReOutcome {
    /// Best gold score per prediction tuple.
    pub per_pred_best: Vec<f64>,
    /// Greedily assigned score per gold tuple (0 when unassigned), plus the
    /// gold tuple itself for partition mapping.
    pub per_gold_assigned: Vec<(f64, RelationTuple)>,
}

impl OpenReOutcome {
    pub fn prf(&self) -> Prf {
        let pred_n = self.per_pred_best.len();
        let gold_n = self.per_gold_assigned.len();
        let precision = if pred_n > 0 {
            self.per_pred_best.iter().sum::<f64>() / pred_n as f64
        } else if gold_n == 0 {
            1.0
        } else {
            0.0
        };
        let recall = if gold_n > 0 {
            self.per_gold_assigned.iter().map(|(s, _)| s).sum::<f64>() / gold_n as f64
        } else if pred_n == 0 {
            1.0
        } else {
            0.0
        };
        Prf { precision, recall, f1: harmonic(precision, recall) }
    }

    /// Total assigned recall mass; the greedy-vs-optimal oracle compares this.
    pub fn assigned_sum(&self) -> f64 {
        self.per_gold_assigned.iter().map(|(s, _)| s).sum()
    }
}

/// Pairwise tuple score: mean ROUGE-L F1 over the head, relation and tail
/// slots. Scores below `match_threshold` count as 0.
pub fn tuple_score(pred: &RelationTuple, gold: &RelationTuple, match_threshold: f64) -> f64 {
    let score = (rouge_l_f1(&tokenize(&pred.head), &tokenize(&gold.head))
        + rouge_l_f1(&tokenize(&pred.relation), &tokenize(&gold.relation))
        + rouge_l_f1(&tokenize(&pred.tail), &tokenize(&gold.tail)))
        / 3.0;
    if score < match_threshold {
        0.0
    } else {
        score
    }
}

/// Score flattened triplets: precision averages each prediction's best gold
/// score; recall averages gold scores under a one-to-one greedy assignment
/// (pairs visited by descending score).
pub fn score_open_re(pred: &TargetObject, gold: &TargetObject, match_threshold: f64) -> OpenReOutcome {
    let pred_tuples = flatten_triplets(pred);
    let gold_tuples = flatten_triplets(gold);

    let mut per_pred_best = vec![0.0f64; pred_tuples.len()];
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in pred_tuples.iter().enumerate() {
        for (gi, g) in gold_tuples.iter().enumerate() {
            let score = tuple_score(p, g, match_threshold);
            if score > per_pred_best[pi] {
                per_pred_best[pi] = score;
            }
            if score > 0.0 {
                candidates.push((score, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred_tuples.len()];
    let mut assigned = vec![0.0f64; gold_tuples.len()];
    for (score, pi, gi) in candidates {
        if !pred_used[pi] && assigned[gi] == 0.0 {
            pred_used[pi] = true;
            assigned[gi] = score;
        }
    }
    let per_gold_assigned = assigned.into_iter().zip(gold_tuples).collect();
    OpenReOutcome { per_pred_best, per_gold_assigned }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(mention: &str, title: &str, types: &[&str], desc: Option<&str>, aliases: &[&str]) -> TargetEntity {
        TargetEntity {
            mention: mention.into(),
            title: title.into(),
            types: types.iter().map(|s| s.to_string()).collect(),
            description: desc.map(str::to_owned),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn obj(entities: Vec<TargetEntity>) -> TargetObject {
        TargetObject { entities, triplets: vec![] }
    }

    fn simple(mentions: &[&str]) -> TargetObject {
        obj(mentions.iter().map(|m| entity(m, m, &[], None, &[])).collect())
    }

    #[test]
    fn md_multiset_matching() {
        let gold = simple(&["A", "B", "C"]);
        let pred = simple(&["A", "B", "D"]);
        let s = score_mention_detection(&pred, &gold).prf();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn md_perfect_and_empty_cases() {
        let gold = simple(&["A", "B"]);
        assert_eq!(score_mention_detection(&gold, &gold).prf(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        let empty = simple(&[]);
        let s = score_mention_detection(&empty, &gold).prf();
        assert_eq!((s.recall, s.f1), (0.0, 0.0));
        // Exact agreement on nothing.
        assert_eq!(score_mention_detection(&empty, &empty).prf().f1, 1.0);
    }

    #[test]
    fn md_duplicate_surfaces_match_once_each() {
        let gold = simple(&["A", "A"]);
        let pred = simple(&["A"]);
        let s = score_mention_detection(&pred, &gold).prf();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn el_thresholds_split_soft_and_hard_matching() {
        let gold = obj(vec![entity("2023 ATP Tour", "2023 ATP Tour", &[], None, &[])]);
        let pred = obj(vec![entity("2023 ATP Tour", "ATP Tour", &[], None, &[])]);
        assert_eq!(score_entity_linking(&pred, &gold, 0.8).prf().f1, 1.0);
        assert_eq!(score_entity_linking(&pred, &gold, 1.0).prf().f1, 0.0);
        // Exact titles match at both thresholds.
        assert_eq!(score_entity_linking(&gold, &gold, 1.0).prf().f1, 1.0);
        // Correct title on the wrong mention string never matches.
        let wrong_mention = obj(vec![entity("the tour", "2023 ATP Tour", &[], None, &[])]);
        assert_eq!(score_entity_linking(&wrong_mention, &gold, 0.8).prf().f1, 0.0);
    }

    #[test]
    fn el_duplicate_surfaces_assign_best_title_first() {
        // Two gold mentions share a surface; the single prediction must
        // pair with the gold whose title it actually matches.
        let gold = obj(vec![
            entity("Berlin", "Berlin", &[], None, &[]),
            entity("Berlin", "Berlin Wall", &[], None, &[]),
        ]);
        let pred = obj(vec![entity("Berlin", "Berlin Wall", &[], None, &[])]);
        let outcome = score_entity_linking(&pred, &gold, 1.0);
        assert_eq!(outcome.gold_matched, vec![false, true]);
        let s = outcome.prf();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn et_micro_pair_counting() {
        let gold = obj(vec![entity("Berlin", "Berlin", &["city"], None, &[])]);
        let pred = obj(vec![entity("Berlin", "Berlin", &["City", "capital"], None, &[])]);
        let s = score_entity_typing(&pred, &gold).prf();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn et_unmatched_prediction_types_are_false_positives_only() {
        let gold = obj(vec![entity("Berlin", "Berlin", &["city"], None, &[])]);
        let pred = obj(vec![
            entity("Berlin", "Berlin", &["city"], None, &[]),
            entity("Ghost", "Ghost", &["spirit", "being"], None, &[]),
        ]);
        let s = score_entity_typing(&pred, &gold).prf();
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.recall, 1.0);
    }

    #[test]
    fn aliases_pair_counting() {
        let gold = obj(vec![entity("NYC", "New York City", &[], None, &["NYC", "Big Apple"])]);
        let pred = obj(vec![entity("NYC", "New York City", &[], None, &["nyc"])]);
        let s = score_aliases(&pred, &gold).prf();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn description_mean_and_exclusions() {
        // Two gold mentions with descriptions: one matched exactly, one
        // unmatched (contributes 0) -> mean 0.5.
        let gold = obj(vec![
            entity("A", "A", &[], Some("alpha beta"), &[]),
            entity("B", "B", &[], Some("gamma delta"), &[]),
        ]);
        let pred = obj(vec![entity("A", "A", &[], Some("alpha beta"), &[])]);
        assert_eq!(score_description(&pred, &gold).mean(), Some(0.5));
        // No gold descriptions -> absent.
        let bare = simple(&["A"]);
        assert_eq!(score_description(&pred, &bare).mean(), None);
    }

    #[test]
    fn openre_camp_nou_pair_score() {
        let pred = RelationTuple { head: "Camp Nou".into(), relation: "home venue".into(), tail: "Barcelona".into(), triplet_idx: 0 };
        let gold = RelationTuple { head: "Camp Nou".into(), relation: "home venue of".into(), tail: "FC Barcelona".into(), triplet_idx: 0 };
        let score = tuple_score(&pred, &gold, 0.0);
        assert!((score - (1.0 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((score - 0.822).abs() < 0.001);
    }

    #[test]
    fn openre_prf_and_empty_sides() {
        let gold = TargetObject {
            entities: vec![],
            triplets: vec![crate::linearize::TargetTriplet {
                head: "Camp Nou".into(),
                tail: "FC Barcelona".into(),
                relations: vec!["home venue of".into()],
            }],
        };
        let pred = TargetObject {
            entities: vec![],
            triplets: vec![crate::linearize::TargetTriplet {
                head: "Camp Nou".into(),
                tail: "Barcelona".into(),
                relations: vec!["home venue".into()],
            }],
        };
        let s = score_open_re(&pred, &gold, 0.0).prf();
        assert!((s.precision - 0.8222222222222223).abs() < 1e-9);
        assert!((s.recall - s.precision).abs() < 1e-12);

        // Identical triplets score 1.
        assert_eq!(score_open_re(&gold, &gold, 0.0).prf().f1, 1.0);
        // Empty prediction against non-empty gold.
        let empty = TargetObject::default();
        let s = score_open_re(&empty, &gold, 0.0).prf();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        // Both empty: exact agreement.
        assert_eq!(score_open_re(&empty, &empty, 0.0).prf().f1, 1.0);
    }

    #[test]
    fn openre_relation_lists_flatten() {
        let gold = TargetObject {
            entities: vec![],
            triplets: vec![crate::linearize::TargetTriplet {
                head: "a".into(),
                tail: "b".into(),
                relations: vec!["r1".into(), "r2".into()],
            }],
        };
        assert_eq!(flatten_triplets(&gold).len(), 2);
    }
}
