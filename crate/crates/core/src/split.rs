//! Open-world evaluation split: corpus construction from the time
//! difference between dump snapshots, and seen/unseen partition labels for
//! entities and instructions.

use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instructions::{InstructedSample, InstructionCategory, InstructionSpec};
use crate::wikidata::Ontology;

/// The four snapshot dates a split is built from. Train dates strictly
/// precede their evaluation counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_wikidata_date: NaiveDate,
    pub train_wikipedia_date: NaiveDate,
    pub eval_wikipedia_date: NaiveDate,
    pub eval_wikidata_date: NaiveDate,
}

#[derive(Debug, Error)]
#[error("train dates must strictly precede eval dates")]
pub struct SplitConfigError;

impl SplitConfig {
    pub fn validate(&self) -> Result<(), SplitConfigError> {
        if self.train_wikidata_date < self.eval_wikidata_date
            && self.train_wikipedia_date < self.eval_wikipedia_date
        {
            Ok(())
        } else {
            Err(SplitConfigError)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Seen,
    Unseen,
}

/// Partition labels carried by every evaluation sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionLabel {
    pub sample_id: String,
    pub instruction_partition: Partition,
    /// One label per target mention, in mention order.
    pub mention_partitions: Vec<Partition>,
}

/// Keep only evaluation articles whose page id never occurs in the training
/// article set. `page_id` extraction is by id, not title, so renames do not
/// leak articles across the boundary.
pub fn build_open_world_corpus<T>(
    train_article_ids: &HashSet<u64>,
    eval_articles: impl IntoIterator<Item = T>,
    page_id: impl Fn(&T) -> u64,
) -> Vec<T> {
    eval_articles
        .into_iter()
        .filter(|a| !train_article_ids.contains(&page_id(a)))
        .collect()
}

/// An entity is unseen iff it is absent from the training-side ontology.
pub fn label_entity_partition(qid: &str, train_ontology: &Ontology) -> Partition {
    if train_ontology.entities.contains_key(qid) {
        Partition::Seen
    } else {
        Partition::Unseen
    }
}

/// The type labels and description strings used by training instructions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamInventory {
    pub types: HashSet<String>,
    pub descriptions: HashSet<String>,
}

impl ParamInventory {
    pub fn add_spec(&mut self, spec: &InstructionSpec) {
        if let Some(types) = &spec.types {
            self.types.extend(types.iter().cloned());
        }
        if let Some(descriptions) = &spec.descriptions {
            self.descriptions.extend(descriptions.iter().cloned());
        }
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a InstructedSample>) -> Self {
        let mut inventory = ParamInventory::default();
        for sample in samples {
            inventory.add_spec(&sample.spec);
        }
        inventory
    }
}

/// An instruction is unseen iff any of its content parameters (type labels
/// or description strings) never occurred in a training instruction.
/// Default, Number and Importance instructions carry no content parameters
/// and are always seen.
pub fn label_instruction_partition(spec: &InstructionSpec, inventory: &ParamInventory) -> Partition {
    match spec.category {
        InstructionCategory::Default | InstructionCategory::Number | InstructionCategory::Importance => {
            Partition::Seen
        }
        _ => {
            let types_unseen = spec
                .types
                .as_ref()
                .is_some_and(|ts| ts.iter().any(|t| !inventory.types.contains(t)));
            let descriptions_unseen = spec
                .descriptions
                .as_ref()
                .is_some_and(|ds| ds.iter().any(|d| !inventory.descriptions.contains(d)));
            if types_unseen || descriptions_unseen {
                Partition::Unseen
            } else {
                Partition::Seen
            }
        }
    }
}

/// Label one evaluation sample: instruction partition from the spec, one
/// entity partition per target mention.
pub fn label_sample(
    sample: &InstructedSample,
    train_ontology: &Ontology,
    inventory: &ParamInventory,
) -> PartitionLabel {
    PartitionLabel {
        sample_id: sample.sample_id.clone(),
        instruction_partition: label_instruction_partition(&sample.spec, inventory),
        mention_partitions: sample
            .target
            .mentions
            .iter()
            .map(|m| label_entity_partition(&m.profile.qid, train_ontology))
            .collect(),
    }
}
