//! Streaming ingestion of Wikidata-style JSON entity dumps into an
//! [`Ontology`] of entity records, type links, and entity-valued claims.
//!
//! Dumps arrive as one entity object per line; surrounding array brackets
//! and trailing commas are tolerated. Only the configured language slot is
//! kept for labels, descriptions and aliases. With an allowlist, memory
//! stays independent of dump length: non-matching entities are dropped as
//! soon as their line is decoded.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::EntityProfile;

/// One knowledge-base entity as retained from the dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub qid: String,
    pub label: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Direct typing targets (the configured typing property, e.g. P31).
    #[serde(default)]
    pub instance_of: Vec<String>,
    /// Direct hierarchy parents (the configured hierarchy property, e.g. P279).
    #[serde(default)]
    pub subclass_of: Vec<String>,
    pub sitelink_count: u32,
    /// Title of the linked wiki page in the configured language, when any.
    pub page_title: Option<String>,
    /// Entity-valued claims as `(property id, object qid)` pairs, in dump
    /// order, deduplicated. Literal-valued claims are dropped at ingest.
    #[serde(default)]
    pub claims: Vec<(String, String)>,
}

/// One relation property with its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyRecord {
    pub pid: String,
    pub label: String,
}

/// The immutable knowledge base a parse produces. Shareable across threads.
#[derive(Debug, Clone, Default)]
pub struct Ontology {
    pub entities: HashMap<String, EntityRecord>,
    pub properties: HashMap<String, PropertyRecord>,
    /// Wiki page title -> qid. Keyed by the page title when the entity has
    /// a sitelink, otherwise by its label; first occurrence wins.
    pub title_index: HashMap<String, String>,
    pub snapshot_date: NaiveDate,
}

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("entity {0} has neither a label nor a linked page title")]
    Untitled(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read dump stream at line {line}")]
    Read {
        #[source]
        source: std::io::Error,
        line: usize,
    },
}

/// Ingest configuration. Defaults match English-language dumps typed by
/// P31 with P279 hierarchy links.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub language: String,
    pub typing_property: String,
    pub hierarchy_property: String,
    pub snapshot_date: NaiveDate,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            language: "en".into(),
            typing_property: "P31".into(),
            hierarchy_property: "P279".into(),
            snapshot_date: NaiveDate::from_ymd_opt(1970, 1, 1).unwrap(),
        }
    }
}

impl IngestConfig {
    /// Site key of the wiki whose page titles anchor links resolve against,
    /// e.g. `enwiki` for language `en`.
    pub fn site_key(&self) -> String {
        format!("{}wiki", self.language)
    }
}

/// Malformed lines are skipped, not fatal; each skip is recorded here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipRecord {
    pub line: usize,
    pub message: String,
}

/// Counters and the skip log from one parse.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines_read: usize,
    pub entities_retained: usize,
    pub properties_retained: usize,
    pub title_collisions: usize,
    pub skips: Vec<SkipRecord>,
}

// Wire structures for the dump's per-line JSON. Unknown fields ignored.
#[derive(Deserialize)]
struct RawEntity {
    id: String,
    #[serde(rename = "type")]
    kind: Option<String>,
    #[serde(default)]
    labels: HashMap<String, RawMonolingual>,
    #[serde(default)]
    descriptions: HashMap<String, RawMonolingual>,
    #[serde(default)]
    aliases: HashMap<String, Vec<RawMonolingual>>,
    #[serde(default)]
    claims: HashMap<String, Vec<RawStatement>>,
    #[serde(default)]
    sitelinks: HashMap<String, RawSitelink>,
}

#[derive(Deserialize)]
struct RawMonolingual {
    value: String,
}

#[derive(Deserialize)]
struct RawSitelink {
    title: String,
}

#[derive(Deserialize)]
struct RawStatement {
    mainsnak: Option<RawSnak>,
}

#[derive(Deserialize)]
struct RawSnak {
    datavalue: Option<RawDataValue>,
}

#[derive(Deserialize)]
struct RawDataValue {
    #[serde(rename = "type")]
    kind: String,
    value: serde_json::Value,
}

fn is_qid(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next() == Some('Q') && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())
    }
}

fn is_pid(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next() == Some('P') && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())
    }
}

/// Numeric part of a qid/pid. Assumes the id is well-formed.
pub fn id_number(id: &str) -> u64 {
    id[1..].parse().unwrap_or(u64::MAX)
}

fn entity_object_qid(dv: &RawDataValue) -> Option<String> {
    if dv.kind != "wikibase-entityid" {
        return None;
    }
    let id = dv.value.get("id")?.as_str()?;
    is_qid(id).then(|| id.to_string())
}

fn push_unique(list: &mut Vec<String>, item: String) {
    if !list.contains(&item) {
        list.push(item);
    }
}

/// Title collisions resolve to the numerically smallest qid, independent of
/// record order, so a parsed dump and a reloaded snapshot agree.
/// Returns true when the title was already claimed.
fn index_title(index: &mut HashMap<String, String>, title: String, qid: &str) -> bool {
    match index.entry(title) {
        std::collections::hash_map::Entry::Occupied(mut slot) => {
            if id_number(qid) < id_number(slot.get()) {
                slot.insert(qid.to_string());
            }
            true
        }
        std::collections::hash_map::Entry::Vacant(slot) => {
            slot.insert(qid.to_string());
            false
        }
    }
}

/// Stream-parse a dump into an [`Ontology`].
///
/// `filter`, when given, is a qid allowlist: entities outside it are
/// discarded immediately, so retained state is bounded by the allowlist
/// regardless of dump length. Property records are always retained.
///
/// Malformed lines go to the report's skip log and parsing continues; an
/// unreadable stream is fatal.
pub fn parse_wikidata_dump<R: BufRead>(
    stream: R,
    filter: Option<&HashSet<String>>,
    config: &IngestConfig,
) -> Result<(Ontology, IngestReport), IngestError> {
    let mut ontology = Ontology {
        snapshot_date: config.snapshot_date,
        ..Ontology::default()
    };
    let mut report = IngestReport::default();
    let site_key = config.site_key();

    for (idx, line) in stream.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IngestError::Read { source, line: line_no })?;
        report.lines_read = line_no;

        let trimmed = line.trim();
        let trimmed = trimmed.strip_suffix(',').unwrap_or(trimmed);
        if trimmed.is_empty() || trimmed == "[" || trimmed == "]" {
            continue;
        }

        let raw: RawEntity = match serde_json::from_str(trimmed) {
            Ok(raw) => raw,
            Err(e) => {
                report.skips.push(SkipRecord { line: line_no, message: e.to_string() });
                continue;
            }
        };

        if raw.kind.as_deref() == Some("property") || is_pid(&raw.id) {
            if let Some(label) = raw.labels.get(&config.language) {
                if is_pid(&raw.id) && !label.value.is_empty() {
                    ontology
                        .properties
                        .insert(raw.id.clone(), PropertyRecord { pid: raw.id, label: label.value.clone() });
                    report.properties_retained += 1;
                } else {
                    report
                        .skips
                        .push(SkipRecord { line: line_no, message: format!("invalid property record {}", raw.id) });
                }
            }
            continue;
        }

        if !is_qid(&raw.id) {
            report
                .skips
                .push(SkipRecord { line: line_no, message: format!("id {:?} is not an entity id", raw.id) });
            continue;
        }
        if let Some(allow) = filter {
            if !allow.contains(&raw.id) {
                continue;
            }
        }

        let mut record = EntityRecord {
            qid: raw.id,
            label: raw.labels.get(&config.language).map(|m| m.value.clone()),
            description: raw.descriptions.get(&config.language).map(|m| m.value.clone()),
            aliases: raw
                .aliases
                .get(&config.language)
                .map(|a| a.iter().map(|m| m.value.clone()).collect())
                .unwrap_or_default(),
            instance_of: Vec::new(),
            subclass_of: Vec::new(),
            sitelink_count: raw.sitelinks.len() as u32,
            page_title: raw.sitelinks.get(&site_key).map(|s| s.title.clone()),
            claims: Vec::new(),
        };

        // Property iteration ordered by numeric pid for deterministic claim
        // order; statements within a property keep dump order.
        let mut pids: Vec<&String> = raw.claims.keys().collect();
        pids.sort_by_key(|pid| (id_number(pid), (*pid).clone()));
        for pid in pids {
            if !is_pid(pid) {
                continue;
            }
            for statement in &raw.claims[pid] {
                let Some(object) = statement
                    .mainsnak
                    .as_ref()
                    .and_then(|s| s.datavalue.as_ref())
                    .and_then(entity_object_qid)
                else {
                    continue;
                };
                if *pid == config.typing_property {
                    push_unique(&mut record.instance_of, object.clone());
                } else if *pid == config.hierarchy_property {
                    push_unique(&mut record.subclass_of, object.clone());
                }
                if !record.claims.iter().any(|(p, o)| p == pid && *o == object) {
                    record.claims.push((pid.clone(), object));
                }
            }
        }

        // Entities with neither a label nor a sitelink are unalignable and
        // stay out of the index.
        if let Some(title) = record.page_title.clone().or_else(|| record.label.clone()) {
            if index_title(&mut ontology.title_index, title, &record.qid) {
                report.title_collisions += 1;
            }
        }
        ontology.entities.insert(record.qid.clone(), record);
        report.entities_retained += 1;
    }

    Ok((ontology, report))
}

/// Resolve the profile served to annotation: title (label, falling back to
/// the linked page title), type labels, description and aliases verbatim.
///
/// Typing targets missing from the ontology or lacking a label are dropped;
/// the surviving `types` and `type_qids` stay aligned index-wise.
pub fn resolve_entity_profile(qid: &str, ontology: &Ontology) -> Result<EntityProfile, OntologyError> {
    let record = ontology
        .entities
        .get(qid)
        .ok_or_else(|| OntologyError::UnknownEntity(qid.to_string()))?;
    let title = record
        .label
        .clone()
        .or_else(|| record.page_title.clone())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| OntologyError::Untitled(qid.to_string()))?;

    let mut types = Vec::new();
    let mut type_qids = Vec::new();
    for target in &record.instance_of {
        match ontology.entities.get(target).and_then(|t| t.label.clone()) {
            Some(label) => {
                types.push(label);
                type_qids.push(target.clone());
            }
            None => {
                log::warn!("dropping unresolvable type {target} of {qid}");
            }
        }
    }

    Ok(EntityProfile {
        qid: record.qid.clone(),
        title,
        types,
        type_qids,
        description: record.description.clone(),
        aliases: record.aliases.clone(),
    })
}

/// Direct hierarchy parents of a base type, in dump order.
pub fn abstract_types_of(base_type_qid: &str, ontology: &Ontology) -> Result<Vec<String>, OntologyError> {
    ontology
        .entities
        .get(base_type_qid)
        .map(|r| r.subclass_of.clone())
        .ok_or_else(|| OntologyError::UnknownEntity(base_type_qid.to_string()))
}

/// Order qids by importance: descending sitelink count, ties broken by
/// ascending numeric qid. Total, stable, deterministic.
pub fn importance_rank(qids: &[String], ontology: &Ontology) -> Result<Vec<String>, OntologyError> {
    let mut keyed = Vec::with_capacity(qids.len());
    for qid in qids {
        let record = ontology
            .entities
            .get(qid)
            .ok_or_else(|| OntologyError::UnknownEntity(qid.clone()))?;
        keyed.push((std::cmp::Reverse(record.sitelink_count), id_number(qid), qid.clone()));
    }
    keyed.sort();
    Ok(keyed.into_iter().map(|(_, _, qid)| qid).collect())
}

// --- snapshot format -------------------------------------------------------
//
// A snapshot is JSONL: a header line with the snapshot date, then one line
// per entity and one per property. The title index is rebuilt on load.

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    snapshot_date: NaiveDate,
    #[serde(default)]
    title_collisions: usize,
}

#[derive(Serialize, Deserialize)]
enum SnapshotLine {
    #[serde(rename = "header")]
    Header(SnapshotHeader),
    #[serde(rename = "entity")]
    Entity(EntityRecord),
    #[serde(rename = "property")]
    Property(PropertyRecord),
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o failed")]
    Io(#[from] std::io::Error),
    #[error("snapshot line {line} is invalid")]
    Malformed {
        #[source]
        source: serde_json::Error,
        line: usize,
    },
    #[error("snapshot is missing its header line")]
    MissingHeader,
}

impl Ontology {
    /// Write the snapshot. Entities and properties are sorted by numeric id
    /// so equal ontologies produce identical bytes.
    pub fn write_snapshot<W: std::io::Write>(&self, mut out: W) -> Result<(), SnapshotError> {
        let header = SnapshotLine::Header(SnapshotHeader {
            snapshot_date: self.snapshot_date,
            title_collisions: 0,
        });
        serde_json::to_writer(&mut out, &header).map_err(io_from_json)?;
        out.write_all(b"\n")?;

        let mut qids: Vec<&String> = self.entities.keys().collect();
        qids.sort_by_key(|q| id_number(q));
        for qid in qids {
            serde_json::to_writer(&mut out, &SnapshotLine::Entity(self.entities[qid].clone()))
                .map_err(io_from_json)?;
            out.write_all(b"\n")?;
        }
        let mut pids: Vec<&String> = self.properties.keys().collect();
        pids.sort_by_key(|p| id_number(p));
        for pid in pids {
            serde_json::to_writer(&mut out, &SnapshotLine::Property(self.properties[pid].clone()))
                .map_err(io_from_json)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Ontology, SnapshotError> {
        let mut ontology = Ontology::default();
        let mut saw_header = false;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: SnapshotLine = serde_json::from_str(&line)
                .map_err(|source| SnapshotError::Malformed { source, line: idx + 1 })?;
            match parsed {
                SnapshotLine::Header(h) => {
                    ontology.snapshot_date = h.snapshot_date;
                    saw_header = true;
                }
                SnapshotLine::Entity(e) => {
                    if let Some(title) = e.page_title.clone().or_else(|| e.label.clone()) {
                        index_title(&mut ontology.title_index, title, &e.qid);
                    }
                    ontology.entities.insert(e.qid.clone(), e);
                }
                SnapshotLine::Property(p) => {
                    ontology.properties.insert(p.pid.clone(), p);
                }
            }
        }
        if !saw_header {
            return Err(SnapshotError::MissingHeader);
        }
        Ok(ontology)
    }
}

fn io_from_json(e: serde_json::Error) -> SnapshotError {
    SnapshotError::Io(std::io::Error::other(e))
}
