//! Scoring of prediction files against gold samples: six subtasks,
//! per-category and per-partition breakdowns, dispersion across rephrasing
//! runs, and instruction-following diagnostics.

pub mod report;
pub mod rouge;
pub mod tasks;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instructions::{InstructionCategory, InstructionSpec};
use crate::linearize::{parse_and_validate, ParseMode, ParseOutcome, TargetObject};
use crate::split::Partition;
use tasks::{normalize_type, Prf};

/// The only implemented tokenizer rule: lowercase, split on runs of
/// non-alphanumeric characters.
pub const TOKENIZER_DEFAULT: &str = "default";

/// Scoring configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Entity-linking title thresholds, sorted descending.
    pub title_thresholds: Vec<f64>,
    /// Tokenizer rule id; only [`TOKENIZER_DEFAULT`] exists.
    pub tokenizer: String,
    /// Relation tuple scores below this count as no match (0 reports raw).
    pub carb_match_threshold: f64,
    /// Rephrasing variants emitted per evaluation sample.
    pub rephrasing_runs: u32,
    /// Score against leniently parsed output (diagnostics stay strict).
    pub lenient: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            title_thresholds: vec![1.0, 0.8],
            tokenizer: TOKENIZER_DEFAULT.into(),
            carb_match_threshold: 0.0,
            rephrasing_runs: 3,
            lenient: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.title_thresholds.is_empty() {
            return Err(EvalError::InvalidConfig("no title thresholds".into()));
        }
        for t in &self.title_thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(EvalError::InvalidConfig(format!("threshold {t} outside (0, 1]")));
            }
        }
        if self.title_thresholds.windows(2).any(|w| w[0] <= w[1]) {
            return Err(EvalError::InvalidConfig("thresholds must be sorted descending".into()));
        }
        if self.tokenizer != TOKENIZER_DEFAULT {
            return Err(EvalError::InvalidConfig(format!(
                "unknown tokenizer rule {:?}; only {TOKENIZER_DEFAULT:?} is implemented",
                self.tokenizer
            )));
        }
        if self.rephrasing_runs < 1 {
            return Err(EvalError::InvalidConfig("rephrasing_runs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("prediction references unknown sample id {0:?}")]
    UnknownSampleId(String),
}

/// One gold evaluation unit, ready to score against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldSample {
    pub sample_id: String,
    pub category: InstructionCategory,
    pub spec: InstructionSpec,
    pub run: u32,
    pub target: TargetObject,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub instruction_partition: Option<Partition>,
    /// Entity partition per target mention; empty when unlabeled.
    #[serde(default)]
    pub mention_partitions: Vec<Partition>,
}

/// One model output row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub raw_text: String,
}

/// Pooled recall numerator/denominator per entity partition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub seen_num: f64,
    pub seen_den: f64,
    pub unseen_num: f64,
    pub unseen_den: f64,
}

impl PartitionCounts {
    pub fn add(&mut self, partition: Partition, num: f64, den: f64) {
        match partition {
            Partition::Seen => {
                self.seen_num += num;
                self.seen_den += den;
            }
            Partition::Unseen => {
                self.unseen_num += num;
                self.unseen_den += den;
            }
        }
    }

    pub fn merge(&mut self, other: &PartitionCounts) {
        self.seen_num += other.seen_num;
        self.seen_den += other.seen_den;
        self.unseen_num += other.unseen_num;
        self.unseen_den += other.unseen_den;
    }

    pub fn recall(&self, partition: Partition) -> Option<f64> {
        let (num, den) = match partition {
            Partition::Seen => (self.seen_num, self.seen_den),
            Partition::Unseen => (self.unseen_num, self.unseen_den),
        };
        (den > 0.0).then(|| num / den)
    }
}

/// All scores for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub category: InstructionCategory,
    pub run: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub instruction_partition: Option<Partition>,
    /// Decode error or strict schema violation (missing predictions count).
    pub json_error: bool,
    pub number_failure: Option<bool>,
    pub type_failure: Option<bool>,
    pub md: Prf,
    pub el: Vec<(f64, Prf)>,
    pub et: Prf,
    pub openre: Prf,
    pub description: Option<f64>,
    pub aliases: Prf,
    pub md_recall: PartitionCounts,
    pub el_recall: Vec<(f64, PartitionCounts)>,
    pub et_recall: PartitionCounts,
    pub aliases_recall: PartitionCounts,
    /// num = summed description scores, den = desc-bearing gold mentions.
    pub desc_recall: PartitionCounts,
    /// num = assigned tuple score mass, den = gold tuple count.
    pub openre_recall: PartitionCounts,
}

fn zero_scores(gold: &GoldSample, config: &EvalConfig) -> SampleScores {
    let zero = Prf::default();
    let mut md_recall = PartitionCounts::default();
    let mut et_recall = PartitionCounts::default();
    let mut aliases_recall = PartitionCounts::default();
    let mut desc_recall = PartitionCounts::default();
    let mut openre_recall = PartitionCounts::default();
    for (gi, entity) in gold.target.entities.iter().enumerate() {
        if let Some(&partition) = gold.mention_partitions.get(gi) {
            md_recall.add(partition, 0.0, 1.0);
            let types: Vec<String> = entity.types.iter().map(|t| normalize_type(t)).collect();
            let mut dedup = types.clone();
            dedup.sort();
            dedup.dedup();
            et_recall.add(partition, 0.0, dedup.len() as f64);
            let mut aliases: Vec<String> = entity.aliases.iter().map(|a| tasks::normalize_alias(a)).collect();
            aliases.sort();
            aliases.dedup();
            aliases_recall.add(partition, 0.0, aliases.len() as f64);
            if entity.description.is_some() {
                desc_recall.add(partition, 0.0, 1.0);
            }
        }
    }
    for tuple in tasks::flatten_triplets(&gold.target) {
        if let Some(partition) = tuple_partition(&tuple, gold) {
            openre_recall.add(partition, 0.0, 1.0);
        }
    }
    let has_desc = gold.target.entities.iter().any(|e| e.description.is_some());
    SampleScores {
        sample_id: gold.sample_id.clone(),
        category: gold.category,
        run: gold.run,
        instruction_partition: gold.instruction_partition,
        json_error: true,
        number_failure: gold.category.needs_k().then_some(true),
        type_failure: gold.category.needs_types().then_some(true),
        md: zero,
        el: config.title_thresholds.iter().map(|&t| (t, zero)).collect(),
        et: zero,
        openre: zero,
        description: has_desc.then_some(0.0),
        aliases: zero,
        md_recall,
        el_recall: config.title_thresholds.iter().map(|&t| (t, md_recall)).collect(),
        et_recall,
        aliases_recall,
        desc_recall,
        openre_recall,
    }
}

/// Partition of a relation tuple: unseen when either endpoint mention is
/// unseen, seen when at least one endpoint maps to a labeled mention, None
/// when neither endpoint surface maps (or labels are absent).
fn tuple_partition(tuple: &tasks::RelationTuple, gold: &GoldSample) -> Option<Partition> {
    if gold.mention_partitions.is_empty() {
        return None;
    }
    let find = |surface: &str| {
        gold.target
            .entities
            .iter()
            .position(|e| e.mention == surface)
            .and_then(|i| gold.mention_partitions.get(i).copied())
    };
    let head = find(&tuple.head);
    let tail = find(&tuple.tail);
    match (head, tail) {
        (None, None) => None,
        (h, t) => {
            if h == Some(Partition::Unseen) || t == Some(Partition::Unseen) {
                Some(Partition::Unseen)
            } else {
                Some(Partition::Seen)
            }
        }
    }
}

/// Score one sample. `raw_text` is the model output; `None` (missing
/// prediction) scores zero everywhere and counts as a JSON error.
pub fn score_sample(gold: &GoldSample, raw_text: Option<&str>, config: &EvalConfig) -> SampleScores {
    let Some(text) = raw_text else {
        return zero_scores(gold, config);
    };
    let strict = parse_and_validate(text, ParseMode::Strict);
    let json_error = !strict.is_ok();
    let parsed: Option<TargetObject> = match strict {
        ParseOutcome::Ok(t) => Some(t),
        ParseOutcome::DecodeError { .. } => None,
        ParseOutcome::SchemaError { .. } => {
            if config.lenient {
                parse_and_validate(text, ParseMode::Lenient).ok()
            } else {
                None
            }
        }
    };
    let Some(pred) = parsed else {
        return zero_scores(gold, config);
    };

    let mut scores = score_parsed(gold, &pred, config);
    scores.json_error = json_error;
    scores
}

fn score_parsed(gold: &GoldSample, pred: &TargetObject, config: &EvalConfig) -> SampleScores {
    let labels = &gold.mention_partitions;
    let labeled = !labels.is_empty();

    let md = tasks::score_mention_detection(pred, &gold.target);
    let mut md_recall = PartitionCounts::default();
    if labeled {
        for (gi, &matched) in md.gold_matched.iter().enumerate() {
            if let Some(&p) = labels.get(gi) {
                md_recall.add(p, matched as u8 as f64, 1.0);
            }
        }
    }

    let mut el = Vec::new();
    let mut el_recall = Vec::new();
    for &threshold in &config.title_thresholds {
        let outcome = tasks::score_entity_linking(pred, &gold.target, threshold);
        let mut counts = PartitionCounts::default();
        if labeled {
            for (gi, &matched) in outcome.gold_matched.iter().enumerate() {
                if let Some(&p) = labels.get(gi) {
                    counts.add(p, matched as u8 as f64, 1.0);
                }
            }
        }
        el.push((threshold, outcome.prf()));
        el_recall.push((threshold, counts));
    }

    let et = tasks::score_entity_typing(pred, &gold.target);
    let mut et_recall = PartitionCounts::default();
    if labeled {
        for (gi, &(pairs, matched)) in et.per_gold.iter().enumerate() {
            if let Some(&p) = labels.get(gi) {
                et_recall.add(p, matched as f64, pairs as f64);
            }
        }
    }

    let aliases = tasks::score_aliases(pred, &gold.target);
    let mut aliases_recall = PartitionCounts::default();
    if labeled {
        for (gi, &(pairs, matched)) in aliases.per_gold.iter().enumerate() {
            if let Some(&p) = labels.get(gi) {
                aliases_recall.add(p, matched as f64, pairs as f64);
            }
        }
    }

    let description = tasks::score_description(pred, &gold.target);
    let mut desc_recall = PartitionCounts::default();
    if labeled {
        for (gi, score) in description.per_gold.iter().enumerate() {
            if let (Some(score), Some(&p)) = (score, labels.get(gi)) {
                desc_recall.add(p, *score, 1.0);
            }
        }
    }

    let openre = tasks::score_open_re(pred, &gold.target, config.carb_match_threshold);
    let mut openre_recall = PartitionCounts::default();
    for (assigned, tuple) in &openre.per_gold_assigned {
        if let Some(partition) = tuple_partition(tuple, gold) {
            openre_recall.add(partition, *assigned, 1.0);
        }
    }

    SampleScores {
        sample_id: gold.sample_id.clone(),
        category: gold.category,
        run: gold.run,
        instruction_partition: gold.instruction_partition,
        json_error: false,
        number_failure: check_number_failure(pred, &gold.spec),
        type_failure: check_type_failure(pred, &gold.spec),
        md: md.prf(),
        el,
        et: et.prf(),
        openre: openre.prf(),
        description: description.mean(),
        aliases: aliases.prf(),
        md_recall,
        el_recall,
        et_recall,
        aliases_recall,
        desc_recall,
        openre_recall,
    }
}

/// Number constraint: the prediction must contain exactly k entities.
fn check_number_failure(pred: &TargetObject, spec: &InstructionSpec) -> Option<bool> {
    let k = spec.k?;
    if !spec.category.needs_k() {
        return None;
    }
    Some(pred.entities.len() != k)
}

/// Type constraint: every predicted entity's type list must intersect the
/// instructed type set (judged on the model's own type claims).
fn check_type_failure(pred: &TargetObject, spec: &InstructionSpec) -> Option<bool> {
    if !spec.category.needs_types() {
        return None;
    }
    let instructed: Vec<String> = spec.types.as_ref()?.iter().map(|t| normalize_type(t)).collect();
    let failure = pred.entities.iter().any(|e| {
        !e.types.iter().any(|t| instructed.contains(&normalize_type(t)))
    });
    Some(failure)
}

/// Score a whole prediction file. Every prediction must reference a known
/// sample id; gold samples without a prediction score zero and count as
/// missing.
pub fn score_all(
    golds: &[GoldSample],
    preds: &[PredictionRecord],
    config: &EvalConfig,
) -> Result<(Vec<SampleScores>, usize), EvalError> {
    config.validate()?;
    let known: std::collections::HashSet<&str> = golds.iter().map(|g| g.sample_id.as_str()).collect();
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for pred in preds {
        if !known.contains(pred.sample_id.as_str()) {
            return Err(EvalError::UnknownSampleId(pred.sample_id.clone()));
        }
        by_id.insert(&pred.sample_id, &pred.raw_text);
    }
    let mut missing = 0usize;
    let scores = golds
        .iter()
        .map(|gold| {
            let text = by_id.get(gold.sample_id.as_str()).copied();
            if text.is_none() {
                missing += 1;
            }
            score_sample(gold, text, config)
        })
        .collect();
    Ok((scores, missing))
}

// --- aggregation -----------------------------------------------------------

/// Mean and population standard deviation across rephrasing runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

pub const PARTITION_OVERALL: &str = "overall";
pub const PARTITION_INSTR_SEEN: &str = "instr_seen";
pub const PARTITION_INSTR_UNSEEN: &str = "instr_unseen";
pub const PARTITION_ENTITY_SEEN: &str = "entity_seen";
pub const PARTITION_ENTITY_UNSEEN: &str = "entity_unseen";
pub const MACRO_CATEGORY: &str = "MacroAvg";

/// One report cell: task × instruction category × partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub category: String,
    pub partition: String,
    /// Samples averaged (or pooled gold items for entity partitions).
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub category: String,
    pub n: usize,
    pub json_error_rate: MeanStd,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub number_failure_rate: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub type_failure_rate: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: u32,
    pub missing_predictions: usize,
    pub rows: Vec<ReportRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
}

// Per-run cell values before cross-run dispersion.
#[derive(Debug, Clone, Default)]
struct CellValue {
    n: usize,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
}

type CellKey = (String, String, String);

fn task_names(config: &EvalConfig) -> Vec<String> {
    let mut tasks = vec!["MD".to_string()];
    for t in &config.title_thresholds {
        tasks.push(format!("EL(T={t})"));
    }
    tasks.extend(["ET", "OpenRE", "Desc", "Aliases"].map(String::from));
    tasks
}

struct PrfAcc {
    p: Vec<f64>,
    r: Vec<f64>,
    f: Vec<f64>,
}

impl PrfAcc {
    fn new() -> Self {
        PrfAcc { p: vec![], r: vec![], f: vec![] }
    }
    fn push(&mut self, prf: Prf) {
        self.p.push(prf.precision);
        self.r.push(prf.recall);
        self.f.push(prf.f1);
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn run_cells(scores: &[&SampleScores], config: &EvalConfig) -> BTreeMap<CellKey, CellValue> {
    let mut cells: BTreeMap<CellKey, CellValue> = BTreeMap::new();

    // Group samples by (category, sample-partition) and average per cell.
    let mut groups: BTreeMap<(String, String), Vec<&SampleScores>> = BTreeMap::new();
    for s in scores {
        let cat = s.category.name().to_string();
        groups.entry((cat.clone(), PARTITION_OVERALL.into())).or_default().push(s);
        if let Some(p) = s.instruction_partition {
            let key = match p {
                Partition::Seen => PARTITION_INSTR_SEEN,
                Partition::Unseen => PARTITION_INSTR_UNSEEN,
            };
            groups.entry((cat.clone(), key.into())).or_default().push(s);
        }
    }

    for ((category, partition), members) in &groups {
        let mut md = PrfAcc::new();
        let mut el: Vec<PrfAcc> = config.title_thresholds.iter().map(|_| PrfAcc::new()).collect();
        let mut et = PrfAcc::new();
        let mut openre = PrfAcc::new();
        let mut aliases = PrfAcc::new();
        let mut desc: Vec<f64> = Vec::new();
        for s in members {
            md.push(s.md);
            for (i, (_, prf)) in s.el.iter().enumerate() {
                el[i].push(*prf);
            }
            et.push(s.et);
            openre.push(s.openre);
            aliases.push(s.aliases);
            if let Some(d) = s.description {
                desc.push(d);
            }
        }
        let n = members.len();
        let mut put = |task: String, n: usize, acc: &PrfAcc| {
            cells.insert(
                (task, category.clone(), partition.clone()),
                CellValue {
                    n,
                    precision: Some(mean(&acc.p)),
                    recall: Some(mean(&acc.r)),
                    f1: Some(mean(&acc.f)),
                },
            );
        };
        put("MD".into(), n, &md);
        for (i, t) in config.title_thresholds.iter().enumerate() {
            put(format!("EL(T={t})"), n, &el[i]);
        }
        put("ET".into(), n, &et);
        put("OpenRE".into(), n, &openre);
        put("Aliases".into(), n, &aliases);
        if !desc.is_empty() {
            cells.insert(
                ("Desc".into(), category.clone(), partition.clone()),
                CellValue { n: desc.len(), precision: None, recall: None, f1: Some(mean(&desc)) },
            );
        }
    }

    // Entity-partition recall rows pool counts within each category.
    let mut pooled: BTreeMap<(String, String), PartitionCounts> = BTreeMap::new();
    for s in scores {
        let cat = s.category.name().to_string();
        let mut sets: Vec<(String, PartitionCounts)> = vec![
            ("MD".into(), s.md_recall),
            ("ET".into(), s.et_recall),
            ("Aliases".into(), s.aliases_recall),
            ("Desc".into(), s.desc_recall),
            ("OpenRE".into(), s.openre_recall),
        ];
        for (t, counts) in &s.el_recall {
            sets.push((format!("EL(T={t})"), *counts));
        }
        for (task, counts) in sets.drain(..) {
            pooled.entry((task, cat.clone())).or_default().merge(&counts);
        }
    }
    for ((task, category), total) in pooled {
        for (partition, name) in [
            (Partition::Seen, PARTITION_ENTITY_SEEN),
            (Partition::Unseen, PARTITION_ENTITY_UNSEEN),
        ] {
            if let Some(recall) = total.recall(partition) {
                let den = match partition {
                    Partition::Seen => total.seen_den,
                    Partition::Unseen => total.unseen_den,
                };
                cells.insert(
                    (task.clone(), category.clone(), name.into()),
                    CellValue { n: den.round() as usize, precision: None, recall: Some(recall), f1: None },
                );
            }
        }
    }

    // Macro rows: mean over category rows per (task, partition).
    let mut by_task_partition: BTreeMap<(String, String), Vec<CellValue>> = BTreeMap::new();
    for ((task, _category, partition), value) in &cells {
        by_task_partition
            .entry((task.clone(), partition.clone()))
            .or_default()
            .push(value.clone());
    }
    for ((task, partition), values) in by_task_partition {
        let component = |extract: fn(&CellValue) -> Option<f64>| {
            let vs: Vec<f64> = values.iter().filter_map(extract).collect();
            (!vs.is_empty()).then(|| mean(&vs))
        };
        let row = CellValue {
            n: values.iter().map(|v| v.n).sum(),
            precision: component(|v| v.precision),
            recall: component(|v| v.recall),
            f1: component(|v| v.f1),
        };
        cells.insert((task, MACRO_CATEGORY.into(), partition), row);
    }

    cells
}

/// Aggregate per-sample scores into the final report: per-run cells, then
/// mean ± population std across runs.
pub fn aggregate_report(scores: &[SampleScores], config: &EvalConfig, missing: usize) -> EvalReport {
    let mut runs: Vec<u32> = scores.iter().map(|s| s.run).collect();
    runs.sort_unstable();
    runs.dedup();
    if runs.is_empty() {
        runs.push(0);
    }

    let per_run: Vec<BTreeMap<CellKey, CellValue>> = runs
        .iter()
        .map(|&run| {
            let members: Vec<&SampleScores> = scores.iter().filter(|s| s.run == run).collect();
            run_cells(&members, config)
        })
        .collect();

    let mut keys: Vec<CellKey> = per_run.iter().flat_map(|m| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();

    let mut rows = Vec::with_capacity(keys.len());
    for key in keys {
        let values: Vec<&CellValue> = per_run.iter().filter_map(|m| m.get(&key)).collect();
        let collect = |extract: fn(&CellValue) -> Option<f64>| {
            let vs: Vec<f64> = values.iter().filter_map(|v| extract(v)).collect();
            (!vs.is_empty()).then(|| mean_std(&vs))
        };
        rows.push(ReportRow {
            task: key.0,
            category: key.1,
            partition: key.2,
            n: values.first().map_or(0, |v| v.n),
            precision: collect(|v| v.precision),
            recall: collect(|v| v.recall),
            f1: collect(|v| v.f1),
        });
    }
    sort_rows(&mut rows, config);

    let diagnostics = aggregate_diagnostics(scores, &runs);
    EvalReport { runs: runs.len() as u32, missing_predictions: missing, rows, diagnostics }
}

fn aggregate_diagnostics(scores: &[SampleScores], runs: &[u32]) -> Vec<DiagnosticsRow> {
    let mut categories: Vec<InstructionCategory> = scores.iter().map(|s| s.category).collect();
    categories.sort();
    categories.dedup();

    let mut rows = Vec::new();
    let mut macro_json: Vec<Vec<f64>> = Vec::new();
    let mut macro_number: Vec<Vec<f64>> = Vec::new();
    let mut macro_type: Vec<Vec<f64>> = Vec::new();
    for category in categories {
        let mut json_rates = Vec::new();
        let mut number_rates = Vec::new();
        let mut type_rates = Vec::new();
        let mut n = 0usize;
        for &run in runs {
            let members: Vec<&SampleScores> =
                scores.iter().filter(|s| s.category == category && s.run == run).collect();
            if members.is_empty() {
                continue;
            }
            n = members.len();
            json_rates.push(
                members.iter().filter(|s| s.json_error).count() as f64 / members.len() as f64,
            );
            let numbered: Vec<&&SampleScores> =
                members.iter().filter(|s| s.number_failure.is_some()).collect();
            if !numbered.is_empty() {
                number_rates.push(
                    numbered.iter().filter(|s| s.number_failure == Some(true)).count() as f64
                        / numbered.len() as f64,
                );
            }
            let typed: Vec<&&SampleScores> =
                members.iter().filter(|s| s.type_failure.is_some()).collect();
            if !typed.is_empty() {
                type_rates.push(
                    typed.iter().filter(|s| s.type_failure == Some(true)).count() as f64
                        / typed.len() as f64,
                );
            }
        }
        macro_json.push(json_rates.clone());
        if !number_rates.is_empty() {
            macro_number.push(number_rates.clone());
        }
        if !type_rates.is_empty() {
            macro_type.push(type_rates.clone());
        }
        rows.push(DiagnosticsRow {
            category: category.name().to_string(),
            n,
            json_error_rate: mean_std(&json_rates),
            number_failure_rate: (!number_rates.is_empty()).then(|| mean_std(&number_rates)),
            type_failure_rate: (!type_rates.is_empty()).then(|| mean_std(&type_rates)),
        });
    }
    if !rows.is_empty() {
        let total_n = rows.iter().map(|r| r.n).sum();
        let aggregate = |per_cat: &[Vec<f64>]| -> Vec<f64> {
            // Mean across categories within each run, then dispersion.
            let max_runs = per_cat.iter().map(Vec::len).max().unwrap_or(0);
            (0..max_runs)
                .map(|i| {
                    let vs: Vec<f64> = per_cat.iter().filter_map(|c| c.get(i).copied()).collect();
                    mean(&vs)
                })
                .collect()
        };
        rows.push(DiagnosticsRow {
            category: MACRO_CATEGORY.to_string(),
            n: total_n,
            json_error_rate: mean_std(&aggregate(&macro_json)),
            number_failure_rate: (!macro_number.is_empty()).then(|| mean_std(&aggregate(&macro_number))),
            type_failure_rate: (!macro_type.is_empty()).then(|| mean_std(&aggregate(&macro_type))),
        });
    }
    rows
}

fn sort_rows(rows: &mut [ReportRow], config: &EvalConfig) {
    let tasks = task_names(config);
    let task_idx = |t: &str| tasks.iter().position(|x| x == t).unwrap_or(usize::MAX);
    let partition_idx = |p: &str| {
        [
            PARTITION_OVERALL,
            PARTITION_INSTR_SEEN,
            PARTITION_INSTR_UNSEEN,
            PARTITION_ENTITY_SEEN,
            PARTITION_ENTITY_UNSEEN,
        ]
        .iter()
        .position(|x| *x == p)
        .unwrap_or(usize::MAX)
    };
    let category_idx = |c: &str| {
        if c == MACRO_CATEGORY {
            return usize::MAX;
        }
        InstructionCategory::ALL
            .iter()
            .position(|x| x.name() == c)
            .unwrap_or(usize::MAX - 1)
    };
    rows.sort_by_key(|r| (task_idx(&r.task), partition_idx(&r.partition), category_idx(&r.category)));
}

impl EvalReport {
    /// Internal consistency: rates in [0, 1] and macro rows equal to the
    /// mean of their category rows.
    pub fn validate(&self) -> Result<(), String> {
        let check_unit = |v: &MeanStd, what: &str| -> Result<(), String> {
            if !(0.0..=1.0 + 1e-12).contains(&v.mean) || v.std < 0.0 || v.std > 1.0 {
                return Err(format!("{what} out of range: {v:?}"));
            }
            Ok(())
        };
        for row in &self.rows {
            for (value, name) in [(&row.precision, "precision"), (&row.recall, "recall"), (&row.f1, "f1")] {
                if let Some(v) = value {
                    check_unit(v, &format!("{}/{}/{} {name}", row.task, row.category, row.partition))?;
                }
            }
        }
        for d in &self.diagnostics {
            check_unit(&d.json_error_rate, "json_error_rate")?;
            if let Some(v) = &d.number_failure_rate {
                check_unit(v, "number_failure_rate")?;
            }
            if let Some(v) = &d.type_failure_rate {
                check_unit(v, "type_failure_rate")?;
            }
        }
        // Macro rows must be the arithmetic mean of category rows.
        for macro_row in self.rows.iter().filter(|r| r.category == MACRO_CATEGORY) {
            let members: Vec<&ReportRow> = self
                .rows
                .iter()
                .filter(|r| r.task == macro_row.task && r.partition == macro_row.partition && r.category != MACRO_CATEGORY)
                .collect();
            let check = |extract: fn(&ReportRow) -> Option<MeanStd>, macro_v: Option<MeanStd>, name: &str| {
                let vs: Vec<f64> = members.iter().filter_map(|r| extract(r).map(|m| m.mean)).collect();
                match (vs.is_empty(), macro_v) {
                    (false, Some(m)) => {
                        let expect = mean(&vs);
                        if (m.mean - expect).abs() > 1e-9 {
                            return Err(format!(
                                "macro {name} mismatch for {}/{}: {} vs mean {}",
                                macro_row.task, macro_row.partition, m.mean, expect
                            ));
                        }
                        Ok(())
                    }
                    _ => Ok(()),
                }
            };
            check(|r| r.precision, macro_row.precision, "precision")?;
            check(|r| r.recall, macro_row.recall, "recall")?;
            check(|r| r.f1, macro_row.f1, "f1")?;
        }
        Ok(())
    }

    pub fn find(&self, task: &str, category: &str, partition: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.category == category && r.partition == partition)
    }
}
