//! Acceptance criterion 9: ingesting a 100,000-line dump with a small qid
//! allowlist keeps resident memory under the budget declared in
//! `ci/acceptance.toml`, independent of line count.
//!
//! Lives in its own test binary so the counting allocator sees only this
//! workload.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::HashSet;
use std::io::{BufWriter, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use forge_core::wikidata::{parse_wikidata_dump, IngestConfig};

struct CountingAllocator;

static ALLOCATED: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = unsafe { System.alloc(layout) };
        if !ptr.is_null() {
            let now = ALLOCATED.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        ALLOCATED.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

fn reset_peak() -> usize {
    let now = ALLOCATED.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

fn peak_growth(baseline: usize) -> usize {
    PEAK.load(Ordering::Relaxed).saturating_sub(baseline)
}

#[derive(serde::Deserialize)]
struct Budgets {
    streaming: Streaming,
}

#[derive(serde::Deserialize)]
struct Streaming {
    lines: usize,
    allowlist_size: usize,
    memory_budget_bytes: usize,
    independence_slack_bytes: usize,
}

fn write_synthetic_dump(path: &std::path::Path, lines: usize) {
    let file = std::fs::File::create(path).unwrap();
    let mut out = BufWriter::new(file);
    writeln!(out, "[").unwrap();
    for i in 1..=lines {
        writeln!(
            out,
            r#"{{"type":"item","id":"Q{i}","labels":{{"en":{{"language":"en","value":"entity number {i} with a reasonably long label"}}}},"descriptions":{{"en":{{"value":"synthetic description text for entity {i}, padded with details about its place in the dump"}}}},"aliases":{{"en":[{{"value":"alias {i}a"}},{{"value":"alias {i}b"}}]}},"claims":{{"P31":[{{"mainsnak":{{"snaktype":"value","property":"P31","datavalue":{{"value":{{"entity-type":"item","id":"Q{t}"}},"type":"wikibase-entityid"}}}}}}],"P17":[{{"mainsnak":{{"snaktype":"value","property":"P17","datavalue":{{"value":{{"entity-type":"item","id":"Q183"}},"type":"wikibase-entityid"}}}}}}]}},"sitelinks":{{"enwiki":{{"site":"enwiki","title":"Entity {i}"}},"dewiki":{{"site":"dewiki","title":"Entität {i}"}}}}}},"#,
            i = i,
            t = (i % 50) + 1,
        )
        .unwrap();
    }
    writeln!(out, "]").unwrap();
    out.flush().unwrap();
}

fn parse_with_allowlist(path: &std::path::Path, allowlist: &HashSet<String>) -> usize {
    let reader = forge_core::jsonl::open_input(path).unwrap();
    let (ontology, report) =
        parse_wikidata_dump(reader, Some(allowlist), &IngestConfig::default()).unwrap();
    assert_eq!(ontology.entities.len(), allowlist.len());
    assert!(report.skips.is_empty());
    ontology.entities.len()
}

#[test]
fn criterion_09_streaming_memory_bound() {
    let budgets: Budgets = toml::from_str(include_str!("../../../ci/acceptance.toml")).unwrap();
    let cfg = budgets.streaming;

    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("dump_small.jsonl");
    let large = dir.path().join("dump_large.jsonl");
    write_synthetic_dump(&small, cfg.lines / 5);
    write_synthetic_dump(&large, cfg.lines);

    // Allowlist of 100 qids spread across the whole dump.
    let step = cfg.lines / cfg.allowlist_size;
    let allowlist: HashSet<String> = (1..=cfg.allowlist_size).map(|i| format!("Q{}", i * step)).collect();
    let small_allowlist: HashSet<String> =
        (1..=cfg.allowlist_size).map(|i| format!("Q{}", i * step / 5)).collect();

    let baseline_small = reset_peak();
    parse_with_allowlist(&small, &small_allowlist);
    let small_growth = peak_growth(baseline_small);

    let baseline_large = reset_peak();
    parse_with_allowlist(&large, &allowlist);
    let large_growth = peak_growth(baseline_large);

    println!(
        "acceptance 09 streaming-memory: peak growth {large_growth} bytes over {} lines \
         ({small_growth} bytes over {} lines), budget {}",
        cfg.lines,
        cfg.lines / 5,
        cfg.memory_budget_bytes
    );
    assert!(
        large_growth < cfg.memory_budget_bytes,
        "peak allocator growth {large_growth} exceeds budget {}",
        cfg.memory_budget_bytes
    );
    assert!(
        large_growth <= small_growth + cfg.independence_slack_bytes,
        "growth scaled with line count: {small_growth} -> {large_growth}"
    );
    println!("acceptance 09 streaming-memory-bound: PASS");
}
