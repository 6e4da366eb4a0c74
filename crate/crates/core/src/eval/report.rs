//! Rendering of an [`EvalReport`] to TSV (machine-readable, raw rates) and
//! Markdown (percent-scaled with subscript dispersion).

use super::{EvalReport, MeanStd, ReportRow, PARTITION_OVERALL};

fn tsv_value(v: &Option<MeanStd>) -> String {
    match v {
        Some(m) => format!("{:.6}\t{:.6}", m.mean, m.std),
        None => "\t".to_string(),
    }
}

/// One row per task × category × partition, raw rates in [0, 1].
pub fn to_tsv(report: &EvalReport) -> String {
    let mut out = String::from(
        "task\tcategory\tpartition\tn\tprecision\tprecision_std\trecall\trecall_std\tf1\tf1_std\n",
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.task,
            row.category,
            row.partition,
            row.n,
            tsv_value(&row.precision),
            tsv_value(&row.recall),
            tsv_value(&row.f1),
        ));
    }
    out
}

pub fn diagnostics_tsv(report: &EvalReport) -> String {
    let mut out = String::from(
        "category\tn\tjson_error_rate\tjson_error_std\tnumber_failure_rate\tnumber_failure_std\ttype_failure_rate\ttype_failure_std\n",
    );
    for d in &report.diagnostics {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            d.category,
            d.n,
            tsv_value(&Some(d.json_error_rate)),
            tsv_value(&d.number_failure_rate),
            tsv_value(&d.type_failure_rate),
        ));
    }
    out
}

/// Format `mean` (percent) with the dispersion as a subscript,
/// e.g. `82.3_{0.2}`.
fn pct(v: &MeanStd) -> String {
    format!("{:.1}_{{{:.1}}}", 100.0 * v.mean, 100.0 * v.std)
}

fn md_cell(v: &Option<MeanStd>) -> String {
    v.as_ref().map_or_else(|| "--".to_string(), pct)
}

fn pretty_category(category: &str) -> String {
    if category == super::MACRO_CATEGORY {
        "Macro Avg.".to_string()
    } else {
        category.to_string()
    }
}

/// Markdown tables: per task, overall P/R/F1 by instruction category, then
/// recall by entity partition, then any instruction-partition breakdown,
/// then the diagnostics table.
pub fn to_markdown(report: &EvalReport) -> String {
    let mut out = String::from("# Evaluation report\n");
    out.push_str(&format!(
        "\n{} rephrasing run(s); {} missing prediction(s). Values are percentages with dispersion across runs as subscripts.\n",
        report.runs, report.missing_predictions
    ));

    let mut tasks: Vec<&str> = Vec::new();
    for row in &report.rows {
        if !tasks.contains(&row.task.as_str()) {
            tasks.push(&row.task);
        }
    }

    for task in tasks {
        let overall: Vec<&ReportRow> = report
            .rows
            .iter()
            .filter(|r| r.task == task && r.partition == PARTITION_OVERALL)
            .collect();
        if overall.is_empty() {
            continue;
        }
        out.push_str(&format!("\n## {task}\n\n"));
        out.push_str("| Instruction | P | R | F1 |\n|---|---|---|---|\n");
        for row in &overall {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                pretty_category(&row.category),
                md_cell(&row.precision),
                md_cell(&row.recall),
                md_cell(&row.f1),
            ));
        }

        let entity_rows: Vec<&ReportRow> = report
            .rows
            .iter()
            .filter(|r| r.task == task && r.partition.starts_with("entity_"))
            .collect();
        if !entity_rows.is_empty() {
            out.push_str(&format!("\n### {task} recall by entity partition\n\n"));
            out.push_str("| Instruction | seen | unseen |\n|---|---|---|\n");
            let mut categories: Vec<&str> = Vec::new();
            for r in &entity_rows {
                if !categories.contains(&r.category.as_str()) {
                    categories.push(&r.category);
                }
            }
            for category in categories {
                let cell = |partition: &str| {
                    entity_rows
                        .iter()
                        .find(|r| r.category == category && r.partition == partition)
                        .map_or("--".to_string(), |r| md_cell(&r.recall))
                };
                out.push_str(&format!(
                    "| {} | {} | {} |\n",
                    pretty_category(category),
                    cell(super::PARTITION_ENTITY_SEEN),
                    cell(super::PARTITION_ENTITY_UNSEEN),
                ));
            }
        }

        let instr_rows: Vec<&ReportRow> = report
            .rows
            .iter()
            .filter(|r| r.task == task && r.partition.starts_with("instr_"))
            .collect();
        if !instr_rows.is_empty() {
            out.push_str(&format!("\n### {task} by instruction partition\n\n"));
            out.push_str("| Instruction | Partition | P | R | F1 |\n|---|---|---|---|---|\n");
            for row in &instr_rows {
                let partition = row.partition.trim_start_matches("instr_");
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    pretty_category(&row.category),
                    partition,
                    md_cell(&row.precision),
                    md_cell(&row.recall),
                    md_cell(&row.f1),
                ));
            }
        }
    }

    if !report.diagnostics.is_empty() {
        out.push_str("\n## Instruction-following diagnostics\n\n");
        out.push_str("| Instruction | JSON error | Number failure | Type failure |\n|---|---|---|---|\n");
        for d in &report.diagnostics {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                pretty_category(&d.category),
                pct(&d.json_error_rate),
                md_cell(&d.number_failure_rate),
                md_cell(&d.type_failure_rate),
            ));
        }
    }
    out
}
