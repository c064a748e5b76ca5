use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::retrieval::RecallSummary;
use crate::store::{read_json, write_json};
use crate::train::TrainReport;

use super::{Pipeline, PipelineConfig, PipelineError, RunReport, Variant, WorkspaceLock, REPORT, TRAIN_REPORT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<RecallSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout: Option<RecallSummary>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_steps: usize,
}

/// Runs the full pipeline once per distinct variant and returns one row per requested variant.
///
/// Each variant gets its own workspace under `<workspace>/variants/`; all of them share the
/// base workspace's embedding cache. The rows are also written to `<workspace>/comparison.json`.
pub fn compare(base: &PipelineConfig, variants: &[Variant]) -> Result<Vec<ComparisonRow>, PipelineError> {
    if variants.is_empty() {
        return Err(PipelineError::Config { field: "strategies".into(), message: "no variants given".into() });
    }
    std::fs::create_dir_all(&base.workspace).map_err(|source| crate::store::StoreError::Io {
        path: base.workspace.display().to_string(),
        source,
    })?;
    let _lock = WorkspaceLock::acquire(&base.workspace)?;
    let mut done: BTreeMap<Variant, ComparisonRow> = BTreeMap::new();
    for &v in variants {
        if done.contains_key(&v) {
            continue;
        }
        let mut cfg = base.with_variant(v);
        cfg.workspace = base.workspace.join("variants").join(v.to_string());
        if cfg.embedding.cache_dir.is_none() {
            cfg.embedding.cache_dir = Some(base.workspace.join("embedding_cache"));
        }
        tracing::info!(variant = %v, "running variant");
        let mut pipeline = Pipeline::open(cfg)?;
        pipeline.run_all()?;
        let report: RunReport = read_json(&pipeline.path(REPORT))?;
        let train: TrainReport = read_json(&pipeline.path(TRAIN_REPORT))?;
        done.insert(
            v,
            ComparisonRow {
                variant: v.to_string(),
                gold: report.gold.map(|r| r.overall),
                heldout: report.heldout.map(|r| r.overall),
                initial_loss: train.initial_loss,
                final_loss: train.final_loss,
                train_steps: train.steps,
            },
        );
    }
    let rows: Vec<ComparisonRow> = variants.iter().map(|v| done[v].clone()).collect();
    write_json(&base.workspace.join("comparison.json"), &rows)?;
    Ok(rows)
}

fn recall_cells(summary: Option<&RecallSummary>, ks: &[usize]) -> String {
    ks.iter()
        .map(|&k| match summary.and_then(|s| s.at(k)) {
            Some(r) => format!("{r:>7.2}"),
            None => format!("{:>7}", "-"),
        })
        .collect()
}

/// Plain-text table of recall figures, one line per row.
pub fn format_comparison(rows: &[ComparisonRow], ks: &[usize]) -> String {
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    let heads: String = ks.iter().map(|k| format!("{:>7}", format!("R@{k}"))).collect();
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  gold{heads}  heldout{heads}  loss", "variant", width = width);
    for r in rows {
        let loss = if r.train_steps > 0 {
            format!("{:.4} -> {:.4}", r.initial_loss, r.final_loss)
        } else {
            "-".to_string()
        };
        let _ = writeln!(
            out,
            "{:<width$}      {}         {}  {loss}",
            r.variant,
            recall_cells(r.gold.as_ref(), ks),
            recall_cells(r.heldout.as_ref(), ks),
            width = width
        );
    }
    out
}
