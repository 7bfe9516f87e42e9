//! Evaluation reports: run inference over a dataset, score it, and emit a
//! structured JSON document plus an aligned plain-text table with the
//! full / Rare / Non-Rare columns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{infer, HoiModel, InferSettings};
use crate::hoieval::{evaluate, EvalReport, SplitTable};
use crate::pipeline::config::RunConfig;
use crate::pipeline::dataset::Dataset;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Matching threshold of the evaluation protocol.
pub const EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedClassResult {
    pub object: String,
    pub verb: String,
    pub training_count: u32,
    pub gt_count: usize,
    pub predictions: usize,
    pub ap: Option<f64>,
}

/// The structured report written by evaluation runs. Embeds the exact
/// configuration the checkpoint was trained with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: RunConfig,
    pub scenes: usize,
    pub map_full: Option<f64>,
    pub map_rare: Option<f64>,
    pub map_non_rare: Option<f64>,
    pub per_class: Vec<NamedClassResult>,
}

/// Run inference over every scene and score against its ground truth.
pub fn evaluate_dataset(
    model: &HoiModel,
    data: &Dataset,
    settings: &InferSettings,
    splits: &SplitTable,
) -> Result<EvalReport> {
    if model.vocab != data.vocab {
        return Err(Error::Compatibility(
            "checkpoint and dataset vocabularies differ".into(),
        ));
    }
    let mut predictions = Vec::with_capacity(data.scenes.len());
    let mut ground_truth = Vec::with_capacity(data.scenes.len());
    for scene in &data.scenes {
        predictions.push(infer(model, scene, settings)?);
        ground_truth.push(scene.ground_truth.clone());
    }
    evaluate(
        &predictions,
        &ground_truth,
        splits,
        data.vocab.num_objects(),
        data.vocab.num_verbs(),
        EVAL_IOU,
    )
}

pub fn build_run_report(
    eval: &EvalReport,
    config: &RunConfig,
    data: &Dataset,
) -> RunReport {
    RunReport {
        format_version: REPORT_FORMAT_VERSION,
        config: config.clone(),
        scenes: data.scenes.len(),
        map_full: eval.map_full,
        map_rare: eval.map_rare,
        map_non_rare: eval.map_non_rare,
        per_class: eval
            .per_class
            .iter()
            .map(|c| NamedClassResult {
                object: data.vocab.objects[c.class.object].clone(),
                verb: data.vocab.verbs[c.class.verb].clone(),
                training_count: c.training_count,
                gt_count: c.gt_count,
                predictions: c.predictions,
                ap: c.ap,
            })
            .collect(),
    }
}

fn percent(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "-".to_string(),
    }
}

/// Aligned plain-text table with the three mAP columns.
pub fn render_table(report: &RunReport) -> String {
    let header = format!(
        "{:<12} {:>12} {:>12} {:>16}",
        "setting", "full(mAP%)", "Rare(mAP%)", "Non-Rare(mAP%)"
    );
    let row = format!(
        "{:<12} {:>12} {:>12} {:>16}",
        "default",
        percent(report.map_full),
        percent(report.map_rare),
        percent(report.map_non_rare)
    );
    format!("{header}\n{row}\n")
}

pub fn report_to_json(report: &RunReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Io(std::io::Error::other(e)))
}

pub fn save_report(report: &RunReport, path: &Path) -> Result<()> {
    let mut text = report_to_json(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
