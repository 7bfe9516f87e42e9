//! Detection-style HOI evaluation: dual-IoU matching, all-points
//! interpolated average precision per interaction class, and mean AP over
//! the full, rare, and non-rare splits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphrep::{BBox, GroundTruthHoi};
use crate::head::Prediction;

/// An interaction class: an object label paired with a verb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HoiClass {
    pub object: usize,
    pub verb: usize,
}

/// Classes below this many training instances count as rare.
pub const RARE_CUTOFF: u32 = 10;

/// The evaluated class list with per-class training-instance counts.
/// Classes with fewer than [`RARE_CUTOFF`] instances form the rare split.
#[derive(Debug, Clone, Default)]
pub struct SplitTable {
    counts: BTreeMap<HoiClass, u32>,
}

impl SplitTable {
    pub fn new(counts: BTreeMap<HoiClass, u32>) -> Self {
        SplitTable { counts }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (HoiClass, u32)>) -> Self {
        SplitTable {
            counts: entries.into_iter().collect(),
        }
    }

    pub fn contains(&self, class: &HoiClass) -> bool {
        self.counts.contains_key(class)
    }

    pub fn is_rare(&self, class: &HoiClass) -> Option<bool> {
        self.counts.get(class).map(|&c| c < RARE_CUTOFF)
    }

    pub fn classes(&self) -> impl Iterator<Item = (&HoiClass, &u32)> {
        self.counts.iter()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Average precision and bookkeeping for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: HoiClass,
    pub training_count: u32,
    pub gt_count: usize,
    pub predictions: usize,
    /// None when the class had neither ground truth nor predictions.
    pub ap: Option<f64>,
}

/// Per-class APs plus the three split means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassResult>,
    pub map_full: Option<f64>,
    pub map_rare: Option<f64>,
    pub map_non_rare: Option<f64>,
}

/// Intersection over union of two boxes; both must be non-degenerate.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.iou(b))
}

/// All-points interpolated average precision over a ranked prediction list.
///
/// `ranked` holds `(score, is_true_positive)` sorted by descending score.
/// With no ground truth the class scores 0 if anything was predicted, and
/// is excluded (None) if nothing was.
pub fn average_precision(ranked: &[(f64, bool)], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return if ranked.is_empty() { None } else { Some(0.0) };
    }
    if ranked.is_empty() {
        return Some(0.0);
    }
    // Precision at each rank, walked backwards under a running max; every
    // true positive contributes that max times its 1/gt recall step.
    let mut tp = 0usize;
    let mut precisions = Vec::with_capacity(ranked.len());
    for (rank, (_, is_tp)) in ranked.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
    }
    let mut max_prec = 0.0f64;
    let mut ap = 0.0;
    for (rank, (_, is_tp)) in ranked.iter().enumerate().rev() {
        max_prec = max_prec.max(precisions[rank]);
        if *is_tp {
            ap += max_prec / gt_count as f64;
        }
    }
    Some(ap)
}

/// Ground truth of one image, as (class, human box, object box) instances.
/// A multi-verb annotation expands into one instance per verb.
fn expand_gt(gts: &[GroundTruthHoi]) -> Vec<(HoiClass, BBox, BBox)> {
    let mut out = Vec::new();
    for gt in gts {
        for &verb in &gt.verbs {
            out.push((
                HoiClass { object: gt.object_label, verb },
                gt.human_box,
                gt.object_box,
            ));
        }
    }
    out
}

/// Evaluate pooled predictions against ground truth.
///
/// Per class, predictions from every image are ranked together by score;
/// each prediction greedily claims the unmatched same-image ground truth
/// maximizing `min(IoU_human, IoU_object)` among those where both IoUs
/// exceed the threshold. Predictions whose ids fall outside the vocab are
/// an error; valid combinations missing from the class list are skipped
/// (they are not evaluated classes). Classes with neither ground truth nor
/// predictions drop out of the means.
pub fn evaluate(
    predictions: &[Vec<Prediction>],
    ground_truth: &[Vec<GroundTruthHoi>],
    splits: &SplitTable,
    num_objects: usize,
    num_verbs: usize,
    iou_threshold: f64,
) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Dataset(format!(
            "{} prediction lists vs {} ground-truth lists",
            predictions.len(),
            ground_truth.len()
        )));
    }
    for (img, preds) in predictions.iter().enumerate() {
        for p in preds {
            if p.object_label >= num_objects || p.verb >= num_verbs {
                return Err(Error::Vocab(format!(
                    "image {img}: prediction references unknown class ({}, {})",
                    p.object_label, p.verb
                )));
            }
        }
    }

    // Pool predictions and ground truth per class, keeping image ids.
    let mut preds_by_class: BTreeMap<HoiClass, Vec<(usize, f64, BBox, BBox)>> = BTreeMap::new();
    for (img, preds) in predictions.iter().enumerate() {
        for p in preds {
            let class = HoiClass { object: p.object_label, verb: p.verb };
            if !splits.contains(&class) {
                continue;
            }
            preds_by_class
                .entry(class)
                .or_default()
                .push((img, p.score, p.human_box, p.object_box));
        }
    }
    let mut gt_by_class: BTreeMap<HoiClass, Vec<(usize, BBox, BBox)>> = BTreeMap::new();
    for (img, gts) in ground_truth.iter().enumerate() {
        for (class, hb, ob) in expand_gt(gts) {
            if !splits.contains(&class) {
                return Err(Error::Vocab(format!(
                    "image {img}: ground truth class ({}, {}) missing from the class list",
                    class.object, class.verb
                )));
            }
            gt_by_class.entry(class).or_default().push((img, hb, ob));
        }
    }

    let mut per_class = Vec::with_capacity(splits.len());
    for (&class, &training_count) in splits.classes() {
        let mut preds = preds_by_class.remove(&class).unwrap_or_default();
        let gts = gt_by_class.remove(&class).unwrap_or_default();
        // Stable by descending score: ties keep pooling order.
        preds.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));

        let mut claimed = vec![false; gts.len()];
        let mut ranked = Vec::with_capacity(preds.len());
        for (img, score, hb, ob) in &preds {
            let mut best: Option<(usize, f64)> = None;
            for (gi, (gt_img, ghb, gob)) in gts.iter().enumerate() {
                if claimed[gi] || gt_img != img {
                    continue;
                }
                let ih = hb.iou(ghb);
                let io = ob.iou(gob);
                if ih > iou_threshold && io > iou_threshold {
                    let quality = ih.min(io);
                    if best.map(|(_, q)| quality > q).unwrap_or(true) {
                        best = Some((gi, quality));
                    }
                }
            }
            match best {
                Some((gi, _)) => {
                    claimed[gi] = true;
                    ranked.push((*score, true));
                }
                None => ranked.push((*score, false)),
            }
        }
        per_class.push(ClassResult {
            class,
            training_count,
            gt_count: gts.len(),
            predictions: ranked.len(),
            ap: average_precision(&ranked, gts.len()),
        });
    }

    let mean_of = |keep: &dyn Fn(&ClassResult) -> bool| -> Option<f64> {
        let aps: Vec<f64> = per_class
            .iter()
            .filter(|c| keep(c))
            .filter_map(|c| c.ap)
            .collect();
        if aps.is_empty() {
            None
        } else {
            Some(aps.iter().sum::<f64>() / aps.len() as f64)
        }
    };
    let map_full = mean_of(&|_| true);
    let map_rare = mean_of(&|c| c.training_count < RARE_CUTOFF);
    let map_non_rare = mean_of(&|c| c.training_count >= RARE_CUTOFF);

    Ok(EvalReport {
        per_class,
        map_full,
        map_rare,
        map_non_rare,
    })
}
