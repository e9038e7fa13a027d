//! Pixel metrics, segmentation losses and object-level detection counts.
//!
//! Degenerate cases never produce NaN: when prediction and ground truth are
//! both empty every ratio is 1; otherwise an empty denominator gives 0.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::DepressionComponent;
use crate::raster::BinaryMask;
use crate::segmenter::ProbabilityMask;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;
/// Additive smoothing in the Dice ratio, in pixels.
pub const DICE_SMOOTH: f64 = 1.0;

/// IoU thresholds 0.1, 0.2, ..., 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|k| f64::from(k) / 10.0).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelConfusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PixelConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn swapped(&self) -> PixelConfusion {
        PixelConfusion {
            tp: self.tp,
            tn: self.tn,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

impl std::ops::Add for PixelConfusion {
    type Output = PixelConfusion;

    fn add(self, o: PixelConfusion) -> PixelConfusion {
        PixelConfusion {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Count agreement between `pred` and `gt`, skipping pixels set in `ignore`.
pub fn pixel_confusion(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&BinaryMask>,
) -> Result<PixelConfusion> {
    if !pred.same_shape(gt) || ignore.is_some_and(|m| !m.same_shape(gt)) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{}, ground truth {}x{}{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
            ignore
                .map(|m| format!(", ignore {}x{}", m.width(), m.height()))
                .unwrap_or_default()
        )));
    }
    let mut c = PixelConfusion::default();
    for i in 0..gt.len() {
        if ignore.is_some_and(|m| m.bits()[i]) {
            continue;
        }
        match (pred.bits()[i], gt.bits()[i]) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub iou_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub pixel_confusion: PixelConfusion,
    pub detection: Vec<DetectionRow>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Pixel-level part of the report; `detection` is left empty.
pub fn metrics_from_confusion(c: PixelConfusion) -> MetricsReport {
    let accuracy = if c.total() == 0 {
        1.0
    } else {
        ratio(c.tp + c.tn, c.total())
    };
    let (precision, recall, f1, iou) = if c.tp + c.fp + c.fn_ == 0 {
        (1.0, 1.0, 1.0, 1.0)
    } else {
        let p = ratio(c.tp, c.tp + c.fp);
        let r = ratio(c.tp, c.tp + c.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1, ratio(c.tp, c.tp + c.fp + c.fn_))
    };
    MetricsReport {
        f1,
        iou,
        precision,
        recall,
        accuracy,
        pixel_confusion: c,
        detection: Vec::new(),
    }
}

impl MetricsReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_pretty()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Column headers of the results table, model and prompt source first.
pub const TABLE_COLUMNS: [&str; 7] = [
    "Model", "Prompts Source", "F1 (%)", "IoU (%)", "Pre. (%)", "Rec. (%)", "Acc. (%)",
];

/// Results-table rows as CSV: one header line, then one row per run with
/// percentages to two decimals.
pub fn write_table_csv<W: std::io::Write>(
    writer: W,
    rows: &[(&str, &str, &MetricsReport)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_COLUMNS)?;
    for (model, prompts, m) in rows {
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        w.write_record([
            model.to_string(),
            prompts.to_string(),
            pct(m.f1),
            pct(m.iou),
            pct(m.precision),
            pct(m.recall),
            pct(m.accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Result of matching predicted objects to ground-truth objects.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMatch {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// (prediction index, ground-truth index, IoU), in match order.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Every (pred, gt, IoU) with positive overlap, sorted by descending IoU,
/// then prediction index, then ground-truth index.
pub fn candidate_pairs(pred: &[DepressionComponent], gt: &[DepressionComponent]) -> Vec<(usize, usize, f64)> {
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (g, comp) in gt.iter().enumerate() {
        for &px in &comp.pixels {
            owner.insert(px, g);
        }
    }
    let mut pairs = Vec::new();
    for (p, comp) in pred.iter().enumerate() {
        let mut inter: HashMap<usize, usize> = HashMap::new();
        for px in &comp.pixels {
            if let Some(&g) = owner.get(px) {
                *inter.entry(g).or_default() += 1;
            }
        }
        for (g, n) in inter {
            let union = comp.area_px + gt[g].area_px - n;
            pairs.push((p, g, n as f64 / union as f64));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    pairs
}

fn greedy_match(
    candidates: &[(usize, usize, f64)],
    n_pred: usize,
    n_gt: usize,
    iou_threshold: f64,
) -> ObjectMatch {
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut pairs = Vec::new();
    for &(p, g, iou) in candidates.iter().take_while(|c| c.2 >= iou_threshold) {
        if !pred_used[p] && !gt_used[g] {
            pred_used[p] = true;
            gt_used[g] = true;
            pairs.push((p, g, iou));
        }
    }
    ObjectMatch {
        tp: pairs.len(),
        fp: n_pred - pairs.len(),
        fn_: n_gt - pairs.len(),
        pairs,
    }
}

/// One-to-one matching: pairs with IoU >= `iou_threshold` are taken greedily
/// in descending IoU order.
pub fn object_match(
    pred: &[DepressionComponent],
    gt: &[DepressionComponent],
    iou_threshold: f64,
) -> ObjectMatch {
    greedy_match(&candidate_pairs(pred, gt), pred.len(), gt.len(), iou_threshold)
}

/// [`object_match`] at each threshold, sharing the pairwise IoU computation.
pub fn detection_curve(
    pred: &[DepressionComponent],
    gt: &[DepressionComponent],
    thresholds: &[f64],
) -> Vec<DetectionRow> {
    let candidates = candidate_pairs(pred, gt);
    thresholds
        .iter()
        .map(|&t| {
            let m = greedy_match(&candidates, pred.len(), gt.len(), t);
            DetectionRow {
                iou_threshold: t,
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub bce: f64,
    pub dice: f64,
    pub total: f64,
}

fn check_loss_shapes(probs: &ProbabilityMask, gt: &BinaryMask) -> Result<()> {
    if probs.width() != gt.width() || probs.height() != gt.height() {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {}x{}, ground truth {}x{}",
            probs.width(),
            probs.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy.
pub fn bce_loss(probs: &ProbabilityMask, gt: &BinaryMask) -> Result<f64> {
    check_loss_shapes(probs, gt)?;
    let sum: f64 = probs
        .probs()
        .iter()
        .zip(gt.bits())
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / probs.probs().len() as f64)
}

/// `1 - (2 sum(p y) + s) / (sum(p) + sum(y) + s)`.
pub fn dice_loss(probs: &ProbabilityMask, gt: &BinaryMask) -> Result<f64> {
    check_loss_shapes(probs, gt)?;
    let (mut inter, mut sum_p, mut sum_y) = (0.0, 0.0, 0.0);
    for (&p, &y) in probs.probs().iter().zip(gt.bits()) {
        sum_p += p;
        if y {
            inter += p;
            sum_y += 1.0;
        }
    }
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (sum_p + sum_y + DICE_SMOOTH))
}

/// BCE plus Dice.
pub fn segmentation_loss(probs: &ProbabilityMask, gt: &BinaryMask) -> Result<LossValue> {
    let bce = bce_loss(probs, gt)?;
    let dice = dice_loss(probs, gt)?;
    Ok(LossValue {
        bce,
        dice,
        total: bce + dice,
    })
}
