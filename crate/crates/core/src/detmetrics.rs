//! COCO-style bounding-box evaluation.
//!
//! Conventions: greedy score-ordered matching, at most [`MAX_DETS`]
//! predictions per image and class, 101-point interpolated AP, IoU thresholds
//! 0.50:0.05:0.95, and area buckets split at 32² and 96² pixels. Crowd
//! annotations are excluded from evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::AnnotationSet;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::imagecore::{FloatImage, Image};
use crate::stabilize::{channel_means, channel_means_float, ChannelStats};

pub const MAX_DETS: usize = 100;
pub const RECALL_POINTS: usize = 101;
pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_AREA: f64 = 96.0 * 96.0;

/// `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];

    pub fn contains(self, area: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < SMALL_AREA,
            AreaRange::Medium => (SMALL_AREA..MEDIUM_AREA).contains(&area),
            AreaRange::Large => area >= MEDIUM_AREA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// Scored predictions in the COCO detection-results format.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionSet {
    pub predictions: Vec<Detection>,
}

impl DetectionSet {
    /// Checks that every prediction resolves against `gt` and has a finite score.
    pub fn validate_against(&self, gt: &AnnotationSet) -> Result<()> {
        let images: HashSet<u64> = gt.images.iter().map(|i| i.id).collect();
        let cats: HashSet<u64> = gt.categories.iter().map(|c| c.id).collect();
        for (i, d) in self.predictions.iter().enumerate() {
            if !images.contains(&d.image_id) {
                return Err(Error::Integrity(format!("prediction {i} references unknown image {}", d.image_id)));
            }
            if !cats.contains(&d.category_id) {
                return Err(Error::Integrity(format!(
                    "prediction {i} references unknown category {}",
                    d.category_id
                )));
            }
            if !d.score.is_finite() {
                return Err(Error::Integrity(format!("prediction {i} has non-finite score")));
            }
            let b = d.bbox;
            if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
                return Err(Error::Integrity(format!("prediction {i} has a non-finite bbox")));
            }
        }
        Ok(())
    }
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::MalformedAnnotations {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    match a.intersect(b) {
        Some(i) => {
            let inter = i.area();
            inter / (a.area() + b.area() - inter)
        }
        None => 0.0,
    }
}

/// Outcome for one prediction, reported in descending-score order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    /// Index into the prediction slice that was passed in.
    pub pred: usize,
    pub score: f64,
    /// Index of the matched ground-truth box, if any.
    pub gt: Option<usize>,
}

impl Match {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

#[derive(Clone, Copy, Debug)]
struct GtEntry {
    bbox: BBox,
    ignore: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Indices of `scores` in descending order; equal scores keep input order.
/// Truncated to `MAX_DETS`.
fn ranked(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(MAX_DETS);
    order
}

/// Greedy matching of ranked predictions. Returns, per ranked prediction, the
/// matched gt index. Non-ignored ground truth is preferred over ignored; among
/// equally good candidates the earliest one wins.
fn greedy_match(gts: &[GtEntry], preds: &[BBox], order: &[usize], iou_thr: f64) -> Vec<Option<usize>> {
    // non-ignored first, stable
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| gts[g].ignore);
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&p| {
            let mut best: Option<(usize, f64)> = None;
            for &g in &gt_order {
                if taken[g] {
                    continue;
                }
                if let Some((b, _)) = best {
                    if !gts[b].ignore && gts[g].ignore {
                        break;
                    }
                }
                let overlap = iou(&preds[p], &gts[g].bbox);
                let better = match best {
                    None => overlap >= iou_thr,
                    Some((_, best_iou)) => overlap > best_iou,
                };
                if better {
                    best = Some((g, overlap));
                }
            }
            let m = best.map(|(g, _)| g);
            if let Some(g) = m {
                taken[g] = true;
            }
            m
        })
        .collect()
}

/// Matches scored predictions against the ground truth of one image and class.
pub fn match_predictions(gt: &[BBox], preds: &[(BBox, f64)], iou_thr: f64) -> Vec<Match> {
    let gts: Vec<GtEntry> = gt.iter().map(|&bbox| GtEntry { bbox, ignore: false }).collect();
    let boxes: Vec<BBox> = preds.iter().map(|p| p.0).collect();
    let order = ranked(preds.iter().map(|p| p.1));
    greedy_match(&gts, &boxes, &order, iou_thr)
        .into_iter()
        .zip(&order)
        .map(|(gt, &pred)| Match {
            pred,
            score: preds[pred].1,
            gt,
        })
        .collect()
}

/// 101-point interpolated AP from TP/FP flags in descending-score order.
///
/// Returns `None` when `num_gt == 0`.
pub fn average_precision(tp: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp_cum = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        tp_cum.push(hits);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // recall_k >= i/100  <=>  100 * tp_k >= i * num_gt; compared in integers
    let mut sum = 0.0;
    let mut k = 0;
    for i in 0..RECALL_POINTS {
        while k < tp_cum.len() && 100 * tp_cum[k] < i * num_gt {
            k += 1;
        }
        if k == tp_cum.len() {
            break;
        }
        sum += precision[k];
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub category_id: u64,
    pub name: String,
    /// `None` when the class has no non-crowd ground truth.
    pub ap: Option<f64>,
}

/// Evaluation result with values in `[0,1]`; `None` marks undefined metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub per_class: Vec<ClassAp>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

struct ImageClassData {
    gts: Vec<(BBox, f64)>,
    /// Already ranked and capped.
    dets: Vec<(BBox, f64)>,
}

/// AP of one class, one area range, one IoU threshold.
fn class_ap(per_image: &[ImageClassData], range: AreaRange, thr: f64) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut num_gt = 0;
    for data in per_image {
        let gts: Vec<GtEntry> = data
            .gts
            .iter()
            .map(|&(bbox, area)| GtEntry {
                bbox,
                ignore: !range.contains(area),
            })
            .collect();
        num_gt += gts.iter().filter(|g| !g.ignore).count();
        let boxes: Vec<BBox> = data.dets.iter().map(|d| d.0).collect();
        let order: Vec<usize> = (0..boxes.len()).collect();
        let matches = greedy_match(&gts, &boxes, &order, thr);
        for (d, m) in matches.into_iter().enumerate() {
            let outcome = match m {
                Some(g) if gts[g].ignore => Outcome::Ignored,
                Some(_) => Outcome::Tp,
                None if !range.contains(boxes[d].area()) => Outcome::Ignored,
                None => Outcome::Fp,
            };
            if outcome != Outcome::Ignored {
                scored.push((data.dets[d].1, outcome == Outcome::Tp));
            }
        }
    }
    // stable: ties keep image order, then within-image rank
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let tp: Vec<bool> = scored.into_iter().map(|s| s.1).collect();
    average_precision(&tp, num_gt)
}

/// Scores `preds` against `gt`.
pub fn evaluate(gt: &AnnotationSet, preds: &DetectionSet) -> Result<EvalSummary> {
    preds.validate_against(gt)?;

    let mut image_ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    image_ids.sort_unstable();
    let image_index: HashMap<u64, usize> = image_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut categories: Vec<(u64, &str)> = gt.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    categories.sort_unstable_by_key(|c| c.0);

    let mut gt_by: HashMap<(u64, usize), Vec<(BBox, f64)>> = HashMap::new();
    for a in gt.annotations.iter().filter(|a| a.iscrowd == 0) {
        gt_by
            .entry((a.category_id, image_index[&a.image_id]))
            .or_default()
            .push((a.bbox, a.area));
    }
    let mut det_by: HashMap<(u64, usize), Vec<(BBox, f64)>> = HashMap::new();
    for d in &preds.predictions {
        det_by
            .entry((d.category_id, image_index[&d.image_id]))
            .or_default()
            .push((d.bbox, d.score));
    }

    let thresholds = iou_thresholds();
    // per class: [range][threshold] -> AP
    let table: Vec<[[Option<f64>; 10]; 4]> = categories
        .par_iter()
        .map(|&(cat, _)| {
            let per_image: Vec<ImageClassData> = (0..image_ids.len())
                .filter_map(|img| {
                    let gts = gt_by.get(&(cat, img)).cloned().unwrap_or_default();
                    let dets = det_by.get(&(cat, img)).map_or_else(Vec::new, |d| {
                        ranked(d.iter().map(|x| x.1)).into_iter().map(|i| d[i]).collect()
                    });
                    (!gts.is_empty() || !dets.is_empty()).then_some(ImageClassData { gts, dets })
                })
                .collect();
            let mut out = [[None; 10]; 4];
            for (r, range) in AreaRange::ALL.into_iter().enumerate() {
                for (t, &thr) in thresholds.iter().enumerate() {
                    out[r][t] = class_ap(&per_image, range, thr);
                }
            }
            out
        })
        .collect();

    let over_thresholds = |row: &[Option<f64>; 10]| mean_defined(row.iter().copied());
    let range_mean = |r: usize| mean_defined(table.iter().map(|c| over_thresholds(&c[r])));
    let at_threshold = |t: usize| mean_defined(table.iter().map(|c| c[0][t]));

    Ok(EvalSummary {
        ap: range_mean(0),
        ap50: at_threshold(0),
        ap75: at_threshold(5),
        ap_small: range_mean(1),
        ap_medium: range_mean(2),
        ap_large: range_mean(3),
        per_class: categories
            .iter()
            .zip(&table)
            .map(|(&(category_id, name), c)| ClassAp {
                category_id,
                name: name.to_string(),
                ap: over_thresholds(&c[0]),
            })
            .collect(),
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0))
}

impl EvalSummary {
    /// Aligned plain-text table, values ×100, columns AP AP50 AP75 APS APM APL,
    /// followed by per-class AP.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let cols = ["AP", "AP50", "AP75", "APS", "APM", "APL"];
        let vals = [self.ap, self.ap50, self.ap75, self.ap_small, self.ap_medium, self.ap_large];
        for c in cols {
            let _ = write!(s, "{c:>8}");
        }
        s.push('\n');
        for v in vals {
            let _ = write!(s, "{:>8}", pct(v));
        }
        s.push('\n');
        if !self.per_class.is_empty() {
            let width = self.per_class.iter().map(|c| c.name.len()).max().unwrap_or(0).max(8);
            let _ = writeln!(s, "\n{:<width$}  {:>8}", "category", "AP");
            for c in &self.per_class {
                let _ = writeln!(s, "{:<width$}  {:>8}", c.name, pct(c.ap));
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub stats: ChannelStats,
    /// Population standard deviation of the three channel means.
    pub dispersion: f64,
}

pub fn image_stats(img: &Image) -> ImageStats {
    let stats = channel_means(img);
    ImageStats {
        stats,
        dispersion: stats.dispersion(),
    }
}

pub fn image_stats_float(img: &FloatImage) -> ImageStats {
    let stats = channel_means_float(img);
    ImageStats {
        stats,
        dispersion: stats.dispersion(),
    }
}

/// Per-class AP keyed by category id, skipping undefined classes.
pub fn per_class_map(summary: &EvalSummary) -> BTreeMap<u64, f64> {
    summary
        .per_class
        .iter()
        .filter_map(|c| c.ap.map(|ap| (c.category_id, ap)))
        .collect()
}
