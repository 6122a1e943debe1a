//! Detection scoring against ground truth: IoU, greedy confidence-ordered
//! matching, precision/recall, and the literal-definition mAP50 /
//! mAP50-95 scores (with a standard PR-curve mode for cross-tool
//! comparison). Annotations travel in the YOLO txt format, one file per
//! image.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

/// Slack allowed on normalized coordinates outside [0, 1].
const COORD_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("{path}:{line}: expected {expect} fields ({kind}), got {got}")]
    FieldCount {
        path: String,
        line: usize,
        kind: &'static str,
        expect: usize,
        got: usize,
    },
    #[error("{path}:{line}: {msg}")]
    BadValue {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("directory {0} holds no .txt annotation files")]
    EmptyDirectory(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which side of the evaluation a file set belongs to. Ground-truth lines
/// carry 5 fields, prediction lines 6 (confidence last).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationKind {
    GroundTruth,
    Prediction,
}

/// One axis-aligned box, normalized image fractions, center + extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Meaningful for predictions only; ground truth carries 1.0.
    pub confidence: f64,
}

impl BBox {
    /// Corner representation with half-extents clamped to the unit square.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let x0 = (self.cx - self.w / 2.0).clamp(0.0, 1.0);
        let y0 = (self.cy - self.h / 2.0).clamp(0.0, 1.0);
        let x1 = (self.cx + self.w / 2.0).clamp(0.0, 1.0);
        let y1 = (self.cy + self.h / 2.0).clamp(0.0, 1.0);
        (x0, y0, x1, y1)
    }

    pub fn area(&self) -> f64 {
        let (x0, y0, x1, y1) = self.corners();
        (x1 - x0) * (y1 - y0)
    }
}

/// Intersection over union of the clamped boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Boxes per image id plus the class dictionary.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    pub images: BTreeMap<String, Vec<BBox>>,
    pub classes: BTreeMap<u32, String>,
}

/// The six species of the default class dictionary.
pub fn default_classes() -> BTreeMap<u32, String> {
    [
        "Cerastium",
        "Geum reptans",
        "Papaver alpinum",
        "Ranunculus glacialis",
        "Saxifraga bryoides",
        "Luzula alpinopilosa",
    ]
    .iter()
    .enumerate()
    .map(|(i, name)| (i as u32, name.to_string()))
    .collect()
}

impl AnnotationSet {
    pub fn total_boxes(&self) -> usize {
        self.images.values().map(|v| v.len()).sum()
    }
}

/// Read a directory of YOLO txt files (image id = file stem).
pub fn load_yolo_txt(dir: &Path, kind: AnnotationKind) -> Result<AnnotationSet, DetectError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "txt").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DetectError::EmptyDirectory(dir.display().to_string()));
    }
    let mut set = AnnotationSet {
        classes: default_classes(),
        ..Default::default()
    };
    for path in paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(&path)?;
        let boxes = parse_yolo_lines(&text, kind, &path.display().to_string())?;
        set.images.insert(stem, boxes);
    }
    Ok(set)
}

/// Parse one file's worth of YOLO lines.
pub fn parse_yolo_lines(
    text: &str,
    kind: AnnotationKind,
    path: &str,
) -> Result<Vec<BBox>, DetectError> {
    let expect = match kind {
        AnnotationKind::GroundTruth => 5,
        AnnotationKind::Prediction => 6,
    };
    let kind_name = match kind {
        AnnotationKind::GroundTruth => "gt: class cx cy w h",
        AnnotationKind::Prediction => "pred: class cx cy w h conf",
    };
    let mut boxes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != expect {
            return Err(DetectError::FieldCount {
                path: path.to_string(),
                line,
                kind: kind_name,
                expect,
                got: fields.len(),
            });
        }
        let bad = |msg: String| DetectError::BadValue {
            path: path.to_string(),
            line,
            msg,
        };
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|e| bad(format!("class id: {e}")))?;
        let mut vals = [0.0f64; 5];
        for (k, field) in fields[1..].iter().enumerate() {
            vals[k] = field
                .parse()
                .map_err(|e| bad(format!("field {}: {e}", k + 2)))?;
        }
        for (name, v) in ["cx", "cy", "w", "h"].iter().zip(&vals) {
            if !(-COORD_SLACK..=1.0 + COORD_SLACK).contains(v) {
                return Err(bad(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let (cx, cy, w, h) = (
            vals[0].clamp(0.0, 1.0),
            vals[1].clamp(0.0, 1.0),
            vals[2].clamp(0.0, 1.0),
            vals[3].clamp(0.0, 1.0),
        );
        if w <= 0.0 || h <= 0.0 {
            return Err(bad(format!("degenerate box: w = {w}, h = {h}")));
        }
        let confidence = if kind == AnnotationKind::Prediction {
            let c = vals[4];
            if !(-COORD_SLACK..=1.0 + COORD_SLACK).contains(&c) {
                return Err(bad(format!("confidence = {c} outside [0, 1]")));
            }
            c.clamp(0.0, 1.0)
        } else {
            1.0
        };
        boxes.push(BBox {
            class_id,
            cx,
            cy,
            w,
            h,
            confidence,
        });
    }
    Ok(boxes)
}

/// Write an annotation set back to per-image YOLO txt files.
pub fn write_yolo_txt(
    set: &AnnotationSet,
    dir: &Path,
    kind: AnnotationKind,
) -> Result<(), DetectError> {
    fs::create_dir_all(dir)?;
    for (image, boxes) in &set.images {
        let mut text = String::new();
        for b in boxes {
            match kind {
                AnnotationKind::GroundTruth => {
                    let _ = writeln!(text, "{} {} {} {} {}", b.class_id, b.cx, b.cy, b.w, b.h);
                }
                AnnotationKind::Prediction => {
                    let _ = writeln!(
                        text,
                        "{} {} {} {} {} {}",
                        b.class_id, b.cx, b.cy, b.w, b.h, b.confidence
                    );
                }
            }
        }
        fs::write(dir.join(format!("{image}.txt")), text)?;
    }
    Ok(())
}

/// TP/FP/FN counts for one class (or an aggregate).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Outcome of matching at one IoU threshold.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub per_class: BTreeMap<u32, MatchCounts>,
    /// (image id, prediction index in file order, matched) per prediction.
    pub prediction_labels: Vec<(String, usize, bool)>,
    pub iou_threshold: f64,
}

impl MatchResult {
    pub fn totals(&self) -> MatchCounts {
        let mut t = MatchCounts::default();
        for c in self.per_class.values() {
            t.tp += c.tp;
            t.fp += c.fp;
            t.fn_ += c.fn_;
        }
        t
    }
}

/// Greedy one-to-one matching: per image and class, predictions in
/// descending confidence (ties: higher best-IoU, then file order) each
/// take the highest-IoU unmatched ground-truth box of the same class with
/// IoU >= threshold.
pub fn match_detections(
    gt: &AnnotationSet,
    pred: &AnnotationSet,
    iou_threshold: f64,
) -> MatchResult {
    let mut per_class: BTreeMap<u32, MatchCounts> = BTreeMap::new();
    let mut prediction_labels = Vec::new();

    let mut image_ids: Vec<&String> = gt.images.keys().chain(pred.images.keys()).collect();
    image_ids.sort();
    image_ids.dedup();

    static EMPTY: Vec<BBox> = Vec::new();
    for image in image_ids {
        let gts = gt.images.get(image.as_str()).unwrap_or(&EMPTY);
        let preds = pred.images.get(image.as_str()).unwrap_or(&EMPTY);

        let mut class_ids: Vec<u32> = gts
            .iter()
            .chain(preds.iter())
            .map(|b| b.class_id)
            .collect();
        class_ids.sort_unstable();
        class_ids.dedup();

        for class in class_ids {
            let gt_idx: Vec<usize> = gts
                .iter()
                .enumerate()
                .filter(|(_, b)| b.class_id == class)
                .map(|(i, _)| i)
                .collect();
            let pr_idx: Vec<usize> = preds
                .iter()
                .enumerate()
                .filter(|(_, b)| b.class_id == class)
                .map(|(i, _)| i)
                .collect();

            // Per-prediction best IoU, used by the confidence tie-break.
            let best_iou: Vec<f64> = pr_idx
                .iter()
                .map(|&p| {
                    gt_idx
                        .iter()
                        .map(|&g| iou(&preds[p], &gts[g]))
                        .fold(0.0, f64::max)
                })
                .collect();
            let mut order: Vec<usize> = (0..pr_idx.len()).collect();
            order.sort_by(|&a, &b| {
                preds[pr_idx[b]]
                    .confidence
                    .partial_cmp(&preds[pr_idx[a]].confidence)
                    .unwrap()
                    .then(best_iou[b].partial_cmp(&best_iou[a]).unwrap())
                    .then(pr_idx[a].cmp(&pr_idx[b]))
            });

            let mut gt_taken = vec![false; gt_idx.len()];
            let counts = per_class.entry(class).or_default();
            for &k in &order {
                let p = pr_idx[k];
                let mut best: Option<(usize, f64)> = None;
                for (gi, &g) in gt_idx.iter().enumerate() {
                    if gt_taken[gi] {
                        continue;
                    }
                    let v = iou(&preds[p], &gts[g]);
                    if v >= iou_threshold && best.map(|(_, bv)| v > bv).unwrap_or(true) {
                        best = Some((gi, v));
                    }
                }
                match best {
                    Some((gi, _)) => {
                        gt_taken[gi] = true;
                        counts.tp += 1;
                        prediction_labels.push((image.clone(), p, true));
                    }
                    None => {
                        counts.fp += 1;
                        prediction_labels.push((image.clone(), p, false));
                    }
                }
            }
            counts.fn_ += gt_taken.iter().filter(|&&taken| !taken).count() as u64;
        }
    }
    MatchResult {
        per_class,
        prediction_labels,
        iou_threshold,
    }
}

/// Precision/recall with the zero-denominator convention: the metric is
/// reported as 0 and flagged undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

pub fn precision_recall(counts: &MatchCounts) -> PrecisionRecall {
    let p_den = counts.tp + counts.fp;
    let r_den = counts.tp + counts.fn_;
    PrecisionRecall {
        precision: if p_den == 0 {
            0.0
        } else {
            counts.tp as f64 / p_den as f64
        },
        recall: if r_den == 0 {
            0.0
        } else {
            counts.tp as f64 / r_den as f64
        },
        precision_defined: p_den > 0,
        recall_defined: r_den > 0,
    }
}

/// Scoring mode for [`map_scores`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    /// mAP50 = precision at IoU >= 0.5 over all predictions; mAP50-95 =
    /// mean of those precisions over thresholds 0.50, 0.55, ..., 0.95.
    PaperLiteral,
    /// All-point interpolated average precision from the PR curve.
    PrCurve,
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Serialize)]
pub struct ClassScore {
    pub class_id: Option<u32>,
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub counts_at_50: MatchCounts,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Full evaluation report: an "All" aggregate plus one row per class
/// present in the ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mode: MapMode,
    pub iou_thresholds: Vec<f64>,
    pub all: ClassScore,
    pub per_class: Vec<ClassScore>,
    /// Prediction class ids absent from the ground truth (scored as FP).
    pub unknown_classes: Vec<u32>,
    pub min_confidence: f64,
}

/// The ten thresholds 0.50, 0.55, ..., 0.95, generated by integer
/// division so threshold four is exactly 0.7.
pub fn map_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

fn filter_by_confidence(pred: &AnnotationSet, min_conf: f64) -> AnnotationSet {
    if min_conf <= 0.0 {
        return pred.clone();
    }
    AnnotationSet {
        images: pred
            .images
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    v.iter()
                        .filter(|b| b.confidence >= min_conf)
                        .cloned()
                        .collect(),
                )
            })
            .collect(),
        classes: pred.classes.clone(),
    }
}

/// Class-wise detection scores.
///
/// Classes follow the ground truth: every class with at least one
/// ground-truth box gets a row, and the "All" row is the unweighted mean
/// over those rows. Prediction-only class ids are scored as false
/// positives and listed in `unknown_classes`.
pub fn map_scores(
    gt: &AnnotationSet,
    pred: &AnnotationSet,
    mode: MapMode,
    min_confidence: f64,
) -> EvalReport {
    let pred = filter_by_confidence(pred, min_confidence);
    let thresholds = map_thresholds();
    let results: Vec<MatchResult> = thresholds
        .iter()
        .map(|&t| match_detections(gt, &pred, t))
        .collect();
    let at50 = &results[0];

    let mut gt_classes: Vec<u32> = gt.images.values().flatten().map(|b| b.class_id).collect();
    gt_classes.sort_unstable();
    gt_classes.dedup();
    let mut pred_classes: Vec<u32> =
        pred.images.values().flatten().map(|b| b.class_id).collect();
    pred_classes.sort_unstable();
    pred_classes.dedup();
    let unknown_classes: Vec<u32> = pred_classes
        .iter()
        .filter(|c| !gt_classes.contains(c))
        .copied()
        .collect();

    let class_name = |id: u32| -> String {
        gt.classes
            .get(&id)
            .cloned()
            .unwrap_or_else(|| format!("class {id}"))
    };

    let score_class = |class: u32| -> ClassScore {
        let counts50 = at50.per_class.get(&class).copied().unwrap_or_default();
        let pr50 = precision_recall(&counts50);
        let (map50, map50_95) = match mode {
            MapMode::PaperLiteral => {
                let precisions: Vec<f64> = results
                    .iter()
                    .map(|r| {
                        let c = r.per_class.get(&class).copied().unwrap_or_default();
                        precision_recall(&c).precision
                    })
                    .collect();
                (precisions[0], precisions.iter().sum::<f64>() / 10.0)
            }
            MapMode::PrCurve => {
                let aps: Vec<f64> = results
                    .iter()
                    .map(|r| average_precision(gt, &pred, r, class))
                    .collect();
                (aps[0], aps.iter().sum::<f64>() / 10.0)
            }
        };
        ClassScore {
            class_id: Some(class),
            class_name: class_name(class),
            precision: pr50.precision,
            recall: pr50.recall,
            map50,
            map50_95,
            counts_at_50: counts50,
            precision_defined: pr50.precision_defined,
            recall_defined: pr50.recall_defined,
        }
    };

    let per_class: Vec<ClassScore> = gt_classes.iter().map(|&c| score_class(c)).collect();
    let n = per_class.len().max(1) as f64;
    let mean = |f: fn(&ClassScore) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let totals50 = at50.totals();
    let all = ClassScore {
        class_id: None,
        class_name: "All".into(),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        map50: mean(|c| c.map50),
        map50_95: mean(|c| c.map50_95),
        counts_at_50: totals50,
        precision_defined: per_class.iter().any(|c| c.precision_defined),
        recall_defined: per_class.iter().any(|c| c.recall_defined),
    };
    EvalReport {
        mode,
        iou_thresholds: thresholds,
        all,
        per_class,
        unknown_classes,
        min_confidence,
    }
}

/// All-point interpolated average precision for one class at one
/// threshold's match result.
fn average_precision(
    gt: &AnnotationSet,
    pred: &AnnotationSet,
    result: &MatchResult,
    class: u32,
) -> f64 {
    let total_gt: u64 = gt
        .images
        .values()
        .flatten()
        .filter(|b| b.class_id == class)
        .count() as u64;
    if total_gt == 0 {
        return 0.0;
    }
    let mut scored: Vec<(f64, bool)> = result
        .prediction_labels
        .iter()
        .filter_map(|(image, idx, matched)| {
            let b = &pred.images.get(image)?[*idx];
            (b.class_id == class).then_some((b.confidence, *matched))
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(scored.len());
    for (_, matched) in scored {
        if matched {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // All-point interpolation: precision envelope from the right.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let (r, _) = points[k];
        let p_max = points[k..].iter().map(|&(_, p)| p).fold(0.0, f64::max);
        ap += (r - prev_recall) * p_max;
        prev_recall = r;
    }
    ap
}

/// Render the report as a fixed-width text table with the Class,
/// Precision, Recall, mAP50, mAP50-95 columns.
pub fn render_table(report: &EvalReport) -> String {
    let mut rows = vec![(
        "Class".to_string(),
        "Precision".to_string(),
        "Recall".to_string(),
        "mAP50".to_string(),
        "mAP50-95".to_string(),
    )];
    let fmt = |v: f64, defined: bool| {
        if defined {
            format!("{v:.3}")
        } else {
            format!("{v:.3}*")
        }
    };
    let mut push = |s: &ClassScore| {
        rows.push((
            s.class_name.clone(),
            fmt(s.precision, s.precision_defined),
            fmt(s.recall, s.recall_defined),
            format!("{:.3}", s.map50),
            format!("{:.3}", s.map50_95),
        ));
    };
    push(&report.all);
    for s in &report.per_class {
        push(s);
    }
    let width0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<w$}  {:>9}  {:>9}  {:>9}  {:>9}",
            r.0,
            r.1,
            r.2,
            r.3,
            r.4,
            w = width0
        );
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(width0 + 2 + 4 * 11));
        }
    }
    if report.per_class.iter().any(|c| !c.precision_defined) || !report.all.precision_defined {
        let _ = writeln!(out, "* undefined (zero denominator), reported as 0");
    }
    out
}
