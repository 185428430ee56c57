//! Detection scoring: greedy matching, 11-point AP, mean IoU, FPS timing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::bbox::{iou_unchecked, BBox};
use crate::detection::{class_id, Detection};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,
    #[error("mean IoU is undefined without true positives")]
    NoTruePositives,
    #[error("need at least {needed} timed frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Intersection-over-union threshold for a true positive.
pub const DEFAULT_IOU_MIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruth {
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    TruePositive { gt: usize, iou: f64 },
    FalsePositive,
}

/// Greedy assignment of one frame's detections to its ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Indices into the input detections, by confidence descending.
    pub order: Vec<usize>,
    /// Outcome of `order[i]`.
    pub outcomes: Vec<Outcome>,
    /// Matching detection index for each ground truth; `None` is a miss.
    pub gt_matched: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.outcomes.iter().filter(|o| matches!(o, Outcome::TruePositive { .. })).count()
    }

    pub fn false_positives(&self) -> usize {
        self.outcomes.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|m| m.is_none()).count()
    }
}

fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Each detection, most confident first, takes the unmatched same-class
/// ground truth it overlaps most, provided the IoU reaches `iou_min`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_min: f64) -> MatchResult {
    let order = confidence_order(dets);
    let mut gt_matched = vec![None; gts.len()];
    let mut outcomes = Vec::with_capacity(dets.len());
    for &d in &order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g].is_some() || gt.class_id != det.class_id {
                continue;
            }
            let v = iou_unchecked(&det.bbox, &gt.bbox);
            if v >= iou_min && best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        outcomes.push(match best {
            Some((g, iou)) => {
                gt_matched[g] = Some(d);
                Outcome::TruePositive { gt: g, iou }
            }
            None => Outcome::FalsePositive,
        });
    }
    MatchResult {
        order,
        outcomes,
        gt_matched,
    }
}

/// `(recall, precision)` after each confidence level, most confident first.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
}

/// Sweeps the confidence threshold over `(confidence, is_tp)` pairs.
/// Tied confidences enter the curve together.
pub fn pr_curve(scored: &[(f64, bool)], num_gt: usize) -> Result<PrCurve> {
    if num_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    for (i, &(conf, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if sorted.get(i + 1).map_or(true, |n| n.0 != conf) {
            points.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    Ok(PrCurve { points })
}

impl PrCurve {
    /// Mean over r in {0, 0.1, ..., 1} of the best precision at recall >= r.
    pub fn eleven_point_ap(&self) -> f64 {
        (0..=10)
            .map(|i| {
                let r = i as f64 / 10.0;
                self.points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 11.0
    }
}

pub fn average_precision(scored: &[(f64, bool)], num_gt: usize) -> Result<f64> {
    Ok(pr_curve(scored, num_gt)?.eleven_point_ap())
}

/// Unweighted mean; `None` for an empty slice.
pub fn mean_ap(per_class: &[f64]) -> Option<f64> {
    (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}

pub fn mean_iou(ious: &[f64]) -> Result<f64> {
    if ious.is_empty() {
        return Err(MetricsError::NoTruePositives);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Aggregate scores over a test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub per_class_ap: BTreeMap<usize, f64>,
    pub map: f64,
    pub mean_iou: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Evaluation {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("map".to_string(), self.map);
        if let Some(v) = self.mean_iou {
            m.insert("mean_iou".to_string(), v);
        }
        m.insert("tp".to_string(), self.true_positives as f64);
        m.insert("fp".to_string(), self.false_positives as f64);
        m.insert("fn".to_string(), self.false_negatives as f64);
        for (c, ap) in &self.per_class_ap {
            m.insert(format!("ap_{}", crate::detection::class_label(*c)), *ap);
        }
        m
    }
}

/// Matches every frame, then computes AP for each class that has ground truth.
pub fn evaluate(frames: &[(Vec<Detection>, Vec<GroundTruth>)], iou_min: f64) -> Result<Evaluation> {
    let mut scored: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
    let mut gt_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ious = Vec::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (dets, gts) in frames {
        for g in gts {
            *gt_count.entry(g.class_id).or_default() += 1;
        }
        let m = match_detections(dets, gts, iou_min);
        for (&d, o) in m.order.iter().zip(&m.outcomes) {
            let hit = matches!(o, Outcome::TruePositive { .. });
            if let Outcome::TruePositive { iou, .. } = o {
                ious.push(*iou);
            }
            scored.entry(dets[d].class_id).or_default().push((dets[d].confidence, hit));
        }
        tp += m.true_positives();
        fp += m.false_positives();
        fn_ += m.false_negatives();
    }
    if gt_count.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut per_class_ap = BTreeMap::new();
    for (&c, &n) in &gt_count {
        let s = scored.remove(&c).unwrap_or_default();
        per_class_ap.insert(c, average_precision(&s, n)?);
    }
    let aps: Vec<f64> = per_class_ap.values().copied().collect();
    Ok(Evaluation {
        map: mean_ap(&aps).expect("at least one class"),
        per_class_ap,
        mean_iou: mean_iou(&ious).ok(),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FpsReport {
    /// Timed frames divided by their total wall-clock time.
    pub mean_fps: f64,
    /// Standard deviation of per-frame rates.
    pub std_fps: f64,
    pub frames: usize,
}

pub const MIN_TIMED_FRAMES: usize = 10;

/// Runs `detector` over all frames, discarding the first `warmup` timings.
pub fn benchmark_fps<F, D>(mut detector: D, frames: &[F], warmup: usize) -> Result<FpsReport>
where
    D: FnMut(&F),
{
    let timed = frames.len().saturating_sub(warmup);
    if timed < MIN_TIMED_FRAMES {
        return Err(MetricsError::TooFewFrames {
            needed: MIN_TIMED_FRAMES,
            got: timed,
        });
    }
    let mut secs = Vec::with_capacity(timed);
    for (i, f) in frames.iter().enumerate() {
        let t = Instant::now();
        detector(f);
        let dt = t.elapsed().as_secs_f64();
        if i >= warmup {
            secs.push(dt);
        }
    }
    let total: f64 = secs.iter().sum();
    let rates: Vec<f64> = secs.iter().map(|s| 1.0 / s.max(1e-12)).collect();
    let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|r| (r - mean_rate).powi(2)).sum::<f64>() / rates.len() as f64;
    Ok(FpsReport {
        mean_fps: timed as f64 / total.max(1e-12),
        std_fps: var.sqrt(),
        frames: timed,
    })
}

/// Parses `frame_id label confidence xmin ymin xmax ymax` lines.
pub fn parse_detections(text: &str, path: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| MetricsError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let class = class_id(fields[1]).ok_or_else(|| err(format!("unknown label {:?}", fields[1])))?;
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad {name} {:?}", fields[k])))
        };
        let confidence = num(2, "confidence")?;
        let bbox = BBox::new(num(3, "xmin")?, num(4, "ymin")?, num(5, "xmax")?, num(6, "ymax")?);
        out.entry(fields[0].to_string())
            .or_default()
            .push(Detection::new(class, confidence, bbox));
    }
    Ok(out)
}

pub fn load_detection_file(path: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_detections(&text, path)
}

/// One `key=value` line per metric, sorted by key.
pub fn key_value_lines(metrics: &BTreeMap<String, f64>) -> String {
    metrics.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn json_summary(metrics: &BTreeMap<String, f64>) -> String {
    serde_json::to_string_pretty(metrics).expect("string keys and finite floats")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(class: usize, conf: f64, b: (f64, f64, f64, f64)) -> Detection {
        Detection::new(class, conf, BBox::new(b.0, b.1, b.2, b.3))
    }

    fn gt(b: (f64, f64, f64, f64)) -> GroundTruth {
        GroundTruth {
            class_id: 1,
            bbox: BBox::new(b.0, b.1, b.2, b.3),
        }
    }

    #[test]
    fn perfect_and_empty_matches() {
        let gts = [gt((0.0, 0.0, 10.0, 10.0)), gt((20.0, 20.0, 40.0, 40.0))];
        let dets = [det(1, 0.9, (20.0, 20.0, 40.0, 40.0)), det(1, 0.8, (0.0, 0.0, 10.0, 10.0))];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives()), (2, 0, 0));
        let none = match_detections(&[], &gts, 0.5);
        assert_eq!(none.false_negatives(), 2);
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let gts = [gt((0.0, 0.0, 10.0, 10.0))];
        let dets = [det(1, 0.7, (0.0, 0.0, 10.0, 9.0)), det(1, 0.9, (0.0, 0.0, 10.0, 10.0))];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.order, vec![1, 0]);
        assert_eq!(m.outcomes[0], Outcome::TruePositive { gt: 0, iou: 1.0 });
        assert_eq!(m.outcomes[1], Outcome::FalsePositive);
        assert_eq!(m.gt_matched, vec![Some(1)]);
    }

    #[test]
    fn class_must_agree() {
        let m = match_detections(&[det(2, 0.9, (0.0, 0.0, 10.0, 10.0))], &[gt((0.0, 0.0, 10.0, 10.0))], 0.5);
        assert_eq!((m.true_positives(), m.false_negatives()), (0, 1));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, true)], 2).unwrap(), 1.0);
        assert_eq!(average_precision(&[], 3).unwrap(), 0.0);
        assert!(matches!(average_precision(&[(0.5, false)], 0), Err(MetricsError::NoGroundTruth)));
        // 0.9 TP, 0.8 FP, 0.7 TP, 0.6 TP, 0.5 FP over 4 ground truths:
        // recall 0.25 @ 1.0, 0.5 @ 2/3, 0.75 @ 3/4; recall 1.0 never reached
        let s = [(0.9, true), (0.8, false), (0.7, true), (0.6, true), (0.5, false)];
        let expected = (3.0 * 1.0 + 5.0 * 0.75) / 11.0;
        assert!((average_precision(&s, 4).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ap_depends_only_on_ranking() {
        let s = [(0.9, true), (0.8, false), (0.7, true), (0.3, false), (0.1, true)];
        let warped: Vec<_> = s.iter().map(|&(c, h)| ((c * 5.0f64).exp(), h)).collect();
        assert_eq!(average_precision(&s, 5).unwrap(), average_precision(&warped, 5).unwrap());
    }

    #[test]
    fn map_and_mean_iou() {
        assert_eq!(mean_ap(&[0.7]), Some(0.7));
        assert_eq!(mean_ap(&[1.0, 0.0]), Some(0.5));
        assert_eq!(mean_ap(&[]), None);
        assert_eq!(mean_iou(&[0.6]).unwrap(), 0.6);
        assert!(matches!(mean_iou(&[]), Err(MetricsError::NoTruePositives)));
    }

    #[test]
    fn evaluate_perfect_and_silent_detectors() {
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0))];
        let frames = vec![(vec![det(1, 0.9, (0.0, 0.0, 10.0, 10.0))], gts.clone())];
        let e = evaluate(&frames, 0.5).unwrap();
        assert_eq!((e.map, e.mean_iou), (1.0, Some(1.0)));
        let silent = evaluate(&[(vec![], gts)], 0.5).unwrap();
        assert_eq!((silent.map, silent.mean_iou), (0.0, None));
        assert!(evaluate(&[(vec![], vec![])], 0.5).is_err());
    }

    #[test]
    fn detection_file_parsing() {
        let p = Path::new("dets.txt");
        assert!(parse_detections("", p).unwrap().is_empty());
        let one = parse_detections("f1 diver 0.75 1 2 30 40\n", p).unwrap();
        assert_eq!(one["f1"], vec![det(1, 0.75, (1.0, 2.0, 30.0, 40.0))]);
        let bad = parse_detections("f1 diver 0.5 1 2 3 4\nf2 diver high 1 2 3 4\n", p).unwrap_err();
        assert!(matches!(bad, MetricsError::Parse { line: 2, ref msg, .. } if msg.contains("confidence")));
        assert!(parse_detections("f1 diver 0.5 1 2 3\n", p).is_err());
    }

    #[test]
    fn summaries() {
        let mut m = BTreeMap::new();
        m.insert("map".to_string(), 0.5);
        m.insert("fps".to_string(), 12.0);
        assert_eq!(key_value_lines(&m), "fps=12\nmap=0.5\n");
        let v: serde_json::Value = serde_json::from_str(&json_summary(&m)).unwrap();
        assert_eq!(v["map"], 0.5);
    }

    #[test]
    fn fps_needs_enough_frames() {
        assert!(matches!(
            benchmark_fps(|_: &u8| {}, &[0u8; 12], 5),
            Err(MetricsError::TooFewFrames { needed: 10, got: 7 })
        ));
        let r = benchmark_fps(|_: &u8| {}, &[0u8; 15], 5).unwrap();
        assert_eq!(r.frames, 10);
    }
}
