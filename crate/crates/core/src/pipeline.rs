//! Running a trained network over annotated frames.

use crate::bbox::{iou, BBox};
use crate::dataset::{resize_bilinear, AnnotatedFrame};
use crate::detection::{class_id, Detection};
use crate::metrics::{evaluate, Evaluation, GroundTruth, MetricsError};
use crate::model::{ModelError, NetworkWeights};
use crate::proposals::{detect_multi, edge_map, select_regions, MultiParams, ProposalError, ScoredBox};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{frame}: unknown label {label:?}")]
    Label { frame: String, label: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq)]
pub enum DetectMode {
    /// Whole-image classifier and regressor; at most one detection.
    Single { threshold: f64 },
    /// Single-box head whose box is replaced by the strongest edge proposal
    /// overlapping it by at least `min_overlap`.
    Refined { threshold: f64, min_overlap: f64 },
    /// Edge proposals classified on shared conv features.
    Multi(MultiParams),
}

impl Default for DetectMode {
    fn default() -> Self {
        DetectMode::Refined {
            threshold: 0.5,
            min_overlap: 0.2,
        }
    }
}

/// The first of the ranked `proposals` that overlaps `bbox` by at least `min_overlap`.
pub fn snap_to_proposal(bbox: &BBox, proposals: &[ScoredBox], min_overlap: f64) -> Option<BBox> {
    proposals
        .iter()
        .find(|p| iou(&p.bbox, bbox).is_ok_and(|o| o >= min_overlap))
        .map(|p| p.bbox)
}

/// Detections for an image of any size, in that image's pixel coordinates.
pub fn detect_image(weights: &NetworkWeights<f32>, image: &Tensor<f32>, mode: &DetectMode) -> Result<Vec<Detection>> {
    let size = weights.config().input_size;
    let (h, w) = (image.dims()[0], image.dims()[1]);
    let input = resize_bilinear(image, size, size);
    let found = match mode {
        DetectMode::Single { threshold } => weights.detect(&input, *threshold)?.into_iter().collect(),
        DetectMode::Refined { threshold, min_overlap } => match weights.detect(&input, *threshold)? {
            Some(mut d) => {
                let regions = select_regions(&edge_map(&input)?, &MultiParams::default())?;
                if let Some(b) = snap_to_proposal(&d.bbox, &regions, *min_overlap) {
                    d.bbox = b;
                }
                vec![d]
            }
            None => Vec::new(),
        },
        DetectMode::Multi(params) => detect_multi(weights, &input, params)?,
    };
    let (sx, sy) = (w as f64 / size as f64, h as f64 / size as f64);
    Ok(found
        .into_iter()
        .map(|d| Detection {
            bbox: d.bbox.scale(sx, sy),
            ..d
        })
        .collect())
}

pub fn ground_truths(frame: &AnnotatedFrame) -> Result<Vec<GroundTruth>> {
    frame
        .objects
        .iter()
        .map(|o| {
            Ok(GroundTruth {
                class_id: class_id(&o.label).ok_or_else(|| PipelineError::Label {
                    frame: frame.source_id.clone(),
                    label: o.label.clone(),
                })?,
                bbox: o.bbox,
            })
        })
        .collect()
}

/// Detections and ground truth for every frame, ready for [`evaluate`].
pub fn collect(
    weights: &NetworkWeights<f32>,
    frames: &[AnnotatedFrame],
    mode: &DetectMode,
) -> Result<Vec<(Vec<Detection>, Vec<GroundTruth>)>> {
    frames
        .iter()
        .map(|f| Ok((detect_image(weights, &f.image, mode)?, ground_truths(f)?)))
        .collect()
}

pub fn evaluate_model(weights: &NetworkWeights<f32>, frames: &[AnnotatedFrame], mode: &DetectMode, iou_min: f64) -> Result<Evaluation> {
    Ok(evaluate(&collect(weights, frames, mode)?, iou_min)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> ScoredBox {
        ScoredBox {
            bbox: BBox::new(xmin, ymin, xmax, ymax),
            objectness: 1.0,
        }
    }

    #[test]
    fn snapping_takes_the_first_ranked_proposal_above_the_floor() {
        let b = BBox::new(10.0, 10.0, 50.0, 90.0);
        let props = [
            scored(100.0, 100.0, 150.0, 150.0),
            scored(12.0, 8.0, 48.0, 92.0),
            scored(10.0, 10.0, 50.0, 40.0),
        ];
        assert_eq!(snap_to_proposal(&b, &props, 0.3), Some(props[1].bbox));
        assert_eq!(snap_to_proposal(&b, &[props[2], props[1]], 0.3), Some(props[2].bbox));
        assert_eq!(snap_to_proposal(&b, &props[..1], 0.3), None);
        assert_eq!(snap_to_proposal(&b, &props[2..], 0.35), Some(props[2].bbox));
        assert_eq!(snap_to_proposal(&b, &props[2..], 0.4), None);
        assert_eq!(snap_to_proposal(&b, &[], 0.0), None);
    }
}
