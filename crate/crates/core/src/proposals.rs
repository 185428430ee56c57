//! Class-agnostic region proposals from edge statistics, greedy NMS and
//! ROI classification on shared conv features.

use thiserror::Error;

use crate::bbox::{iou_unchecked, BBox};
use crate::detection::{Detection, BACKGROUND};
use crate::model::{ModelError, NetworkWeights};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("invalid proposal grid: {0}")]
    Grid(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("region {0:?} covers no feature cell")]
    DegenerateRegion(BBox),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ProposalError>;

/// Per-pixel gradient magnitude and orientation of the luma channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f32>,
    /// Radians, `atan2(gy, gx)`.
    pub orientation: Vec<f32>,
}

pub fn luma(image: &Tensor<f32>) -> Vec<f32> {
    image
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

/// Sobel kernels scaled by 1/4 so that a unit step gives a unit response.
/// Borders replicate the nearest pixel.
pub fn edge_map(image: &Tensor<f32>) -> Result<EdgeMap> {
    let d = image.dims();
    if d.len() != 3 || d[2] != 3 || d[0] == 0 || d[1] == 0 {
        return Err(ProposalError::Parameter(format!("expected a non-empty [H, W, 3] image, got {d:?}")));
    }
    let (h, w) = (d[0], d[1]);
    let l = luma(image);
    let at = |y: isize, x: isize| l[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let mut magnitude = Vec::with_capacity(h * w);
    let mut orientation = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let right = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1);
            let left = at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1);
            let below = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1);
            let above = at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1);
            let (gx, gy) = ((right - left) * 0.25, (below - above) * 0.25);
            magnitude.push((gx * gx + gy * gy).sqrt());
            orientation.push(gy.atan2(gx));
        }
    }
    Ok(EdgeMap {
        width: w,
        height: h,
        magnitude,
        orientation,
    })
}

/// Box sampling and scoring parameters. Scales and stride are fractions of
/// the smaller image dimension; aspects are width / height.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGrid {
    pub scales: Vec<f64>,
    pub aspects: Vec<f64>,
    pub stride: f64,
    pub penalty: f64,
    /// Magnitudes below this count as no edge.
    pub edge_floor: f32,
}

impl Default for ProposalGrid {
    fn default() -> Self {
        ProposalGrid {
            scales: vec![0.25, 0.375, 0.5, 0.75],
            aspects: vec![0.5, 1.0, 2.0],
            stride: 0.125,
            penalty: 0.75,
            edge_floor: 0.1,
        }
    }
}

impl ProposalGrid {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.aspects.is_empty() {
            return Err(ProposalError::Grid("need at least one scale and one aspect".into()));
        }
        if self.scales.iter().chain(&self.aspects).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(ProposalError::Grid("scales and aspects must be positive".into()));
        }
        if !(self.stride > 0.0) || !(self.penalty >= 0.0) || !(self.edge_floor >= 0.0) {
            return Err(ProposalError::Grid(
                "stride must be positive, penalty and floor non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub objectness: f64,
}

/// Summed-area table of thresholded edge mass.
struct Integral {
    w: usize,
    h: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(edges: &EdgeMap, floor: f32) -> Self {
        let (w, h) = (edges.width, edges.height);
        let mut sums = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                let m = edges.magnitude[y * w + x];
                row += if m >= floor { m as f64 } else { 0.0 };
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { w, h, sums }
    }

    /// Mass in `[x0, x1) x [y0, y1)` clipped to the image.
    fn sum(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
        let cx = |v: i64| v.clamp(0, self.w as i64) as usize;
        let cy = |v: i64| v.clamp(0, self.h as i64) as usize;
        let (x0, x1, y0, y1) = (cx(x0), cx(x1), cy(y0), cy(y1));
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let s = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0)
    }
}

/// `interior - penalty * band`, floored at 0. The interior excludes the
/// pixel rows and columns adjacent to the border; the band is the 2-px ring
/// centered on the border line.
fn score_box(integral: &Integral, b: (i64, i64, i64, i64), penalty: f64) -> f64 {
    let (x0, y0, x1, y1) = b;
    let interior = integral.sum(x0 + 1, y0 + 1, x1 - 1, y1 - 1);
    let band = integral.sum(x0 - 1, y0 - 1, x1 + 1, y1 + 1) - interior;
    (interior - penalty * band).max(0.0)
}

fn grid_boxes(width: usize, height: usize, grid: &ProposalGrid) -> Vec<(i64, i64, i64, i64)> {
    let m = width.min(height) as f64;
    let stride = (grid.stride * m).round().max(1.0) as i64;
    let mut out = Vec::new();
    for &s in &grid.scales {
        for &a in &grid.aspects {
            let bw = (s * m * a.sqrt()).round() as i64;
            let bh = (s * m / a.sqrt()).round() as i64;
            if bw < 2 || bh < 2 || bw > width as i64 || bh > height as i64 {
                continue;
            }
            let mut y = 0;
            while y + bh <= height as i64 {
                let mut x = 0;
                while x + bw <= width as i64 {
                    out.push((x, y, x + bw, y + bh));
                    x += stride;
                }
                y += stride;
            }
        }
    }
    out
}

/// Scores every grid box.
pub fn propose(edges: &EdgeMap, grid: &ProposalGrid) -> Result<Vec<ScoredBox>> {
    grid.validate()?;
    let integral = Integral::new(edges, grid.edge_floor);
    Ok(grid_boxes(edges.width, edges.height, grid)
        .into_iter()
        .map(|b| ScoredBox {
            bbox: BBox::new(b.0 as f64, b.1 as f64, b.2 as f64, b.3 as f64),
            objectness: score_box(&integral, b, grid.penalty),
        })
        .collect())
}

/// Ranking used by [`nms`]: higher score first, then smaller area, then
/// top-left position.
pub fn rank(a: &ScoredBox, b: &ScoredBox) -> std::cmp::Ordering {
    b.objectness
        .total_cmp(&a.objectness)
        .then(a.bbox.area().total_cmp(&b.bbox.area()))
        .then(a.bbox.ymin.total_cmp(&b.bbox.ymin))
        .then(a.bbox.xmin.total_cmp(&b.bbox.xmin))
}

/// Greedy suppression of boxes overlapping a better one by more than
/// `iou_threshold`. Output follows [`rank`].
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(rank);
    let mut keep: Vec<ScoredBox> = Vec::new();
    for b in sorted {
        if keep.iter().all(|k| iou_unchecked(&k.bbox, &b.bbox) <= iou_threshold) {
            keep.push(b);
        }
    }
    keep
}

/// Shrinks `b` to the bounds of the edge pixels it contains, or returns it
/// unchanged if it contains none.
pub fn tighten(edges: &EdgeMap, b: &BBox, floor: f32) -> BBox {
    let x0 = b.xmin.max(0.0) as usize;
    let y0 = b.ymin.max(0.0) as usize;
    let x1 = (b.xmax.ceil() as usize).min(edges.width);
    let y1 = (b.ymax.ceil() as usize).min(edges.height);
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in y0..y1 {
        for x in x0..x1 {
            if edges.magnitude[y * edges.width + x] >= floor && floor > 0.0 {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((a, c, d, e)) => (a.min(x), c.min(y), d.max(x), e.max(y)),
                });
            }
        }
    }
    match bounds {
        Some((a, c, d, e)) if d > a && e > c => BBox::new(a as f64, c as f64, (d + 1) as f64, (e + 1) as f64),
        _ => *b,
    }
}

/// Max-pools the feature cells under `region` into a `bins x bins` grid.
///
/// The region maps proportionally onto the feature grid; bin `j` of a span of
/// `L` cells starting at `c` covers `[c + floor(jL/bins), c + ceil((j+1)L/bins))`.
pub fn roi_pool<T: Scalar>(features: &Tensor<T>, region: &BBox, image_w: f64, image_h: f64, bins: usize) -> Result<Tensor<T>> {
    Ok(roi_pool_indexed(features, region, image_w, image_h, bins)?.0)
}

/// [`roi_pool`] plus, for every output element, the flat index of the
/// feature element it was taken from.
pub fn roi_pool_indexed<T: Scalar>(
    features: &Tensor<T>,
    region: &BBox,
    image_w: f64,
    image_h: f64,
    bins: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (fh, fw, ch) = (features.dims()[0], features.dims()[1], features.dims()[2]);
    let span = |lo: f64, hi: f64, size: f64, cells: usize| {
        let a = ((lo / size) * cells as f64).floor().max(0.0) as usize;
        let b = (((hi / size) * cells as f64).ceil().max(0.0) as usize).min(cells);
        (a.min(cells), b)
    };
    let (cx0, cx1) = span(region.xmin, region.xmax, image_w, fw);
    let (cy0, cy1) = span(region.ymin, region.ymax, image_h, fh);
    if cx1 <= cx0 || cy1 <= cy0 || !region.is_valid() {
        return Err(ProposalError::DegenerateRegion(*region));
    }
    let (lx, ly) = (cx1 - cx0, cy1 - cy0);
    let data = features.data();
    let mut out = Vec::with_capacity(bins * bins * ch);
    let mut index = Vec::with_capacity(bins * bins * ch);
    for by in 0..bins {
        let (ya, yb) = (cy0 + by * ly / bins, cy0 + ((by + 1) * ly).div_ceil(bins));
        for bx in 0..bins {
            let (xa, xb) = (cx0 + bx * lx / bins, cx0 + ((bx + 1) * lx).div_ceil(bins));
            for c in 0..ch {
                let mut best = (ya * fw + xa) * ch + c;
                for y in ya..yb {
                    for x in xa..xb {
                        let i = (y * fw + x) * ch + c;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                index.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![bins, bins, ch], out).expect("sized above"), index))
}

/// Class probabilities for a pixel region, plus the best non-background
/// probability.
pub fn roi_classify<T: Scalar>(
    weights: &NetworkWeights<T>,
    features: &Tensor<T>,
    region: &BBox,
    image_size: (f64, f64),
) -> Result<(Tensor<T>, f64)> {
    let bins = weights.config().pooled_dims()?[0];
    let pooled = roi_pool(features, region, image_size.0, image_size.1, bins)?;
    let probs = weights.classify_pooled(&pooled)?;
    let conf = probs
        .data()
        .iter()
        .skip(BACKGROUND + 1)
        .fold(0.0f64, |m, p| m.max(Scalar::to_f64(*p)));
    Ok((probs, conf))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreFloor {
    Fixed(f64),
    /// Keeps boxes scoring at least `fraction` of the best box and at least
    /// `min`.
    Auto {
        fraction: f64,
        min: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiParams {
    pub grid: ProposalGrid,
    pub score_floor: ScoreFloor,
    pub iou_threshold: f64,
    pub max_regions: usize,
    /// Minimum non-background probability for a region to be reported.
    pub confidence: f64,
}

impl Default for MultiParams {
    fn default() -> Self {
        MultiParams {
            grid: ProposalGrid::default(),
            score_floor: ScoreFloor::Auto { fraction: 0.1, min: 1.0 },
            iou_threshold: 0.3,
            max_regions: 8,
            confidence: 0.5,
        }
    }
}

/// Candidate regions for one image: scored, floored, suppressed, truncated
/// and tightened to their edges.
pub fn select_regions(edges: &EdgeMap, params: &MultiParams) -> Result<Vec<ScoredBox>> {
    let scored = propose(edges, &params.grid)?;
    let top = scored.iter().map(|b| b.objectness).fold(0.0, f64::max);
    let floor = match params.score_floor {
        ScoreFloor::Fixed(v) => v,
        ScoreFloor::Auto { fraction, min } => (fraction * top).max(min),
    };
    let kept: Vec<ScoredBox> = scored.into_iter().filter(|b| b.objectness > 0.0 && b.objectness >= floor).collect();
    Ok(nms(&kept, params.iou_threshold)
        .into_iter()
        .take(params.max_regions)
        .map(|b| ScoredBox {
            bbox: tighten(edges, &b.bbox, params.grid.edge_floor),
            ..b
        })
        .collect())
}

/// Tightened regions overlapping a more confident one beyond this are dropped.
pub const DUPLICATE_IOU: f64 = 0.9;

/// Multi-object detection: edge proposals classified on features from a
/// single conv-block pass. The two paths run on separate threads.
pub fn detect_multi<T: Scalar>(weights: &NetworkWeights<T>, image: &Tensor<T>, params: &MultiParams) -> Result<Vec<Detection>> {
    if !(params.iou_threshold > 0.0 && params.iou_threshold < 1.0) {
        return Err(ProposalError::Parameter(format!(
            "iou threshold {} outside (0, 1)",
            params.iou_threshold
        )));
    }
    if !(0.0..=1.0).contains(&params.confidence) {
        return Err(ProposalError::Parameter(format!("confidence {} outside [0, 1]", params.confidence)));
    }
    let (features, regions) = std::thread::scope(|s| {
        let conv = s.spawn(|| weights.conv_block(image));
        let rgb: Tensor<f32> = image.cast();
        let regions = edge_map(&rgb).and_then(|e| select_regions(&e, params));
        (conv.join().expect("conv block thread panicked"), regions)
    });
    let features = features?;
    let regions = regions?;
    let size = (image.dims()[1] as f64, image.dims()[0] as f64);
    let mut found: Vec<(ScoredBox, usize)> = Vec::new();
    for r in &regions {
        let (probs, conf) = match roi_classify(weights, &features, &r.bbox, size) {
            Ok(v) => v,
            Err(ProposalError::DegenerateRegion(_)) => continue,
            Err(e) => return Err(e),
        };
        if conf < params.confidence {
            continue;
        }
        let p = probs.data();
        let class = (BACKGROUND + 1..p.len())
            .max_by(|&a, &b| Scalar::to_f64(p[a]).total_cmp(&Scalar::to_f64(p[b])))
            .expect("at least one foreground class");
        found.push((
            ScoredBox {
                bbox: r.bbox,
                objectness: conf,
            },
            class,
        ));
    }
    // tightened regions of one object often coincide; keep the most confident
    found.sort_by(|a, b| rank(&a.0, &b.0));
    let mut out: Vec<Detection> = Vec::new();
    for (b, class) in found {
        if out.iter().all(|d| iou_unchecked(&d.bbox, &b.bbox) <= DUPLICATE_IOU) {
            out.push(Detection::new(class, b.objectness, b.bbox));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;

    fn image_from_luma(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Tensor<f32> {
        Tensor::from_fn(vec![h, w, 3], |i| f(i / 3 / w, (i / 3) % w))
    }

    #[test]
    fn constant_image_has_no_edges() {
        let e = edge_map(&Tensor::full(vec![9, 11, 3], 0.4)).unwrap();
        assert!(e.magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn vertical_step_peaks_at_the_step() {
        let e = edge_map(&image_from_luma(8, 10, |_, x| if x >= 5 { 1.0 } else { 0.0 })).unwrap();
        let max = e.magnitude.iter().cloned().fold(0.0f32, f32::max);
        assert!((max - 1.0).abs() < 1e-6);
        for y in 0..8 {
            for x in 0..10 {
                let m = e.magnitude[y * 10 + x];
                assert_eq!(m == max, x == 4 || x == 5, "({y}, {x})");
            }
        }
    }

    #[test]
    fn degenerate_grid() {
        let e = edge_map(&Tensor::full(vec![8, 8, 3], 0.0)).unwrap();
        let grid = ProposalGrid {
            scales: vec![],
            ..ProposalGrid::default()
        };
        assert!(matches!(propose(&e, &grid), Err(ProposalError::Grid(_))));
    }

    #[test]
    fn blank_image_scores_zero() {
        let e = edge_map(&Tensor::full(vec![224, 224, 3], 0.3)).unwrap();
        let boxes = propose(&e, &ProposalGrid::default()).unwrap();
        assert!(!boxes.is_empty());
        assert!(boxes.iter().all(|b| b.objectness == 0.0));
    }

    #[test]
    fn nms_basics() {
        let a = ScoredBox {
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            objectness: 0.9,
        };
        assert_eq!(nms(&[a], 0.5), vec![a]);
        let b = ScoredBox { objectness: 0.4, ..a };
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn roi_pool_full_region_is_pool5() {
        let w = NetworkWeights::<f64>::build(NetworkConfig::tiny(2, 48), 2).unwrap();
        let img = Tensor::from_fn(vec![48, 48, 3], |i| ((i * 7) % 13) as f64 / 13.0);
        let f = w.conv_block(&img).unwrap();
        let full = BBox::new(0.0, 0.0, 48.0, 48.0);
        let (probs, _) = roi_classify(&w, &f, &full, (48.0, 48.0)).unwrap();
        assert_eq!(probs, w.classify_features(&f).unwrap());
    }

    #[test]
    fn single_cell_region_repeats_the_cell() {
        let f = Tensor::from_fn(vec![13, 13, 4], |i| i as f64);
        let cell = BBox::new(
            3.0 * 224.0 / 13.0 + 1.0,
            224.0 * 5.0 / 13.0 + 1.0,
            224.0 * 4.0 / 13.0 - 1.0,
            224.0 * 6.0 / 13.0 - 1.0,
        );
        let p = roi_pool(&f, &cell, 224.0, 224.0, 6).unwrap();
        for bin in p.data().chunks_exact(4) {
            assert_eq!(bin, &f.data()[(5 * 13 + 3) * 4..(5 * 13 + 3) * 4 + 4]);
        }
    }

    #[test]
    fn degenerate_region_is_rejected() {
        let f = Tensor::<f64>::zeros(vec![13, 13, 2]);
        let outside = BBox::new(230.0, 10.0, 240.0, 20.0);
        assert!(matches!(
            roi_pool(&f, &outside, 224.0, 224.0, 6),
            Err(ProposalError::DegenerateRegion(_))
        ));
    }

    #[test]
    fn tighten_finds_the_blob() {
        let img = image_from_luma(
            64,
            64,
            |y, x| if (20..30).contains(&y) && (10..40).contains(&x) { 1.0 } else { 0.0 },
        );
        let e = edge_map(&img).unwrap();
        let t = tighten(&e, &BBox::new(0.0, 0.0, 64.0, 64.0), 0.1);
        assert_eq!(t, BBox::new(9.0, 19.0, 41.0, 31.0));
        let blank = edge_map(&Tensor::full(vec![8, 8, 3], 0.0)).unwrap();
        let b = BBox::new(1.0, 1.0, 5.0, 5.0);
        assert_eq!(tighten(&blank, &b, 0.1), b);
    }

    #[test]
    fn detect_multi_on_blank_image_is_empty() {
        let w = NetworkWeights::<f32>::build(NetworkConfig::tiny(2, 48), 2).unwrap();
        let dets = detect_multi(&w, &Tensor::full(vec![48, 48, 3], 0.5), &MultiParams::default()).unwrap();
        assert!(dets.is_empty());
        let bad = MultiParams {
            iou_threshold: 1.0,
            ..MultiParams::default()
        };
        assert!(detect_multi(&w, &Tensor::full(vec![48, 48, 3], 0.5), &bad).is_err());
    }
}
