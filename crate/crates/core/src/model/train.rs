use super::{ModelError, NetworkWeights, Result};
use crate::bbox::{iou_unchecked, BBox};
use crate::detection::{BoxEncoding, BACKGROUND};
use crate::proposals::roi_pool_indexed;
use crate::tensor::{GradientTape, RmsProp, Scalar, Tensor, TensorError, Var};

/// One supervised example: a network-sized image, its class and, for
/// non-background classes, the normalized box.
#[derive(Debug, Clone)]
pub struct TrainingSample<T: Scalar> {
    pub image: Tensor<T>,
    pub class: usize,
    pub target: Option<BoxEncoding>,
    /// Sub-windows whose pooled features the classifier must also label.
    pub regions: Vec<RegionLabel>,
}

/// A labelled pixel window of a sample image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionLabel {
    pub bbox: BBox,
    pub class: usize,
}

/// Handles into a recorded training loss.
pub struct LossVars {
    pub total: Var,
    pub class_loss: Var,
    pub box_loss: Var,
    /// Mean cross-entropy over all sample regions; `None` without regions.
    pub region_loss: Option<Var>,
    pub logits: Var,
    /// `(weights, bias)` leaves in layer order.
    pub params: Vec<(Var, Var)>,
}

/// Records `mean CE + lambda · mean box L2` for a batch on `tape`, plus the
/// mean region CE when samples carry regions.
///
/// The conv block runs once per image; both heads run batched. Regions are
/// max-pooled from the conv features exactly as the multi-object path does.
pub fn record_loss<'a, T: Scalar>(
    weights: &'a NetworkWeights<T>,
    batch: &'a [TrainingSample<T>],
    lambda: T,
    tape: &mut GradientTape<'a, T>,
) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = weights.num_classes();
    for (index, s) in batch.iter().enumerate() {
        if s.class >= n {
            return Err(ModelError::BadClass {
                index,
                class: s.class,
                num_classes: n,
            });
        }
        if s.class != BACKGROUND && s.target.is_none() {
            return Err(ModelError::MissingBox { index, class: s.class });
        }
        if let Some(r) = s.regions.iter().find(|r| r.class >= n) {
            return Err(ModelError::BadClass {
                index,
                class: r.class,
                num_classes: n,
            });
        }
        weights.check_input(&s.image)?;
    }

    let config = weights.config();
    let params: Vec<(Var, Var)> = weights
        .layers()
        .iter()
        .map(|l| (tape.param(&l.weights), tape.param(&l.bias)))
        .collect();

    let bins = config.pooled_dims()?[0];
    let mut cls_rows = Vec::with_capacity(batch.len());
    let mut reg_rows = Vec::with_capacity(batch.len());
    let mut roi_rows = Vec::new();
    let mut roi_classes = Vec::new();
    for sample in batch {
        let mut x = tape.input(&sample.image);
        for (i, &(w, b)) in params.iter().enumerate().take(5) {
            x = tape.conv2d(x, w, b, config.conv[i])?;
            x = tape.relu(x);
            if i < 2 {
                x = tape.maxpool(x, config.pool)?;
            }
        }
        let features_len = tape.value(x).len();
        let (h, w) = (sample.image.dims()[0] as f64, sample.image.dims()[1] as f64);
        for r in &sample.regions {
            let (out, index) =
                roi_pool_indexed(tape.value(x), &r.bbox, w, h, bins).map_err(|e| ModelError::Config(format!("training region: {e}")))?;
            let len = out.len();
            let pooled = tape.route(x, out, index)?;
            roi_rows.push(tape.reshape(pooled, vec![len])?);
            roi_classes.push(r.class);
        }
        let pooled = tape.maxpool(x, config.pool)?;
        let pooled_len = tape.value(pooled).len();
        cls_rows.push(tape.reshape(pooled, vec![pooled_len])?);
        reg_rows.push(tape.reshape(x, vec![features_len])?);
    }

    let head = |rows: &[Var], first: usize, tape: &mut GradientTape<'a, T>| -> Result<Var> {
        let mut h = tape.stack(rows)?;
        for (i, &(w, b)) in params.iter().enumerate().skip(first).take(3) {
            h = tape.dense(h, w, b)?;
            if i < first + 2 {
                h = tape.relu(h);
            }
        }
        Ok(h)
    };
    let logits = head(&cls_rows, 5, tape)?;
    let boxes = head(&reg_rows, 8, tape)?;

    let classes: Vec<usize> = batch.iter().map(|s| s.class).collect();
    let class_loss = tape.softmax_cross_entropy(logits, &classes)?;
    let targets: Vec<Option<(usize, [T; 4])>> = batch
        .iter()
        .map(|s| match (s.class, s.target) {
            (BACKGROUND, _) | (_, None) => None,
            (c, Some(t)) => Some((c, t.as_array().map(T::from_f64))),
        })
        .collect();
    let box_loss = tape.box_l2(boxes, &targets)?;
    let weighted = tape.scale(box_loss, lambda);
    let mut total = tape.add(class_loss, weighted)?;
    let region_loss = if roi_rows.is_empty() {
        None
    } else {
        let roi_logits = head(&roi_rows, 5, tape)?;
        let loss = tape.softmax_cross_entropy(roi_logits, &roi_classes)?;
        total = tape.add(total, loss)?;
        Some(loss)
    };
    Ok(LossVars {
        total,
        class_loss,
        box_loss,
        region_loss,
        logits,
        params,
    })
}

/// Losses and accuracy of one optimization step (measured before the update).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub class_loss: f64,
    pub box_loss: f64,
    /// Zero when the batch had no regions.
    pub region_loss: f64,
    pub correct: usize,
    pub count: usize,
}

/// One RMSProp step on a batch. The optimizer's `lr` is used as-is.
pub fn training_step<T: Scalar>(
    weights: &mut NetworkWeights<T>,
    optimizer: &mut RmsProp<T>,
    batch: &[TrainingSample<T>],
    lambda: T,
) -> Result<StepReport> {
    let (report, mut grads, params) = {
        let mut tape = GradientTape::new();
        let vars = record_loss(weights, batch, lambda, &mut tape)?;
        let total = tape.value(vars.total).data()[0];
        if !total.is_finite() {
            return Err(TensorError::NonFinite { op: "training loss" }.into());
        }
        let n = weights.num_classes();
        let correct = tape
            .value(vars.logits)
            .data()
            .chunks_exact(n)
            .zip(batch)
            .filter(|(row, s)| argmax(row) == s.class)
            .count();
        let report = StepReport {
            class_loss: tape.value(vars.class_loss).data()[0].to_f64(),
            box_loss: tape.value(vars.box_loss).data()[0].to_f64(),
            region_loss: vars.region_loss.map_or(0.0, |v| tape.value(v).data()[0].to_f64()),
            correct,
            count: batch.len(),
        };
        let grads = tape.backward(vars.total)?;
        (report, grads, vars.params)
    };
    for (i, (layer, (wv, bv))) in weights.layers_mut().iter_mut().zip(params).enumerate() {
        if let Some(g) = grads.take(wv) {
            optimizer.apply(2 * i, &mut layer.weights, &g)?;
        }
        if let Some(g) = grads.take(bv) {
            optimizer.apply(2 * i + 1, &mut layer.bias, &g)?;
        }
    }
    Ok(report)
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Random label-preserving distortions applied to every sample once per
/// epoch: a horizontal mirror and an integer translation that keeps the
/// target box inside the frame. Uncovered pixels repeat the nearest edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub flip: bool,
    /// Largest shift as a fraction of the image side.
    pub max_shift: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            flip: true,
            max_shift: 0.25,
        }
    }
}

impl Augment {
    pub fn apply<T: Scalar, R: rand::Rng>(&self, sample: &TrainingSample<T>, rng: &mut R) -> TrainingSample<T> {
        let dims = sample.image.dims();
        let (h, w, c) = (dims[0], dims[1], dims[2]);
        let flip = self.flip && rng.gen::<bool>();
        let mut target = sample.target;
        if let (true, Some(t)) = (flip, target.as_mut()) {
            t.cx = 1.0 - t.cx;
        }
        let mut shift = |len: usize, center: Option<(f64, f64)>| -> isize {
            let m = self.max_shift.max(0.0);
            let (lo, hi) = match center {
                Some((c, e)) => ((-m).max(e / 2.0 - c), m.min(1.0 - e / 2.0 - c)),
                None => (-m, m),
            };
            if hi <= lo {
                return 0;
            }
            (rng.gen_range(lo..=hi) * len as f64).trunc() as isize
        };
        let dx = shift(w, target.map(|t| (t.cx, t.w)));
        let dy = shift(h, target.map(|t| (t.cy, t.h)));
        if let Some(t) = target.as_mut() {
            t.cx += dx as f64 / w as f64;
            t.cy += dy as f64 / h as f64;
        }
        let regions = sample
            .regions
            .iter()
            .filter_map(|r| {
                let b = if flip { r.bbox.mirror_x(w as f64) } else { r.bbox };
                let b = b.translate(dx as f64, dy as f64).clip(w as f64, h as f64)?;
                Some(RegionLabel { bbox: b, class: r.class })
            })
            .collect();
        let src = sample.image.data();
        let image = Tensor::from_fn(vec![h, w, c], |i| {
            let (y, x, k) = (i / (w * c), (i / c) % w, i % c);
            let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
            let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
            let sx = if flip { w - 1 - sx } else { sx };
            src[(sy * w + sx) * c + k]
        });
        TrainingSample {
            image,
            class: sample.class,
            target,
            regions,
        }
    }
}

/// Draws classifier regions for a sample each epoch: the object box with its
/// edges jittered, labelled with the sample's class, and windows that are
/// mostly background, labelled background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSampler {
    pub negatives: usize,
    /// Largest edge displacement of the positive, as a fraction of the box side.
    pub jitter: f64,
    /// A negative may overlap the object by at most this IoU, and at most
    /// this fraction of its own area.
    pub max_overlap: f64,
}

impl Default for RegionSampler {
    fn default() -> Self {
        RegionSampler {
            negatives: 2,
            jitter: 0.1,
            max_overlap: 0.3,
        }
    }
}

impl RegionSampler {
    pub fn draw<T: Scalar, R: rand::Rng>(&self, sample: &TrainingSample<T>, rng: &mut R) -> Vec<RegionLabel> {
        let dims = sample.image.dims();
        let (h, w) = (dims[0] as f64, dims[1] as f64);
        let mut out = Vec::with_capacity(self.negatives + 1);
        let object = sample.target.filter(|_| sample.class != BACKGROUND).map(|t| t.decode_clamped(w, h));
        if let Some(b) = object {
            let j = self.jitter.max(0.0);
            let mut edge = |v: f64, side: f64| v + rng.gen_range(-j..=j) * side;
            let (bw, bh) = (b.width(), b.height());
            let moved = BBox::new(edge(b.xmin, bw), edge(b.ymin, bh), edge(b.xmax, bw), edge(b.ymax, bh));
            if let Some(m) = moved.clip(w, h).filter(|m| m.width() >= 1.0 && m.height() >= 1.0) {
                out.push(RegionLabel {
                    bbox: m,
                    class: sample.class,
                });
            }
        }
        let side = w.min(h);
        let mut found = 0;
        for _ in 0..20 * self.negatives {
            if found == self.negatives {
                break;
            }
            let s = rng.gen_range(0.2..=0.8) * side;
            let a: f64 = rng.gen_range(0.5f64..=2.0).sqrt();
            let (bw, bh) = ((s * a).min(w), (s / a).min(h));
            let x = rng.gen_range(0.0..=w - bw);
            let y = rng.gen_range(0.0..=h - bh);
            let b = BBox::new(x, y, x + bw, y + bh);
            let clear = object.map_or(true, |o| {
                iou_unchecked(&o, &b) <= self.max_overlap && o.intersection_area(&b) <= self.max_overlap * b.area()
            });
            if clear {
                out.push(RegionLabel {
                    bbox: b,
                    class: BACKGROUND,
                });
                found += 1;
            }
        }
        out
    }
}

/// Learning rate as a function of the zero-based epoch index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `base · gamma^epoch`
    Exponential {
        gamma: f64,
    },
    /// `base · factor^(epoch / every)`
    Step {
        every: usize,
        factor: f64,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Exponential { gamma: 0.93 }
    }
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Exponential { gamma } => base * gamma.powi(epoch as i32),
            LrSchedule::Step { every, factor } => base * factor.powi((epoch / every.max(1)) as i32),
        }
    }
}

/// Owns a network and its optimizer state for the duration of a training run.
pub struct Trainer<T: Scalar> {
    pub weights: NetworkWeights<T>,
    pub optimizer: RmsProp<T>,
    pub lambda: T,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: LrSchedule,
    pub augment: Option<Augment>,
    /// Fresh classifier regions for every sample each epoch.
    pub regions: Option<RegionSampler>,
    /// Optimizer steps over which the rate ramps linearly up to the
    /// scheduled value.
    pub warmup_steps: usize,
    steps_taken: usize,
}

impl<T: Scalar> Trainer<T> {
    pub const DEFAULT_BATCH: usize = 16;
    pub const DEFAULT_WARMUP: usize = 50;
    /// Lower than the optimizer's own default; the wide fan-in dense layers
    /// blow up the box loss on the first steps at 1e-3.
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(weights: NetworkWeights<T>) -> Self {
        let optimizer = RmsProp::new(weights.layers().iter().flat_map(|l| [&l.weights, &l.bias]));
        Trainer {
            weights,
            optimizer,
            lambda: T::one(),
            batch_size: Self::DEFAULT_BATCH,
            base_lr: Self::DEFAULT_LR,
            schedule: LrSchedule::default(),
            augment: Some(Augment::default()),
            regions: Some(RegionSampler::default()),
            warmup_steps: Self::DEFAULT_WARMUP,
            steps_taken: 0,
        }
    }

    /// Runs `epochs` shuffled passes at the scheduled learning rate, with the
    /// warmup ramp over the first optimizer steps. `report` sees every finished epoch.
    pub fn fit(
        &mut self,
        samples: &[TrainingSample<T>],
        epochs: usize,
        seed: u64,
        mut report: impl FnMut(usize, &StepReport),
    ) -> Result<Vec<StepReport>> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let lr = self.schedule.rate(self.base_lr, e);
            order.shuffle(&mut rng);
            let r = if self.augment.is_none() && self.regions.is_none() {
                self.run_epoch(samples, &order, Some(lr))?
            } else {
                let varied: Vec<_> = samples
                    .iter()
                    .map(|s| {
                        let mut v = match self.augment {
                            Some(a) => a.apply(s, &mut rng),
                            None => s.clone(),
                        };
                        if let Some(sampler) = self.regions {
                            v.regions.extend(sampler.draw(&v, &mut rng));
                        }
                        v
                    })
                    .collect();
                self.run_epoch(&varied, &order, Some(lr))?
            };
            report(e, &r);
            history.push(r);
        }
        Ok(history)
    }

    pub fn step(&mut self, batch: &[TrainingSample<T>]) -> Result<StepReport> {
        training_step(&mut self.weights, &mut self.optimizer, batch, self.lambda)
    }

    fn warm_step(&mut self, batch: &[TrainingSample<T>], lr: f64) -> Result<StepReport> {
        let ramp = if self.steps_taken < self.warmup_steps {
            (self.steps_taken + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        self.optimizer.lr = T::from_f64(lr * ramp);
        self.steps_taken += 1;
        self.step(batch)
    }

    /// One pass over `samples` in the given order; returns sample-weighted
    /// mean losses and the accuracy count.
    pub fn epoch(&mut self, samples: &[TrainingSample<T>], order: &[usize]) -> Result<StepReport> {
        self.run_epoch(samples, order, None)
    }

    fn run_epoch(&mut self, samples: &[TrainingSample<T>], order: &[usize], lr: Option<f64>) -> Result<StepReport> {
        let mut total = StepReport {
            class_loss: 0.0,
            box_loss: 0.0,
            region_loss: 0.0,
            correct: 0,
            count: 0,
        };
        let mut batch = Vec::with_capacity(self.batch_size);
        for chunk in order.chunks(self.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let r = match lr {
                Some(lr) => self.warm_step(&batch, lr)?,
                None => self.step(&batch)?,
            };
            total.class_loss += r.class_loss * r.count as f64;
            total.box_loss += r.box_loss * r.count as f64;
            total.region_loss += r.region_loss * r.count as f64;
            total.correct += r.correct;
            total.count += r.count;
        }
        if total.count > 0 {
            total.class_loss /= total.count as f64;
            total.box_loss /= total.count as f64;
            total.region_loss /= total.count as f64;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::super::NetworkConfig;
    use super::*;
    use rand::SeedableRng;

    fn sample(size: usize, class: usize, seed: usize) -> TrainingSample<f64> {
        TrainingSample {
            image: Tensor::from_fn(vec![size, size, 3], |i| ((i * 31 + seed * 17) % 97) as f64 / 97.0),
            class,
            target: (class != 0).then_some(BoxEncoding {
                cx: 0.5,
                cy: 0.4,
                w: 0.3,
                h: 0.6,
            }),
            regions: Vec::new(),
        }
    }

    #[test]
    fn augmented_box_tracks_the_pixels() {
        use rand::SeedableRng;
        // a single bright pixel whose box is 1x1 around it
        let size = 32;
        let mut image = Tensor::<f64>::zeros(vec![size, size, 1]);
        image.set(&[10, 20, 0], 1.0);
        let target = BoxEncoding {
            cx: 20.5 / 32.0,
            cy: 10.5 / 32.0,
            w: 1.0 / 32.0,
            h: 1.0 / 32.0,
        };
        let s = TrainingSample {
            image,
            class: 1,
            target: Some(target),
            regions: Vec::new(),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = Augment::default().apply(&s, &mut rng);
            let t = a.target.unwrap();
            let (x, y) = ((t.cx * 32.0 - 0.5).round() as usize, (t.cy * 32.0 - 0.5).round() as usize);
            assert_eq!(a.image.at(&[y, x, 0]), 1.0);
            assert!(t.cx - t.w / 2.0 >= 0.0 && t.cx + t.w / 2.0 <= 1.0);
        }
    }

    #[test]
    fn sampled_regions_respect_the_object() {
        let s = sample(48, 1, 3);
        let object = s.target.unwrap().decode(48.0, 48.0);
        let sampler = RegionSampler::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let regions = sampler.draw(&s, &mut rng);
            assert_eq!(regions.iter().filter(|r| r.class == 1).count(), 1);
            for r in &regions {
                assert!(r.bbox.is_valid() && r.bbox.within(48.0, 48.0));
                let overlap = iou_unchecked(&r.bbox, &object);
                if r.class == 1 {
                    assert!(overlap > 0.5, "{overlap}");
                } else {
                    assert!(overlap <= 0.3 && object.intersection_area(&r.bbox) <= 0.3 * r.bbox.area());
                }
            }
        }
        let background = sampler.draw(&sample(48, 0, 3), &mut rng);
        assert!(background.len() == 2 && background.iter().all(|r| r.class == BACKGROUND));
    }

    #[test]
    fn mirrored_sample_mirrors_its_regions() {
        let mut s = sample(32, 0, 1);
        s.regions.push(RegionLabel {
            bbox: BBox::new(2.0, 4.0, 10.0, 12.0),
            class: 0,
        });
        let flip_only = Augment {
            flip: true,
            max_shift: 0.0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let seen: Vec<BBox> = (0..20).map(|_| flip_only.apply(&s, &mut rng).regions[0].bbox).collect();
        assert!(seen.contains(&BBox::new(2.0, 4.0, 10.0, 12.0)));
        assert!(seen.contains(&BBox::new(22.0, 4.0, 30.0, 12.0)));
    }

    #[test]
    fn region_loss_is_reported_only_with_regions() {
        let w = NetworkWeights::<f64>::build(NetworkConfig::tiny(2, 48), 1).unwrap();
        let plain = vec![sample(48, 1, 1)];
        let mut tape = GradientTape::new();
        assert!(record_loss(&w, &plain, 1.0, &mut tape).unwrap().region_loss.is_none());
        let mut with = plain.clone();
        with[0].regions = RegionSampler::default().draw(&with[0], &mut rand_chacha::ChaCha8Rng::seed_from_u64(2));
        let mut tape = GradientTape::new();
        let v = record_loss(&w, &with, 1.0, &mut tape).unwrap();
        let r = tape.value(v.region_loss.unwrap()).data()[0];
        assert!(r > 0.0 && r.is_finite());
    }

    #[test]
    fn schedules() {
        assert_eq!(LrSchedule::Constant.rate(0.1, 7), 0.1);
        assert!((LrSchedule::Exponential { gamma: 0.5 }.rate(1.0, 3) - 0.125).abs() < 1e-15);
        let step = LrSchedule::Step { every: 10, factor: 0.1 };
        assert_eq!(step.rate(1.0, 9), 1.0);
        assert!((step.rate(1.0, 10) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn background_batch_has_no_box_loss() {
        let w = NetworkWeights::<f64>::build(NetworkConfig::tiny(2, 48), 1).unwrap();
        let batch = vec![sample(48, 0, 1), sample(48, 0, 2)];
        let mut tape = GradientTape::new();
        let v = record_loss(&w, &batch, 1.0, &mut tape).unwrap();
        assert_eq!(tape.value(v.box_loss).data(), &[0.0]);
    }

    #[test]
    fn empty_batch_and_missing_box_are_errors() {
        let mut w = NetworkWeights::<f64>::build(NetworkConfig::tiny(2, 48), 1).unwrap();
        let mut opt = RmsProp::new(w.layers().iter().flat_map(|l| [&l.weights, &l.bias]));
        assert!(matches!(training_step(&mut w, &mut opt, &[], 1.0), Err(ModelError::EmptyBatch)));
        let mut bad = sample(48, 1, 0);
        bad.target = None;
        assert!(matches!(
            training_step(&mut w, &mut opt, &[bad], 1.0),
            Err(ModelError::MissingBox { index: 0, class: 1 })
        ));
        assert!(matches!(
            training_step(&mut w, &mut opt, &[sample(48, 5, 0)], 1.0),
            Err(ModelError::BadClass { .. })
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let w0 = NetworkWeights::<f64>::build(NetworkConfig::tiny(2, 48), 4).unwrap();
        let mut trainer = Trainer::new(w0.clone());
        trainer.optimizer.lr = 0.0;
        trainer.step(&[sample(48, 1, 1), sample(48, 0, 2)]).unwrap();
        assert_eq!(trainer.weights, w0);
    }

    #[test]
    fn a_step_changes_weights_and_reports_losses() {
        let w0 = NetworkWeights::<f64>::build(NetworkConfig::tiny(2, 48), 4).unwrap();
        let mut trainer = Trainer::new(w0.clone());
        let r = trainer.step(&[sample(48, 1, 1), sample(48, 0, 2)]).unwrap();
        assert_ne!(trainer.weights, w0);
        assert!(r.class_loss > 0.0 && r.box_loss > 0.0);
        assert_eq!(r.count, 2);
    }
}
