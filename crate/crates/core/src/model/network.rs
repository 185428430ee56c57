use super::{ModelError, NetworkWeights, Result};
use crate::detection::{BoxEncoding, Detection, BACKGROUND};
use crate::tensor::ops::{conv2d_forward, dense_forward, maxpool_forward, relu, softmax};
use crate::tensor::{Scalar, Tensor};

/// Output dims of one layer, as reported by a shape probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl LayerShape {
    pub fn new(name: &str, dims: Vec<usize>) -> Self {
        LayerShape {
            name: name.to_string(),
            dims,
        }
    }
}

/// Class distribution plus one decoded box per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Scalar> {
    pub class_probs: Tensor<T>,
    pub boxes: Vec<BoxEncoding>,
}

impl<T: Scalar> NetworkWeights<T> {
    pub(crate) fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let expected = self.config().input_dims();
        if image.dims() != expected {
            return Err(ModelError::InputDims {
                expected: expected.to_vec(),
                found: image.dims().to_vec(),
            });
        }
        Ok(())
    }

    fn conv_block_traced(&self, image: &Tensor<T>, trace: &mut Option<&mut Vec<LayerShape>>) -> Result<Tensor<T>> {
        self.check_input(image)?;
        let config = self.config();
        let mut x = image.clone();
        for i in 0..5 {
            let layer = self.layer(i);
            x = relu(&conv2d_forward(&x, &layer.weights, &layer.bias, &config.conv[i])?);
            if let Some(t) = trace.as_deref_mut() {
                t.push(LayerShape::new(layer.name, x.dims().to_vec()));
            }
            if i < 2 {
                x = maxpool_forward(&x, &config.pool)?.0;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(LayerShape::new(&format!("pool{}", i + 1), x.dims().to_vec()));
                }
            }
        }
        Ok(x)
    }

    /// Shared convolutional features (`13x13x128` for the reference network).
    pub fn conv_block(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv_block_traced(image, &mut None)
    }

    fn dense_stack(&self, first: usize, input: Tensor<T>, trace: &mut Option<&mut Vec<LayerShape>>) -> Result<Tensor<T>> {
        let mut x = input;
        for i in first..first + 3 {
            let layer = self.layer(i);
            x = dense_forward(&x, &layer.weights, &layer.bias)?;
            if i < first + 2 {
                x = relu(&x);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(LayerShape::new(layer.name, x.dims().to_vec()));
            }
        }
        Ok(x)
    }

    /// Softmax class distribution from a pooled `[6, 6, C]` grid.
    pub fn classify_pooled(&self, pooled: &Tensor<T>) -> Result<Tensor<T>> {
        let flat = pooled.clone().reshape(vec![pooled.len()])?;
        Ok(softmax(&self.dense_stack(5, flat, &mut None)?)?)
    }

    /// Softmax class distribution from full conv features (pool5 then fc1–fc3).
    pub fn classify_features(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = maxpool_forward(features, &self.config().pool)?.0;
        self.classify_pooled(&pooled)
    }

    fn regress_features(&self, features: &Tensor<T>, trace: &mut Option<&mut Vec<LayerShape>>) -> Result<Vec<BoxEncoding>> {
        let flat = features.clone().reshape(vec![features.len()])?;
        let raw = self.dense_stack(8, flat, trace)?;
        Ok(raw
            .data()
            .chunks_exact(4)
            .map(|c| BoxEncoding {
                cx: c[0].to_f64(),
                cy: c[1].to_f64(),
                w: c[2].to_f64(),
                h: c[3].to_f64(),
            })
            .collect())
    }

    fn forward_traced(&self, image: &Tensor<T>, mut trace: Option<&mut Vec<LayerShape>>) -> Result<Prediction<T>> {
        let features = self.conv_block_traced(image, &mut trace)?;
        let pooled = maxpool_forward(&features, &self.config().pool)?.0;
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerShape::new("pool5", pooled.dims().to_vec()));
        }
        let flat = pooled.clone().reshape(vec![pooled.len()])?;
        let logits = self.dense_stack(5, flat, &mut trace)?;
        let class_probs = softmax(&logits)?;
        let boxes = self.regress_features(&features, &mut trace)?;
        Ok(Prediction { class_probs, boxes })
    }

    /// Full inference pass on one `[S, S, 3]` image with values in `[0, 1]`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Prediction<T>> {
        self.forward_traced(image, None)
    }

    /// Runs a forward pass and records every layer's output dims.
    pub fn shape_probe(&self, image: &Tensor<T>) -> Result<Vec<LayerShape>> {
        let mut trace = Vec::with_capacity(15);
        self.forward_traced(image, Some(&mut trace))?;
        Ok(trace)
    }

    /// The most probable non-background class, if its probability reaches
    /// `threshold`. The box is the regressor output for that class, clamped
    /// to the frame.
    pub fn detect(&self, image: &Tensor<T>, threshold: f64) -> Result<Option<Detection>> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ModelError::Threshold(threshold));
        }
        let pred = self.forward(image)?;
        Ok(detection_from(&pred, self.config().input_size as f64, threshold))
    }
}

pub(crate) fn detection_from<T: Scalar>(pred: &Prediction<T>, size: f64, threshold: f64) -> Option<Detection> {
    let probs = pred.class_probs.data();
    let (class, conf) = probs
        .iter()
        .enumerate()
        .skip(BACKGROUND + 1)
        .fold(None, |best: Option<(usize, f64)>, (k, &p)| match best {
            Some((_, bp)) if bp >= p.to_f64() => best,
            _ => Some((k, p.to_f64())),
        })?;
    if conf < threshold {
        return None;
    }
    let bbox = pred.boxes[class].decode_clamped(size, size);
    Some(Detection::new(class, conf, bbox))
}
