//! Reverse-mode gradient tape over the detector's layer set.
//!
//! Leaves borrow their tensors, so recording a forward pass over a large
//! weight set does not copy the weights. Intermediate gradients are released
//! as soon as they have been propagated; only leaf gradients are returned.

use std::borrow::Cow;

use super::ops::{self, ConvCache, ConvSpec, PoolSpec};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        input: Var,
        weights: Var,
        bias: Var,
        spec: ConvSpec,
        cache: ConvCache<T>,
    },
    /// Max pooling and ROI pooling: each output element copies one input cell.
    Route {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    Stack {
        inputs: Vec<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    L2 {
        predicted: Var,
        target: Var,
    },
    BoxL2 {
        predicted: Var,
        targets: Vec<Option<(usize, [T; 4])>>,
        positives: usize,
    },
    Sum {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so that `backward` can return gradients of
/// a scalar with respect to every leaf marked as requiring them.
pub struct GradientTape<'a, T: Scalar = f64> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Scalar> Default for GradientTape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> GradientTape<'a, T> {
    pub fn new() -> Self {
        GradientTape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A borrowed parameter; gradients are returned for it.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// A borrowed non-differentiable leaf, e.g. a training image.
    pub fn input(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// An owned leaf, optionally differentiable (e.g. an input image).
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, input: Var, weights: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let (out, cache) = ops::conv2d_forward_cached(self.value(input), self.value(weights), self.value(bias), &spec)?;
        let rg = self.needs(&[input, weights, bias]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Conv {
                input,
                weights,
                bias,
                spec,
                cache,
            },
            rg,
        ))
    }

    pub fn maxpool(&mut self, input: Var, spec: PoolSpec) -> Result<Var> {
        let (out, argmax) = ops::maxpool_forward(self.value(input), &spec)?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::Route { input, argmax }, rg))
    }

    /// Records a precomputed gather, e.g. an ROI pool, whose every output
    /// element is the input element at `argmax[i]`.
    pub fn route(&mut self, input: Var, out: Tensor<T>, argmax: Vec<usize>) -> Result<Var> {
        if out.len() != argmax.len() {
            return Err(TensorError::shape("route", "index count", out.len(), argmax.len()));
        }
        let n = self.value(input).len();
        if let Some(&bad) = argmax.iter().find(|&&i| i >= n) {
            return Err(TensorError::Index {
                op: "route",
                index: bad,
                len: n,
            });
        }
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::Route { input, argmax }, rg))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = ops::dense_forward(self.value(input), self.value(weights), self.value(bias))?;
        let rg = self.needs(&[input, weights, bias]);
        Ok(self.push(Cow::Owned(out), Op::Dense { input, weights, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(out), Op::Relu { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, dims: Vec<usize>) -> Result<Var> {
        let out = self.value(input).clone().reshape(dims)?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::Reshape { input }, rg))
    }

    /// Stacks equally shaped tensors along a new leading batch axis.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| TensorError::invalid("stack", "no inputs"))?;
        let dims = self.value(*first).dims().to_vec();
        let mut data = Vec::with_capacity(inputs.len() * self.value(*first).len());
        for v in inputs {
            self.value(*v).expect_dims("stack", &dims)?;
            data.extend_from_slice(self.value(*v).data());
        }
        let mut out_dims = vec![inputs.len()];
        out_dims.extend(dims);
        let out = Tensor::new(out_dims, data)?;
        let rg = self.needs(inputs);
        Ok(self.push(Cow::Owned(out), Op::Stack { inputs: inputs.to_vec() }, rg))
    }

    /// Mean cross-entropy of the softmax of each logit row against `targets`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let n = *lv.dims().last().expect("rank >= 1");
        let rows = lv.len() / n;
        if rows != targets.len() {
            return Err(TensorError::shape("softmax_cross_entropy", "batch", rows, targets.len()));
        }
        let probs = ops::softmax(lv)?;
        let mut loss = T::zero();
        for (row, &t) in probs.data().chunks_exact(n).zip(targets) {
            if t >= n {
                return Err(TensorError::Index {
                    op: "softmax_cross_entropy",
                    index: t,
                    len: n,
                });
            }
            loss -= row[t].max(T::from_f64(ops::PROB_FLOOR)).ln();
        }
        loss /= T::from_f64(rows as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Sum of squared differences.
    pub fn l2(&mut self, predicted: Var, target: Var) -> Result<Var> {
        let loss = ops::l2_loss(self.value(predicted), self.value(target))?;
        let rg = self.needs(&[predicted, target]);
        Ok(self.push(Cow::Owned(Tensor::scalar(loss)), Op::L2 { predicted, target }, rg))
    }

    /// Per-class box loss over `[B, 4n]` regressor rows: for every sample with
    /// a target `(class, box)`, the squared error of that class's 4-tuple.
    /// Averaged over the samples that have a target; zero when none do.
    pub fn box_l2(&mut self, predicted: Var, targets: &[Option<(usize, [T; 4])>]) -> Result<Var> {
        let pv = self.value(predicted);
        let width = *pv.dims().last().expect("rank >= 1");
        let rows = pv.len() / width;
        if rows != targets.len() {
            return Err(TensorError::shape("box_l2", "batch", rows, targets.len()));
        }
        let mut loss = T::zero();
        let mut positives = 0;
        for (b, t) in targets.iter().enumerate() {
            if let Some((class, target)) = t {
                let base = 4 * class;
                if base + 4 > width {
                    return Err(TensorError::Index {
                        op: "box_l2",
                        index: *class,
                        len: width / 4,
                    });
                }
                for j in 0..4 {
                    let d = pv.data()[b * width + base + j] - target[j];
                    loss += d * d;
                }
                positives += 1;
            }
        }
        if positives > 0 {
            loss /= T::from_f64(positives as f64);
        }
        let rg = self.needs(&[predicted]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::BoxL2 {
                predicted,
                targets: targets.to_vec(),
                positives,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum { input }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(out), Op::Scale { input, factor }, rg)
    }

    /// Gradients of the scalar `loss` with respect to every differentiable leaf.
    ///
    /// Nodes are visited once each, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(TensorError::invalid("backward", "nothing recorded for this loss"));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::shape("backward", "loss length", 1, self.value(loss).len()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims().to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Conv {
                input,
                weights,
                bias,
                spec,
                cache,
            } => {
                let cg = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*weights),
                    self.value(*bias),
                    spec,
                    cache,
                    g,
                    rg(*input),
                )?;
                if let Some(gi) = cg.input {
                    accumulate(&mut grads[input.0], gi)?;
                }
                if rg(*weights) {
                    accumulate(&mut grads[weights.0], cg.weights)?;
                }
                if rg(*bias) {
                    accumulate(&mut grads[bias.0], cg.bias)?;
                }
            }
            Op::Route { input, argmax } => {
                if rg(*input) {
                    let gi = ops::maxpool_backward(self.value(*input).dims(), argmax, g)?;
                    accumulate(&mut grads[input.0], gi)?;
                }
            }
            Op::Dense { input, weights, bias } => {
                let dg = ops::dense_backward(self.value(*input), self.value(*weights), self.value(*bias), g, rg(*input))?;
                if let Some(gi) = dg.input {
                    accumulate(&mut grads[input.0], gi)?;
                }
                if rg(*weights) {
                    accumulate(&mut grads[weights.0], dg.weights)?;
                }
                if rg(*bias) {
                    accumulate(&mut grads[bias.0], dg.bias)?;
                }
            }
            Op::Relu { input } => {
                if rg(*input) {
                    accumulate(&mut grads[input.0], ops::relu_backward(self.value(*input), g)?)?;
                }
            }
            Op::Reshape { input } => {
                if rg(*input) {
                    let gi = g.clone().reshape(self.value(*input).dims().to_vec())?;
                    accumulate(&mut grads[input.0], gi)?;
                }
            }
            Op::Stack { inputs } => {
                let row = g.len() / inputs.len();
                for (k, v) in inputs.iter().enumerate() {
                    if rg(*v) {
                        let part = g.data()[k * row..(k + 1) * row].to_vec();
                        accumulate(&mut grads[v.0], Tensor::new(self.value(*v).dims().to_vec(), part)?)?;
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                if rg(*logits) {
                    let n = *probs.dims().last().expect("rank >= 1");
                    let upstream = g.data()[0] / T::from_f64(targets.len() as f64);
                    let mut gi = probs.clone();
                    for (row, &t) in gi.data_mut().chunks_exact_mut(n).zip(targets) {
                        row[t] -= T::one();
                        row.iter_mut().for_each(|v| *v *= upstream);
                    }
                    accumulate(&mut grads[logits.0], gi)?;
                }
            }
            Op::L2 { predicted, target } => {
                let two = T::from_f64(2.0) * g.data()[0];
                let diff = self.value(*predicted).zip_map(self.value(*target), |p, t| two * (p - t))?;
                if rg(*target) {
                    let neg = Tensor::new(diff.dims().to_vec(), diff.data().iter().map(|&v| -v).collect())?;
                    let neg = neg.reshape(self.value(*target).dims().to_vec())?;
                    accumulate(&mut grads[target.0], neg)?;
                }
                if rg(*predicted) {
                    accumulate(&mut grads[predicted.0], diff)?;
                }
            }
            Op::BoxL2 {
                predicted,
                targets,
                positives,
            } => {
                if rg(*predicted) {
                    let pv = self.value(*predicted);
                    let width = *pv.dims().last().expect("rank >= 1");
                    let mut gi = Tensor::zeros(pv.dims().to_vec());
                    if *positives > 0 {
                        let coef = T::from_f64(2.0) * g.data()[0] / T::from_f64(*positives as f64);
                        for (b, t) in targets.iter().enumerate() {
                            if let Some((class, target)) = t {
                                for j in 0..4 {
                                    let o = b * width + 4 * class + j;
                                    gi.data_mut()[o] = coef * (pv.data()[o] - target[j]);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[predicted.0], gi)?;
                }
            }
            Op::Sum { input } => {
                if rg(*input) {
                    let gi = Tensor::full(self.value(*input).dims().to_vec(), g.data()[0]);
                    accumulate(&mut grads[input.0], gi)?;
                }
            }
            Op::Add { a, b } => {
                if rg(*a) {
                    accumulate(&mut grads[a.0], g.clone())?;
                }
                if rg(*b) {
                    accumulate(&mut grads[b.0], g.clone())?;
                }
            }
            Op::Scale { input, factor } => {
                if rg(*input) {
                    accumulate(&mut grads[input.0], g.map(|v| v * *factor))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Leaf gradients produced by [`GradientTape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let p = Tensor::<f64>::from_fn(vec![3, 2], |i| i as f64);
        let mut tape = GradientTape::new();
        let v = tape.param(&p);
        let loss = tape.sum(v);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(v).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn l2_gradient_is_twice_difference() {
        let pred = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let target = Tensor::from_vec(vec![0.0, 1.0, 0.5]);
        let mut tape = GradientTape::new();
        let p = tape.param(&pred);
        let t = tape.constant(target.clone());
        let loss = tape.l2(p, t).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[2.0, -6.0, 0.0]);
        assert!(grads.get(t).is_none());
    }

    #[test]
    fn backward_without_forward_fails() {
        let tape = GradientTape::<f64>::new();
        assert!(tape.backward(Var(0)).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let p = Tensor::<f64>::zeros(vec![2]);
        let mut tape = GradientTape::new();
        let v = tape.param(&p);
        let r = tape.relu(v);
        assert!(tape.backward(r).is_err());
    }

    #[test]
    fn reused_parameter_accumulates() {
        let p = Tensor::from_vec(vec![2.0f64]);
        let mut tape = GradientTape::new();
        let v = tape.param(&p);
        let twice = tape.add(v, v).unwrap();
        let loss = tape.sum(twice);
        assert_eq!(tape.backward(loss).unwrap().get(v).unwrap().data(), &[2.0]);
    }

    #[test]
    fn box_loss_without_positives_is_zero() {
        let p = Tensor::<f64>::from_fn(vec![2, 8], |i| i as f64);
        let mut tape = GradientTape::new();
        let v = tape.param(&p);
        let loss = tape.box_l2(v, &[None, None]).unwrap();
        assert_eq!(tape.value(loss).data(), &[0.0]);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(v).unwrap().data().iter().all(|&x| x == 0.0));
    }
}
