use super::{Result, Scalar, Tensor, TensorError};

/// One RMSProp update of `params` in place.
///
/// `state ← decay·state + (1−decay)·g²`, then `params ← params − lr·g/√(state+ε)`.
pub fn rmsprop_step<T: Scalar>(
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    state: &mut Tensor<T>,
    lr: T,
    decay: T,
    epsilon: T,
) -> Result<()> {
    grads.expect_dims("rmsprop_step", params.dims())?;
    state.expect_dims("rmsprop_step", params.dims())?;
    let keep = T::one() - decay;
    for ((p, &g), s) in params.data_mut().iter_mut().zip(grads.data()).zip(state.data_mut()) {
        *s = decay * *s + keep * g * g;
        if g != T::zero() {
            *p -= lr * g / (*s + epsilon).sqrt();
        }
    }
    Ok(())
}

/// RMSProp over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct RmsProp<T: Scalar> {
    pub lr: T,
    pub decay: T,
    pub epsilon: T,
    state: Vec<Tensor<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub const DEFAULT_LR: f64 = 0.001;
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-10;

    /// Zero-initialized state shaped like each parameter.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        RmsProp {
            lr: T::from_f64(Self::DEFAULT_LR),
            decay: T::from_f64(Self::DEFAULT_DECAY),
            epsilon: T::from_f64(Self::DEFAULT_EPSILON),
            state: params.into_iter().map(|p| Tensor::zeros(p.dims().to_vec())).collect(),
        }
    }

    pub fn state(&self) -> &[Tensor<T>] {
        &self.state
    }

    /// Updates parameter `index` with its gradient.
    pub fn apply(&mut self, index: usize, params: &mut Tensor<T>, grads: &Tensor<T>) -> Result<()> {
        let len = self.state.len();
        let state = self.state.get_mut(index).ok_or(TensorError::Index {
            op: "RmsProp::apply",
            index,
            len,
        })?;
        rmsprop_step(params, grads, state, self.lr, self.decay, self.epsilon)
    }
}
