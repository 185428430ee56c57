//! Finite-difference checks of the tape's analytic gradients (f64 only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConvSpec, GradientTape, Padding, PoolSpec, Result, Tensor, Var};
use crate::bbox::BBox;
use crate::detection::BoxEncoding;
use crate::model::{record_loss, NetworkConfig, NetworkWeights, RegionLabel, TrainingSample};

pub const EPSILON: f64 = 1e-5;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub probes: usize,
    pub max_rel_error: f64,
}

/// `|a - n| / max(|a|, |n|)`, or the plain difference when both are tiny.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < ABS_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Compares the tape gradient of `loss` against central differences at
/// `probes` random entries of the leaves.
pub fn check_leaves<F>(name: &'static str, leaves: &[Tensor<f64>], probes: usize, seed: u64, loss: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&mut GradientTape<'t, f64>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor<f64>> = {
        let mut tape = GradientTape::new();
        let vars: Vec<Var> = leaves.iter().map(|l| tape.param(l)).collect();
        let out = loss(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(leaves)
            .map(|(v, l)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(l.dims().to_vec())))
            .collect()
    };
    compare(name, leaves, &analytic, probes, seed, |ls| {
        let mut tape = GradientTape::new();
        let vars: Vec<Var> = ls.iter().map(|l| tape.param(l)).collect();
        let out = loss(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    })
}

/// Probes cycle through the leaves so each one is covered.
fn compare(
    name: &'static str,
    leaves: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    probes: usize,
    seed: u64,
    value: impl Fn(&[Tensor<f64>]) -> Result<f64>,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = leaves.to_vec();
    let mut worst = 0.0f64;
    for p in 0..probes {
        let li = p % leaves.len();
        let idx = rng.gen_range(0..leaves[li].len());
        let orig = work[li].data()[idx];
        work[li].data_mut()[idx] = orig + EPSILON;
        let plus = value(&work)?;
        work[li].data_mut()[idx] = orig - EPSILON;
        let minus = value(&work)?;
        work[li].data_mut()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * EPSILON);
        worst = worst.max(relative_error(analytic[li].data()[idx], numeric));
    }
    Ok(GradCheck {
        name,
        probes,
        max_rel_error: worst,
    })
}

fn uniform(rng: &mut ChaCha8Rng, dims: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so that ReLU kinks stay out of reach of
/// the finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

pub fn check_conv(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec::square(3, 3, 4, 2);
    let input = uniform(&mut rng, vec![9, 9, 3], -1.0, 1.0);
    let w = uniform(&mut rng, spec.weight_dims().to_vec(), -0.5, 0.5);
    let b = uniform(&mut rng, vec![4], -0.5, 0.5);
    let target = uniform(&mut rng, vec![5, 5, 4], -1.0, 1.0);
    check_leaves("conv2d", &[input, w, b], probes, seed, move |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], spec)?;
        let tv = t.constant(target.clone());
        t.l2(y, tv)
    })
}

pub fn check_maxpool(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // distinct values spaced well beyond 2·EPSILON so no window ties
    let mut vals: Vec<f64> = (0..9 * 9 * 2).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let input = Tensor::new(vec![9, 9, 2], vals)?;
    let target = uniform(&mut rng, vec![4, 4, 2], -1.0, 1.0);
    check_leaves("maxpool", &[input], probes, seed, move |t, v| {
        let y = t.maxpool(v[0], PoolSpec::new(3, 2, Padding::Valid))?;
        let tv = t.constant(target.clone());
        t.l2(y, tv)
    })
}

pub fn check_dense(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = uniform(&mut rng, vec![3, 7], -1.0, 1.0);
    let w = uniform(&mut rng, vec![7, 5], -0.5, 0.5);
    let b = uniform(&mut rng, vec![5], -0.5, 0.5);
    let target = uniform(&mut rng, vec![3, 5], -1.0, 1.0);
    check_leaves("dense", &[input, w, b], probes, seed, move |t, v| {
        let y = t.dense(v[0], v[1], v[2])?;
        let tv = t.constant(target.clone());
        t.l2(y, tv)
    })
}

pub fn check_relu(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = away_from_zero(&mut rng, vec![6, 5]);
    let target = uniform(&mut rng, vec![6, 5], -1.0, 1.0);
    check_leaves("relu", &[input], probes, seed, move |t, v| {
        let y = t.relu(v[0]);
        let tv = t.constant(target.clone());
        t.l2(y, tv)
    })
}

pub fn check_softmax_cross_entropy(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = uniform(&mut rng, vec![4, 3], -2.0, 2.0);
    let targets = [0, 2, 1, 2];
    check_leaves("softmax_cross_entropy", &[logits], probes, seed, move |t, v| {
        t.softmax_cross_entropy(v[0], &targets)
    })
}

pub fn check_l2(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = uniform(&mut rng, vec![10], -1.0, 1.0);
    let q = uniform(&mut rng, vec![10], -1.0, 1.0);
    check_leaves("l2", &[p, q], probes, seed, |t, v| t.l2(v[0], v[1]))
}

pub fn check_box_l2(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = uniform(&mut rng, vec![3, 12], -1.0, 1.0);
    let targets = [Some((1, [0.5, 0.4, 0.2, 0.6])), None, Some((2, [0.1, 0.9, 0.3, 0.3]))];
    check_leaves("box_l2", &[p], probes, seed, move |t, v| t.box_l2(v[0], &targets))
}

/// Full training loss of a narrow network on a two-image batch, probed over
/// every weight and bias tensor.
pub fn check_network(probes: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetworkConfig::tiny(3, 48);
    let weights = NetworkWeights::<f64>::build(config.clone(), seed).map_err(model_err)?;
    let batch = vec![
        TrainingSample {
            image: uniform(&mut rng, config.input_dims().to_vec(), 0.0, 1.0),
            class: 0,
            target: None,
            regions: vec![RegionLabel {
                bbox: BBox::new(4.0, 10.0, 30.0, 40.0),
                class: 0,
            }],
        },
        TrainingSample {
            image: uniform(&mut rng, config.input_dims().to_vec(), 0.0, 1.0),
            class: 2,
            target: Some(BoxEncoding {
                cx: 0.4,
                cy: 0.6,
                w: 0.3,
                h: 0.5,
            }),
            regions: vec![
                RegionLabel {
                    bbox: BBox::new(12.0, 17.0, 27.0, 41.0),
                    class: 2,
                },
                RegionLabel {
                    bbox: BBox::new(30.0, 0.0, 48.0, 20.0),
                    class: 0,
                },
            ],
        },
    ];
    let leaves: Vec<Tensor<f64>> = weights.layers().iter().flat_map(|l| [l.weights.clone(), l.bias.clone()]).collect();
    let analytic: Vec<Tensor<f64>> = {
        let mut tape = GradientTape::new();
        let lv = record_loss(&weights, &batch, 1.0, &mut tape).map_err(model_err)?;
        let grads = tape.backward(lv.total)?;
        lv.params
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .zip(&leaves)
            .map(|(v, l)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(l.dims().to_vec())))
            .collect()
    };
    compare("network", &leaves, &analytic, probes, seed, |ls| {
        let mut w = weights.clone();
        for (layer, pair) in w.layers_mut().iter_mut().zip(ls.chunks_exact(2)) {
            layer.weights = pair[0].clone();
            layer.bias = pair[1].clone();
        }
        let mut tape = GradientTape::new();
        let lv = record_loss(&w, &batch, 1.0, &mut tape).map_err(model_err)?;
        Ok(tape.value(lv.total).data()[0])
    })
}

fn model_err(e: crate::model::ModelError) -> super::TensorError {
    super::TensorError::invalid("gradcheck", e.to_string())
}

/// Every layer check plus the full network, at `probes` probes each.
pub fn check_all(probes: usize, seed: u64) -> Result<Vec<GradCheck>> {
    Ok(vec![
        check_conv(probes, seed)?,
        check_maxpool(probes, seed)?,
        check_dense(probes, seed)?,
        check_relu(probes, seed)?,
        check_softmax_cross_entropy(probes, seed)?,
        check_l2(probes, seed)?,
        check_box_l2(probes, seed)?,
        check_network(probes, seed)?,
    ])
}
