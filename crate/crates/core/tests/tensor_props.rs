use divernet::tensor::ops::{conv2d_forward, maxpool_backward, maxpool_forward, softmax};
use divernet::tensor::{ConvSpec, Padding, PoolSpec, Tensor};
use proptest::prelude::*;

fn tensor(dims: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_ignores_row_shift(logits in tensor(vec![3, 5]), shift in -50.0f64..50.0) {
        let a = softmax(&logits).unwrap();
        let b = softmax(&logits.map(|v| v + shift)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for row in a.data().chunks_exact(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_linear_in_input(
        x in tensor(vec![7, 6, 2]),
        y in tensor(vec![7, 6, 2]),
        w in tensor(vec![3, 3, 2, 3]),
        alpha in -2.0f64..2.0,
        stride in 1usize..3,
    ) {
        let spec = ConvSpec { stride, ..ConvSpec::square(3, 2, 3, 1) };
        let zero = Tensor::zeros(vec![3]);
        let combo = x.zip_map(&y, |a, b| alpha * a + b).unwrap();
        let lhs = conv2d_forward(&combo, &w, &zero, &spec).unwrap();
        let fx = conv2d_forward(&x, &w, &zero, &spec).unwrap();
        let fy = conv2d_forward(&y, &w, &zero, &spec).unwrap();
        let rhs = fx.zip_map(&fy, |a, b| alpha * a + b).unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn maxpool_gradient_preserves_mass(x in tensor(vec![9, 8, 3]), g in tensor(vec![4, 3, 3])) {
        let spec = PoolSpec::new(3, 2, Padding::Valid);
        let (out, argmax) = maxpool_forward(&x, &spec).unwrap();
        prop_assert_eq!(out.dims(), g.dims());
        let back = maxpool_backward(x.dims(), &argmax, &g).unwrap();
        prop_assert!((back.sum() - g.sum()).abs() < 1e-9);
        // gradient lands only on window maxima
        for (i, v) in back.data().iter().enumerate() {
            if *v != 0.0 {
                prop_assert!(argmax.contains(&i));
            }
        }
    }
}
