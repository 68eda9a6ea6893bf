use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::verify::{check_gradients, primitive_cases, FD_STEP};

fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f32>::randn(&[3, 3], 1.0, &mut rng);
    let mut tape = Tape::new();
    let i = tape.constant(Tensor::eye(3));
    let xv = tape.constant(x.clone());
    let y = tape.matmul(i, xv).unwrap();
    assert_eq!(tape.value(y), &x);

    let a = tape.constant(t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t32(&[2, 1], &[0.0, 1.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
    assert!(matches!(tape.matmul(a, c).and_then(|_| tape.matmul(c, a)), Err(NumError::ShapeMismatch { .. })));
}

#[test]
fn every_primitive_matches_finite_differences() {
    for case in primitive_cases() {
        let r = case.run().unwrap();
        assert!(r.max_rel_err < 1e-4, "{}: rel err {}", case.name, r.max_rel_err);
    }
}

#[test]
fn softmax_anchors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[3]));
    let y = tape.softmax(x, 0).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let x = tape.constant(Tensor::from_f64(&[2], &[1000.0, 0.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-6 && d[1].abs() < 1e-6);

    let mut tape32 = Tape::<f32>::new();
    let x = tape32.constant(t32(&[2], &[1000.0, 0.0]));
    let y = tape32.softmax(x, 0).unwrap();
    assert!((tape32.value(y).data()[0] - 1.0).abs() < 1e-6);
}

#[test]
fn layernorm_anchors() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let x = tape.constant(Tensor::full(&[1, 3], 5.0));
    let y = tape.layernorm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));

    let g2 = tape.constant(Tensor::full(&[2], 1.0));
    let b2 = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(Tensor::from_f64(&[1, 2], &[1.0, -1.0]).unwrap());
    let y = tape.layernorm(x, g2, b2, 1e-12).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-9 && (d[1] + 1.0).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = tape.constant(Tensor::full(&[64], 1.0));
    let b = tape.constant(Tensor::zeros(&[64]));
    let x = tape.constant(Tensor::randn(&[1, 64], 3.0, &mut rng));
    let y = tape.layernorm(x, g, b, 1e-5).unwrap();
    let d = tape.value(y).data();
    let mean = d.iter().sum::<f64>() / 64.0;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
    assert!(mean.abs() < 1e-6);
    assert!((var - 1.0).abs() < 1e-4);
}

#[test]
fn gelu_at_origin_and_resize_anchors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1]));
    let y = tape.gelu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0]);

    let m = tape.constant(t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let r = tape.nearest_resize(m, 4, 4).unwrap();
    #[rustfmt::skip]
    let expected = [
        1.0, 1.0, 2.0, 2.0,
        1.0, 1.0, 2.0, 2.0,
        3.0, 3.0, 4.0, 4.0,
        3.0, 3.0, 4.0, 4.0,
    ];
    assert_eq!(tape.value(r).data(), &expected);

    let c = tape.constant(Tensor::full(&[1, 7, 5], 0.25));
    let r = tape.bilinear_resize(c, 13, 11).unwrap();
    assert!(tape.value(r).data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    let r = tape.nearest_resize(c, 3, 2).unwrap();
    assert!(tape.value(r).data().iter().all(|&v| v == 0.25));
}

#[test]
fn backward_anchors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(3.0), true);
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    // accumulation until zero_grad
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[12.0]);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());

    let r = check_gradients(
        |t, v| {
            let s = t.softmax(v[0], 0)?;
            t.sum(s)
        },
        &[Tensor::from_f64(&[4], &[0.3, -1.0, 2.0, 0.5]).unwrap()],
        FD_STEP,
    )
    .unwrap();
    assert!(r.max_abs_err < 1e-9);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[4], &[0.3, -1.0, 2.0, 0.5]).unwrap(), true);
    let s = tape.softmax(x, 0).unwrap();
    let l = tape.sum(s).unwrap();
    tape.backward(l).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn independent_leaf_gets_zero_grad() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let unused = tape.leaf(Tensor::zeros(&[3]), true);
    let y = tape.exp(x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad_or_zeros(unused), vec![0.0; 3]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(tape.backward(x), Err(NumError::NonScalarLoss(_))));
}

#[test]
fn domain_and_index_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(&[2], &[1.0, 0.0]));
    assert!(matches!(tape.log(x), Err(NumError::LogDomain)));
    let table = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.embedding(table, &[3]), Err(NumError::IndexOutOfRange { .. })));
    assert!(tape.softmax(x, 1).is_err());
    let big = tape.constant(t32(&[1], &[100.0]));
    assert!(matches!(tape.exp(big), Err(NumError::NonFinite("exp"))));
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::randn(&[16, 8], 1.0, &mut rng));
        let b = tape.constant(Tensor::randn(&[8, 16], 1.0, &mut rng));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.softmax(c, 1).unwrap();
        tape.value(s).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[3, 4], vals).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.value(y).data().chunks(4) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn permute_roundtrip(vals in proptest::collection::vec(-5.0f64..5.0, 24)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, 3, 4], vals).unwrap());
        let y = tape.permute(x, &[1, 2, 0]).unwrap();
        let z = tape.permute(y, &[2, 0, 1]).unwrap();
        prop_assert_eq!(tape.value(z), tape.value(x));
    }
}
