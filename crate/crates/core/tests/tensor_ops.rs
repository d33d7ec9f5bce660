use asvit_core::tensor::{
    finite_diff_check, gelu_scalar, max_relative_error, Tape, Tensor, TensorError, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar probe `sum(y ⊙ r)` with a fixed random `r`, so that ops whose
/// plain sum has a vanishing gradient (softmax, layer norm) are still tested.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = t.value(y).shape().to_vec();
    let r = random(&mut ChaCha8Rng::seed_from_u64(seed), &shape);
    let r = t.constant(r);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

#[test]
fn matmul_identity_and_hand_expansion() {
    let mut t = Tape::new();
    let i2 = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
    let b = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let out = t.matmul(i2, b).unwrap();
    assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
    let b = t.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]));
    let out = t.matmul(a, b).unwrap();
    assert_eq!(t.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(vec![2, 3]));
    let b = t.constant(Tensor::zeros(vec![2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let check = finite_diff_check(
        |t, a| {
            let b = t.constant(b.clone());
            let out = t.matmul(a, b)?;
            Ok(t.sum(out))
        },
        &a,
        H,
    )
    .unwrap();
    assert!(check.passes(1e-6), "{}", check.max_rel_error);
}

#[test]
fn matmul_through_tape_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[8, 8]);
    let b = random(&mut rng, &[8, 8]);
    let mut t = Tape::new();
    let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
    let out = t.matmul(av, bv).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let want: f64 = (0..8).map(|p| a.data()[i * 8 + p] * b.data()[p * 8 + j]).sum();
            let got = t.value(out).data()[i * 8 + j];
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300) + 1e-300);
        }
    }
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]));
    let y = t.softmax_rows(x);
    assert_eq!(t.value(y).data(), &[0.5, 0.5]);

    let x = t.constant(Tensor::matrix(1, 3, vec![1000.0; 3]));
    let y = t.softmax_rows(x);
    for v in t.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    // e/(e + e²) = 1/(1 + e)
    let e = std::f64::consts::E;
    let x = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
    let y = t.softmax_rows(x);
    let got = t.value(y).data();
    assert!((got[0] - 0.26894).abs() < 1e-5 && (got[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
    assert!((got[1] - 0.73106).abs() < 1e-5);
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::new();
    let gain = t.constant(Tensor::full(vec![4], 1.0));
    let bias = t.constant(Tensor::zeros(vec![4]));
    let x = t.constant(Tensor::matrix(1, 4, vec![5.0; 4]));
    let y = t.layer_norm(x, gain, bias, 1e-6).unwrap();
    assert_eq!(t.value(y).data(), &[0.0; 4]);

    let gain = t.constant(Tensor::full(vec![2], 1.0));
    let bias = t.constant(Tensor::zeros(vec![2]));
    let x = t.constant(Tensor::matrix(1, 2, vec![1.0, 3.0]));
    let y = t.layer_norm(x, gain, bias, 1e-6).unwrap();
    let got = t.value(y).data();
    assert!((got[0] + 1.0).abs() < 1e-3 && (got[1] - 1.0).abs() < 1e-3, "{got:?}");
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[2, 4]);
    let gain = random(&mut rng, &[4]);
    let bias = random(&mut rng, &[4]);
    let check = finite_diff_check(
        |t, x| {
            let g = t.constant(gain.clone());
            let b = t.constant(bias.clone());
            let y = t.layer_norm(x, g, b, 1e-6)?;
            project(t, y, 9)
        },
        &x,
        H,
    )
    .unwrap();
    assert!(check.passes(1e-5), "{}", check.max_rel_error);
}

#[test]
fn gelu_values() {
    assert_eq!(gelu_scalar(0.0), 0.0);
    // Φ(1) = 0.841344746...
    assert!((gelu_scalar(1.0) - 0.84134).abs() < 1e-4);
    assert!(gelu_scalar(-10.0).abs() < 1e-6);
}

#[test]
fn cross_entropy_examples() {
    let mut t = Tape::new();
    let logits = t.constant(Tensor::zeros(vec![1, 4]));
    for label in 0..4 {
        let l = t.cross_entropy(logits, &[label]).unwrap();
        assert!((t.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    let logits = t.constant(Tensor::matrix(1, 4, vec![10.0, 0.0, 0.0, 0.0]));
    let l = t.cross_entropy(logits, &[0]).unwrap();
    let got = t.value(l).data()[0];
    // Exact value ln(1 + 3e^-10) = 1.3619e-4.
    let exact = (1.0 + 3.0 * (-10f64).exp()).ln();
    assert!((got - exact).abs() < 1e-15);
    assert!(got < 2e-4);

    let err = t.cross_entropy(logits, &[4]).unwrap_err();
    assert!(matches!(err, TensorError::LabelOutOfRange { label: 4, classes: 4 }));
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = random(&mut rng, &[3, 4]);
    let check = finite_diff_check(|t, x| t.cross_entropy(x, &[0, 3, 1]), &logits, H).unwrap();
    assert!(check.passes(1e-6), "{}", check.max_rel_error);
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let sq = t.mul(x, x).unwrap();
    let loss = t.sum(sq);
    let grads = t.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = Tape::new();
    let x = t.param(random(&mut rng, &[3, 2]));
    let w_value = random(&mut rng, &[2, 5]);
    let w = t.constant(w_value.clone());
    let y = t.matmul(x, w).unwrap();
    let loss = t.sum(y);
    let grads = t.backward(loss).unwrap();
    let gx = grads.get(x).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let row_sum: f64 = w_value.data()[j * 5..(j + 1) * 5].iter().sum();
            assert!((gx.data()[i * 2 + j] - row_sum).abs() < 1e-14);
        }
    }
    assert!(grads.get(w).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    let err = t.backward(x).unwrap_err();
    assert!(matches!(err, TensorError::NonScalarLoss { .. }));
}

#[test]
fn backward_twice_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut t = Tape::new();
    let x = t.param(random(&mut rng, &[4, 6]));
    let w = t.param(random(&mut rng, &[6, 3]));
    let y = t.matmul(x, w).unwrap();
    let s = t.softmax_rows(y);
    let g = t.gelu(s);
    let loss = t.cross_entropy(g, &[0, 1, 2, 0]).unwrap();
    let first = t.backward(loss).unwrap();
    let second = t.backward(loss).unwrap();
    for v in [x, w] {
        let a: Vec<u64> = first.get(v).unwrap().data().iter().map(|f| f.to_bits()).collect();
        let b: Vec<u64> = second.get(v).unwrap().data().iter().map(|f| f.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn injected_gradient_error_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random(&mut rng, &[3, 4]);
    let check = finite_diff_check(|t, x| t.cross_entropy(x, &[1, 2, 3]), &logits, H).unwrap();
    assert!(check.max_rel_error < 1e-6);
    let wrong: Vec<f64> = check.analytic.data().iter().map(|g| g * 1.1).collect();
    let (err, _) = max_relative_error(&wrong, check.numeric.data());
    assert!(err > 1e-2, "{err}");
}

type OpProbe = fn(&mut Tape, Var) -> Result<Var, TensorError>;

/// Every differentiable op, wrapped as a scalar function of a 3×4 input.
fn op_probes() -> Vec<(&'static str, OpProbe)> {
    vec![
        ("matmul", |t, x| {
            let w = t.constant(random(&mut ChaCha8Rng::seed_from_u64(100), &[4, 3]));
            let y = t.matmul(x, w)?;
            project(t, y, 1)
        }),
        ("matmul_nt", |t, x| {
            let w = t.constant(random(&mut ChaCha8Rng::seed_from_u64(101), &[5, 4]));
            let y = t.matmul_nt(x, w)?;
            project(t, y, 2)
        }),
        ("matmul_nt_self", |t, x| {
            let y = t.matmul_nt(x, x)?;
            project(t, y, 3)
        }),
        ("transpose", |t, x| {
            let y = t.transpose(x)?;
            project(t, y, 4)
        }),
        ("add", |t, x| {
            let y = t.add(x, x)?;
            project(t, y, 5)
        }),
        ("add_row", |t, x| {
            let b = t.rows(x, 0, 1)?;
            let y = t.add_row(x, b)?;
            project(t, y, 6)
        }),
        ("mul", |t, x| {
            let y = t.mul(x, x)?;
            project(t, y, 7)
        }),
        ("scale", |t, x| {
            let y = t.scale(x, -2.5);
            project(t, y, 8)
        }),
        ("columns_concat", |t, x| {
            let a = t.columns(x, 0, 1)?;
            let b = t.columns(x, 1, 3)?;
            let y = t.concat_columns(&[b, a])?;
            project(t, y, 9)
        }),
        ("rows_concat", |t, x| {
            let a = t.rows(x, 2, 1)?;
            let y = t.concat_rows(&[a, x])?;
            project(t, y, 10)
        }),
        ("softmax_rows", |t, x| {
            let y = t.softmax_rows(x);
            project(t, y, 11)
        }),
        ("layer_norm", |t, x| {
            let g = t.constant(random(&mut ChaCha8Rng::seed_from_u64(102), &[4]));
            let b = t.constant(random(&mut ChaCha8Rng::seed_from_u64(103), &[4]));
            let y = t.layer_norm(x, g, b, 1e-6)?;
            project(t, y, 12)
        }),
        ("gelu", |t, x| {
            let y = t.gelu(x);
            project(t, y, 13)
        }),
        ("attention", |t, x| {
            let w = t.constant(random(&mut ChaCha8Rng::seed_from_u64(104), &[4, 12]));
            let qkv = t.matmul(x, w)?;
            let y = t.attention(qkv, 2)?;
            project(t, y, 14)
        }),
        ("cross_entropy", |t, x| t.cross_entropy(x, &[0, 3, 2])),
        ("weighted_cross_entropy", |t, x| t.weighted_cross_entropy(x, &[1, 1, 2], &[0.5, 2.0, 1.0])),
    ]
}

#[test]
fn every_op_passes_gradient_oracle_on_ten_seeds() {
    for (name, probe) in op_probes() {
        for seed in 0..10 {
            let x = random(&mut ChaCha8Rng::seed_from_u64(1000 + seed), &[3, 4]);
            let check = finite_diff_check(probe, &x, H).unwrap();
            assert!(
                check.passes(1e-4),
                "{name} seed {seed}: {} at {}",
                check.max_rel_error,
                check.worst_index
            );
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-700.0f64..700.0, 12)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 4, values));
        let y = t.softmax_rows(x);
        for row in t.value(y).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_shift_invariant_and_scale_equivariant(
        values in prop::collection::vec(-10.0f64..10.0, 8),
        shift in -100.0f64..100.0,
        scale in 0.5f64..20.0,
    ) {
        let mean = values.iter().sum::<f64>() / 8.0;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        prop_assume!(var > 1e-2);
        let norm = |data: Vec<f64>| {
            let mut t = Tape::new();
            let x = t.constant(Tensor::matrix(1, 8, data));
            let g = t.constant(Tensor::full(vec![8], 1.0));
            let b = t.constant(Tensor::zeros(vec![8]));
            let y = t.layer_norm(x, g, b, 1e-6).unwrap();
            t.value(y).data().to_vec()
        };
        let base = norm(values.clone());
        let shifted = norm(values.iter().map(|v| v + shift).collect());
        let scaled = norm(values.iter().map(|v| v * scale).collect());
        let out_mean = base.iter().sum::<f64>() / 8.0;
        prop_assert!(out_mean.abs() <= 1e-9);
        for ((b, s), c) in base.iter().zip(&shifted).zip(&scaled) {
            prop_assert!((b - s).abs() <= 1e-6 * b.abs().max(1.0));
            prop_assert!((b - c).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }
}

#[test]
fn fused_attention_matches_composed_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let qkv = random(&mut rng, &[5, 12]);
    let mut t = Tape::new();
    let x = t.constant(qkv);
    let fused = t.attention(x, 2).unwrap();
    let mut heads = Vec::new();
    for h in 0..2 {
        let q = t.columns(x, 2 * h, 2).unwrap();
        let k = t.columns(x, 4 + 2 * h, 2).unwrap();
        let v = t.columns(x, 8 + 2 * h, 2).unwrap();
        let s = t.matmul_nt(q, k).unwrap();
        let s = t.scale(s, 1.0 / 2f64.sqrt());
        let a = t.softmax_rows(s);
        heads.push(t.matmul(a, v).unwrap());
    }
    let composed = t.concat_columns(&heads).unwrap();
    for (a, b) in t.value(fused).data().iter().zip(t.value(composed).data()) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}
