use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference gradient of `f` with respect to each input tensor.
fn numeric_grads(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var, h: f64) -> Vec<Vec<f64>> {
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out)[0]
    };
    let mut grads = Vec::new();
    for k in 0..inputs.len() {
        let mut g = vec![0.0; inputs[k].numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            *gi = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

fn analytic_grads(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().requiring_grad())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect()
}

fn max_rel_err(a: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn check(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
    let a = analytic_grads(inputs, f);
    let n = numeric_grads(inputs, f, 1e-5);
    let err = max_rel_err(&a, &n);
    assert!(err <= tol, "relative error {err:e} > {tol:e}");
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
    let n = tape.tensor(y).numel();
    let shape = tape.shape(y).to_vec();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin() + 0.5).collect();
    let wv = tape.constant(shape, w).unwrap();
    let p = tape.mul(y, wv).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let eye = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let col = tape.constant(vec![2, 1], vec![3.0, 4.0]).unwrap();
    let out = tape.matmul(eye, col).unwrap();
    assert_eq!(tape.value(out), &[3.0, 4.0]);
    let row = tape.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let out = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(out), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let b = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::Shape { op: "matmul", .. }));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&[3, 2], &mut rng), random(&[2, 4], &mut rng)];
    let f = |t: &mut Tape, v: &[Var]| {
        let m = t.matmul(v[0], v[1]).unwrap();
        t.sum(m).unwrap()
    };
    check(&inputs, &f, 1e-6);
    let g = |t: &mut Tape, v: &[Var]| {
        let m = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, m)
    };
    check(&inputs, &g, 1e-6);
}

#[test]
fn batched_matmul_matches_flattened_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[4, 5], &mut rng);
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let batched = tape.matmul(va, vb).unwrap();
    assert_eq!(tape.shape(batched), &[2, 3, 5]);
    let flat = tape.constant(vec![6, 4], a.data().to_vec()).unwrap();
    let plain = tape.matmul(flat, vb).unwrap();
    assert_eq!(tape.value(batched), tape.value(plain));

    let f = |t: &mut Tape, v: &[Var]| {
        let m = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, m)
    };
    check(&[a, b], &f, 1e-6);
}

#[test]
fn transpose_gradient_accumulates_with_other_uses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = |t: &mut Tape, v: &[Var]| {
        let tr = t.transpose(v[0]).unwrap();
        let back = t.transpose(tr).unwrap();
        let s = t.add(back, v[0]).unwrap();
        let y = t.mul(s, v[0]).unwrap();
        let w = weighted_sum(t, tr);
        let z = t.sum(y).unwrap();
        t.add(w, z).unwrap()
    };
    check(&[random(&[2, 3, 4], &mut rng)], &f, 1e-6);
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let gain = tape.constant(vec![3], vec![1.0; 3]).unwrap();
    let bias = tape.constant(vec![3], vec![0.0; 3]).unwrap();
    let x = tape.constant(vec![3], vec![2.0; 3]).unwrap();
    let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y), &[0.0, 0.0, 0.0]);

    let gain = tape.constant(vec![2], vec![1.0; 2]).unwrap();
    let bias = tape.constant(vec![2], vec![0.0; 2]).unwrap();
    let x = tape.constant(vec![2], vec![1.0, 3.0]).unwrap();
    let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
    let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((tape.value(y)[0] + expected).abs() < 1e-15);
    assert!((tape.value(y)[1] - expected).abs() < 1e-15);
    assert!(expected > 0.99999 && expected < 1.0);
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [random(&[4, 8], &mut rng), random(&[8], &mut rng), random(&[8], &mut rng)];
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(t, y)
    };
    check(&inputs, &f, 1e-6);
}

#[test]
fn gelu_examples_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![2], vec![0.0, 10.0]).unwrap();
    let y = tape.gelu(x).unwrap();
    assert_eq!(tape.value(y)[0], 0.0);
    assert!((9.999..=10.0).contains(&tape.value(y)[1]));

    for &x0 in &[-2.0, -0.5, 0.5, 2.0] {
        let inputs = [Tensor::scalar(x0)];
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.gelu(v[0]).unwrap();
            t.sum(y).unwrap()
        };
        check(&inputs, &f, 1e-6);
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![4], vec![0.0; 4]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y), &[0.25; 4]);
    let x = tape.constant(vec![2], vec![2f64.ln(), 0.0]).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    assert!((tape.value(y)[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((tape.value(y)[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_gradient_along_each_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for axis in 0..2 {
        let inputs = [random(&[4, 3], &mut rng)];
        let f = move |t: &mut Tape, v: &[Var]| {
            let y = t.softmax(v[0], axis).unwrap();
            weighted_sum(t, y)
        };
        check(&inputs, &f, 1e-6);
    }
}

#[test]
fn reshape_is_row_major() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = tape.reshape(x, vec![2, 2]).unwrap();
    assert_eq!(tape.shape(y), &[2, 2]);
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);
    assert!(tape.reshape(x, vec![3]).is_err());
}

#[test]
fn pad_replicate_tail_example() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![2], vec![5.0, 7.0]).unwrap();
    let y = tape.pad_replicate_tail(x, 4).unwrap();
    assert_eq!(tape.value(y), &[5.0, 7.0, 7.0, 7.0]);
}

#[test]
fn pad_replicate_tail_routes_gradient_to_source() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![5.0, 7.0]).unwrap().requiring_grad());
    let y = tape.pad_replicate_tail(x, 4).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 3.0]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap().requiring_grad());
    let s = tape.sum(w).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[1.0; 6]);
}

#[test]
fn quadratic_gradient_and_accumulation() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap().requiring_grad());
    let sq = tape.mul(w, w).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[2.0, -4.0]);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[4.0, -8.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::zeros(vec![2]).requiring_grad());
    assert!(matches!(tape.backward(w), Err(TensorError::NotScalar(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let w = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap().requiring_grad());
    let p = tape.mul(c, w).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(w).unwrap(), &[1.0, 2.0]);
}

#[test]
fn structural_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [random(&[2, 3, 4], &mut rng), random(&[3, 1], &mut rng), random(&[4], &mut rng)];
    let f = |t: &mut Tape, v: &[Var]| {
        let tr = t.transpose(v[0]).unwrap(); // [2,4,3]
        let back = t.transpose(tr).unwrap();
        let a = t.mul(back, v[1]).unwrap(); // broadcast [3,1]
        let b = t.add(a, v[2]).unwrap(); // broadcast [4]
        let c = t.sub(b, v[0]).unwrap();
        let sl = t.slice(c, 2, 1, 3).unwrap(); // [2,3,2]
        let cat = t.concat(&[sl, c], 2).unwrap(); // [2,3,6]
        let pad = t.pad_replicate_tail(cat, 8).unwrap();
        let r = t.reshape(pad, vec![6, 8]).unwrap();
        let sc = t.mul_scalar(r, 0.7).unwrap();
        let g = t.gelu(sc).unwrap();
        let m = t.mean(g).unwrap();
        let w = weighted_sum(t, g);
        t.add(m, w).unwrap()
    };
    check(&inputs, &f, 1e-6);
}

#[test]
fn out_of_range_axes_are_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
    assert!(matches!(tape.slice(x, 2, 0, 1), Err(TensorError::Axis { .. })));
    assert!(matches!(tape.slice(x, 0, 1, 3), Err(TensorError::Range { .. })));
    assert!(matches!(tape.softmax(x, 5), Err(TensorError::Axis { .. })));
    let v = tape.constant(vec![2], vec![0.0; 2]).unwrap();
    assert!(tape.transpose(v).is_err());
    let y = tape.constant(vec![3, 2], vec![0.0; 6]).unwrap();
    assert!(tape.concat(&[x, y], 1).is_err());
    assert!(tape.concat(&[x, y], 0).is_ok());
}

#[test]
#[cfg(debug_assertions)]
fn non_finite_values_are_surfaced() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![1], vec![1e308]).unwrap();
    assert!(matches!(tape.mul_scalar(x, 10.0), Err(TensorError::NonFinite { .. })));
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs = [random(&[5, 7], &mut rng), random(&[7, 3], &mut rng)];
        analytic_grads(&inputs, &|t: &mut Tape, v: &[Var]| {
            let m = t.matmul(v[0], v[1]).unwrap();
            let s = t.softmax(m, 1).unwrap();
            weighted_sum(t, s)
        })
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_shift_invariance(xs in proptest::collection::vec(-5.0f64..5.0, 1..12), c in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let n = xs.len();
        let a = tape.constant(vec![n], xs.clone()).unwrap();
        let b = tape.constant(vec![n], xs.iter().map(|x| x + c).collect()).unwrap();
        let sa = tape.softmax(a, 0).unwrap();
        let sb = tape.softmax(b, 0).unwrap();
        for (x, y) in tape.value(sa).iter().zip(tape.value(sb)) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let total: f64 = tape.value(sa).iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(tape.value(sa).iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn elementwise_gradients_match_finite_differences(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)];
        let f = |t: &mut Tape, v: &[Var]| {
            let p = t.mul(v[0], v[1]).unwrap();
            let q = t.sub(p, v[1]).unwrap();
            let r = t.gelu(q).unwrap();
            weighted_sum(t, r)
        };
        let a = analytic_grads(&inputs, &f);
        let n = numeric_grads(&inputs, &f, 1e-5);
        prop_assert!(max_rel_err(&a, &n) <= 1e-5);
    }
}

#[test]
fn shape_must_match_data() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(t.numel(), 4);
    assert!(t.grad().is_none());
}

#[test]
fn grad_accumulates() {
    let mut t = Tensor::zeros(vec![2]);
    t.accumulate_grad(&[1.0, 2.0]);
    t.accumulate_grad(&[1.0, 2.0]);
    assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
    t.zero_grad();
    assert!(t.grad().is_none());
}
