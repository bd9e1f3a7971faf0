use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn sum_of_squares(t: &mut Tape<'_>, x: NodeId) -> Result<NodeId, GradError> {
    t.matmul_bt(x, x)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn forward_sum_of_squares() {
    let x = Tensor::row(&[1.0, 2.0]);
    let mut tape = Tape::new();
    let input = tape.input(&[1, 2], true);
    sum_of_squares(&mut tape, input).unwrap();
    let mut b = Bindings::new();
    b.bind(input, &x);
    assert_eq!(tape.forward(b).unwrap().item(), 5.0);
    let g = tape.backward(&Tensor::scalar(1.0)).unwrap();
    assert_eq!(g.get(input).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let x = Tensor::row(&[0.0, 0.0]);
    let mut tape = Tape::new();
    let input = tape.input(&[1, 2], false);
    tape.softmax(input, None).unwrap();
    let mut b = Bindings::new();
    b.bind(input, &x);
    assert_eq!(tape.forward(b).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn constant_function_has_zero_gradient() {
    let x = Tensor::row(&[1.0, -3.0]);
    let c = Tensor::row(&[4.0, 5.0]);
    let mut tape = Tape::new();
    let input = tape.input(&[1, 2], true);
    let k = tape.input(&[1, 2], false);
    let _unused = tape.scale(input, 2.0);
    let out = tape.matmul_bt(k, k).unwrap();
    tape.set_output(out);
    let mut b = Bindings::new();
    b.bind(input, &x).bind(k, &c);
    tape.forward(b).unwrap();
    let g = tape.backward(&Tensor::scalar(1.0)).unwrap();
    assert_eq!(g.get(input).unwrap().data(), &[0.0, 0.0]);
    assert!(g.get(k).is_none());
}

#[test]
fn backward_before_forward_is_an_error() {
    let mut tape = Tape::new();
    let input = tape.input(&[1, 2], true);
    sum_of_squares(&mut tape, input).unwrap();
    assert_eq!(tape.backward(&Tensor::scalar(1.0)).unwrap_err(), GradError::NotEvaluated);
}

#[test]
fn shape_errors_name_the_node() {
    let mut tape = Tape::new();
    let a = tape.input(&[2, 3], false);
    let b = tape.input(&[2, 3], false);
    match tape.matmul(a, b).unwrap_err() {
        GradError::ShapeMismatch { node, op, .. } => {
            assert_eq!(node, 2);
            assert_eq!(op, "matmul");
        }
        other => panic!("unexpected {other:?}"),
    }

    let mut tape = Tape::new();
    let a = tape.input(&[1, 2], false);
    tape.scale(a, 1.0);
    let wrong = Tensor::row(&[1.0, 2.0, 3.0]);
    let mut b = Bindings::new();
    b.bind(a, &wrong);
    assert!(matches!(tape.forward(b), Err(GradError::ShapeMismatch { node: 0, .. })));
}

#[test]
fn non_finite_intermediate_names_the_op() {
    let mut tape = Tape::new();
    let a = tape.input(&[1, 2], false);
    tape.cross_entropy(a, &[1.0, 0.0], Some(vec![false, true].into())).unwrap();
    let x = Tensor::row(&[0.0, 0.0]);
    let mut b = Bindings::new();
    b.bind(a, &x);
    assert_eq!(
        tape.forward(b).unwrap_err(),
        GradError::NonFinite { node: 1, op: "cross_entropy" }
    );
}

#[test]
fn linear_function_grad_check_is_exact() {
    let w = Tensor::row(&[0.3, -1.2, 2.5, 0.7]);
    let x = Tensor::row(&[1.0, 2.0, -0.5, 0.25]);
    // w·x as a chain of scaled slices
    let err = grad_check(
        |t, input| {
            let mut acc = None;
            for (j, &wj) in w.data().iter().enumerate() {
                let xj = t.slice(input, Axis::Cols, j, j + 1)?;
                let term = t.scale(xj, wj);
                acc = Some(match acc {
                    None => term,
                    Some(prev) => t.add(prev, term)?,
                });
            }
            Ok(acc.unwrap())
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-10, "linear grad check error {err}");
}

#[test]
fn softmax_composed_scalar_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[3, 4]);
    let err = grad_check(
        |t, input| {
            let s = t.softmax(input, None)?;
            let g = t.gelu(s);
            let m = t.mul(g, input)?;
            let col = t.slice(m, Axis::Cols, 0, 3)?;
            let row = t.slice(col, Axis::Rows, 1, 2)?;
            t.matmul_bt(row, row)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "softmax grad check error {err}");
}

#[test]
fn excluded_components_are_skipped() {
    let x = Tensor::row(&[0.0, 2.0]);
    let err = grad_check_excluding(|t, input| t.matmul_bt(input, input), &x, 1e-5, &[0]).unwrap();
    assert!(err < 1e-9);
}

#[test]
fn masked_softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(&mut rng, &[5, 6]);
    let keep: std::sync::Arc<[bool]> = vec![true, true, false, true, true, false].into();
    let mut tape = Tape::new();
    let input = tape.input(&[5, 6], false);
    tape.softmax(input, Some(keep.clone())).unwrap();
    let mut b = Bindings::new();
    b.bind(input, &x);
    let y = tape.forward(b).unwrap();
    for r in 0..5 {
        let row = y.row_slice(r);
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert_eq!(row[2], 0.0);
        assert_eq!(row[5], 0.0);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

/// Straight-line reference for `gelu(x W1 + b1) W2 + b2`.
fn mlp_reference(x: &Tensor, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let h = w1.cols();
    let o = w2.cols();
    let mut out = Vec::with_capacity(n * o);
    for r in 0..n {
        let mut hidden = vec![0.0; h];
        for (j, hv) in hidden.iter_mut().enumerate() {
            let mut s = b1.data()[j];
            for k in 0..d {
                s += x.at(r, k) * w1.at(k, j);
            }
            let c = (2.0 / std::f64::consts::PI).sqrt();
            *hv = 0.5 * s * (1.0 + (c * (s + 0.044715 * s.powi(3))).tanh());
        }
        for j in 0..o {
            let mut s = b2.data()[j];
            for (k, hv) in hidden.iter().enumerate() {
                s += hv * w2.at(k, j);
            }
            out.push(s);
        }
    }
    out
}

#[test]
fn two_layer_mlp_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[3, 5]);
    let w1 = random_tensor(&mut rng, &[5, 8]);
    let b1 = random_tensor(&mut rng, &[1, 8]);
    let w2 = random_tensor(&mut rng, &[8, 2]);
    let b2 = random_tensor(&mut rng, &[1, 2]);

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = [&x, &w1, &b1, &w2, &b2]
        .iter()
        .map(|t| tape.input(t.shape(), false))
        .collect();
    let h = tape.matmul(ids[0], ids[1]).unwrap();
    let h = tape.add(h, ids[2]).unwrap();
    let h = tape.gelu(h);
    let o = tape.matmul(h, ids[3]).unwrap();
    tape.add(o, ids[4]).unwrap();
    let mut b = Bindings::new();
    for (id, t) in ids.iter().zip([&x, &w1, &b1, &w2, &b2]) {
        b.bind(*id, t);
    }
    let got = tape.forward(b).unwrap().data().to_vec();
    let want = mlp_reference(&x, &w1, &b1, &w2, &b2);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn backward_is_linear_in_the_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_tensor(&mut rng, &[2, 3]);
    let f = |t: &mut Tape<'_>, i: NodeId| -> Result<NodeId, GradError> {
        let s = t.softmax(i, None)?;
        let r = t.slice(s, Axis::Rows, 0, 1)?;
        t.matmul_bt(r, r)
    };
    let g = |t: &mut Tape<'_>, i: NodeId| -> Result<NodeId, GradError> {
        let e = t.gelu(i);
        let r = t.slice(e, Axis::Rows, 1, 2)?;
        t.matmul_bt(r, r)
    };
    let grad_of = |build: &dyn Fn(&mut Tape<'_>, NodeId) -> Result<NodeId, GradError>| {
        let mut tape = Tape::new();
        let input = tape.input(x.shape(), true);
        let out = build(&mut tape, input).unwrap();
        tape.set_output(out);
        let mut b = Bindings::new();
        b.bind(input, &x);
        tape.forward(b).unwrap();
        tape.backward(&Tensor::scalar(1.0)).unwrap().take(input).unwrap()
    };
    let gf = grad_of(&f);
    let gg = grad_of(&g);
    let gsum = grad_of(&|t, i| {
        let a = f(t, i)?;
        let b = g(t, i)?;
        t.add(a, b)
    });
    for k in 0..x.len() {
        assert!((gsum.data()[k] - gf.data()[k] - gg.data()[k]).abs() <= 1e-12);
    }
}

#[test]
fn gather_and_concat_route_gradients() {
    let table = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
    let mut tape = Tape::new();
    let t = tape.input(&[3, 2], true);
    let rows = tape.gather(t, &[2, 0, 2]).unwrap();
    let both = tape.concat(&[rows, rows], Axis::Cols).unwrap();
    let first = tape.slice(both, Axis::Cols, 0, 3).unwrap();
    let flat = tape.slice(first, Axis::Rows, 0, 1).unwrap();
    tape.matmul_bt(flat, flat).unwrap();
    let mut b = Bindings::new();
    b.bind(t, &table);
    // row 0 of gathered = table[2] = [5, 6]; first three cols of [5, 6, 5, 6] → 25 + 36 + 25
    assert_eq!(tape.forward(b).unwrap().item(), 86.0);
    let g = tape.backward(&Tensor::scalar(1.0)).unwrap();
    // d/d table[2] = [2*5 + 2*5, 2*6]
    assert_eq!(g.get(t).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 20.0, 12.0]);
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[4, 4]);
    let run = || {
        let mut tape = Tape::new();
        let input = tape.input(&[4, 4], true);
        let s = tape.softmax(input, None).unwrap();
        let m = tape.matmul(s, input).unwrap();
        let r = tape.slice(m, Axis::Rows, 0, 1).unwrap();
        tape.cross_entropy(r, &[0.25; 4], None).unwrap();
        let mut b = Bindings::new();
        b.bind(input, &x);
        let v = tape.forward(b).unwrap().item();
        let g = tape.backward(&Tensor::scalar(1.0)).unwrap();
        (v.to_bits(), g.get(input).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
