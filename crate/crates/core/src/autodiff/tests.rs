use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces any tensor to a scalar with fixed random weights so every
/// output coordinate contributes a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = Tensor::uniform(&shape, 1.0, &mut rng(seed ^ 0xabcdef));
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.matmul(i, m).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_basis_selection() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[1, 2], &[1.0, 0.0]));
    let b = tape.constant(t(&[2, 1], &[2.0, 3.0]));
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(p).data(), &[2.0]);
    assert_eq!(tape.value(p).shape(), &[1, 1]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut r = rng(7);
    let a = Tensor::uniform(&[3, 4], 1.0, &mut r);
    let b = Tensor::uniform(&[4, 2], 1.0, &mut r);
    let bc = b.clone();
    let err_a = finite_diff_check(
        |tape, x| {
            let bv = tape.constant(bc.clone());
            let p = tape.matmul(x, bv)?;
            weighted_sum(tape, p, 1)
        },
        &a,
        1e-5,
    )
    .unwrap();
    let ac = a.clone();
    let err_b = finite_diff_check(
        |tape, x| {
            let av = tape.constant(ac.clone());
            let p = tape.matmul(av, x)?;
            weighted_sum(tape, p, 2)
        },
        &b,
        1e-5,
    )
    .unwrap();
    assert!(err_a <= 1e-6, "dA rel err {err_a}");
    assert!(err_b <= 1e-6, "dB rel err {err_b}");
}

#[test]
fn embedding_gathers_rows() {
    let mut tape = Tape::new();
    let table = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let e = tape.embedding_lookup(table, &[1, 0, 1]).unwrap();
    assert_eq!(tape.value(e).data(), &[3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn embedding_empty_ids() {
    let mut tape = Tape::new();
    let table = tape.leaf(Tensor::zeros(&[3, 5]));
    let e = tape.embedding_lookup(table, &[]).unwrap();
    assert_eq!(tape.value(e).shape(), &[0, 5]);
}

#[test]
fn embedding_out_of_range_names_id() {
    let mut tape = Tape::new();
    let table = tape.leaf(Tensor::zeros(&[3, 2]));
    let err = tape.embedding_lookup(table, &[0, 7]).unwrap_err();
    assert!(matches!(err, Error::Index { index: 7, len: 3, .. }));
}

#[test]
fn embedding_backward_scatter_adds() {
    let mut tape = Tape::new();
    let table = tape.leaf(Tensor::zeros(&[2, 3]));
    let e = tape.embedding_lookup(table, &[0, 0]).unwrap();
    let s = tape.sum(e);
    tape.backward(s).unwrap();
    let g = tape.grad(table).unwrap();
    assert_eq!(g.row(0), &[2.0, 2.0, 2.0]);
    assert_eq!(g.row(1), &[0.0, 0.0, 0.0]);
}

#[test]
fn mean_pool_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 2], &[1.0, 1.0, 3.0, 3.0]));
    let m = tape.mean_pool(x, 2).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 2.0]);
    let first = tape.mean_pool(x, 1).unwrap();
    assert_eq!(tape.value(first).data(), &[1.0, 1.0]);
    assert!(matches!(tape.mean_pool(x, 0), Err(Error::Precondition(_))));
}

#[test]
fn mean_pool_gradient_excludes_padding() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[4, 3], 0.5));
    let m = tape.mean_pool(x, 3).unwrap();
    let s = tape.sum(m);
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap();
    for r in 0..3 {
        for v in g.row(r) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    assert_eq!(g.row(3), &[0.0, 0.0, 0.0]);

    let x0 = Tensor::uniform(&[5, 3], 1.0, &mut rng(3));
    let err = finite_diff_check(
        |tape, x| {
            let m = tape.mean_pool(x, 3)?;
            weighted_sum(tape, m, 4)
        },
        &x0,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn conv_max_identity_and_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3, 1], &[1.0, 5.0, 2.0]));
    let f = tape.leaf(t(&[1, 1, 1], &[1.0]));
    let b = tape.leaf(t(&[1], &[0.0]));
    let y = tape.conv1d_maxpool(x, f, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0]);

    let z = tape.leaf(Tensor::zeros(&[4, 2]));
    let f2 = tape.leaf(Tensor::uniform(&[2, 2, 3], 1.0, &mut rng(1)));
    let b2 = tape.leaf(Tensor::zeros(&[3]));
    let y2 = tape.conv1d_maxpool(z, f2, b2).unwrap();
    assert_eq!(tape.value(y2).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn conv_rejects_short_input() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]));
    let f = tape.leaf(Tensor::zeros(&[3, 2, 1]));
    let b = tape.leaf(Tensor::zeros(&[1]));
    assert!(matches!(
        tape.conv1d_maxpool(x, f, b),
        Err(Error::InputTooShort { len: 2, width: 3 })
    ));
}

#[test]
fn conv_tie_routes_to_lowest_time_index() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3, 1], &[2.0, 2.0, 1.0]));
    let f = tape.constant(t(&[1, 1, 1], &[1.0]));
    let b = tape.constant(t(&[1], &[0.0]));
    let y = tape.conv1d_maxpool(x, f, b).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut r = rng(11);
    let x = Tensor::uniform(&[7, 4], 1.0, &mut r);
    let f = Tensor::uniform(&[3, 4, 3], 1.0, &mut r);
    let b = Tensor::uniform(&[3], 0.5, &mut r);
    let (fc, bc) = (f.clone(), b.clone());
    let ex = finite_diff_check(
        |tape, xv| {
            let fv = tape.constant(fc.clone());
            let bv = tape.constant(bc.clone());
            let y = tape.conv1d_maxpool(xv, fv, bv)?;
            weighted_sum(tape, y, 5)
        },
        &x,
        1e-5,
    )
    .unwrap();
    let (xc, bc) = (x.clone(), b.clone());
    let ef = finite_diff_check(
        |tape, fv| {
            let xv = tape.constant(xc.clone());
            let bv = tape.constant(bc.clone());
            let y = tape.conv1d_maxpool(xv, fv, bv)?;
            weighted_sum(tape, y, 5)
        },
        &f,
        1e-5,
    )
    .unwrap();
    assert!(ex <= 1e-6, "dx {ex}");
    assert!(ef <= 1e-6, "dfilters {ef}");
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    let s = tape.sum(r);
    tape.backward(s).unwrap();
    // subgradient at exactly zero is zero
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::scalar(0.0));
    let th = tape.tanh(z);
    assert_eq!(tape.value(th).data(), &[0.0]);
    tape.backward(th).unwrap();
    assert_eq!(tape.grad(z).unwrap().data(), &[1.0]);
}

#[test]
fn cross_entropy_uniform_and_saturated() {
    let mut tape = Tape::new();
    let z = tape.leaf(t(&[1, 2], &[0.0, 0.0]));
    let l = tape
        .softmax_cross_entropy(z, &t(&[1, 2], &[1.0, 0.0]))
        .unwrap();
    assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);

    let z = tape.leaf(t(&[1, 2], &[1000.0, 0.0]));
    let l = tape
        .softmax_cross_entropy(z, &t(&[1, 2], &[1.0, 0.0]))
        .unwrap();
    let v = tape.value(l).data()[0];
    assert!(v.is_finite() && v.abs() < 1e-12, "{v}");
}

#[test]
fn cross_entropy_is_linear_in_soft_target() {
    let mut r = rng(5);
    for _ in 0..20 {
        let logits = Tensor::uniform(&[1, 2], 3.0, &mut r);
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let soft = tape
            .softmax_cross_entropy(z, &t(&[1, 2], &[0.3, 0.7]))
            .unwrap();
        let c0 = tape
            .softmax_cross_entropy(z, &t(&[1, 2], &[1.0, 0.0]))
            .unwrap();
        let c1 = tape
            .softmax_cross_entropy(z, &t(&[1, 2], &[0.0, 1.0]))
            .unwrap();
        let expect = 0.3 * tape.value(c0).data()[0] + 0.7 * tape.value(c1).data()[0];
        assert!((tape.value(soft).data()[0] - expect).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_needs_two_classes() {
    let mut tape = Tape::new();
    let z = tape.leaf(t(&[2, 1], &[0.0, 1.0]));
    let err = tape.softmax_cross_entropy(z, &t(&[2, 1], &[1.0, 1.0]));
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn backward_linear_map_and_accumulation() {
    let mut tape = Tape::new();
    let x = t(&[3], &[1.0, -2.0, 0.5]);
    let w = tape.leaf(t(&[3], &[0.2, 0.3, 0.4]));
    let xv = tape.constant(x.clone());
    let p = tape.mul(w, xv).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).unwrap().data(), x.data());
    tape.backward(s).unwrap();
    let doubled: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(tape.grad(w).unwrap().data(), doubled.as_slice());
    tape.zero_grad();
    assert!(tape.grad(w).is_none());
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_visits_each_node_once() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::uniform(&[2, 3], 1.0, &mut rng(0)));
    let b = tape.leaf(Tensor::uniform(&[3, 2], 1.0, &mut rng(1)));
    let p = tape.matmul(a, b).unwrap();
    let q = tape.tanh(p);
    let r = tape.add(q, p).unwrap();
    let s = tape.sum(r);
    let visited = tape.backward(s).unwrap();
    assert_eq!(visited, tape.len());
    assert_eq!(tape.visits(), tape.len());
}

#[test]
fn finite_diff_check_examples() {
    let err = finite_diff_check(
        |tape, x| Ok({
            let sq = tape.mul(x, x)?;
            tape.sum(sq)
        }),
        &Tensor::scalar(3.0),
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");

    let err = finite_diff_check(
        |tape, _x| Ok(tape.constant(Tensor::scalar(4.0))),
        &Tensor::vector(vec![1.0, 2.0]),
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn injected_sign_fault_is_detected() {
    let x = Tensor::uniform(&[3], 1.0, &mut rng(9));
    let f = |tape: &mut Tape, v: Var| {
        let th = tape.tanh(v);
        Ok(tape.sum(th))
    };
    assert!(finite_diff_check(f, &x, 1e-5).unwrap() < 1e-6);

    let mut tape = Tape::new();
    tape.inject_sign_fault(Some(OpKind::Tanh));
    let v = tape.leaf(x.clone());
    let th = tape.tanh(v);
    let s = tape.sum(th);
    tape.backward(s).unwrap();
    assert!(tape.grad(v).unwrap().data().iter().all(|g| *g < 0.0));
}

#[test]
fn ops_are_deterministic() {
    let build = || {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::uniform(&[6, 3], 1.0, &mut rng(21)));
        let f = tape.leaf(Tensor::uniform(&[2, 3, 4], 1.0, &mut rng(22)));
        let b = tape.leaf(Tensor::zeros(&[4]));
        let y = tape.conv1d_maxpool(x, f, b).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        (tape.value(y).clone(), tape.grad(f).unwrap().clone())
    };
    let (y1, g1) = build();
    let (y2, g2) = build();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&y1), bits(&y2));
    assert_eq!(bits(&g1), bits(&g2));
}
