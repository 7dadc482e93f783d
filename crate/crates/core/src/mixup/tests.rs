use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut y = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        y.data_mut()[i * classes + l] = 1.0;
    }
    y
}

fn toy_batch(n: usize, max_len: usize, vocab: usize, classes: usize, seed: u64) -> Batch {
    let mut r = rng(seed);
    let mut ids = vec![0; n * max_len];
    let mut lens = Vec::new();
    let mut labels = Vec::new();
    for s in 0..n {
        let len = r.random_range(1..=max_len);
        for t in 0..len {
            ids[s * max_len + t] = r.random_range(2..vocab);
        }
        lens.push(len);
        labels.push(r.random_range(0..classes));
    }
    Batch::new(ids, max_len, lens, one_hot(&labels, classes)).unwrap()
}

fn models() -> Vec<Model> {
    vec![
        Model::init_embed_mlp(15, 4, 6, 3, &mut rng(1)).unwrap(),
        Model::init_text_cnn(15, 4, &[2, 3], 3, 3, 0.0, 5, &mut rng(2)).unwrap(),
    ]
}

fn loss_values(
    model: &Model,
    batch: &Batch,
    layer: Layer,
    perm: Vec<usize>,
    lambda: Vec<f64>,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = rand_op_with(model, &mut tape, &bound, batch, layer, perm, lambda, None).unwrap();
    tape.value(out.loss).data().to_vec()
}

fn plain_ce(model: &Model, batch: &Batch) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let logits = model.forward(&mut tape, &bound, batch, None).unwrap();
    let ce = tape.softmax_cross_entropy(logits, batch.labels()).unwrap();
    tape.value(ce).data().to_vec()
}

#[test]
fn pair_batch_examples() {
    assert_eq!(pair_batch(1, &mut rng(0)), vec![0]);
    let p = pair_batch(20, &mut rng(5));
    let mut sorted = p.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    assert_eq!(p, pair_batch(20, &mut rng(5)));
}

#[test]
fn mix_hidden_examples() {
    let mut tape = Tape::new();
    let gi = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
    let gj = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap());
    let half = tape.leaf(Tensor::vector(vec![0.5]));
    let m = mix_hidden(&mut tape, gi, gj, half).unwrap();
    assert_eq!(tape.value(m).data(), &[0.5, 0.5]);
    let one = tape.leaf(Tensor::vector(vec![1.0]));
    let m = mix_hidden(&mut tape, gi, gj, one).unwrap();
    assert_eq!(tape.value(m).data(), &[1.0, 0.0]);

    let bad = tape.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(
        mix_hidden(&mut tape, gi, bad, one),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn mix_hidden_derivative_is_difference() {
    let gi = Tensor::uniform(&[3, 4], 1.0, &mut rng(1));
    let gj = Tensor::uniform(&[3, 4], 1.0, &mut rng(2));
    let lam = Tensor::vector(vec![0.2, 0.5, 0.9]);
    let (gic, gjc) = (gi.clone(), gj.clone());
    let err = crate::autodiff::finite_diff_check(
        |tape, l| {
            let a = tape.constant(gic.clone());
            let b = tape.constant(gjc.clone());
            let m = mix_hidden(tape, a, b, l)?;
            Ok(tape.sum(m))
        },
        &lam,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
    let mut tape = Tape::new();
    let a = tape.constant(gi.clone());
    let b = tape.constant(gj.clone());
    let l = tape.leaf(lam);
    let m = mix_hidden(&mut tape, a, b, l).unwrap();
    let s = tape.sum(m);
    tape.backward(s).unwrap();
    for r in 0..3 {
        let expect: f64 = gi.row(r).iter().zip(gj.row(r)).map(|(x, y)| x - y).sum();
        assert!((tape.grad(l).unwrap().data()[r] - expect).abs() < 1e-14);
    }
}

#[test]
fn mix_labels_examples() {
    let yi = one_hot(&[0], 2);
    let yj = one_hot(&[1], 2);
    assert_eq!(mix_labels(&yi, &yj, &[1.0]).unwrap().data(), &[1.0, 0.0]);
    let soft = mix_labels(&yi, &yj, &[0.3]).unwrap();
    assert!((soft.data()[0] - 0.3).abs() < 1e-15);
    assert!((soft.data()[1] - 0.7).abs() < 1e-15);
    let many = mix_labels(&one_hot(&[0, 2, 1], 3), &one_hot(&[1, 2, 0], 3), &[0.1, 0.6, 0.77]).unwrap();
    for r in 0..3 {
        assert!((many.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}

#[test]
fn mixup_loss_matches_soft_label_cross_entropy() {
    let mut r = rng(8);
    for _ in 0..50 {
        let logits = Tensor::uniform(&[4, 3], 4.0, &mut r);
        let yi = one_hot(&[0, 1, 2, 1], 3);
        let yj = one_hot(&[2, 1, 0, 0], 3);
        let lam: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let lv = tape.leaf(Tensor::vector(lam.clone()));
        let l = mixup_loss(&mut tape, z, &yi, &yj, lv).unwrap();
        let soft = mix_labels(&yi, &yj, &lam).unwrap();
        let ce = tape.softmax_cross_entropy(z, &soft).unwrap();
        for (a, b) in tape.value(l).data().iter().zip(tape.value(ce).data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn mixup_loss_endpoints() {
    let logits = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.1]]).unwrap();
    let yi = one_hot(&[0, 1], 2);
    let yj = one_hot(&[1, 1], 2);
    let mut tape = Tape::new();
    let z = tape.leaf(logits);
    let ce_i = tape.softmax_cross_entropy(z, &yi).unwrap();
    let one = tape.leaf(Tensor::vector(vec![1.0, 1.0]));
    let l1 = mixup_loss(&mut tape, z, &yi, &yj, one).unwrap();
    assert_eq!(tape.value(l1).data(), tape.value(ce_i).data());
    let same = tape.leaf(Tensor::vector(vec![0.5, 0.5]));
    let l_same = mixup_loss(&mut tape, z, &yi, &yi, same).unwrap();
    for (a, b) in tape.value(l_same).data().iter().zip(tape.value(ce_i).data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn endpoint_collapse() {
    let batch = toy_batch(6, 5, 15, 3, 3);
    let perm = vec![3, 0, 5, 1, 2, 4];
    for m in models() {
        let plain = plain_ce(&m, &batch);
        // At the sent layer, and at the word layer of the CNN (which ignores
        // valid lengths), λ = 1 reproduces the unmixed batch exactly.
        let layers: &[Layer] = if m.kind_name() == "text-cnn" {
            &Layer::ALL
        } else {
            &[Layer::Sent]
        };
        for &layer in layers {
            let l1 = loss_values(&m, &batch, layer, perm.clone(), vec![1.0; 6]);
            assert_eq!(l1, plain, "{} {layer} λ=1", m.kind_name());
            let l0 = loss_values(&m, &batch, layer, perm.clone(), vec![0.0; 6]);
            let partner: Vec<f64> = perm.iter().map(|&j| plain[j]).collect();
            assert_eq!(l0, partner, "{} {layer} λ=0", m.kind_name());
        }
    }
}

#[test]
fn word_mix_of_equal_lengths_collapses_for_mlp() {
    let mut b = toy_batch(4, 4, 15, 3, 9);
    let ids: Vec<usize> = (0..16).map(|i| 2 + i % 13).collect();
    b = Batch::new(ids, 4, vec![4; 4], b.labels().clone()).unwrap();
    let m = &models()[0];
    let plain = plain_ce(m, &b);
    assert_eq!(loss_values(m, &b, Layer::Word, vec![1, 2, 3, 0], vec![1.0; 4]), plain);
}

#[test]
fn swap_symmetry() {
    let batch = toy_batch(6, 5, 15, 3, 4);
    let perm = vec![2, 4, 0, 5, 1, 3];
    let lam = vec![0.1, 0.35, 0.5, 0.72, 0.9, 0.6];
    for m in models() {
        for layer in Layer::ALL {
            let l = loss_values(&m, &batch, layer, perm.clone(), lam.clone());
            // Sample s mixes (s, perm[s]) at λ_s. Build a batch whose row s
            // holds perm[s]'s example and whose partner is s, at 1 - λ_s.
            let n = batch.len();
            let max_len = batch.max_len();
            let mut ids = Vec::new();
            let mut lens = Vec::new();
            for &j in &perm {
                ids.extend_from_slice(batch.row_ids(j));
                lens.push(batch.valid_lens()[j]);
            }
            let mut inv = vec![0; n];
            for (s, &j) in perm.iter().enumerate() {
                inv[j] = s;
            }
            let swapped = Batch::new(
                ids,
                max_len,
                lens,
                gather_label_rows(batch.labels(), &perm),
            )
            .unwrap();
            // partner of row s (which holds example perm[s]) is example s,
            // now stored at row inv[s].
            let partner: Vec<usize> = (0..n).map(|s| inv[s]).collect();
            let flipped: Vec<f64> = lam.iter().map(|x| 1.0 - x).collect();
            let l2 = loss_values(&m, &swapped, layer, partner, flipped);
            for (a, b) in l.iter().zip(&l2) {
                assert!((a - b).abs() < 1e-12, "{} {layer}: {a} vs {b}", m.kind_name());
            }
        }
    }
}

#[test]
fn rand_op_uses_config_lambda_mode() {
    let m = &models()[0];
    let batch = toy_batch(5, 5, 15, 3, 6);
    let mut cfg = MixConfig {
        policy: Policy::Mixup,
        per_pair_lambda: false,
        ..MixConfig::default()
    };
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape);
    let out = rand_op(m, &mut tape, &bound, &batch, &cfg, &mut rng(1), None).unwrap();
    assert!(out.mix.lambda.iter().all(|&l| l == out.mix.lambda[0]));
    assert_eq!(tape.value(out.loss).shape(), &[5]);
    for r in 0..5 {
        let s: f64 = out.mix.mixed_labels.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    cfg.per_pair_lambda = true;
    let out = rand_op(m, &mut tape, &bound, &batch, &cfg, &mut rng(1), None).unwrap();
    assert!(out.mix.lambda.iter().any(|&l| l != out.mix.lambda[0]));
    cfg.alpha = 0.0;
    assert!(rand_op(m, &mut tape, &bound, &batch, &cfg, &mut rng(1), None).is_err());
}

#[test]
fn lambda_mean_is_half_under_uniform() {
    let cfg = MixConfig::default();
    let mut r = rng(12);
    let draws: Vec<f64> = (0..500)
        .flat_map(|_| draw_lambdas(&cfg, 20, &mut r).unwrap())
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
}

#[test]
fn policy_and_layer_parse() {
    assert_eq!("amp".parse::<Policy>().unwrap(), Policy::Amp);
    assert!("cutmix".parse::<Policy>().is_err());
}
