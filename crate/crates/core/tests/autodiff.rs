//! Backward-pass verification: every op is checked against central finite
//! differences in f64, plus a handful of hand-computed gradients.

use rand::Rng;
use tabtrans::rng;
use tabtrans::tensor::{gradcheck, Tape, Tensor, Var};
use tabtrans::ParamStore;

fn randn(shape: &[usize], seed: u64, label: &str) -> Tensor<f64> {
    let mut r = rng::stream(seed, label);
    Tensor::from_fn(shape, |_| r.random::<f64>() * 2.0 - 1.0)
}

/// Sum all elements of `v` through a constant matmul so the loss is scalar.
fn sum_all(tape: &mut Tape<f64>, v: Var) -> Var {
    let n = tape.value(v).len();
    let flat = tape.reshape(v, &[1, n]).unwrap();
    let ones = tape.constant(Tensor::full(&[n, 1], 1.0));
    let s = tape.matmul(flat, ones).unwrap();
    tape.reshape(s, &[1]).unwrap()
}

/// Max relative error between tape gradients and finite differences for the
/// graph produced by `build`.
fn fd_check(
    params: &ParamStore<f64>,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let vars = params.vars_on(&mut tape);
    let loss = build(&mut tape, &vars);
    assert_eq!(tape.value(loss).len(), 1);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Option<Tensor<f64>>> =
        (0..params.len()).map(|i| grads.param_grad(i)).collect();
    let numeric = gradcheck::central_diff(
        params,
        |p| {
            let mut t = Tape::new();
            let vs = p.vars_on(&mut t);
            let l = build(&mut t, &vs);
            Ok(t.value(l).item())
        },
        1e-5,
    )
    .unwrap();
    let report = gradcheck::compare(params, &analytic, &numeric);
    if report.max_rel_err >= 1e-6 {
        eprintln!("worst: {:?}", report.worst);
    }
    report.max_rel_err
}

fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(n, t.clone()).unwrap();
    }
    s
}

#[test]
fn matmul_chain_grads_match_fd() {
    for seed in 0..8 {
        let p = store(&[
            ("a", randn(&[3, 4], seed, "a")),
            ("b", randn(&[4, 2], seed, "b")),
        ]);
        let err = fd_check(&p, |t, vs| {
            let y = t.matmul(vs[0], vs[1]).unwrap();
            sum_all(t, y)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn bmm_grads_match_fd_both_orientations() {
    for seed in 0..8 {
        for transpose_b in [false, true] {
            let b_shape = if transpose_b { [2, 5, 4] } else { [2, 4, 5] };
            let p = store(&[
                ("a", randn(&[2, 3, 4], seed, "a")),
                ("b", randn(&b_shape, seed, "b")),
            ]);
            let err = fd_check(&p, |t, vs| {
                let y = t.bmm(vs[0], vs[1], transpose_b).unwrap();
                sum_all(t, y)
            });
            assert!(err < 1e-6, "seed {seed} tb {transpose_b}: {err}");
        }
    }
}

#[test]
fn elementwise_and_bias_grads_match_fd() {
    for seed in 0..8 {
        // Shift inputs away from the relu/selu kink at zero.
        let base = randn(&[4, 3], seed, "x").map(|v| v + 0.3 * v.signum());
        let p = store(&[
            ("x", base),
            ("y", randn(&[4, 3], seed, "y")),
            ("bias", randn(&[3], seed, "bias")),
        ]);
        let err = fd_check(&p, |t, vs| {
            let s = t.add(vs[0], vs[1]).unwrap();
            let s = t.add_bias(s, vs[2]).unwrap();
            let r = t.relu(s);
            let e = t.selu(vs[0]);
            let both = t.add(r, e).unwrap();
            let sc = t.scale(both, 0.7);
            sum_all(t, sc)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_grads_match_fd() {
    for seed in 0..8 {
        let p = store(&[("x", randn(&[3, 5], seed, "x"))]);
        let err = fd_check(&p, |t, vs| {
            let y = t.softmax_last(vs[0], 0.5).unwrap();
            // Weight the probabilities so the gradient is not identically zero.
            let w = t.constant(Tensor::from_fn(&[5, 1], |i| (i as f64) - 1.5));
            let z = t.matmul(y, w).unwrap();
            sum_all(t, z)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn layer_norm_grads_match_fd() {
    for seed in 0..8 {
        let p = store(&[
            ("x", randn(&[4, 6], seed, "x")),
            ("gamma", randn(&[6], seed, "g").map(|v| v + 1.5)),
            ("beta", randn(&[6], seed, "be")),
        ]);
        let err = fd_check(&p, |t, vs| {
            let y = t.layer_norm(vs[0], vs[1], vs[2], 1e-5).unwrap();
            let w = t.constant(Tensor::from_fn(&[6, 1], |i| 0.3 * i as f64 - 0.8));
            let z = t.matmul(y, w).unwrap();
            sum_all(t, z)
        });
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn dropout_grads_match_fd_with_replayed_mask() {
    for seed in 0..8 {
        let p = store(&[("x", randn(&[6, 4], seed, "x"))]);
        let err = fd_check(&p, |t, vs| {
            // Same stream every call, so finite differencing sees the same mask.
            let mut mask_rng = rng::stream(seed, "mask");
            let y = t.dropout(vs[0], 0.4, &mut mask_rng);
            sum_all(t, y)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn reshape_concat_gather_grads_match_fd() {
    for seed in 0..8 {
        let p = store(&[
            ("a", randn(&[4, 3], seed, "a")),
            ("b", randn(&[4, 2], seed, "b")),
        ]);
        let err = fd_check(&p, |t, vs| {
            let c = t.concat_last(&[vs[0], vs[1], vs[0]]).unwrap();
            // Duplicate and out-of-order indices exercise scatter-add.
            let g = t.gather_rows(c, vec![2, 0, 2, 3]).unwrap();
            let r = t.reshape(g, &[2, 16]).unwrap();
            sum_all(t, r)
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn loss_grads_match_fd() {
    for seed in 0..8 {
        let p = store(&[("z", randn(&[5, 3], seed, "z"))]);
        let err = fd_check(&p, |t, vs| {
            t.ce_mean(vs[0], vec![0, 2, 1, 1, 0]).unwrap()
        });
        assert!(err < 1e-6, "ce seed {seed}: {err}");

        let p = store(&[("z", randn(&[7], seed, "z").map(|v| v * 3.0))]);
        let err = fd_check(&p, |t, vs| {
            t.bce_mean(vs[0], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap()
        });
        assert!(err < 1e-6, "bce seed {seed}: {err}");

        let p = store(&[("z", randn(&[6], seed, "z").map(|v| v * 2.0 + 0.1))]);
        let err = fd_check(&p, |t, vs| t.entropy_mean(vs[0]).unwrap());
        assert!(err < 1e-6, "entropy seed {seed}: {err}");
    }
}

#[test]
fn composite_attention_like_graph_matches_fd() {
    // One attention block in miniature: projections, scaled softmax over
    // scores, weighted values, layer norm, losses.
    for seed in 0..4 {
        let p = store(&[
            ("e", randn(&[2, 3, 4], seed, "e")),
            ("wq", randn(&[4, 2], seed, "wq")),
            ("wk", randn(&[4, 2], seed, "wk")),
            ("wv", randn(&[4, 2], seed, "wv")),
            ("gamma", randn(&[2], seed, "gamma").map(|v| v + 1.2)),
            ("beta", randn(&[2], seed, "beta")),
        ]);
        let err = fd_check(&p, |t, vs| {
            let flat = t.reshape(vs[0], &[6, 4]).unwrap();
            let q = t.matmul(flat, vs[1]).unwrap();
            let k = t.matmul(flat, vs[2]).unwrap();
            let v = t.matmul(flat, vs[3]).unwrap();
            let q3 = t.reshape(q, &[2, 3, 2]).unwrap();
            let k3 = t.reshape(k, &[2, 3, 2]).unwrap();
            let v3 = t.reshape(v, &[2, 3, 2]).unwrap();
            let scores = t.bmm(q3, k3, true).unwrap();
            let attn = t.softmax_last(scores, 1.0 / (2.0f64).sqrt()).unwrap();
            let mixed = t.bmm(attn, v3, false).unwrap();
            let flat2 = t.reshape(mixed, &[6, 2]).unwrap();
            let normed = t.layer_norm(flat2, vs[4], vs[5], 1e-5).unwrap();
            let z = t.reshape(normed, &[12]).unwrap();
            t.bce_mean(z, (0..12).map(|i| (i % 2) as f64).collect()).unwrap()
        });
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn square_via_shared_var_doubles_gradient() {
    // loss = w * w at w = 3 must give dloss/dw = 6.
    let p = store(&[("w", Tensor::new(&[1, 1], vec![3.0]).unwrap())]);
    let mut tape = Tape::new();
    let vars = p.vars_on(&mut tape);
    let y = tape.matmul(vars[0], vars[0]).unwrap();
    let loss = tape.reshape(y, &[1]).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.param_grad(0).unwrap().data(), &[6.0]);
}

#[test]
fn known_loss_values_and_gradients() {
    let ln2 = std::f64::consts::LN_2;

    // Cross-entropy of uniform logits, target class 0.
    let p = store(&[("z", Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap())]);
    let mut tape = Tape::new();
    let vars = p.vars_on(&mut tape);
    let loss = tape.ce_mean(vars[0], vec![0]).unwrap();
    assert!((tape.value(loss).item() - ln2).abs() < 1e-12);
    let g = tape.backward(loss).unwrap().param_grad(0).unwrap();
    assert!((g.data()[0] + 0.5).abs() < 1e-12);
    assert!((g.data()[1] - 0.5).abs() < 1e-12);

    // Binary cross-entropy at logit 0.
    let p = store(&[("z", Tensor::new(&[1], vec![0.0]).unwrap())]);
    let mut tape = Tape::new();
    let vars = p.vars_on(&mut tape);
    let loss = tape.bce_mean(vars[0], vec![1.0]).unwrap();
    assert!((tape.value(loss).item() - ln2).abs() < 1e-12);
    let g = tape.backward(loss).unwrap().param_grad(0).unwrap();
    assert!((g.data()[0] + 0.5).abs() < 1e-12);

    // Bernoulli entropy peaks at ln 2 with zero slope.
    let p = store(&[("z", Tensor::new(&[1], vec![0.0]).unwrap())]);
    let mut tape = Tape::new();
    let vars = p.vars_on(&mut tape);
    let loss = tape.entropy_mean(vars[0]).unwrap();
    assert!((tape.value(loss).item() - ln2).abs() < 1e-12);
    let g = tape.backward(loss).unwrap().param_grad(0).unwrap();
    assert_eq!(g.data()[0], 0.0);
}

#[test]
fn unreached_parameter_has_no_gradient() {
    let p = store(&[
        ("used", Tensor::new(&[1, 1], vec![2.0]).unwrap()),
        ("unused", Tensor::new(&[3], vec![1.0, 1.0, 1.0]).unwrap()),
    ]);
    let mut tape = Tape::new();
    let vars = p.vars_on(&mut tape);
    let y = tape.matmul(vars[0], vars[0]).unwrap();
    let loss = tape.reshape(y, &[1]).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.param_grad(0).is_some());
    assert!(grads.param_grad(1).is_none());
}

#[test]
fn registering_a_param_twice_reuses_the_node() {
    let p = store(&[("w", Tensor::new(&[1, 1], vec![3.0]).unwrap())]);
    let mut tape = Tape::new();
    let a = tape.param(0, p.value_at(0).clone());
    let b = tape.param(0, p.value_at(0).clone());
    assert_eq!(a, b);
}
