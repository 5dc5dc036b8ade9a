use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

/// Weighted sum with fixed pseudo-random weights, so every output coordinate
/// contributes a distinct amount to the checked scalar.
fn weighted_sum(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> crate::Result<Var> {
    let w = rand_t(g.shape(x).to_vec().as_slice(), seed ^ 0xfeed);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

#[test]
fn activation_values() {
    let mut g = Graph::<f64>::new(false, 0);
    let z = g.input(Tensor::scalar(0.0));
    let th = g.tanh(z);
    let sg = g.sigmoid(z);
    assert_eq!(g.scalar(th), 0.0);
    assert_eq!(g.scalar(sg), 0.5);
}

#[test]
fn add_negation_is_zero() {
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.input(t(&[2, 2], &[1.0, -2.0, 3.5, 0.25]));
    let n = g.neg(x);
    let z = g.add(x, n).unwrap();
    assert!(g.value(z).iter().all(|&v| v == 0.0));
}

#[test]
fn mul_gradient_by_finite_differences() {
    let r = grad_check(
        |g, v| g.mul(v[0], v[1]),
        &[Tensor::scalar(2.0), Tensor::scalar(3.0)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-8, "{r:?}");

    let mut g = Graph::<f64>::new(false, 0);
    let x = g.input(Tensor::scalar(2.0));
    let y = g.input(Tensor::scalar(3.0));
    let p = g.mul(x, y).unwrap();
    g.backward(p).unwrap();
    assert_eq!(g.grad(x).unwrap(), [3.0]);
    assert_eq!(g.grad(y).unwrap(), [2.0]);
}

#[test]
fn elementwise_shape_mismatch_lists_both() {
    let mut g = Graph::<f64>::new(false, 0);
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Shape(_)));
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
}

#[test]
fn scalar_broadcast_gradient() {
    let r = grad_check(
        |g, v| {
            let p = g.mul(v[0], v[1])?;
            let q = g.sub(p, v[1])?;
            weighted_sum(g, q, 3)
        },
        &[rand_t(&[3, 2], 1), Tensor::scalar(0.7)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-8, "{r:?}");
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new(false, 0);
    let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ones = g.input(t(&[2, 1], &[1.0, 1.0]));
    let c = g.matmul(a, ones).unwrap();
    assert_eq!(g.value(c), [3.0, 7.0]);

    let id = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let same = g.matmul(id, a).unwrap();
    assert_eq!(g.value(same), g.value(a));

    let bad = g.input(Tensor::zeros(&[3, 1]));
    assert!(matches!(g.matmul(a, bad), Err(Error::Shape(_))));
}

#[test]
fn matmul_gradients() {
    let r = grad_check(
        |g, v| {
            let c = g.matmul(v[0], v[1])?;
            weighted_sum(g, c, 7)
        },
        &[rand_t(&[3, 4], 11), rand_t(&[4, 2], 12)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn matmul_chain_is_tight() {
    let r = grad_check(
        |g, v| {
            let ab = g.matmul(v[0], v[1])?;
            let abc = g.matmul(ab, v[2])?;
            weighted_sum(g, abc, 8)
        },
        &[rand_t(&[2, 3], 1), rand_t(&[3, 4], 2), rand_t(&[4, 2], 3)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn linear_function_is_exact_to_rounding() {
    let r = grad_check(|g, v| Ok(g.sum(v[0])), &[rand_t(&[4], 5)]).unwrap();
    assert!(r.max_rel_err < 1e-9, "{r:?}");
}

#[test]
fn conv_examples() {
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.input(t(&[3, 1], &[1.0, 2.0, 3.0]));
    let k = g.input(t(&[1, 1, 1], &[1.0]));
    let b = g.input(t(&[1], &[0.5]));
    let y = g.conv_temporal(x, k, b).unwrap();
    assert_eq!(g.shape(y), [3, 1]);
    assert_eq!(g.value(y), [1.5, 2.5, 3.5]);

    // L = w: one output equal to the full dot product.
    let x = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let k = g.input(t(&[1, 2, 2], &[0.5, -1.0, 2.0, 1.0]));
    let b = g.input(t(&[1], &[0.0]));
    let y = g.conv_temporal(x, k, b).unwrap();
    assert_eq!(g.shape(y), [1, 1]);
    assert_eq!(g.value(y), [0.5 - 2.0 + 6.0 + 4.0]);

    let k3 = g.input(Tensor::zeros(&[1, 3, 2]));
    assert!(matches!(g.conv_temporal(x, k3, b), Err(Error::Shape(_))));
}

#[test]
fn conv_gradients() {
    let r = grad_check(
        |g, v| {
            let y = g.conv_temporal(v[0], v[1], v[2])?;
            weighted_sum(g, y, 9)
        },
        &[rand_t(&[9, 4], 21), rand_t(&[5, 3, 4], 22), rand_t(&[5], 23)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn max_over_time_examples() {
    let mut g = Graph::<f64>::new(false, 0);
    let one = g.input(t(&[1, 3], &[4.0, -1.0, 2.0]));
    let y = g.max_over_time(one).unwrap();
    assert_eq!(g.value(y), [4.0, -1.0, 2.0]);

    let x = g.input(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
    let y = g.max_over_time(x).unwrap();
    assert_eq!(g.value(y), [3.0, 5.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), [0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn max_over_time_ties_route_to_first() {
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.input(t(&[3, 1], &[2.0, 2.0, 1.0]));
    let y = g.max_over_time(x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), [1.0, 0.0, 0.0]);
}

#[test]
fn max_over_time_gradient_check() {
    let mut x = rand_t(&[6, 4], 31);
    separate_ties(&mut x, 1e-2);
    let r = grad_check(
        |g, v| {
            let y = g.max_over_time(v[0])?;
            weighted_sum(g, y, 10)
        },
        &[x],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn masked_max_ignores_tail() {
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.input(t(&[2, 3, 1], &[1.0, 2.0, 9.0, 4.0, 0.0, 7.0]));
    let y = g.max_over_time_masked(x, &[2, 3]).unwrap();
    assert_eq!(g.value(y), [2.0, 7.0]);
    assert!(g.max_over_time_masked(x, &[0, 3]).is_err());
    let empty = g.max_over_time_masked(x, &[4, 1]);
    assert!(matches!(empty, Err(Error::Shape(_))));
}

#[test]
fn xent_uniform_logits() {
    let mut g = Graph::<f64>::new(false, 0);
    let logits = g.input(Tensor::zeros(&[3, 4]));
    let (loss, stats) = g.softmax_xent(logits, &[1, 2, 3], 0).unwrap();
    assert!((g.scalar(loss) - 4f64.ln()).abs() < 1e-12);
    assert_eq!(stats.counted, 3);
}

#[test]
fn xent_all_ignored() {
    let mut g = Graph::<f64>::new(false, 0);
    let logits = g.input(rand_t(&[2, 4], 3));
    let (loss, stats) = g.softmax_xent(logits, &[0, 0], 0).unwrap();
    assert_eq!(g.scalar(loss), 0.0);
    assert_eq!((stats.correct, stats.counted), (0, 0));
    g.backward(loss).unwrap();
    assert!(g.grad(logits).map_or(true, |gr| gr.iter().all(|&v| v == 0.0)));
}

#[test]
fn xent_counts_correct_and_rejects_bad_ids() {
    let mut g = Graph::<f64>::new(false, 0);
    let logits = g.input(t(&[3, 3], &[5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0]));
    let (_, stats) = g.softmax_xent(logits, &[0, 2, 1], 1).unwrap();
    assert_eq!((stats.correct, stats.counted), (1, 2));
    assert!(matches!(g.softmax_xent(logits, &[0, 3, 1], 1), Err(Error::Index(_))));
}

#[test]
fn xent_gradient_check() {
    let r = grad_check(
        |g, v| Ok(g.softmax_xent(v[0], &[1, 0, 6, 3, 1], 3)?.0),
        &[rand_t(&[5, 7], 41)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn xent_stable_for_large_logits() {
    let mut g = Graph::<f32>::new(false, 0);
    let logits = g.input(Tensor::from_f64(&[2, 3], &[1e4, -1e4, 0.0, -1e4, -1e4, 1e4]).unwrap());
    let (loss, _) = g.softmax_xent(logits, &[1, 0], 9).unwrap();
    assert!(g.scalar(loss).is_finite());
}

#[test]
fn masked_softmax_properties() {
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.input(rand_t(&[3, 4], 5));
    let mask = [true, true, false, false, true, true, true, true, false, true, false, false];
    let y = g.masked_softmax(x, &mask).unwrap();
    for row in 0..3 {
        let r = &g.value(y)[row * 4..row * 4 + 4];
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in 0..4 {
            if !mask[row * 4 + c] {
                assert_eq!(r[c], 0.0);
            }
        }
    }
    assert_eq!(g.value(y)[9], 1.0);
    let none = [false; 4];
    let x1 = g.input(rand_t(&[1, 4], 6));
    assert!(matches!(g.masked_softmax(x1, &none), Err(Error::State(_))));
}

#[test]
fn masked_softmax_gradient_check() {
    let mask = [true, false, true, true, true, true, false, true];
    let r = grad_check(
        |g, v| {
            let y = g.masked_softmax(v[0], &mask)?;
            weighted_sum(g, y, 12)
        },
        &[rand_t(&[2, 4], 51)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn structural_ops_gradients() {
    let r = grad_check(
        |g, v| {
            let c = g.concat_cols(&[v[0], v[1]])?;
            let s = g.slice_cols(c, 1, 3)?;
            let st = g.stack(&[s, s, v[2]])?;
            let sel = g.select(st, 2)?;
            let rs = g.reshape(st, &[2, 9])?;
            let a = weighted_sum(g, rs, 1)?;
            let b = weighted_sum(g, sel, 2)?;
            g.add(a, b)
        },
        &[rand_t(&[2, 2], 61), rand_t(&[2, 3], 62), rand_t(&[2, 3], 63)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn embedding_and_bias_gradients() {
    let r = grad_check(
        |g, v| {
            let e = g.embedding(v[0], &[2, 0, 2, 1])?;
            let h = g.add_bias(e, v[1])?;
            let a = g.tanh(h);
            let s = g.sigmoid(a);
            let rl = g.relu(h);
            let t = g.add(s, rl)?;
            let sc = g.scale(t, 1.5);
            let shifted = g.add_scalar(sc, -0.3);
            let om = g.one_minus(shifted);
            weighted_sum(g, om, 4)
        },
        &[rand_t(&[3, 5], 71), rand_t(&[5], 72)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");

    let mut g = Graph::<f64>::new(false, 0);
    let table = g.input(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.embedding(table, &[3]), Err(Error::Index(_))));
}

#[test]
fn bmm_gradients() {
    let r = grad_check(
        |g, v| {
            let y = g.bmm(v[0], v[1])?;
            weighted_sum(g, y, 5)
        },
        &[rand_t(&[2, 3, 4], 81), rand_t(&[2, 4, 2], 82)],
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn dropout_modes() {
    let ones = Tensor::<f64>::filled(&[100], 1.0);
    let mut g = Graph::<f64>::new(true, 1);
    let x = g.input(ones.clone());
    assert_eq!(g.dropout(x, 0.0).unwrap(), x);
    assert!(matches!(g.dropout(x, 1.0), Err(Error::Config(_))));
    assert!(matches!(g.dropout(x, -0.1), Err(Error::Config(_))));

    let mut eval = Graph::<f64>::new(false, 1);
    let x = eval.input(ones);
    assert_eq!(eval.dropout(x, 0.5).unwrap(), x);
}

#[test]
fn dropout_statistics() {
    let n = 100_000;
    let mut g = Graph::<f64>::new(true, 2024);
    let x = g.input(Tensor::filled(&[n], 1.0));
    let y = g.dropout(x, 0.2).unwrap();
    let v = g.value(y);
    let mean = v.iter().sum::<f64>() / n as f64;
    let zeros = v.iter().filter(|&&e| e == 0.0).count() as f64 / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!((zeros - 0.2).abs() < 0.01, "zero fraction {zeros}");
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.input(rand_t(&[3, 2], 1));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), [1.0; 6]);
    assert!(matches!(g.backward(s), Err(Error::State(_))));
}

#[test]
fn unreached_parameters_get_zero() {
    let mut params = ParamSet::<f64>::new();
    let used = params.add("used", Tensor::filled(&[2], 3.0)).unwrap();
    params.add("unused", Tensor::filled(&[3], 1.0)).unwrap();
    let mut g = Graph::with_params(&params, false, 0);
    let u = g.param(used);
    let s = g.sum(u);
    g.backward(s).unwrap();
    let grads = g.param_grads().unwrap();
    assert_eq!(grads[0], [1.0, 1.0]);
    assert_eq!(grads[1], [0.0, 0.0, 0.0]);
}

#[test]
fn param_grads_require_backward() {
    let params = ParamSet::<f64>::new();
    let g = Graph::with_params(&params, false, 0);
    assert!(matches!(g.param_grads(), Err(Error::State(_))));
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new(true, 99);
        let x = g.input(Tensor::uniform(&[50], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3)));
        let y = g.dropout(x, 0.3).unwrap();
        let z = g.tanh(y);
        g.value(z).to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn grad_check_reports_non_finite() {
    let err = grad_check(
        |g, v| {
            let l = g.scale(v[0], 1e308);
            let l = g.scale(l, 1e308);
            Ok(g.sum(l))
        },
        &[Tensor::scalar(1.0)],
    )
    .unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
}
