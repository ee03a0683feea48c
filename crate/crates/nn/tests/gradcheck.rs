//! Finite-difference gradient checks for every differentiable op, in f64
//! shadow mode over multiple seeds, plus backward-linearity and determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wigkit_nn::gradcheck::check_gradients;
use wigkit_nn::tape::{Tape, TensorId};
use wigkit_nn::tensor::TensorData;

const SEEDS: [u64; 10] = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89];
const TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> TensorData<f64> {
    let n: usize = shape.iter().product();
    TensorData::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Weighted sum of the output keeps every output coordinate in play.
fn weighted_sum(tape: &mut Tape<f64>, y: TensorId, rng: &mut ChaCha8Rng) -> TensorId {
    let w = rand_tensor(rng, tape.shape(y).to_vec(), -1.0, 1.0);
    let wid = tape.constant(w);
    let prod = tape.mul(y, wid).unwrap();
    tape.sum(prod)
}

fn check_over_seeds<F>(name: &str, inputs_for: impl Fn(&mut ChaCha8Rng) -> Vec<TensorData<f64>>, build: F)
where
    F: Fn(&mut Tape<f64>, &[TensorId], &mut ChaCha8Rng) -> TensorId,
{
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = inputs_for(&mut rng);
        // clone the rng state so forward rebuilds use identical weights
        let rng_snapshot = rng.clone();
        let report = check_gradients(&inputs, EPS, |tape, ids| {
            let mut r = rng_snapshot.clone();
            build(tape, ids, &mut r)
        });
        assert!(
            report.max_rel_err < TOL,
            "{name} seed {seed}: max rel err {} over {} coords",
            report.max_rel_err,
            report.checked
        );
    }
}

#[test]
fn grad_linear() {
    check_over_seeds(
        "linear",
        |rng| {
            vec![
                rand_tensor(rng, vec![4, 5], -1.0, 1.0),
                rand_tensor(rng, vec![5, 3], -1.0, 1.0),
                rand_tensor(rng, vec![3], -1.0, 1.0),
            ]
        },
        |tape, ids, rng| {
            let y = tape.linear(ids[0], ids[1], ids[2]).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_conv2d() {
    check_over_seeds(
        "conv2d",
        |rng| {
            vec![
                rand_tensor(rng, vec![2, 5, 6], -1.0, 1.0),
                rand_tensor(rng, vec![3, 2, 3, 3], -1.0, 1.0),
                rand_tensor(rng, vec![3], -1.0, 1.0),
            ]
        },
        |tape, ids, rng| {
            let y = tape.conv2d(ids[0], ids[1], ids[2], 1, 1).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_conv2d_stride2() {
    check_over_seeds(
        "conv2d_s2",
        |rng| {
            vec![
                rand_tensor(rng, vec![1, 6, 6], -1.0, 1.0),
                rand_tensor(rng, vec![2, 1, 3, 3], -1.0, 1.0),
                rand_tensor(rng, vec![2], -1.0, 1.0),
            ]
        },
        |tape, ids, rng| {
            let y = tape.conv2d(ids[0], ids[1], ids[2], 2, 1).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_deconv2d() {
    check_over_seeds(
        "deconv2d",
        |rng| {
            vec![
                rand_tensor(rng, vec![2, 3, 4], -1.0, 1.0),
                rand_tensor(rng, vec![2, 3, 4, 4], -1.0, 1.0),
                rand_tensor(rng, vec![3], -1.0, 1.0),
            ]
        },
        |tape, ids, rng| {
            let y = tape.deconv2d(ids[0], ids[1], ids[2], 2, 1).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_avg_pool2() {
    check_over_seeds(
        "avg_pool2",
        |rng| vec![rand_tensor(rng, vec![2, 4, 6], -1.0, 1.0)],
        |tape, ids, rng| {
            let y = tape.avg_pool2(ids[0]).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_leaky_relu() {
    check_over_seeds(
        "leaky_relu",
        // keep values away from the kink at 0
        |rng| {
            let mut t = rand_tensor(rng, vec![12], -1.0, 1.0);
            for v in &mut t.values {
                if v.abs() < 0.05 {
                    *v += 0.1;
                }
            }
            vec![t]
        },
        |tape, ids, rng| {
            let y = tape.leaky_relu(ids[0], 0.2);
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_softplus_logistic_exp() {
    check_over_seeds(
        "softplus+logistic+exp",
        |rng| vec![rand_tensor(rng, vec![10], -2.0, 2.0)],
        |tape, ids, rng| {
            let a = tape.softplus(ids[0]);
            let b = tape.logistic(a);
            let c = tape.exp(b);
            weighted_sum(tape, c, rng)
        },
    );
}

#[test]
fn grad_normalize_rows() {
    check_over_seeds(
        "normalize_rows",
        |rng| vec![rand_tensor(rng, vec![4, 3], 0.2, 1.0)],
        |tape, ids, rng| {
            let y = tape.normalize_rows(ids[0]).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_mam_pool() {
    check_over_seeds(
        "mam_pool",
        // distinct values so argmin/argmax stay stable under probes
        |rng| {
            let mut t = rand_tensor(rng, vec![6, 4], -1.0, 1.0);
            for (i, v) in t.values.iter_mut().enumerate() {
                *v += i as f64 * 1e-3;
            }
            vec![t]
        },
        |tape, ids, rng| {
            let y = tape.mam_pool(ids[0]).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_positional_encoding() {
    check_over_seeds(
        "positional_encoding",
        |rng| vec![rand_tensor(rng, vec![3, 3], -1.0, 1.0)],
        |tape, ids, rng| {
            let y = tape.positional_encoding(ids[0]).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_weight_norm() {
    check_over_seeds(
        "weight_norm",
        |rng| {
            vec![rand_tensor(rng, vec![3, 4], 0.3, 1.0), rand_tensor(rng, vec![3], 0.5, 2.0)]
        },
        |tape, ids, rng| {
            let y = tape.weight_norm(ids[0], ids[1]).unwrap();
            weighted_sum(tape, y, rng)
        },
    );
}

#[test]
fn grad_concat_slice_repeat() {
    check_over_seeds(
        "concat+slice+repeat",
        |rng| {
            vec![
                rand_tensor(rng, vec![3, 2], -1.0, 1.0),
                rand_tensor(rng, vec![3, 4], -1.0, 1.0),
                rand_tensor(rng, vec![5], -1.0, 1.0),
            ]
        },
        |tape, ids, rng| {
            let cat = tape.concat_cols(&[ids[0], ids[1]]).unwrap();
            let sl = tape.slice_cols(cat, 1, 4).unwrap();
            let rep = tape.repeat_row(ids[2], 3).unwrap();
            let flat_a = tape.reshape(sl, vec![12]).unwrap();
            let flat_b = tape.reshape(rep, vec![15]).unwrap();
            let joined = tape.concat_flat(&[flat_a, flat_b]).unwrap();
            let piece = tape.slice_flat(joined, 2, vec![10]).unwrap();
            weighted_sum(tape, piece, rng)
        },
    );
}

#[test]
fn grad_image_gradients() {
    check_over_seeds(
        "grad_x+grad_y",
        |rng| vec![rand_tensor(rng, vec![2, 4, 5], -1.0, 1.0)],
        |tape, ids, rng| {
            let gx = tape.grad_x(ids[0]).unwrap();
            let gy = tape.grad_y(ids[0]).unwrap();
            let sa = weighted_sum(tape, gx, rng);
            let sb = weighted_sum(tape, gy, rng);
            tape.add(sa, sb).unwrap()
        },
    );
}

#[test]
fn grad_losses() {
    check_over_seeds(
        "mse+l1+cosine+kl",
        |rng| {
            // keep |a-b| away from zero so the L1 kink is inactive
            let a = rand_tensor(rng, vec![8], 0.5, 1.5);
            let b = rand_tensor(rng, vec![8], -1.5, -0.5);
            let mu = rand_tensor(rng, vec![6], -1.0, 1.0);
            let ls = rand_tensor(rng, vec![6], -1.0, 0.5);
            vec![a, b, mu, ls]
        },
        |tape, ids, _| {
            let m = tape.mse(ids[0], ids[1]).unwrap();
            let l = tape.l1(ids[0], ids[1]).unwrap();
            let c = tape.cosine_pair(ids[0], ids[1]).unwrap();
            let k = tape.kl_diag(ids[2], ids[3]).unwrap();
            let s1 = tape.add(m, l).unwrap();
            let s2 = tape.add(c, k).unwrap();
            tape.add(s1, s2).unwrap()
        },
    );
}

#[test]
fn grad_elementwise_and_reductions() {
    check_over_seeds(
        "add/sub/mul/scale/mean/clamp",
        |rng| {
            vec![rand_tensor(rng, vec![7], -0.8, 0.8), rand_tensor(rng, vec![7], -0.8, 0.8)]
        },
        |tape, ids, rng| {
            let a = tape.add(ids[0], ids[1]).unwrap();
            let s = tape.sub(a, ids[1]).unwrap();
            let m = tape.mul(s, ids[0]).unwrap();
            let sc = tape.scale(m, -1.5);
            let cl = tape.clamp(sc, -10.0, 10.0);
            let mean = tape.mean(cl);
            let sum = tape.sum(ids[1]);
            let j = tape.add(mean, sum).unwrap();
            let _ = rng;
            j
        },
    );
}

#[test]
fn grad_reparameterize() {
    check_over_seeds(
        "reparameterize",
        |rng| {
            vec![rand_tensor(rng, vec![5], -1.0, 1.0), rand_tensor(rng, vec![5], 0.3, 1.0)]
        },
        |tape, ids, rng| {
            let noise = rand_tensor(rng, vec![5], -1.0, 1.0);
            let z = tape.reparameterize(ids[0], ids[1], noise).unwrap();
            weighted_sum(tape, z, rng)
        },
    );
}

// Backward of a sum of two losses on disjoint paths equals the two separate
// backwards bit-for-bit; on a shared path it matches to rounding error.
#[test]
fn backward_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a_data = rand_tensor(&mut rng, vec![4, 4], -1.0, 1.0);
    let b_data = rand_tensor(&mut rng, vec![4, 4], -1.0, 1.0);

    // disjoint paths: bitwise equality
    let run = |combined: bool| -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(a_data.clone(), true);
        let b = tape.leaf(b_data.clone(), true);
        let la = tape.mean(a);
        let lb = tape.sum(b);
        if combined {
            let l = tape.add(la, lb).unwrap();
            let g = tape.backward(l).unwrap();
            (g.get(a).unwrap().to_vec(), g.get(b).unwrap().to_vec())
        } else {
            let ga = tape.backward(la).unwrap();
            let gb = tape.backward(lb).unwrap();
            (ga.get(a).unwrap().to_vec(), gb.get(b).unwrap().to_vec())
        }
    };
    let (ca, cb) = run(true);
    let (sa, sb) = run(false);
    assert_eq!(ca, sa);
    assert_eq!(cb, sb);

    // shared path: sum of backwards equals backward of sum to rounding
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(a_data.clone(), true);
    let l1 = tape.mean(x);
    let sq = tape.mul(x, x).unwrap();
    let l2 = tape.mean(sq);
    let l = tape.add(l1, l2).unwrap();
    let g_combined = tape.backward(l).unwrap().get(x).unwrap().to_vec();
    let g1 = tape.backward(l1).unwrap().get(x).unwrap().to_vec();
    let g2 = tape.backward(l2).unwrap().get(x).unwrap().to_vec();
    for i in 0..g_combined.len() {
        assert!((g_combined[i] - (g1[i] + g2[i])).abs() < 1e-12);
    }
}

// Same seed, same graph: forward values and gradients are bit-identical.
#[test]
fn deterministic_replay() {
    let build = || -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(rand_tensor(&mut rng, vec![3, 5], -1.0, 1.0), true);
        let w = tape.leaf(rand_tensor(&mut rng, vec![5, 4], -1.0, 1.0), true);
        let b = tape.leaf(rand_tensor(&mut rng, vec![4], -1.0, 1.0), true);
        let y = tape.linear(x, w, b).unwrap();
        let act = tape.leaky_relu(y, 0.2);
        let loss = tape.mean(act);
        let grads = tape.backward(loss).unwrap();
        (tape.value(loss).values.clone(), grads.get(w).unwrap().to_vec())
    };
    let (v1, g1) = build();
    let (v2, g2) = build();
    assert_eq!(v1, v2);
    assert_eq!(g1, g2);
}
