use hgnn_autodiff::{grad_check, ConvGeometry, Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Values bounded away from zero so relu/log kinks stay outside the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(0.2..2.0))
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Reduces any output to a scalar with fixed random weights so every
/// output coordinate contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let [r, c] = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c));
    let p = tape.mul(out, w)?;
    tape.sum(p, None)
}

fn check(name: &str, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) {
    let err = grad_check(f, inputs).unwrap();
    assert!(err <= TOL, "{name}: relative error {err:e}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 3, 5);
        check(
            "matmul",
            |t, v| {
                let o = t.matmul(v[0], v[1])?;
                weighted_sum(t, o, seed)
            },
            &[a.clone(), b.clone()],
        );

        let c = random(&mut rng, 4, 3);
        let row = random(&mut rng, 1, 3);
        let col = random(&mut rng, 4, 1);
        let sc = random(&mut rng, 1, 1);
        for (name, rhs) in [("same", &c), ("row", &row), ("col", &col), ("scalar", &sc)] {
            check(
                &format!("add/{name}"),
                |t, v| {
                    let o = t.add(v[0], v[1])?;
                    weighted_sum(t, o, seed)
                },
                &[a.clone(), rhs.clone()],
            );
            check(
                &format!("sub/{name}"),
                |t, v| {
                    let o = t.sub(v[0], v[1])?;
                    weighted_sum(t, o, seed)
                },
                &[a.clone(), rhs.clone()],
            );
            check(
                &format!("mul/{name}"),
                |t, v| {
                    let o = t.mul(v[0], v[1])?;
                    weighted_sum(t, o, seed)
                },
                &[a.clone(), rhs.clone()],
            );
        }

        check(
            "scale",
            |t, v| {
                let o = t.scale(v[0], -1.7);
                weighted_sum(t, o, seed)
            },
            &[a.clone()],
        );
        check(
            "relu",
            |t, v| {
                let o = t.relu(v[0]);
                weighted_sum(t, o, seed)
            },
            &[away_from_zero(&mut rng, 3, 4)],
        );
        check(
            "sigmoid",
            |t, v| {
                let o = t.sigmoid(v[0]);
                weighted_sum(t, o, seed)
            },
            &[random(&mut rng, 3, 4)],
        );
        check(
            "log_sigmoid",
            |t, v| {
                let o = t.log_sigmoid(v[0]);
                weighted_sum(t, o, seed)
            },
            &[{
                let mut x = random(&mut rng, 3, 4);
                x.data_mut().iter_mut().for_each(|v| *v *= 8.0);
                x
            }],
        );
        check(
            "log",
            |t, v| {
                let o = t.log(v[0]);
                weighted_sum(t, o, seed)
            },
            &[positive(&mut rng, 3, 4)],
        );
        for axis in 0..2 {
            let (x, y) = if axis == 0 {
                (random(&mut rng, 2, 3), random(&mut rng, 4, 3))
            } else {
                (random(&mut rng, 3, 2), random(&mut rng, 3, 4))
            };
            check(
                "concat",
                |t, v| {
                    let o = t.concat(&[v[0], v[1], v[0]], axis)?;
                    weighted_sum(t, o, seed)
                },
                &[x, y],
            );
            check(
                "slice",
                |t, v| {
                    let o = t.slice(v[0], axis, 1, 2)?;
                    weighted_sum(t, o, seed)
                },
                &[random(&mut rng, 4, 4)],
            );
        }
        for axis in [None, Some(0), Some(1)] {
            check(
                "sum",
                |t, v| {
                    let o = t.sum(v[0], axis)?;
                    weighted_sum(t, o, seed)
                },
                &[random(&mut rng, 3, 4)],
            );
        }
        check(
            "gather",
            |t, v| {
                let o = t.gather(v[0], &[2, 0, 2, 3])?;
                weighted_sum(t, o, seed)
            },
            &[random(&mut rng, 4, 3)],
        );
        check(
            "segment_sum",
            |t, v| {
                let o = t.segment_sum(v[0], &[1, 0, 1, 3, 1], 4)?;
                weighted_sum(t, o, seed)
            },
            &[random(&mut rng, 5, 3)],
        );
        check(
            "l2_normalize",
            |t, v| {
                let o = t.l2_normalize(v[0], 1e-8);
                weighted_sum(t, o, seed)
            },
            &[away_from_zero(&mut rng, 3, 4)],
        );
        check(
            "row_norm",
            |t, v| {
                let o = t.row_norm(v[0]);
                weighted_sum(t, o, seed)
            },
            &[away_from_zero(&mut rng, 4, 3)],
        );
        check(
            "quat_to_rotation",
            |t, v| {
                let o = t.quat_to_rotation(v[0])?;
                weighted_sum(t, o, seed)
            },
            &[random(&mut rng, 3, 4)],
        );
        check(
            "transpose",
            |t, v| {
                let o = t.transpose(v[0]);
                weighted_sum(t, o, seed)
            },
            &[random(&mut rng, 3, 5)],
        );
        check(
            "reshape",
            |t, v| {
                let o = t.reshape(v[0], 5, 3)?;
                weighted_sum(t, o, seed)
            },
            &[random(&mut rng, 3, 5)],
        );
        let geom = ConvGeometry {
            batch: 2,
            height: 5,
            width: 4,
            channels: 2,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        check(
            "im2col",
            |t, v| {
                let o = t.im2col(v[0], geom)?;
                weighted_sum(t, o, seed)
            },
            &[random(&mut rng, 40, 2)],
        );
    }
}

#[test]
fn sum_of_matmul_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, 5, 4);
    let b = random(&mut rng, 4, 6);
    let err = grad_check(
        |t, v| {
            let o = t.matmul(v[0], v[1])?;
            t.sum(o, None)
        },
        &[a, b],
    )
    .unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn composed_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 6, 4);
    let w1 = random(&mut rng, 4, 8);
    let b1 = random(&mut rng, 1, 8);
    let w2 = random(&mut rng, 8, 4);
    let err = grad_check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add(h, v[2])?;
            let h = t.sigmoid(h);
            let e = t.gather(h, &[0, 1, 1, 2, 5, 4])?;
            let agg = t.segment_sum(e, &[0, 0, 1, 2, 2, 2], 3)?;
            let o = t.matmul(agg, v[3])?;
            let q = t.l2_normalize(o, 1e-8);
            let r = t.quat_to_rotation(q)?;
            let n = t.row_norm(r);
            let s = t.sigmoid(n);
            let l = t.log(s);
            t.sum(l, None)
        },
        &[x, w1, b1, w2],
    )
    .unwrap();
    assert!(err <= TOL, "{err:e}");
}

#[test]
fn repeated_forward_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, 30, 16);
    let w = random(&mut rng, 16, 16);
    let run = || {
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(x.clone());
        let wv = t.leaf(w.clone());
        let h = t.matmul(xv, wv).unwrap();
        let h = t.relu(h);
        let s = t
            .segment_sum(h, &(0..30).map(|i| i % 7).collect::<Vec<_>>(), 7)
            .unwrap();
        let l = t.sum(s, None).unwrap();
        let g = t.backward(l).unwrap();
        (
            t.value(l).item().to_bits(),
            g.get_data(wv)
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn segment_sum_is_permutation_invariant(
        rows in proptest::collection::vec((0usize..5, -10.0f64..10.0, -10.0f64..10.0), 1..40),
        seed in any::<u64>(),
    ) {
        let ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let data: Vec<f64> = rows.iter().flat_map(|r| [r.1, r.2]).collect();
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pids: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();
        let pdata: Vec<f64> = perm.iter().flat_map(|&i| [data[2 * i], data[2 * i + 1]]).collect();

        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::new(rows.len(), 2, data).unwrap());
        let b = t.constant(Tensor::new(rows.len(), 2, pdata).unwrap());
        let sa = t.segment_sum(a, &ids, 5).unwrap();
        let sb = t.segment_sum(b, &pids, 5).unwrap();
        for (x, y) in t.value(sa).data().iter().zip(t.value(sb).data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn concat_gradient_splits_without_loss(
        a in proptest::collection::vec(-5.0f64..5.0, 6),
        b in proptest::collection::vec(-5.0f64..5.0, 9),
    ) {
        let mut t = Tape::<f64>::new();
        let va = t.leaf(Tensor::new(2, 3, a).unwrap());
        let vb = t.leaf(Tensor::new(3, 3, b).unwrap());
        let c = t.concat(&[va, vb], 0).unwrap();
        let sq = t.mul(c, c).unwrap();
        let l = t.sum(sq, None).unwrap();
        let g = t.backward(l).unwrap();
        let parts = g.get(&t, va).unwrap().norm().powi(2) + g.get(&t, vb).unwrap().norm().powi(2);
        // d(sum c^2)/dc = 2c
        let whole = 4.0 * t.value(c).norm().powi(2);
        prop_assert!((parts - whole).abs() <= 1e-9 * (1.0 + whole));
    }
}
