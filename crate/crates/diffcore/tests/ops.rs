use mug_diffcore::{finite_diff_check, finite_diff_check_many, DiffError, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (p, q, r) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        for j in 0..r {
            for k in 0..q {
                out[i * r + j] += a.get(i, k) * b.get(k, j);
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let out = tape.matmul(va, vb).unwrap();
    for (x, y) in tape.value(out).unwrap().data().iter().zip(triple_loop(&a, &b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn softmax_matches_direct_normalization() {
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
    let total: f64 = e.iter().sum();
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = tape.softmax(z).unwrap();
    for (p, x) in tape.value(s).unwrap().data().iter().zip(&e) {
        assert!((p - x / total).abs() < 1e-12);
    }
}

#[test]
fn pooling_matches_scan_and_sum_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = random(&mut rng, &[7, 4]);
    let mut tape = Tape::new();
    let var = tape.constant(v.clone());
    let mx = tape.max_rows(var).unwrap();
    for c in 0..4 {
        let mut best = f64::NEG_INFINITY;
        for r in 0..7 {
            if v.get(r, c) > best {
                best = v.get(r, c);
            }
        }
        assert_eq!(tape.value(mx).unwrap().data()[c], best);
    }
    let w = random(&mut rng, &[5, 3]);
    let var = tape.constant(w.clone());
    let avg = tape.mean_rows(var).unwrap();
    for c in 0..3 {
        let mut s = 0.0;
        for r in 0..5 {
            s += w.get(r, c);
        }
        assert!((tape.value(avg).unwrap().data()[c] - s / 5.0).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = random(&mut rng, &[5, 4]);
    let labels = [0, 3, 1, 1, 2];
    let report = finite_diff_check(|tape: &mut Tape, x| tape.cross_entropy(x, &labels), &logits, 1e-3, 1e-4).unwrap();
    assert!(report.passed, "{report:?}");
}

type Op = fn(&mut Tape, &[Var]) -> Result<Var, DiffError>;

/// Each differentiable op, reduced to a scalar by a weighted sum so that the
/// upstream gradient is not uniform.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Op)> {
    fn reduce(tape: &mut Tape, v: Var) -> Result<Var, DiffError> {
        let shape = tape.value(v)?.shape().to_vec();
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|k| 0.3 + 0.17 * k as f64).collect())?;
        let w = tape.constant(w);
        let p = tape.mul(v, w)?;
        tape.sum(p)
    }
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            let o = t.matmul(v[0], v[1])?;
            reduce(t, o)
        }),
        ("transpose", vec![vec![3, 2]], |t, v| {
            let o = t.transpose(v[0])?;
            reduce(t, o)
        }),
        ("add", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let o = t.add(v[0], v[1])?;
            reduce(t, o)
        }),
        ("sub", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let o = t.sub(v[0], v[1])?;
            reduce(t, o)
        }),
        ("mul", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let o = t.mul(v[0], v[1])?;
            reduce(t, o)
        }),
        ("add_row", vec![vec![3, 2], vec![2]], |t, v| {
            let o = t.add_row(v[0], v[1])?;
            reduce(t, o)
        }),
        ("mul_row", vec![vec![3, 2], vec![2]], |t, v| {
            let o = t.mul_row(v[0], v[1])?;
            reduce(t, o)
        }),
        ("affine", vec![vec![4]], |t, v| {
            let o = t.affine(v[0], -1.7, 0.4)?;
            reduce(t, o)
        }),
        ("gelu", vec![vec![2, 3]], |t, v| {
            let o = t.gelu(v[0])?;
            reduce(t, o)
        }),
        ("ln", vec![vec![3]], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let pos = t.affine(sq, 1.0, 0.5)?;
            let o = t.ln(pos)?;
            reduce(t, o)
        }),
        ("mean", vec![vec![2, 2]], |t, v| {
            let o = t.mul(v[0], v[0])?;
            t.mean(o)
        }),
        ("mean_rows", vec![vec![4, 3]], |t, v| {
            let o = t.mean_rows(v[0])?;
            reduce(t, o)
        }),
        ("max_rows", vec![vec![4, 3]], |t, v| {
            let o = t.max_rows(v[0])?;
            reduce(t, o)
        }),
        ("softmax", vec![vec![3, 4]], |t, v| {
            let o = t.softmax(v[0])?;
            reduce(t, o)
        }),
        ("layer_norm", vec![vec![3, 5]], |t, v| {
            let o = t.layer_norm(v[0], 1e-5)?;
            reduce(t, o)
        }),
        ("slice_concat", vec![vec![3, 4], vec![3, 2]], |t, v| {
            let s = t.slice_cols(v[0], 1, 3)?;
            let o = t.concat_cols(&[s, v[1], v[0]])?;
            reduce(t, o)
        }),
        ("stack_row", vec![vec![3], vec![3]], |t, v| {
            let m = t.stack_rows(&[v[0], v[1], v[0]])?;
            let r = t.row(m, 1)?;
            let a = reduce(t, m)?;
            let b = reduce(t, r)?;
            t.add(a, b)
        }),
        ("reshape", vec![vec![6]], |t, v| {
            let o = t.reshape(v[0], vec![2, 3])?;
            reduce(t, o)
        }),
        ("gather_rows", vec![vec![3, 2]], |t, v| {
            let o = t.gather_rows(v[0], &[2, 0, 2])?;
            reduce(t, o)
        }),
        ("pairwise_dist", vec![vec![3, 4], vec![5, 4]], |t, v| {
            let o = t.pairwise_dist(v[0], v[1])?;
            reduce(t, o)
        }),
        ("soft_rank", vec![vec![3, 4]], |t, v| {
            let o = t.soft_rank(v[0], 0.5)?;
            reduce(t, o)
        }),
        ("cross_entropy", vec![vec![4, 3]], |t, v| {
            t.cross_entropy(v[0], &[2, 0, 1, 1])
        }),
    ]
}

#[test]
fn every_op_passes_finite_difference_check_over_twenty_seeds() {
    for (name, shapes, op) in op_cases() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
            let report = finite_diff_check_many(op, &inputs, 1e-3, 1e-4).unwrap();
            assert!(report.passed, "{name} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&mut rng, &[3, 3]);
    let loss_a = |tape: &mut Tape, v: Var| -> Var {
        let s = tape.softmax(v).unwrap();
        let m = tape.mul(s, v).unwrap();
        tape.sum(m).unwrap()
    };
    let loss_b = |tape: &mut Tape, v: Var| -> Var {
        let n = tape.layer_norm(v, 1e-5).unwrap();
        let g = tape.gelu(n).unwrap();
        tape.mean(g).unwrap()
    };
    let grad = |f: &dyn Fn(&mut Tape, Var) -> Var| {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let l = f(&mut tape, v);
        tape.backward(l).unwrap().wrt(v).unwrap().clone()
    };
    let ga = grad(&loss_a);
    let gb = grad(&loss_b);
    let gsum = grad(&|tape: &mut Tape, v| {
        let a = loss_a(tape, v);
        let b = loss_b(tape, v);
        tape.add(a, b).unwrap()
    });
    for k in 0..9 {
        assert!((gsum.data()[k] - (ga.data()[k] + gb.data()[k])).abs() <= 1e-12);
    }
}

#[test]
fn seeded_backward_matches_scalar_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[2, 3]);
    let up = random(&mut rng, &[2, 3]);

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let y = tape.gelu(v).unwrap();
    let seeded = tape.backward_from(&[(y, up.clone())]).unwrap();

    let mut tape = Tape::new();
    let v2 = tape.param(x);
    let y = tape.gelu(v2).unwrap();
    let w = tape.constant(up);
    let p = tape.mul(y, w).unwrap();
    let s = tape.sum(p).unwrap();
    let direct = tape.backward(s).unwrap();
    for (a, b) in seeded.wrt(v).unwrap().data().iter().zip(direct.wrt(v2).unwrap().data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

proptest! {
    #[test]
    fn softmax_slices_are_distributions(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..6)) {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&rows).unwrap());
        let s = tape.softmax(z).unwrap();
        let out = tape.value(s).unwrap();
        for r in 0..out.rows() {
            let row = out.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0 && p.is_finite()));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), p in 1usize..5, q in 1usize..5, r in 1usize..5, s in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[p, q]);
        let b = random(&mut rng, &[q, r]);
        let c = random(&mut rng, &[r, s]);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.max_abs().max(1.0);
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-8 * scale);
        }
    }
}
