use mkgc::numerics::rng::rng;
use mkgc::numerics::{argmax_det, grad_check, softmax, Matrix, Tape, Var, Vector};
use mkgc::Result;
use proptest::prelude::*;
use rand::Rng;

/// A random chain of tape ops over the input column, ending in a scalar.
fn composed(seed: u64, dim: usize) -> impl Fn(&mut Tape, Var) -> Result<Var> {
    move |tape: &mut Tape, x: Var| {
        let mut r = rng(seed);
        let mut cur = x;
        let mut rows = dim;
        for _ in 0..r.gen_range(2..7) {
            cur = match r.gen_range(0..9) {
                0 => {
                    let out = r.gen_range(1..6);
                    let w = tape.constant(&Matrix::random_normal(out, rows, 0.7, &mut r));
                    rows = out;
                    tape.matmul(w, cur)?
                }
                1 => tape.tanh(cur)?,
                2 => tape.softmax(cur)?,
                3 => tape.log_softmax(cur)?,
                4 => tape.scale(cur, r.gen_range(-2.0..2.0))?,
                5 => {
                    let w = tape.constant(&Matrix::random_normal(rows, dim, 0.7, &mut r));
                    let skip = tape.matmul(w, x)?;
                    tape.add(cur, skip)?
                }
                6 => {
                    let s = tape.pick(x, r.gen_range(0..dim))?;
                    tape.mul_scalar(cur, s)?
                }
                7 => {
                    let picked: Vec<usize> = (0..r.gen_range(1..4)).map(|_| r.gen_range(0..rows)).collect();
                    let g = tape.gather_rows(cur, &picked)?;
                    let stacked = tape.vstack(&[cur, g])?;
                    rows += picked.len();
                    stacked
                }
                _ => {
                    let w = tape.constant(&Matrix::random_normal(rows, 1, 1.0, &mut r));
                    tape.sub(cur, w)?
                }
            };
        }
        match r.gen_range(0..3) {
            0 => tape.sum_squares(cur),
            1 => {
                let n = tape.norm(cur)?;
                let s = tape.sum_squares(x)?;
                tape.add(n, s)
            }
            _ => {
                let i = r.gen_range(0..rows);
                tape.pick(cur, i)
            }
        }
    }
}

#[test]
fn random_composed_expressions_pass_grad_check() {
    let mut worst: f64 = 0.0;
    for seed in 0..150 {
        let mut r = rng(10_000 + seed);
        let dim = r.gen_range(1..6);
        let point: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.5..1.5)).collect();
        let report = grad_check(composed(seed, dim), &point, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "seed {seed}: rel err {} at {}", report.max_rel_err, report.worst_coordinate);
        worst = worst.max(report.max_rel_err);
    }
    assert!(worst <= 1e-4);
}

#[test]
fn constants_receive_zero_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(&Matrix::identity(3));
    let p = tape.param(&Matrix::from_vec(3, 1, vec![1.0, -2.0, 0.5]).unwrap());
    let y = tape.matmul(c, p).unwrap();
    let loss = tape.sum_squares(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(c).data().iter().all(|g| *g == 0.0));
    assert_eq!(grads.get(p).data(), &[2.0, -4.0, 1.0]);
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-30.0f64..30.0, 1..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn softmax_is_shift_invariant(v in vec_strategy(), c in -500.0f64..500.0) {
        let a = softmax(&Vector::from_vec(v.clone()).unwrap()).unwrap();
        let b = softmax(&Vector::from_vec(v.iter().map(|x| x + c).collect()).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_preserves_argmax(v in vec_strategy()) {
        let x = Vector::from_vec(v.clone()).unwrap();
        let s = softmax(&x).unwrap();
        let top = argmax_det(&x).unwrap();
        // Values within rounding of the max may tie after exponentiation.
        let ties: Vec<usize> = (0..v.len()).filter(|i| v[top] - v[*i] < 1e-12).collect();
        prop_assert!(ties.contains(&argmax_det(&s).unwrap()));
    }

    #[test]
    fn argmax_takes_the_lowest_tied_index(v in vec_strategy(), k in 1usize..4) {
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w = v.clone();
        w.extend(std::iter::repeat_n(mx, k));
        let first = w.iter().position(|x| *x == mx).unwrap();
        prop_assert_eq!(argmax_det(&Vector::from_vec(w).unwrap()).unwrap(), first);
    }
}
