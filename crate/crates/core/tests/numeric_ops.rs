use std::sync::Arc;

use hopreader::numeric::{eager, grad_check_many, Neighborhoods, NumericError, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(rows, cols, data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts an output with fixed random weights so every coordinate of the
/// gradient is generically non-zero.
fn project<'t>(out: Var<'t>, seed: u64) -> Result<Var<'t>, NumericError> {
    let [r, c] = out.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let w = out.tape().constant(random(&mut rng, r, c));
    out.mul(w)?.sum()
}

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check_op<F>(name: &str, shapes: &[[usize; 2]], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, NumericError>,
{
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Tensor> = shapes.iter().map(|&[r, c]| random(&mut rng, r, c)).collect();
        let report = grad_check_many(|tape, xs| project(f(tape, xs)?, seed), &points, STEP).unwrap();
        assert!(
            report.max_rel_error < TOL,
            "{name} seed {seed}: {report:?}"
        );
    }
}

#[test]
fn matmul_examples() {
    let tape = Tape::new();
    let a = tape.constant(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let id = tape.constant(Tensor::identity(2));
    assert_eq!(id.matmul(a).unwrap().value().data(), a.value().data());

    let x = tape.constant(t(1, 2, &[1.0, 2.0]));
    let y = tape.constant(t(2, 1, &[3.0, 4.0]));
    assert_eq!(x.matmul(y).unwrap().value().data(), &[11.0]);

    let p = tape.constant(Tensor::zeros(2, 3));
    let q = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(p.matmul(q), Err(NumericError::Shape { .. })));
}

#[test]
fn masked_softmax_examples() {
    let out = eager::masked_softmax(&t(1, 3, &[0.0, 0.0, 0.0]), &[true; 3]).unwrap();
    for v in out.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let out = eager::masked_softmax(&t(1, 2, &[2f64.ln(), 0.0]), &[true, true]).unwrap();
    assert!((out.data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((out.data()[1] - 1.0 / 3.0).abs() < 1e-15);

    let out = eager::masked_softmax(&t(1, 2, &[5.0, 7.0]), &[true, false]).unwrap();
    assert_eq!(out.data(), &[1.0, 0.0]);

    let err = eager::masked_softmax(&t(1, 2, &[5.0, 7.0]), &[false, false]);
    assert_eq!(err.unwrap_err(), NumericError::EmptySupport);
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let out = eager::masked_softmax(&t(1, 3, &[1000.0, 1000.0, -1e9]), &[true; 3]).unwrap();
    assert!((out.data()[0] - 0.5).abs() < 1e-15);
    assert_eq!(out.data()[2], 0.0);
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.variable(t(1, 2, &[1.0, -2.0]));
    let loss = x.mul(x).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).data(), &[2.0, -4.0]);

    let tape = Tape::new();
    let x = tape.variable(t(1, 2, &[1.0, -2.0]));
    let unused = tape.variable(t(2, 2, &[1.0; 4]));
    let loss = x.sum().unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.wrt(unused).data(), &[0.0; 4]);

    let tape = Tape::new();
    let x = tape.variable(t(1, 2, &[1.0, -2.0]));
    assert!(matches!(tape.backward(x), Err(NumericError::NonScalarLoss { .. })));
}

#[test]
fn log_masked_softmax_gradient_matches_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, 1, 5);
        let k = (seed as usize) % 4;
        let mask = [true, true, true, true, false];
        let report = grad_check_many(
            |_, xs| xs[0].masked_softmax(&mask)?.ln_safe_pick(k),
            &[x],
            STEP,
        )
        .unwrap();
        assert!(report.max_rel_error < TOL, "{report:?}");
    }
}

trait LnPick<'t> {
    fn ln_safe_pick(self, k: usize) -> Result<Var<'t>, NumericError>;
}

impl<'t> LnPick<'t> for Var<'t> {
    fn ln_safe_pick(self, k: usize) -> Result<Var<'t>, NumericError> {
        self.pick(0, k)?.ln()
    }
}

#[test]
fn non_finite_forward_values_are_errors() {
    let tape = Tape::new();
    let x = tape.constant(t(1, 1, &[-1.0]));
    assert!(matches!(x.ln(), Err(NumericError::NonFinite { .. })));
}

#[test]
fn elementwise_ops_pass_grad_check() {
    check_op("add_broadcast", &[[3, 4], [1, 4]], |_, x| x[0].add(x[1]));
    check_op("add_outer", &[[3, 1], [1, 4]], |_, x| x[0].add(x[1]));
    check_op("sub", &[[3, 4], [3, 1]], |_, x| x[0].sub(x[1]));
    check_op("mul", &[[3, 4], [1, 4]], |_, x| x[0].mul(x[1]));
    check_op("affine", &[[2, 3]], |_, x| x[0].affine(-1.5, 0.25));
    check_op("sigmoid", &[[2, 3]], |_, x| x[0].sigmoid());
    check_op("tanh", &[[2, 3]], |_, x| x[0].tanh());
    check_op("exp", &[[2, 3]], |_, x| x[0].exp());
    check_op("ln", &[[2, 3]], |_, x| x[0].exp()?.affine(1.0, 0.5)?.ln());
    check_op("leaky_relu", &[[2, 3]], |_, x| x[0].leaky_relu(0.2));
}

#[test]
fn structural_ops_pass_grad_check() {
    check_op("matmul", &[[3, 4], [4, 2]], |_, x| x[0].matmul(x[1]));
    check_op("transpose", &[[3, 4]], |_, x| x[0].t());
    check_op("softmax_rows", &[[3, 4]], |_, x| x[0].softmax_rows());
    check_op("masked_softmax", &[[2, 3]], |_, x| {
        x[0].masked_softmax(&[true, false, true, false, true, true])
    });
    check_op("concat_cols", &[[3, 2], [3, 1]], |t, x| t.concat_cols(&[x[0], x[1], x[0]]));
    check_op("concat_rows", &[[1, 3], [2, 3]], |t, x| t.concat_rows(&[x[1], x[0]]));
    check_op("slice_rows", &[[5, 3]], |_, x| x[0].slice_rows(1, 4));
    check_op("slice_cols", &[[3, 5]], |_, x| x[0].slice_cols(2, 5));
    check_op("gather_rows", &[[4, 3]], |_, x| x[0].gather_rows(Arc::from(vec![3, 0, 3, 1])));
    check_op("bag_mean", &[[6, 2]], |_, x| {
        x[0].bag_mean(Arc::from(vec![vec![0, 1, 5], vec![2], vec![5, 5, 3]]))
    });
    check_op("sum_rows", &[[3, 4]], |_, x| x[0].sum_rows());
    check_op("pick", &[[3, 4]], |_, x| x[0].pick(2, 1));
    check_op("segment_max", &[[6, 1]], |_, x| x[0].segment_max(&[vec![0, 2], vec![], vec![5, 1, 3]], -1.0));
    check_op("cross_entropy", &[[5, 1]], |_, x| x[0].cross_entropy(3));
}

fn ring_neighborhoods(m: usize) -> Arc<Neighborhoods> {
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j && (i + j) % 3 != 0 {
                pairs.push((i, j));
            }
        }
    }
    Arc::new(Neighborhoods::from_pairs(m, &pairs))
}

#[test]
fn relational_attention_passes_grad_check() {
    let nbrs = ring_neighborhoods(5);
    for mean_norm in [true, false] {
        let n = Arc::clone(&nbrs);
        check_op("rel_attention", &[[5, 6], [3, 4]], move |_, x| {
            Ok(x[0].rel_attention(x[1], Arc::clone(&n), mean_norm, 0.2)?.0)
        });
    }
}

#[test]
fn relational_attention_singletons_and_empties() {
    let tape = Tape::new();
    let z = tape.constant(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let att = tape.constant(t(1, 4, &[0.3, -0.2, 0.1, 0.7]));
    // node 0 hears only node 2; node 1 hears nobody; node 2 hears 0 and 1.
    let nbrs = Arc::new(Neighborhoods::from_pairs(3, &[(0, 2), (2, 0), (2, 1)]));
    let (out, alpha) = z.rel_attention(att, nbrs, true, 0.2).unwrap();
    let out = out.value();
    assert_eq!(out.row(0), &[5.0, 6.0]);
    assert_eq!(out.row(1), &[0.0, 0.0]);
    assert_eq!(alpha[0], 1.0);
    assert!((alpha[1] + alpha[2] - 1.0).abs() < 1e-12);
}

#[test]
fn relational_attention_identical_neighbors_share_weight() {
    let tape = Tape::new();
    let z = tape.constant(t(3, 2, &[0.1, 0.2, 0.5, -0.5, 0.5, -0.5]));
    let att = tape.constant(t(1, 4, &[0.3, -0.2, 0.1, 0.7]));
    let nbrs = Arc::new(Neighborhoods::from_pairs(3, &[(0, 1), (0, 2)]));
    let (_, alpha) = z.rel_attention(att, nbrs, true, 0.2).unwrap();
    assert_eq!(alpha[0], 0.5);
    assert_eq!(alpha[1], 0.5);
}

#[test]
fn tape_replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let tape = Tape::new();
        let a = tape.variable(random(&mut rng, 4, 3));
        let b = tape.variable(random(&mut rng, 3, 5));
        let loss = a.matmul(b).unwrap().tanh().unwrap().softmax_rows().unwrap().pick(1, 2).unwrap();
        let grads = tape.backward(loss).unwrap();
        (loss.value().data()[0].to_bits(), grads.wrt(a).data().to_vec())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_permutation_equivariant(
        xs in proptest::collection::vec(-50.0f64..50.0, 1..12),
        rot in 0usize..12,
    ) {
        let n = xs.len();
        let x = Tensor::row_vector(xs.clone()).unwrap();
        let y = eager::masked_softmax(&x, &vec![true; n]).unwrap();
        let total: f64 = y.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);

        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let px = Tensor::row_vector(perm.iter().map(|&i| xs[i]).collect()).unwrap();
        let py = eager::masked_softmax(&px, &vec![true; n]).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((py.data()[k] - y.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_positions_are_exactly_zero(
        xs in proptest::collection::vec(-5.0f64..5.0, 2..10),
        seed in any::<u64>(),
    ) {
        let n = xs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        mask[seed as usize % n] = true;
        let y = eager::masked_softmax(&Tensor::row_vector(xs).unwrap(), &mask).unwrap();
        for (v, m) in y.data().iter().zip(&mask) {
            if *m { prop_assert!(*v > 0.0) } else { prop_assert_eq!(*v, 0.0) }
        }
        prop_assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
