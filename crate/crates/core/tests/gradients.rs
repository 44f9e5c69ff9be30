use hopreader::gradsuite::{run_suite, STEP, TOLERANCE};
use hopreader::numeric::{grad_check, NumericError, Tensor};

#[test]
fn every_block_matches_finite_differences_at_ten_seeds() {
    let entries = run_suite(10, 10).unwrap();
    let ops: Vec<&str> = entries.iter().map(|e| e.op).collect();
    for op in ["lstm_cell", "bilstm", "coattention", "self_pool", "gat_layer", "query_gate", "general_gate", "head", "loss"] {
        assert!(ops.contains(&op), "missing {op}");
    }
    for e in &entries {
        assert_eq!(e.seeds, 10);
        assert!(e.coordinates > 0, "{}: nothing checked", e.op);
        assert!(
            e.passed(),
            "{}: relative error {:.3e} at step {STEP} exceeds {TOLERANCE}",
            e.op,
            e.max_rel_error
        );
    }
}

#[test]
fn a_wrong_gradient_is_caught() {
    // sigmoid(x) · x has derivative σ + xσ(1 − σ); dropping the first term
    // through a detached copy must show up as a large error.
    let point = Tensor::row_vector(vec![0.3, -1.2, 2.0]).unwrap();
    let honest = grad_check(|x| x.sigmoid()?.mul(x)?.sum(), &point, STEP).unwrap();
    assert!(honest < TOLERANCE);
    let broken = grad_check::<_, NumericError>(
        |x| {
            let frozen = x.tape().constant((*x.value()).clone());
            x.sigmoid()?.mul(frozen)?.sum()
        },
        &point,
        STEP,
    )
    .unwrap();
    assert!(broken > 0.1, "error {broken}");
}
