//! Structural properties of the forward pass: normalization, permutation
//! equivariance, gate pass-through, encoder symmetry and persistence.

use hopreader::encoder::{bilstm_encode, LstmParams};
use hopreader::features::{pool_weights, CoattentionParams};
use hopreader::gnn::{general_gate, query_gate, GateOverride, GnnParams};
use hopreader::gradsuite::{tiny_config, tiny_sample};
use hopreader::model::{ForwardOptions, Model, Prepared};
use hopreader::numeric::{ParamStore, Tape, Tensor};
use hopreader::text::{gen_synthetic, tokenize_doc, Sample, SynthConfig};
use hopreader::RunConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> RunConfig {
    RunConfig {
        word_dim: 8,
        char_dim: 4,
        char_buckets: 64,
        hidden: 4,
        heads: 2,
        hops: 3,
        dropout: 0.0,
        ..RunConfig::default()
    }
}

fn samples() -> Vec<Sample> {
    let mut out = vec![tiny_sample()];
    out.extend(
        gen_synthetic(&SynthConfig {
            seed: 3,
            count: 4,
            ..SynthConfig::default()
        })
        .unwrap(),
    );
    out
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn forward_values(model: &Model, prep: &Prepared, force: GateOverride) -> (Tensor, Tensor, Tensor) {
    let tape = Tape::new();
    let bound = model.store.bind_frozen(&tape);
    let opts = ForwardOptions {
        force,
        ..ForwardOptions::default()
    };
    let out = model.forward(&tape, &bound, prep, &opts).unwrap();
    (
        (*out.scores.value()).clone(),
        (*out.initial.value()).clone(),
        (*out.nodes.value()).clone(),
    )
}

#[test]
fn attention_coefficients_sum_to_one_per_target_and_head() {
    let corpus = samples();
    let model = Model::new(&small_config(), &corpus, None).unwrap();
    for s in &corpus {
        let prep = model.prepare(s, None).unwrap();
        let tape = Tape::new();
        let bound = model.store.bind_frozen(&tape);
        let out = model.forward(&tape, &bound, &prep, &ForwardOptions::default()).unwrap();
        assert_eq!(out.attention.len(), prep.nbrs.len());
        let mut checked = 0;
        for (alpha, nb) in out.attention.iter().zip(&prep.nbrs) {
            let Some(alpha) = alpha else {
                assert_eq!(nb.entries(), 0);
                continue;
            };
            assert_eq!(alpha.len(), model.config.heads * nb.entries());
            for h in 0..model.config.heads {
                for t in 0..nb.nodes() {
                    let range = nb.range(t);
                    if range.is_empty() {
                        continue;
                    }
                    let total: f64 = range.map(|e| alpha[h * nb.entries() + e]).sum();
                    assert!((total - 1.0).abs() < 1e-9, "{}: head {h} target {t} sums to {total}", s.id);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }
}

#[test]
fn pooling_and_query_gate_weights_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    let coatt = CoattentionParams::register(&mut store, 8, &mut rng).unwrap();
    let gnn = GnnParams::register(&mut store, 4, 2, &mut rng).unwrap();
    for _ in 0..5 {
        let tape = Tape::new();
        let b = store.bind_frozen(&tape);
        let s = tape.constant(random(&mut rng, 7, 16));
        let w = pool_weights(s, &coatt.bind(&b)).unwrap().value();
        assert_eq!(w.shape(), [7, 1]);
        assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(w.data().iter().all(|&v| v > 0.0));

        let n = tape.constant(random(&mut rng, 6, 4));
        let hq = tape.constant(random(&mut rng, 5, 4));
        let g = query_gate(n, hq, &gnn.bind(&b), None).unwrap();
        let alpha = g.alpha.value();
        assert_eq!(alpha.shape(), [6, 5]);
        for r in 0..6 {
            assert!((alpha.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let beta = g.beta.value();
        assert!(beta.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn closed_gates_pass_their_input_through_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut store = ParamStore::new();
    let gnn = GnnParams::register(&mut store, 4, 2, &mut rng).unwrap();
    let tape = Tape::new();
    let b = store.bind_frozen(&tape);
    let p = gnn.bind(&b);
    let n = tape.constant(random(&mut rng, 6, 4));
    let hq = tape.constant(random(&mut rng, 3, 4));
    let q = query_gate(n, hq, &p, Some(0.0)).unwrap();
    assert_eq!(bits(&q.out.value()), bits(&n.value()));

    let other = tape.constant(random(&mut rng, 6, 4));
    let g = general_gate(other, n, &p, Some(0.0)).unwrap();
    assert_eq!(bits(&g.value()), bits(&n.value()));

    let open = general_gate(other, n, &p, Some(1.0)).unwrap();
    let expected = other.value().map(f64::tanh);
    assert_eq!(bits(&open.value()), bits(&expected));
}

#[test]
fn closed_general_gate_leaves_the_initial_features_untouched() {
    let corpus = samples();
    let model = Model::new(&small_config(), &corpus, None).unwrap();
    for s in &corpus {
        let prep = model.prepare(s, None).unwrap();
        let force = GateOverride {
            beta: None,
            general: Some(0.0),
        };
        let (_, initial, nodes) = forward_values(&model, &prep, force);
        assert_eq!(bits(&nodes), bits(&initial));

        let (_, initial, nodes) = forward_values(&model, &prep, GateOverride::default());
        assert_ne!(bits(&nodes), bits(&initial));
    }
}

#[test]
fn switching_the_graph_off_scores_the_initial_features() {
    let corpus = samples();
    let on = Model::new(&small_config(), &corpus, None).unwrap();
    let mut off = on.clone();
    off.config.gat_off = true;
    for s in &corpus {
        let prep = on.prepare(s, None).unwrap();
        let tape = Tape::new();
        let bound = off.store.bind_frozen(&tape);
        let out = off.forward(&tape, &bound, &prep, &ForwardOptions::default()).unwrap();
        assert!(out.attention.is_empty());
        assert_eq!(bits(&out.nodes.value()), bits(&out.initial.value()));
        let force = GateOverride {
            beta: None,
            general: Some(0.0),
        };
        let (gated_shut, _, _) = forward_values(&on, &prep, force);
        assert_eq!(bits(&out.scores.value()), bits(&gated_shut));
    }
}

#[test]
fn scores_are_equivariant_under_node_permutation() {
    let corpus = samples();
    let model = Model::new(&small_config(), &corpus, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for s in &corpus {
        let prep = model.prepare(s, None).unwrap();
        let (scores, _, nodes) = forward_values(&model, &prep, GateOverride::default());
        let docs: Vec<_> = s.documents.iter().enumerate().map(|(d, t)| tokenize_doc(t, d)).collect();
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..prep.graph.len()).collect();
            perm.shuffle(&mut rng);
            let moved = model.prepare_with_graph(s, &docs, prep.graph.permuted(&perm)).unwrap();
            let (p_scores, _, p_nodes) = forward_values(&model, &moved, GateOverride::default());
            for (a, b) in scores.data().iter().zip(p_scores.data()) {
                assert!((a - b).abs() < 1e-9, "{}: score {a} became {b}", s.id);
            }
            for (i, &j) in perm.iter().enumerate() {
                for (a, b) in nodes.row(i).iter().zip(p_nodes.row(j)) {
                    assert!((a - b).abs() < 1e-9, "{}: node {i} moved to {j}", s.id);
                }
            }
        }
    }
}

#[test]
fn gamma_mixes_candidate_and_mention_heads() {
    let s = tiny_sample();
    for gamma in [0.0, 0.3, 1.0] {
        let config = RunConfig { gamma, ..tiny_config() };
        let model = Model::new(&config, [&s], None).unwrap();
        let prep = model.prepare(&s, None).unwrap();
        let tape = Tape::new();
        let bound = model.store.bind_frozen(&tape);
        let out = model.forward(&tape, &bound, &prep, &ForwardOptions::default()).unwrap();
        let can = out.candidate_scores.value();
        let men = out.mention_scores.unwrap().value();
        let mut at = 0;
        for (c, group) in prep.mention_groups.iter().enumerate() {
            let best = group
                .iter()
                .enumerate()
                .map(|(k, _)| men.data()[at + k])
                .fold(f64::NEG_INFINITY, f64::max);
            at += group.len();
            let best = if group.is_empty() { hopreader::scorer::NO_MENTION } else { best };
            let expected = gamma * can.data()[c] + (1.0 - gamma) * best;
            let got = out.scores.value().data()[c];
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0), "γ={gamma} c={c}");
        }
    }
}

#[test]
fn shared_weights_make_the_encoder_reverse_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, "shared", 3, 4, &mut rng).unwrap();
    for len in [1, 2, 5] {
        let x = random(&mut rng, len, 3);
        let mut rev = Tensor::zeros(len, 3);
        for r in 0..len {
            rev.row_mut(r).copy_from_slice(x.row(len - 1 - r));
        }
        let tape = Tape::new();
        let b = store.bind_frozen(&tape);
        let v = p.bind(&b);
        let out = bilstm_encode(tape.constant(x), &v, &v).unwrap().value();
        let out_rev = bilstm_encode(tape.constant(rev), &v, &v).unwrap().value();
        for t in 0..len {
            let (f, bk) = out.row(t).split_at(4);
            let (rf, rb) = out_rev.row(len - 1 - t).split_at(4);
            assert_eq!(f, rb);
            assert_eq!(bk, rf);
        }
    }
}

#[test]
fn checkpoints_restore_identical_predictions() {
    let corpus = samples();
    let model = Model::new(&small_config(), &corpus, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.vocab().words(), model.vocab().words());
    assert_eq!(back.to_checkpoint(), model.to_checkpoint());
    for s in &corpus {
        let a = model.predict_scores(&model.prepare(s, None).unwrap()).unwrap();
        let b = back.predict_scores(&back.prepare(s, None).unwrap()).unwrap();
        assert_eq!(a, b);
    }
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(Model::load(&path).is_err());
}

#[test]
fn initialization_is_a_function_of_the_seed() {
    let corpus = samples();
    let a = Model::new(&small_config(), &corpus, None).unwrap();
    let b = Model::new(&small_config(), &corpus, None).unwrap();
    let c = Model::new(&RunConfig { seed: 8, ..small_config() }, &corpus, None).unwrap();
    let prep = a.prepare(&corpus[1], None).unwrap();
    let (sa, sb, sc) = (
        a.predict_scores(&prep).unwrap(),
        b.predict_scores(&prep).unwrap(),
        c.predict_scores(&prep).unwrap(),
    );
    assert_eq!(sa, sb);
    assert_ne!(sa.0, sc.0);
}

#[test]
fn dropout_is_reproducible_per_seed() {
    let corpus = samples();
    let config = RunConfig {
        dropout: 0.3,
        ..small_config()
    };
    let model = Model::new(&config, &corpus, None).unwrap();
    let prep = model.prepare(&corpus[2], None).unwrap();
    let seed = model.dropout_seed(1, 2);
    assert!(seed.is_some());
    let (l1, s1, g1) = model.sample_gradients(&prep, seed).unwrap();
    let (l2, s2, g2) = model.sample_gradients(&prep, seed).unwrap();
    assert_eq!((l1, &s1), (l2, &s2));
    assert_eq!(g1, g2);
    let (l3, _, _) = model.sample_gradients(&prep, model.dropout_seed(1, 3)).unwrap();
    assert_ne!(l1, l3);
    let (l4, _, _) = model.sample_gradients(&prep, None).unwrap();
    let (_, loss) = model.predict_scores(&prep).unwrap();
    assert_eq!(Some(l4), loss);
    assert!(g1.iter().flatten().any(|g| g.max_abs() > 0.0));
}
