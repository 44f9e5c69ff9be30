use std::collections::BTreeMap;

use hopreader::gradsuite::tiny_config;
use hopreader::harness::{
    annotation_subsets, evaluate, grouped_accuracy, predictions_json, GroupAccuracy, BINS, CATEGORIES, MIN_ANNOTATORS,
};
use hopreader::text::{gen_synthetic, parse_qangaroo, Annotation, DocRequirement, FactLabel, SynthConfig};
use hopreader::Model;

fn group(label: &str, count: usize, accuracy: f64) -> GroupAccuracy {
    GroupAccuracy {
        label: label.into(),
        count,
        accuracy,
    }
}

#[test]
fn bins_cover_every_positive_count_once() {
    let labels: Vec<&str> = BINS.iter().map(|b| b.0).collect();
    assert_eq!(labels, ["1-10", "11-20", "21-30", "31-40", "41-50", "51+"]);
    for docs in 1..200 {
        let hits = BINS.iter().filter(|&&(_, lo, hi)| (lo..=hi).contains(&docs)).count();
        assert_eq!(hits, 1, "{docs} documents");
    }
}

#[test]
fn grouped_accuracy_boundaries() {
    let got = grouped_accuracy(&[
        (1, true),
        (10, true),
        (10, false),
        (31, false),
        (40, false),
        (50, true),
        (51, true),
        (1000, true),
        (0, true),
    ]);
    assert_eq!(
        got,
        [
            group("1-10", 3, 2.0 / 3.0),
            group("31-40", 2, 0.0),
            group("41-50", 1, 1.0),
            group("51+", 2, 1.0),
        ]
    );
    assert!(grouped_accuracy(&[]).is_empty());
}

fn ann(fact: FactLabel, docs: Option<DocRequirement>) -> Annotation {
    Annotation { fact, docs }
}

#[test]
fn annotation_categories() {
    use DocRequirement::*;
    use FactLabel::*;
    let fm = ann(Follows, Some(Multiple));
    let fs = ann(Follows, Some(Single));
    let lm = ann(Likely, Some(Multiple));
    let f_ = ann(Follows, None);
    let nf = ann(NotFollows, None);
    let a = [fm, fm, fm];
    let b = [fs, fs, fs, fs];
    let c = [lm, lm, lm];
    let mixed = [fm, fs, f_];
    let vetoed = [fm, fm, nf];
    let short = [fm, fm];
    assert_eq!(MIN_ANNOTATORS, 3);
    let got = annotation_subsets(&[
        (Some(&a), true),
        (Some(&a), true),
        (Some(&b), false),
        (Some(&c), true),
        (Some(&mixed), false),
        (Some(&vetoed), true),
        (Some(&short), true),
        (None, true),
    ]);
    assert_eq!(
        got,
        [
            group(CATEGORIES[0], 2, 1.0),
            group(CATEGORIES[1], 1, 0.0),
            group(CATEGORIES[2], 1, 1.0),
            group(CATEGORIES[4], 5, 0.6),
        ]
    );
}

#[test]
fn annotations_parse_from_dataset_rows() {
    let json = r#"[{"id": "q", "query": "located_in alma", "candidates": ["x", "y"], "supports": ["d"],
        "annotations": [["follows", "multiple"], ["likely", "single"], ["not_follows"]]}]"#;
    let s = &parse_qangaroo(json, "mem".as_ref()).unwrap()[0];
    assert_eq!(s.relation, "located_in");
    assert_eq!(
        s.annotations.as_deref().unwrap(),
        [
            ann(FactLabel::Follows, Some(DocRequirement::Multiple)),
            ann(FactLabel::Likely, Some(DocRequirement::Single)),
            ann(FactLabel::NotFollows, None),
        ]
    );
}

#[test]
fn evaluation_report_is_consistent_and_worker_independent() {
    let samples = gen_synthetic(&SynthConfig {
        seed: 13,
        count: 12,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = Model::new(&tiny_config(), &samples, None).unwrap();
    let one = evaluate(&model, &samples, None, 1).unwrap();
    let many = evaluate(&model, &samples, None, 3).unwrap();
    assert_eq!(one, many);
    assert_eq!(one.scored, samples.len());
    let hits = one.predictions.iter().filter(|p| p.correct == Some(true)).count();
    assert_eq!(one.accuracy, hits as f64 / samples.len() as f64);
    for (p, s) in one.predictions.iter().zip(&samples) {
        assert_eq!(p.predicted_text, s.candidates[p.predicted]);
        assert_eq!(p.correct, Some(s.answer.as_ref() == Some(&p.predicted_text)));
        let best = p.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(p.scores[p.predicted], best);
    }
    let judged: Vec<_> = one.predictions.iter().map(|p| (p.doc_count, p.correct.unwrap())).collect();
    assert_eq!(one.bins, grouped_accuracy(&judged));

    let parsed: BTreeMap<String, String> = serde_json::from_str(&predictions_json(&one)).unwrap();
    assert_eq!(parsed.len(), samples.len());
    for p in &one.predictions {
        assert_eq!(parsed[&p.id], p.predicted_text);
    }
}

#[test]
fn unanswered_samples_are_predicted_but_not_scored() {
    let mut samples = gen_synthetic(&SynthConfig {
        seed: 14,
        count: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    samples[1].answer = None;
    let model = Model::new(&tiny_config(), &samples, None).unwrap();
    let report = evaluate(&model, &samples, None, 1).unwrap();
    assert_eq!(report.scored, 3);
    assert_eq!(report.predictions.len(), 4);
    assert_eq!(report.predictions[1].correct, None);
}
