use serde::{Deserialize, Serialize};

use crate::text::{Annotation, DocRequirement, FactLabel};

/// Support-document count bins: `1-10`, `11-20`, …, `51+`.
pub const BINS: [(&str, usize, usize); 6] = [
    ("1-10", 1, 10),
    ("11-20", 11, 20),
    ("21-30", 21, 30),
    ("31-40", 31, 40),
    ("41-50", 41, 50),
    ("51+", 51, usize::MAX),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub label: String,
    pub count: usize,
    pub accuracy: f64,
}

fn bin_of(docs: usize) -> Option<usize> {
    BINS.iter().position(|&(_, lo, hi)| (lo..=hi).contains(&docs))
}

/// Accuracy per document-count bin over `(doc_count, correct)` pairs. Bins
/// without samples are left out.
pub fn grouped_accuracy(results: &[(usize, bool)]) -> Vec<GroupAccuracy> {
    let mut tally = [(0usize, 0usize); BINS.len()];
    for &(docs, correct) in results {
        if let Some(b) = bin_of(docs) {
            tally[b].0 += 1;
            tally[b].1 += usize::from(correct);
        }
    }
    BINS.iter()
        .zip(tally)
        .filter(|(_, (n, _))| *n > 0)
        .map(|(&(label, _, _), (n, hits))| GroupAccuracy {
            label: label.to_string(),
            count: n,
            accuracy: hits as f64 / n as f64,
        })
        .collect()
}

/// Minimum number of annotators for a sample to enter any category.
pub const MIN_ANNOTATORS: usize = 3;

/// The five annotation categories in reporting order.
pub const CATEGORIES: [&str; 5] = [
    "follows fact / requires multiple documents",
    "follows fact / requires single document",
    "likely follows fact / requires multiple documents",
    "likely follows fact / requires single document",
    "\"not follows\" is not given",
];

fn categories_of(annotations: &[Annotation]) -> Vec<usize> {
    if annotations.len() < MIN_ANNOTATORS {
        return Vec::new();
    }
    let all = |fact: FactLabel, docs: DocRequirement| {
        annotations.iter().all(|a| a.fact == fact && a.docs == Some(docs))
    };
    let mut out = Vec::new();
    let combos = [
        (FactLabel::Follows, DocRequirement::Multiple),
        (FactLabel::Follows, DocRequirement::Single),
        (FactLabel::Likely, DocRequirement::Multiple),
        (FactLabel::Likely, DocRequirement::Single),
    ];
    for (i, (f, d)) in combos.into_iter().enumerate() {
        if all(f, d) {
            out.push(i);
        }
    }
    if annotations.iter().all(|a| a.fact != FactLabel::NotFollows) {
        out.push(4);
    }
    out
}

/// Accuracy per annotation category. A sample joins a category only when
/// at least three annotators labelled it and all of them agree; samples in
/// no category are skipped, and empty categories are left out.
pub fn annotation_subsets(results: &[(Option<&[Annotation]>, bool)]) -> Vec<GroupAccuracy> {
    let mut tally = [(0usize, 0usize); CATEGORIES.len()];
    for &(ann, correct) in results {
        for c in ann.map(categories_of).unwrap_or_default() {
            tally[c].0 += 1;
            tally[c].1 += usize::from(correct);
        }
    }
    CATEGORIES
        .iter()
        .zip(tally)
        .filter(|(_, (n, _))| *n > 0)
        .map(|(&label, (n, hits))| GroupAccuracy {
            label: label.to_string(),
            count: n,
            accuracy: hits as f64 / n as f64,
        })
        .collect()
}
