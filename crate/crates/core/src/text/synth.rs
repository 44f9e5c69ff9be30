//! Synthetic multi-hop corpora.
//!
//! Every sample hides one entity chain `s → e₁ → … → answer`, one
//! `"X relates Y"` sentence per document, among `n_candidates − 1`
//! distractor chains of the same length that end at the other candidates
//! but start elsewhere. Only the chain that starts at the subject leads to
//! the answer, so every chain document is needed to answer.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::qangaroo::Sample;
use super::tokenize::words;
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const SYLLABLES_PER_NAME: u32 = 3;
const FILLER: &[&str] = &["today", "again", "still", "there", "once", "now", "here", "indeed"];
pub const RELATION: &str = "relates";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub hop_length: usize,
    pub n_candidates: usize,
    /// Size of the entity name pool each sample draws from.
    pub vocab_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            count: 50,
            hop_length: 2,
            n_candidates: 5,
            vocab_size: 2000,
        }
    }
}

fn syllable_count() -> usize {
    CONSONANTS.len() * VOWELS.len()
}

fn entity_name(mut index: usize) -> String {
    let mut name = String::new();
    for _ in 0..SYLLABLES_PER_NAME {
        let s = index % syllable_count();
        index /= syllable_count();
        name.push(CONSONANTS[s / VOWELS.len()] as char);
        name.push(VOWELS[s % VOWELS.len()] as char);
    }
    let mut chars = name.chars();
    let first = chars.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

fn sentence(rng: &mut ChaCha8Rng, from: &str, to: &str) -> String {
    let mut s = format!("{from} {RELATION} {to}");
    for _ in 0..rng.gen_range(0..=3) {
        s.push(' ');
        s.push_str(FILLER[rng.gen_range(0..FILLER.len())]);
    }
    s.push_str(" .");
    s
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<Sample>> {
    let SynthConfig {
        seed,
        count,
        hop_length,
        n_candidates,
        vocab_size,
    } = *config;
    if hop_length == 0 {
        return Err(Error::Config("hop_length must be at least 1".into()));
    }
    if n_candidates < 2 {
        return Err(Error::Config("n_candidates must be at least 2".into()));
    }
    let needed = n_candidates * (hop_length + 1);
    let capacity = syllable_count().pow(SYLLABLES_PER_NAME);
    if vocab_size < needed {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} cannot give {needed} distinct entities per sample"
        )));
    }
    if vocab_size > capacity {
        return Err(Error::Config(format!("vocab_size {vocab_size} exceeds the {capacity} available names")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        let names: Vec<String> = index::sample(&mut rng, vocab_size, needed)
            .into_iter()
            .map(entity_name)
            .collect();
        let chains: Vec<&[String]> = names.chunks(hop_length + 1).collect();
        let mut documents = Vec::with_capacity(needed - n_candidates);
        for chain in &chains {
            for pair in chain.windows(2) {
                documents.push(sentence(&mut rng, &pair[0], &pair[1]));
            }
        }
        documents.shuffle(&mut rng);
        let mut candidates: Vec<String> = chains.iter().map(|c| c[hop_length].to_lowercase()).collect();
        let answer = candidates[0].clone();
        candidates.shuffle(&mut rng);
        out.push(Sample {
            id: format!("synth_{seed}_{n}"),
            relation: RELATION.to_string(),
            subject: chains[0][0].to_lowercase(),
            candidates,
            documents,
            answer: Some(answer),
            annotations: None,
        });
    }
    Ok(out)
}

/// What the symbolic chain solver concludes about a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainVerdict {
    /// Candidate reached by following `relates` links from the subject.
    pub solved: Option<usize>,
    /// Documents on the solving chain.
    pub chain_docs: usize,
    /// Whether deleting any single chain document leaves no candidate
    /// reachable.
    pub every_doc_needed: bool,
}

fn links(documents: &[String], skip: Option<usize>) -> HashMap<String, (String, usize)> {
    let mut out = HashMap::new();
    for (d, doc) in documents.iter().enumerate() {
        if Some(d) == skip {
            continue;
        }
        let w = words(doc);
        if w.len() >= 3 && w[1] == RELATION {
            out.insert(w[0].clone(), (w[2].clone(), d));
        }
    }
    out
}

fn follow(sample: &Sample, skip: Option<usize>) -> (Option<usize>, Vec<usize>) {
    let links = links(&sample.documents, skip);
    let mut at = sample.subject.to_lowercase();
    let mut used = Vec::new();
    while let Some((next, doc)) = links.get(&at) {
        if used.contains(doc) {
            break;
        }
        used.push(*doc);
        at = next.clone();
        if let Some(c) = sample.candidates.iter().position(|c| *c == at) {
            return (Some(c), used);
        }
    }
    (None, used)
}

/// Independent solver for synthetic samples, used to check that answers
/// need the whole chain.
pub fn chain_oracle(sample: &Sample) -> ChainVerdict {
    let (solved, used) = follow(sample, None);
    let every_doc_needed = solved.is_some() && used.iter().all(|&d| follow(sample, Some(d)).0.is_none());
    ChainVerdict {
        solved,
        chain_docs: used.len(),
        every_doc_needed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_hop_layout() {
        let cfg = SynthConfig {
            count: 3,
            ..SynthConfig::default()
        };
        let samples = gen_synthetic(&cfg).unwrap();
        for s in &samples {
            assert_eq!(s.candidates.len(), 5);
            assert_eq!(s.documents.len(), 10);
            let v = chain_oracle(s);
            assert_eq!(v.solved, s.answer_index());
            assert_eq!(v.chain_docs, 2);
            assert!(v.every_doc_needed);
        }
        assert_eq!(samples, gen_synthetic(&cfg).unwrap());
    }

    #[test]
    fn small_vocab_is_a_config_error() {
        let cfg = SynthConfig {
            vocab_size: 14,
            ..SynthConfig::default()
        };
        assert!(matches!(gen_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn names_are_distinct() {
        let a: std::collections::HashSet<String> = (0..5000).map(entity_name).collect();
        assert_eq!(a.len(), 5000);
    }
}
