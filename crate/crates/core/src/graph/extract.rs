use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::Span;
use crate::error::{Error, Result};
use crate::text::Token;

/// Reasoning spans for one sample, keyed by document index.
pub type DocSpans = BTreeMap<usize, Vec<Span>>;

/// Externally supplied reasoning spans. A file is either one sample's
/// `{doc_index: [[start, end], ...]}` map, which then applies to every
/// sample, or a map from sample id to such a map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sidecar {
    pub by_sample: BTreeMap<String, DocSpans>,
    pub shared: Option<DocSpans>,
}

impl Sidecar {
    pub fn for_sample(&self, id: &str) -> Option<&DocSpans> {
        self.by_sample.get(id).or(self.shared.as_ref())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SidecarJson {
    Shared(BTreeMap<usize, Vec<Span>>),
    BySample(BTreeMap<String, BTreeMap<usize, Vec<Span>>>),
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json: SidecarJson = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(match json {
        SidecarJson::Shared(spans) => Sidecar {
            by_sample: BTreeMap::new(),
            shared: Some(spans),
        },
        SidecarJson::BySample(by_sample) => Sidecar {
            by_sample,
            shared: None,
        },
    })
}

const LEADING_STOPWORDS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "it", "its", "in", "on", "at", "of", "for", "and", "but",
    "he", "she", "they", "his", "her", "their", "there", "when", "while", "after", "before", "during", "as", "by",
    "from", "with", "to", "is", "was",
];

fn entity_like(token: &Token, source: &str) -> bool {
    let original = token.original(source);
    let mut chars = original.chars();
    let first = chars.next();
    first.is_some_and(char::is_uppercase) || original.chars().any(|c| c.is_ascii_digit())
}

fn overlaps(a: Span, b: Span) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Maximal runs of capitalized or digit-bearing tokens in `tokens`, with
/// leading function words stripped, minus runs that overlap `claimed`.
pub fn extract_reasoning_entities(tokens: &[Token], source: &str, claimed: &[Span]) -> Vec<Span> {
    let mut runs = Vec::new();
    let mut t = 0;
    while t < tokens.len() {
        if !entity_like(&tokens[t], source) {
            t += 1;
            continue;
        }
        let start = t;
        while t < tokens.len() && entity_like(&tokens[t], source) {
            t += 1;
        }
        let mut s = start;
        while s < t && LEADING_STOPWORDS.contains(&tokens[s].surface.as_str()) {
            s += 1;
        }
        if s < t {
            runs.push((s, t - 1));
        }
    }
    runs.retain(|&r| !claimed.iter().any(|&c| overlaps(r, c)));
    runs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn surfaces(text: &str, claimed: &[Span]) -> Vec<String> {
        let tokens = tokenize(text);
        extract_reasoning_entities(&tokens, text, claimed)
            .into_iter()
            .map(|(s, e)| text[tokens[s].char_span.0..tokens[e].char_span.1].to_string())
            .collect()
    }

    #[test]
    fn capitalized_runs() {
        let text = "The memorial is in Hampton Wick near London";
        assert_eq!(surfaces(text, &[]), ["Hampton Wick", "London"]);
        // claim "london"
        assert_eq!(surfaces(text, &[(7, 7)]), ["Hampton Wick"]);
        assert!(surfaces("all lowercase words here .", &[]).is_empty());
        assert_eq!(surfaces("binds DB00007 and 42 items", &[]), ["DB00007", "42"]);
    }
}
