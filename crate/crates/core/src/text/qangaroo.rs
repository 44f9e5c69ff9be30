use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactLabel {
    Follows,
    Likely,
    NotFollows,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DocRequirement {
    Single,
    Multiple,
}

/// One annotator's judgement of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Annotation {
    pub fact: FactLabel,
    pub docs: Option<DocRequirement>,
}

impl Annotation {
    fn parse(fields: &[String]) -> Option<Self> {
        let fact = fields.first()?.to_lowercase().replace('_', " ");
        let fact = if fact.starts_with("not") {
            FactLabel::NotFollows
        } else if fact.starts_with("likely") {
            FactLabel::Likely
        } else if fact.starts_with("follows") {
            FactLabel::Follows
        } else {
            return None;
        };
        let docs = match fields.get(1).map(|s| s.to_lowercase()) {
            None => None,
            Some(s) if s.contains("multiple") => Some(DocRequirement::Multiple),
            Some(s) if s.contains("single") => Some(DocRequirement::Single),
            Some(_) => return None,
        };
        Some(Self { fact, docs })
    }

    fn to_fields(self) -> Vec<String> {
        let fact = match self.fact {
            FactLabel::Follows => "follows",
            FactLabel::Likely => "likely",
            FactLabel::NotFollows => "not follows",
        };
        let mut out = vec![fact.to_string()];
        match self.docs {
            Some(DocRequirement::Single) => out.push("single".into()),
            Some(DocRequirement::Multiple) => out.push("multiple".into()),
            None => {}
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub relation: String,
    pub subject: String,
    pub candidates: Vec<String>,
    pub documents: Vec<String>,
    pub answer: Option<String>,
    pub annotations: Option<Vec<Annotation>>,
}

impl Sample {
    pub fn answer_index(&self) -> Option<usize> {
        let a = self.answer.as_ref()?;
        self.candidates.iter().position(|c| c == a)
    }

    /// The query string in dataset layout, `relation subject`.
    pub fn query(&self) -> String {
        format!("{} {}", self.relation, self.subject)
    }
}

#[derive(Serialize, Deserialize)]
struct RawSample {
    id: String,
    query: String,
    candidates: Vec<String>,
    supports: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<Vec<Vec<String>>>,
}

impl RawSample {
    fn into_sample(self) -> Result<Sample> {
        let id = self.id;
        let query = self.query.trim();
        let (relation, subject) = query
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::data(&id, format!("query `{query}` has no subject")))?;
        let candidates: Vec<String> = self.candidates.iter().map(|c| c.trim().to_lowercase()).collect();
        if candidates.len() < 2 {
            return Err(Error::data(&id, "fewer than two candidates"));
        }
        for (i, c) in candidates.iter().enumerate() {
            if candidates[..i].contains(c) {
                return Err(Error::data(&id, format!("duplicate candidate `{c}`")));
            }
        }
        if self.supports.is_empty() {
            return Err(Error::data(&id, "no support documents"));
        }
        let answer = self.answer.map(|a| a.trim().to_lowercase());
        if let Some(a) = &answer {
            if !candidates.contains(a) {
                return Err(Error::data(&id, format!("answer `{a}` is not among the candidates")));
            }
        }
        let annotations = self
            .annotations
            .map(|list| {
                list.iter()
                    .map(|f| {
                        Annotation::parse(f).ok_or_else(|| Error::data(&id, format!("unrecognized annotation {f:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(Sample {
            relation: relation.to_string(),
            subject: subject.trim().to_string(),
            candidates,
            documents: self.supports,
            answer,
            annotations,
            id,
        })
    }

    fn from_sample(s: &Sample) -> Self {
        Self {
            id: s.id.clone(),
            query: s.query(),
            candidates: s.candidates.clone(),
            supports: s.documents.clone(),
            answer: s.answer.clone(),
            annotations: s
                .annotations
                .as_ref()
                .map(|a| a.iter().map(|x| x.to_fields()).collect()),
        }
    }
}

pub fn parse_qangaroo(json: &str, path: &Path) -> Result<Vec<Sample>> {
    let raw: Vec<RawSample> = serde_json::from_str(json).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    raw.into_iter().map(RawSample::into_sample).collect()
}

pub fn load_qangaroo(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qangaroo(&text, path)
}

pub fn to_json(samples: &[Sample]) -> String {
    let raw: Vec<RawSample> = samples.iter().map(RawSample::from_sample).collect();
    serde_json::to_string_pretty(&raw).expect("samples serialize")
}

pub fn save_qangaroo(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(samples)).map_err(|e| Error::io(path, e))
}
