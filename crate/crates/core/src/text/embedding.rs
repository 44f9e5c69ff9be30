use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hash::fnv1a_seeded;
use crate::numeric::Tensor;

/// Pretrained word vectors with a seeded fallback for unseen tokens.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    seed: u64,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// An empty table: every token is out of vocabulary.
    pub fn empty(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            seed,
            trainable: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim, "embedding width");
        self.vectors.insert(token.into(), vector);
    }

    pub fn lookup(&self, token: &str) -> Vec<f64> {
        match self.vectors.get(token) {
            Some(v) => v.clone(),
            None => oov_vector(self.seed, token, self.dim),
        }
    }

    /// Drops every entry not in `keep`.
    pub fn restrict<'a>(&mut self, keep: impl IntoIterator<Item = &'a str>) {
        let keep: std::collections::HashSet<&str> = keep.into_iter().collect();
        self.vectors.retain(|k, _| keep.contains(k.as_str()));
    }
}

/// Uniform in `±sqrt(3 / dim)`, keyed by `(seed, token)`.
pub fn oov_vector(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a_seeded(seed, token.as_bytes()));
    let limit = (3.0 / dim as f64).sqrt();
    (0..dim).map(|_| rng.gen_range(-limit..=limit)).collect()
}

/// Reads `token v1 … v_dim` lines. Blank lines are skipped; a header line of
/// exactly two integers (word2vec text style) is tolerated on line 1.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(std::io::BufReader::new(file), dim, seed, path)
}

pub fn parse_embeddings(reader: impl BufRead, dim: usize, seed: u64, path: &Path) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::empty(dim, seed);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        if rest.len() != dim {
            return Err(parse_err(
                i + 1,
                format!("expected {dim} values after `{token}`, found {}", rest.len()),
            ));
        }
        let values = rest
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(i + 1, format!("bad value `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        table.vectors.insert(token.to_lowercase(), values);
    }
    Ok(table)
}

/// Hashed character n-gram embedder. A token is wrapped as `<token>` and
/// every 2-, 3- and 4-gram of that string selects a row of a trainable
/// `buckets × dim` table; the token's vector is the mean of those rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharEmbedder {
    pub dim: usize,
    pub buckets: usize,
}

impl CharEmbedder {
    pub fn ngram_ids(&self, token: &str) -> Vec<usize> {
        let chars: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut ids = Vec::new();
        let mut buf = String::new();
        for n in 2..=4 {
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w);
                ids.push((fnv1a_seeded(n as u64, buf.as_bytes()) % self.buckets as u64) as usize);
            }
        }
        ids
    }
}

/// `[word vector ‖ mean of the token's n-gram rows]`, length `d_w + d_c`.
pub fn embed_token(token: &str, words: &EmbeddingTable, chars: &CharEmbedder, char_table: &Tensor) -> Vec<f64> {
    let mut out = words.lookup(token);
    let ids = chars.ngram_ids(token);
    let mut acc = vec![0.0; chars.dim];
    for &id in &ids {
        for (a, v) in acc.iter_mut().zip(char_table.row(id)) {
            *a += v;
        }
    }
    let w = 1.0 / ids.len() as f64;
    out.extend(acc.into_iter().map(|a| a * w));
    out
}
