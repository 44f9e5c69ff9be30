use serde::{Deserialize, Serialize};

/// A lowercased token with its byte span in the source text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub doc_index: usize,
    pub position: usize,
    /// Half-open byte range into the original document.
    pub char_span: (usize, usize),
}

impl Token {
    /// The original-case slice this token was cut from.
    pub fn original<'a>(&self, source: &'a str) -> &'a str {
        &source[self.char_span.0..self.char_span.1]
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits on whitespace and detaches every non-word character as its own
/// token. Word characters are alphanumerics and `_`.
pub fn tokenize(text: &str) -> Vec<Token> {
    tokenize_doc(text, 0)
}

pub fn tokenize_doc(text: &str, doc_index: usize) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let push = |start: usize, end: usize, out: &mut Vec<Token>| {
        out.push(Token {
            surface: text[start..end].to_lowercase(),
            doc_index,
            position: out.len(),
            char_span: (start, end),
        });
    };
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            push(s, i, &mut out);
        }
        if !c.is_whitespace() {
            push(i, i + c.len_utf8(), &mut out);
        }
    }
    if let Some(s) = word_start {
        push(s, text.len(), &mut out);
    }
    out
}

/// Lowercased surfaces only.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.surface).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detaches_punctuation() {
        assert_eq!(
            words("Hampton Wick is in London."),
            ["hampton", "wick", "is", "in", "london", "."]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(words("DB00007 interacts"), ["db00007", "interacts"]);
        assert_eq!(words("a-b  (c)"), ["a", "-", "b", "(", "c", ")"]);
    }

    #[test]
    fn offsets_reconstruct_source() {
        let text = "Ünïcode naïve, Straße! x_y";
        for t in tokenize(text) {
            assert_eq!(t.original(text).to_lowercase(), t.surface);
        }
    }
}
