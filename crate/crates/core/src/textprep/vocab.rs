use std::collections::HashMap;
use std::io::{self, Write};

use super::TextprepError;

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
const FIRST_TOKEN_ID: usize = 2;

/// Token ↔ id mapping. Ids `0` and `1` are reserved for padding and
/// out-of-vocabulary; kept tokens take `2..=V+1` by descending frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    /// `tokens[i]` has id `i + 2`.
    tokens: Vec<String>,
    max_size: usize,
}

impl Vocabulary {
    /// Builds from tokens already in id order.
    pub fn from_tokens(tokens: Vec<String>, max_size: usize) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + FIRST_TOKEN_ID))
            .collect();
        Vocabulary {
            token_to_id,
            tokens,
            max_size,
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    /// Token for an assigned id (never for 0 or 1).
    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(FIRST_TOKEN_ID)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Number of kept tokens (V). Embedding tables need `V + 2` rows.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// `(token, id)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i + FIRST_TOKEN_ID))
    }

    /// `token<TAB>id` lines sorted by id.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (t, id) in self.iter() {
            writeln!(w, "{t}\t{id}")?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("tokens are UTF-8")
    }

    /// Parses the TSV form; ids must run contiguously from 2.
    pub fn parse_tsv(text: &str, max_size: usize) -> Result<Self, TextprepError> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| TextprepError::VocabularySyntax { line: n + 1, reason };
            let (token, id) = line
                .split_once('\t')
                .ok_or_else(|| err("expected token<TAB>id".into()))?;
            let id: usize = id.trim().parse().map_err(|_| err(format!("bad id {id:?}")))?;
            let expected = tokens.len() + FIRST_TOKEN_ID;
            if id != expected {
                return Err(err(format!("expected id {expected}, found {id}")));
            }
            if token.is_empty() || token.contains(char::is_whitespace) {
                return Err(err(format!("invalid token {token:?}")));
            }
            tokens.push(token.to_string());
        }
        let vocab = Self::from_tokens(tokens, max_size);
        if vocab.token_to_id.len() != vocab.tokens.len() {
            return Err(TextprepError::VocabularySyntax {
                line: 0,
                reason: "duplicate token".into(),
            });
        }
        Ok(vocab)
    }
}

/// Counts whitespace tokens and keeps the `max_size` most frequent; equal
/// counts are ordered by first occurrence in the corpus.
pub fn fit_vocabulary<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocabulary, TextprepError> {
    if corpus.is_empty() {
        return Err(TextprepError::EmptyCorpus);
    }
    if max_size == 0 {
        return Err(TextprepError::InvalidMaxSize);
    }
    // token -> (count, first occurrence)
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut next = 0;
    for doc in corpus {
        for tok in doc.as_ref().split_whitespace() {
            counts
                .entry(tok)
                .and_modify(|e| e.0 += 1)
                .or_insert_with(|| {
                    next += 1;
                    (1, next)
                });
        }
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
    ranked.sort_unstable_by_key(|&(_, c, f)| (std::cmp::Reverse(c), f));
    ranked.truncate(max_size);
    Ok(Vocabulary::from_tokens(
        ranked.into_iter().map(|(t, _, _)| t.to_string()).collect(),
        max_size,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_then_first_occurrence() {
        let v = fit_vocabulary(&["b a", "b c"], 10).unwrap();
        assert_eq!(v.id("b"), Some(2));
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.id("c"), Some(4));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn single_token() {
        let v = fit_vocabulary(&["x"], 1).unwrap();
        assert_eq!(v.id("x"), Some(2));
    }

    #[test]
    fn cutoff() {
        let v = fit_vocabulary(&["b a", "b c"], 1).unwrap();
        assert_eq!(v.id("b"), Some(2));
        assert_eq!(v.id("a"), None);
        assert_eq!(v.id("c"), None);
    }

    #[test]
    fn errors() {
        let empty: [&str; 0] = [];
        assert_eq!(fit_vocabulary(&empty, 5).unwrap_err(), TextprepError::EmptyCorpus);
        assert_eq!(fit_vocabulary(&["a"], 0).unwrap_err(), TextprepError::InvalidMaxSize);
    }

    #[test]
    fn tsv_round_trip() {
        let v = fit_vocabulary(&["engine fire engine", "smoke"], 10).unwrap();
        let text = v.to_tsv();
        assert_eq!(text, "engine\t2\nfire\t3\nsmoke\t4\n");
        assert_eq!(Vocabulary::parse_tsv(&text, 10).unwrap(), v);
        assert!(Vocabulary::parse_tsv("a\t3\n", 10).is_err());
        assert!(Vocabulary::parse_tsv("a\t2\na\t3\n", 10).is_err());
    }

    proptest! {
        #[test]
        fn ids_reserved_and_decodable(docs in prop::collection::vec("[a-f ]{0,20}", 1..10), max in 1usize..8) {
            let v = fit_vocabulary(&docs, max).unwrap();
            prop_assert!(v.len() <= max);
            for (tok, id) in v.iter() {
                prop_assert!(id >= 2);
                prop_assert_eq!(v.token(id), Some(tok));
                prop_assert_eq!(v.id(tok), Some(id));
            }
            prop_assert_eq!(v.token(0), None);
            prop_assert_eq!(v.token(1), None);
        }
    }
}
