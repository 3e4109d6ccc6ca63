use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::ReasoningSample;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";
pub const ANSWER_DELIMITER: &str = "####";
pub const MAX_VOCAB: usize = 512;

/// Default answer support: digits plus sign, fraction and decimal marks.
pub fn default_answer_tokens() -> Vec<String> {
    (0..10)
        .map(|d| d.to_string())
        .chain(["-", "/", "."].iter().map(|s| s.to_string()))
        .collect()
}

/// Lowercases and splits text into word runs, single digits, `####`, and
/// single punctuation characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            out.push(c.to_string());
            i += 1;
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if chars[i..].starts_with(&['#', '#', '#', '#']) {
            out.push(ANSWER_DELIMITER.to_string());
            i += 4;
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

/// Joins tokens with spaces, gluing consecutive digits (and a decimal
/// point between digits) back into numbers.
pub fn detokenize(tokens: &[String]) -> String {
    let is_digit = |t: &str| t.len() == 1 && t.chars().all(|c| c.is_ascii_digit());
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let glue = i > 0 && {
            let prev = tokens[i - 1].as_str();
            (is_digit(prev) && is_digit(t))
                || (is_digit(prev) && t == "." && tokens.get(i + 1).is_some_and(|n| is_digit(n)))
                || (prev == "." && is_digit(t) && i >= 2 && is_digit(&tokens[i - 2]))
        };
        if i > 0 && !glue {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_VOCAB {
            return Err(Error::config(
                "vocab",
                format!("{} tokens exceed the limit of {MAX_VOCAB}", tokens.len()),
            ));
        }
        let index: BTreeMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::config("vocab", "duplicate tokens"));
        }
        for special in [UNK, BOS, SEP, EOS, ANSWER_DELIMITER] {
            if !index.contains_key(special) {
                return Err(Error::config("vocab", format!("missing special token {special}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Specials first, then every token seen in the corpus and the answer
    /// support, in sorted order.
    pub fn build(samples: &[ReasoningSample], answer_tokens: &[String]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in samples {
            seen.extend(tokenize(&s.question));
            for r in s.rationales.values() {
                seen.extend(tokenize(r));
            }
        }
        seen.extend(answer_tokens.iter().cloned());
        let mut tokens: Vec<String> = [UNK, BOS, SEP, EOS, ANSWER_DELIMITER]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(seen.into_iter().filter(|t| t != ANSWER_DELIMITER));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.index[UNK])
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let toks: Vec<String> = ids.iter().map(|&i| self.tokens[i].clone()).collect();
        detokenize(&toks)
    }

    pub fn bos(&self) -> usize {
        self.index[BOS]
    }
    pub fn sep(&self) -> usize {
        self.index[SEP]
    }
    pub fn eos(&self) -> usize {
        self.index[EOS]
    }
    pub fn delimiter(&self) -> usize {
        self.index[ANSWER_DELIMITER]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_digits_and_marker() {
        assert_eq!(
            tokenize("Ava has 12 pens. #### 12"),
            vec!["ava", "has", "1", "2", "pens", ".", "####", "1", "2"]
        );
        assert_eq!(detokenize(&tokenize("so 3 + 45 = 48 . #### 48")), "so 3 + 45 = 48 . #### 48");
        assert_eq!(detokenize(&tokenize("#### -1.5")), "#### - 1.5");
    }

    #[test]
    fn build_is_sorted_and_contains_specials() {
        let corpus = crate::corpus::make_synthetic_corpus(8, 1).unwrap();
        let v = Vocab::build(&corpus, &default_answer_tokens()).unwrap();
        assert_eq!(&v.tokens()[..5], &[UNK, BOS, SEP, EOS, ANSWER_DELIMITER]);
        assert!(v.len() <= MAX_VOCAB);
        assert_eq!(v.id("zzzz-unknown"), v.id(UNK));
        let ids = v.encode(&corpus[0].question);
        assert_eq!(v.decode(&ids), detokenize(&tokenize(&corpus[0].question)));
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
