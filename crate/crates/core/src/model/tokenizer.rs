//! Word-level question tokenizer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const PAD_ID: u32 = 0;
pub const START_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[START]", "[UNK]"];

/// Token ids, always beginning with the start token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Splits text into lowercase words over `[a-z0-9+&]`; apostrophes are dropped.
pub fn words_of(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.to_lowercase().chars() {
        match ch {
            'a'..='z' | '0'..='9' => cleaned.push(ch),
            '+' | '&' => {
                cleaned.push(' ');
                cleaned.push(ch);
                cleaned.push(' ');
            }
            '\'' | '\u{2019}' => {}
            _ => cleaned.push(' '),
        }
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    word_to_id: BTreeMap<String, u32>,
}

impl Lexicon {
    /// Reserved ids first, then every distinct word of `texts` in sorted order.
    pub fn build<S: AsRef<str>>(texts: impl IntoIterator<Item = S>) -> Self {
        let mut words: Vec<String> = texts.into_iter().flat_map(|t| words_of(t.as_ref())).collect();
        words.sort();
        words.dedup();
        let mut word_to_id = BTreeMap::new();
        for (i, r) in RESERVED.iter().enumerate() {
            word_to_id.insert(r.to_string(), i as u32);
        }
        for w in words {
            let next = word_to_id.len() as u32;
            word_to_id.entry(w).or_insert(next);
        }
        Lexicon { word_to_id }
    }

    pub fn len(&self) -> usize {
        self.word_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_to_id.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.word_to_id.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string_pretty(&self.word_to_id).map_err(ModelError::from)
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let word_to_id: BTreeMap<String, u32> = serde_json::from_str(json)?;
        for (i, r) in RESERVED.iter().enumerate() {
            if word_to_id.get(*r) != Some(&(i as u32)) {
                return Err(ModelError::Config(format!("lexicon must map {r} to {i}")));
            }
        }
        let mut ids: Vec<u32> = word_to_id.values().copied().collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| id as usize != i) {
            return Err(ModelError::Config("lexicon ids must be dense and unique".into()));
        }
        Ok(Lexicon { word_to_id })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Start token followed by word ids, truncated to `max_len` tokens in total.
pub fn tokenize(question: &str, lexicon: &Lexicon, max_len: usize) -> TokenSequence {
    let mut ids = vec![START_ID];
    ids.extend(words_of(question).iter().map(|w| lexicon.id(w)));
    ids.truncate(max_len.max(1));
    TokenSequence(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_lookup() {
        let lex = Lexicon::build(["Which exercise was performed?"]);
        let toks = tokenize("Which exercise was performed?", &lex, 24);
        let expected: Vec<u32> = ["which", "exercise", "was", "performed"]
            .iter()
            .map(|w| lex.id(w))
            .collect();
        assert_eq!(toks.0[0], START_ID);
        assert_eq!(&toks.0[1..], expected.as_slice());
        assert!(expected.iter().all(|&id| id > UNK_ID));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let lex = Lexicon::build(["squat"]);
        assert_eq!(tokenize("burpee squat", &lex, 24).0, vec![START_ID, UNK_ID, lex.id("squat")]);
    }

    #[test]
    fn truncates_to_max_len() {
        let lex = Lexicon::build(["a b c d e"]);
        assert_eq!(tokenize("a b c d e", &lex, 3).len(), 3);
    }

    #[test]
    fn apostrophes_fuse() {
        assert_eq!(words_of("Q: What's the total count? A:"), ["q", "whats", "the", "total", "count", "a"]);
    }

    #[test]
    fn json_round_trip() {
        let lex = Lexicon::build(["how many squat"]);
        assert_eq!(Lexicon::from_json(&lex.to_json().unwrap()).unwrap(), lex);
        assert!(Lexicon::from_json(r#"{"a": 0}"#).is_err());
    }
}
