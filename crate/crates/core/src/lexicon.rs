//! Token tables and word-form groups.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Reserved string for the end-of-sequence token. Never valid as a content word.
pub const EOS: &str = "</s>";

/// Ordered token table. Content words take ids `0..len-1` in input order and
/// the end-of-sequence token is always the last id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut tokens = Vec::with_capacity(words.len() + 1);
        let mut index = HashMap::with_capacity(words.len() + 1);
        for w in words {
            let w = w.as_ref();
            if w.is_empty() || w == EOS {
                return Err(Error::InvalidWord(w.to_string()));
            }
            if index.insert(w.to_string(), tokens.len()).is_some() {
                return Err(Error::DuplicateWord(w.to_string()));
            }
            tokens.push(w.to_string());
        }
        index.insert(EOS.to_string(), tokens.len());
        tokens.push(EOS.to_string());
        Ok(Self { tokens, index })
    }

    /// Number of tokens including end-of-sequence.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Number of content tokens; these form the automaton alphabet.
    pub fn content_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn eos_id(&self) -> TokenId {
        self.tokens.len() - 1
    }

    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn string_of(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Looks up a content word, rejecting unknown words and the eos sentinel.
    pub fn content_id(&self, word: &str) -> Result<TokenId> {
        match self.id_of(word) {
            Some(id) if id != self.eos_id() => Ok(id),
            Some(_) => Err(Error::UnexpectedEos),
            None => Err(Error::UnknownWord(word.to_string())),
        }
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>> {
        words.iter().map(|w| self.content_id(w.as_ref())).collect()
    }

    /// Maps ids back to strings; unknown ids render as `<id>`.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| match self.string_of(id) {
                Some(s) => s.to_string(),
                None => format!("<{id}>"),
            })
            .collect()
    }

    /// Content words in id order (eos excluded).
    pub fn words(&self) -> &[String] {
        &self.tokens[..self.content_size()]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let words: Vec<String> = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(&words)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self.words()).expect("string list serializes")
    }
}

/// A set of interchangeable word forms standing for one label, e.g.
/// `{bike, bikes, biked, biking}`. Mentioning any member satisfies the label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DisjunctiveSet {
    token_ids: BTreeSet<TokenId>,
    label: String,
}

impl DisjunctiveSet {
    /// Builds the set for an explicit word-form group. The first word names the label.
    pub fn from_words<S: AsRef<str>>(vocab: &Vocabulary, group: &[S]) -> Result<Self> {
        let first = group.first().ok_or(Error::EmptyGroup)?;
        let token_ids = group
            .iter()
            .map(|w| vocab.content_id(w.as_ref()))
            .collect::<Result<BTreeSet<_>>>()?;
        Ok(Self {
            token_ids,
            label: first.as_ref().to_string(),
        })
    }

    pub fn from_ids(
        vocab: &Vocabulary,
        label: impl Into<String>,
        ids: impl IntoIterator<Item = TokenId>,
    ) -> Result<Self> {
        let token_ids: BTreeSet<TokenId> = ids.into_iter().collect();
        if token_ids.is_empty() {
            return Err(Error::EmptyGroup);
        }
        for &id in &token_ids {
            if id == vocab.eos_id() {
                return Err(Error::UnexpectedEos);
            }
            if id >= vocab.size() {
                return Err(Error::InvalidToken(id));
            }
        }
        Ok(Self {
            token_ids,
            label: label.into(),
        })
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.token_ids.contains(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.token_ids.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Parses a JSON array of word-form groups (array of arrays of strings).
pub fn groups_from_json(vocab: &Vocabulary, text: &str) -> Result<Vec<DisjunctiveSet>> {
    let groups: Vec<Vec<String>> = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    groups.iter().map(|g| DisjunctiveSet::from_words(vocab, g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eos_is_appended_last() {
        let v = Vocabulary::new(&["a", "b", "c"]).unwrap();
        assert_eq!(v.size(), 4);
        assert_eq!(v.eos_id(), 3);
        assert_eq!(v.string_of(3), Some(EOS));

        let v = Vocabulary::new(&["bike", "bikes", "dog"]).unwrap();
        assert_eq!(v.id_of("bike"), Some(0));
        assert_eq!(v.id_of("bikes"), Some(1));
        assert_eq!(v.id_of("dog"), Some(2));
        assert_eq!(v.eos_id(), 3);
    }

    #[test]
    fn rejects_bad_word_lists() {
        assert_eq!(Vocabulary::new(&["a", "a"]), Err(Error::DuplicateWord("a".into())));
        assert_eq!(Vocabulary::new::<&str>(&[]), Err(Error::EmptyVocabulary));
        assert!(matches!(Vocabulary::new(&["a", EOS]), Err(Error::InvalidWord(_))));
        assert!(matches!(Vocabulary::new(&["a", ""]), Err(Error::InvalidWord(_))));
    }

    #[test]
    fn word_form_groups() {
        let v = Vocabulary::new(&["bike", "bikes", "biked", "biking", "dog"]).unwrap();
        let d = DisjunctiveSet::from_words(&v, &["bike", "bikes", "biked", "biking"]).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.label(), "bike");
        assert!(!d.contains(v.eos_id()));

        let d = DisjunctiveSet::from_words(&v, &["dog"]).unwrap();
        assert_eq!(d.ids().collect::<Vec<_>>(), vec![4]);

        assert_eq!(
            DisjunctiveSet::from_words(&v, &["unicorn"]),
            Err(Error::UnknownWord("unicorn".into()))
        );
        assert_eq!(DisjunctiveSet::from_words::<&str>(&v, &[]), Err(Error::EmptyGroup));
        assert_eq!(DisjunctiveSet::from_words(&v, &[EOS]), Err(Error::UnexpectedEos));
        assert_eq!(
            DisjunctiveSet::from_ids(&v, "x", [v.eos_id()]),
            Err(Error::UnexpectedEos)
        );
    }

    #[test]
    fn json_files() {
        let v = Vocabulary::from_json(r#"["red","dog","dogs"]"#).unwrap();
        assert_eq!(v.to_json(), r#"["red","dog","dogs"]"#);
        let g = groups_from_json(&v, r#"[["dog","dogs"],["red"]]"#).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].len(), 2);
    }

    proptest! {
        #[test]
        fn id_string_round_trip(words in proptest::collection::btree_set("[a-z]{1,6}", 1..30)) {
            let words: Vec<String> = words.into_iter().collect();
            let v = Vocabulary::new(&words).unwrap();
            for w in &words {
                let id = v.id_of(w).unwrap();
                prop_assert_eq!(v.string_of(id), Some(w.as_str()));
            }
            prop_assert_eq!(v.size(), words.len() + 1);
        }
    }
}
