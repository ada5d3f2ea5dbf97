//! JSON interchange for automata and constraint specifications.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Fsa, GapSpec, PatternItem, StateId};
use crate::error::{Error, Result};
use crate::lexicon::{DisjunctiveSet, Vocabulary};

pub const FSA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct FsaRecord {
    format_version: u32,
    num_states: usize,
    initial: StateId,
    accepting: Vec<StateId>,
    edges: Vec<EdgeRecord>,
    defaults: Vec<DefaultRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    from: StateId,
    labels: Vec<String>,
    to: StateId,
}

#[derive(Debug, Serialize, Deserialize)]
struct DefaultRecord {
    from: StateId,
    to: StateId,
}

impl Fsa {
    /// Serializes with token strings from `vocab`. Edges sharing a source and
    /// target are grouped into one record.
    pub fn to_json_value(&self, vocab: &Vocabulary) -> Result<serde_json::Value> {
        if vocab.content_size() != self.alphabet {
            return Err(Error::AlphabetMismatch(vocab.content_size(), self.alphabet));
        }
        let mut edges = Vec::new();
        for (from, map) in self.edges.iter().enumerate() {
            let mut by_target: BTreeMap<StateId, Vec<String>> = BTreeMap::new();
            for (&tok, &to) in map {
                by_target
                    .entry(to)
                    .or_default()
                    .push(vocab.string_of(tok).expect("validated token").to_string());
            }
            edges.extend(
                by_target
                    .into_iter()
                    .map(|(to, labels)| EdgeRecord { from, labels, to }),
            );
        }
        let record = FsaRecord {
            format_version: FSA_FORMAT_VERSION,
            num_states: self.num_states(),
            initial: self.initial,
            accepting: self.accepting_states().collect(),
            edges,
            defaults: self
                .defaults
                .iter()
                .enumerate()
                .map(|(from, &to)| DefaultRecord { from, to })
                .collect(),
        };
        serde_json::to_value(record).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self, vocab: &Vocabulary) -> Result<String> {
        let value = self.to_json_value(vocab)?;
        serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json_value(value: serde_json::Value, vocab: &Vocabulary) -> Result<Fsa> {
        let record: FsaRecord = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
        if record.format_version != FSA_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported FSA format_version {}",
                record.format_version
            )));
        }
        let n = record.num_states;
        if n == 0 || n > super::MAX_STATES {
            return Err(Error::MalformedFsa(format!("num_states {n}")));
        }
        let mut accepting = vec![false; n];
        for s in record.accepting {
            *accepting.get_mut(s).ok_or(Error::InvalidState(s))? = true;
        }
        let mut defaults = vec![None; n];
        for d in record.defaults {
            let slot = defaults.get_mut(d.from).ok_or(Error::InvalidState(d.from))?;
            if slot.replace(d.to).is_some() {
                return Err(Error::MalformedFsa(format!("state {} has two defaults", d.from)));
            }
        }
        let defaults = defaults
            .into_iter()
            .enumerate()
            .map(|(s, d)| d.ok_or_else(|| Error::MalformedFsa(format!("state {s} has no default"))))
            .collect::<Result<Vec<_>>>()?;
        let mut edges = vec![BTreeMap::new(); n];
        for e in record.edges {
            let map = edges.get_mut(e.from).ok_or(Error::InvalidState(e.from))?;
            for label in &e.labels {
                let tok = vocab.content_id(label)?;
                if map.insert(tok, e.to).is_some() {
                    return Err(Error::MalformedFsa(format!(
                        "state {} has two edges labeled `{label}`",
                        e.from
                    )));
                }
            }
        }
        Fsa::from_parts(vocab.content_size(), record.initial, accepting, edges, defaults)
    }

    pub fn from_json(text: &str, vocab: &Vocabulary) -> Result<Fsa> {
        let value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_json_value(value, vocab)
    }
}

/// Declarative constraint, compiled to an automaton against a vocabulary.
///
/// ```json
/// {"type": "at_least_m_of_n", "m": 2, "groups": [["bike", "bikes"], ["dog"], ["red"]]}
/// {"type": "pattern", "items": [{"word": ["a"]}, {"gap": {"min": 1}}, {"word": ["c"]}]}
/// {"type": "negation", "phrase": ["the", "score"]}
/// {"type": "intersect", "of": [ ... ]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintSpec {
    AtLeastMOfN { m: usize, groups: Vec<Vec<String>> },
    Pattern { items: Vec<PatternItemSpec> },
    Negation { phrase: Vec<String> },
    Intersect { of: Vec<ConstraintSpec> },
    Universal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternItemSpec {
    Word(Vec<String>),
    Gap(GapSpec),
}

impl ConstraintSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn compile(&self, vocab: &Vocabulary) -> Result<Fsa> {
        match self {
            ConstraintSpec::AtLeastMOfN { m, groups } => {
                let sets = groups
                    .iter()
                    .map(|g| DisjunctiveSet::from_words(vocab, g))
                    .collect::<Result<Vec<_>>>()?;
                Fsa::at_least_m_of_n(vocab, &sets, *m)
            }
            ConstraintSpec::Pattern { items } => {
                let items = items
                    .iter()
                    .map(|item| match item {
                        PatternItemSpec::Word(forms) => DisjunctiveSet::from_words(vocab, forms).map(PatternItem::Word),
                        PatternItemSpec::Gap(g) => Ok(PatternItem::Gap(*g)),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Fsa::pattern(vocab, &items)
            }
            ConstraintSpec::Negation { phrase } => Fsa::negation(vocab, &vocab.encode(phrase)?),
            ConstraintSpec::Intersect { of } => {
                let parts = of.iter().map(|c| c.compile(vocab)).collect::<Result<Vec<_>>>()?;
                Fsa::intersect_all(&parts)
            }
            ConstraintSpec::Universal => Ok(Fsa::universal(vocab.content_size())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fsa_json_round_trip_is_bit_identical() {
        let v = Vocabulary::new(&["the", "score", "final"]).unwrap();
        let f = Fsa::negation(&v, &v.encode(&["the", "score"]).unwrap()).unwrap();
        let text = f.to_json(&v).unwrap();
        let back = Fsa::from_json(&text, &v).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_json(&v).unwrap(), text);
    }

    #[test]
    fn rejects_bad_records() {
        let v = Vocabulary::new(&["a"]).unwrap();
        let missing_default =
            r#"{"format_version":1,"num_states":1,"initial":0,"accepting":[0],"edges":[],"defaults":[]}"#;
        assert!(matches!(
            Fsa::from_json(missing_default, &v),
            Err(Error::MalformedFsa(_))
        ));
        let eos_label = r#"{"format_version":1,"num_states":1,"initial":0,"accepting":[0],"edges":[{"from":0,"labels":["</s>"],"to":0}],"defaults":[{"from":0,"to":0}]}"#;
        assert_eq!(Fsa::from_json(eos_label, &v), Err(Error::UnexpectedEos));
        let bad_version = r#"{"format_version":9,"num_states":1,"initial":0,"accepting":[0],"edges":[],"defaults":[{"from":0,"to":0}]}"#;
        assert!(matches!(Fsa::from_json(bad_version, &v), Err(Error::Format(_))));
        let bad_target = r#"{"format_version":1,"num_states":1,"initial":0,"accepting":[0],"edges":[],"defaults":[{"from":0,"to":3}]}"#;
        assert_eq!(Fsa::from_json(bad_target, &v), Err(Error::InvalidState(3)));
    }

    #[test]
    fn compiles_constraint_specs() {
        let v = Vocabulary::new(&["a", "bike", "bikes", "dog", "red", "c"]).unwrap();
        let spec = ConstraintSpec::from_json(
            r#"{"type":"at_least_m_of_n","m":2,"groups":[["bike","bikes"],["dog"],["red"]]}"#,
        )
        .unwrap();
        assert_eq!(spec.compile(&v).unwrap().num_states(), 8);

        let spec = ConstraintSpec::from_json(
            r#"{"type":"pattern","items":[{"word":["a"]},{"gap":{"min":1}},{"word":["c"]}]}"#,
        )
        .unwrap();
        let f = spec.compile(&v).unwrap();
        assert!(f.accepts(&v.encode(&["a", "dog", "c"]).unwrap()).unwrap());

        let spec = ConstraintSpec::from_json(
            r#"{"type":"intersect","of":[
                {"type":"at_least_m_of_n","m":1,"groups":[["a"]]},
                {"type":"negation","phrase":["a"]}]}"#,
        )
        .unwrap();
        assert!(!spec.compile(&v).unwrap().language_nonempty(10));

        let spec = ConstraintSpec::from_json(r#"{"type":"negation","phrase":["unicorn"]}"#).unwrap();
        assert_eq!(spec.compile(&v), Err(Error::UnknownWord("unicorn".into())));
    }
}
