//! Held-out evaluation: perplexity and mention F1 for concept words.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{DisjunctiveSet, TokenId};
use crate::model::{Example, ModelParams};

/// `exp(total NLL / total tokens)`, counting the eos of every sequence.
pub fn perplexity(model: &ModelParams, data: &[Example<'_>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let tokens: usize = data.iter().map(|(_, s)| s.len()).sum();
    let nll = model.mean_nll(data)? * data.len() as f64;
    Ok((nll / tokens as f64).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub name: String,
    pub words: DisjunctiveSet,
}

/// Concepts to score plus, per example id, the concepts truly present.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionEvalSpec {
    concepts: Vec<Concept>,
    truth: BTreeMap<String, BTreeSet<String>>,
}

impl MentionEvalSpec {
    pub fn new(concepts: Vec<Concept>, truth: BTreeMap<String, BTreeSet<String>>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for c in &concepts {
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate concept `{}`", c.name)));
            }
        }
        for (id, present) in &truth {
            if let Some(unknown) = present.iter().find(|p| !names.contains(p.as_str())) {
                return Err(Error::InvalidConfig(format!(
                    "example `{id}` lists unknown concept `{unknown}`"
                )));
            }
        }
        Ok(Self { concepts, truth })
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionReport {
    pub per_concept: BTreeMap<String, Prf>,
    pub macro_f1: f64,
}

/// Whether the decode contains any word form of the concept.
pub fn mentions(decode: &[TokenId], words: &DisjunctiveSet) -> bool {
    decode.iter().any(|&t| words.contains(t))
}

fn prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if tp == 0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Prf { p, r, f1 }
}

/// Precision, recall and F1 of concept mentions, macro-averaged over
/// concepts. Every ground-truth id must have exactly one decode.
pub fn mention_f1(decodes: &[(String, Vec<TokenId>)], spec: &MentionEvalSpec) -> Result<MentionReport> {
    let mut seen = BTreeSet::new();
    for (id, _) in decodes {
        if !spec.truth.contains_key(id) {
            return Err(Error::IdMismatch(format!("no ground truth for `{id}`")));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::IdMismatch(format!("`{id}` decoded twice")));
        }
    }
    if let Some(missing) = spec.truth.keys().find(|id| !seen.contains(id.as_str())) {
        return Err(Error::IdMismatch(format!("no decode for `{missing}`")));
    }

    let mut per_concept = BTreeMap::new();
    for concept in &spec.concepts {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (id, tokens) in decodes {
            let predicted = mentions(tokens, &concept.words);
            let actual = spec.truth[id].contains(&concept.name);
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        per_concept.insert(concept.name.clone(), prf(tp, fp, fn_));
    }
    let macro_f1 = if per_concept.is_empty() {
        0.0
    } else {
        per_concept.values().map(|s| s.f1).sum::<f64>() / per_concept.len() as f64
    };
    Ok(MentionReport { per_concept, macro_f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: Option<f64>,
    pub per_concept: BTreeMap<String, Prf>,
    pub macro_f1: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::Vocabulary;
    use crate::model::{ContextVector, ModelConfig};
    use proptest::prelude::*;

    fn setup() -> (Vocabulary, MentionEvalSpec) {
        let v = Vocabulary::new(&["a", "zebra", "zebras", "cake", "x"]).unwrap();
        let concepts = vec![
            Concept {
                name: "zebra".into(),
                words: DisjunctiveSet::from_words(&v, &["zebra", "zebras"]).unwrap(),
            },
            Concept {
                name: "cake".into(),
                words: DisjunctiveSet::from_words(&v, &["cake"]).unwrap(),
            },
        ];
        let truth = [
            ("e1", vec!["zebra"]),
            ("e2", vec!["zebra"]),
            ("e3", vec!["cake"]),
            ("e4", vec![]),
        ]
        .into_iter()
        .map(|(id, c)| (id.to_string(), c.into_iter().map(String::from).collect()))
        .collect();
        (v.clone(), MentionEvalSpec::new(concepts, truth).unwrap())
    }

    fn dec(v: &Vocabulary, id: &str, words: &[&str]) -> (String, Vec<TokenId>) {
        (id.to_string(), v.encode(words).unwrap())
    }

    #[test]
    fn perfect_predictions() {
        let (v, spec) = setup();
        let decodes = vec![
            dec(&v, "e1", &["a", "zebra"]),
            dec(&v, "e2", &["zebras"]),
            dec(&v, "e3", &["cake"]),
            dec(&v, "e4", &["x"]),
        ];
        let r = mention_f1(&decodes, &spec).unwrap();
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn never_mentioned_scores_zero() {
        let (v, spec) = setup();
        let decodes: Vec<_> = ["e1", "e2", "e3", "e4"]
            .iter()
            .map(|id| dec(&v, id, &["a", "x"]))
            .collect();
        let r = mention_f1(&decodes, &spec).unwrap();
        assert_eq!(r.macro_f1, 0.0);
        assert_eq!(
            r.per_concept["zebra"],
            Prf {
                p: 0.0,
                r: 0.0,
                f1: 0.0
            }
        );
    }

    #[test]
    fn hand_worked_confusion() {
        let (v, spec) = setup();
        // zebra: e1 hit, e2 missed, no false positives -> P=1, R=1/2, F1=2/3.
        // cake: e3 hit, e4 false positive -> P=1/2, R=1, F1=2/3.
        let decodes = vec![
            dec(&v, "e1", &["zebra"]),
            dec(&v, "e2", &["a"]),
            dec(&v, "e3", &["cake"]),
            dec(&v, "e4", &["cake"]),
        ];
        let r = mention_f1(&decodes, &spec).unwrap();
        let z = r.per_concept["zebra"];
        assert_eq!((z.p, z.r), (1.0, 0.5));
        assert!((z.f1 - 2.0 / 3.0).abs() < 1e-15);
        let c = r.per_concept["cake"];
        assert_eq!((c.p, c.r), (0.5, 1.0));
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn id_mismatch_is_an_error() {
        let (v, spec) = setup();
        let decodes = vec![dec(&v, "e1", &["a"]), dec(&v, "zz", &["a"])];
        assert!(matches!(mention_f1(&decodes, &spec), Err(Error::IdMismatch(_))));
        let decodes = vec![dec(&v, "e1", &["a"])];
        assert!(matches!(mention_f1(&decodes, &spec), Err(Error::IdMismatch(_))));
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let cfg = ModelConfig {
            embed_dim: 2,
            hidden_dim: 3,
            context_dim: 1,
            vocab_size: 9,
        };
        let m = ModelParams::zeros(cfg, false).unwrap();
        let c = ContextVector(vec![0.5]);
        let data = [(&c, &[1usize, 2, 8][..]), (&c, &[8usize][..])];
        let ppl = perplexity(&m, &data).unwrap();
        assert!((ppl - 9.0).abs() < 1e-9);
        let m = ModelParams::init(cfg, true, 3).unwrap();
        assert!(perplexity(&m, &data).unwrap() >= 1.0);
        assert_eq!(perplexity(&m, &[]), Err(Error::EmptyDataset));
    }

    proptest! {
        #[test]
        fn f1_bounded_and_order_invariant(
            raw in proptest::collection::vec(proptest::collection::vec(0usize..5, 0..6), 4)
        ) {
            let (_, spec) = setup();
            let ids = ["e1", "e2", "e3", "e4"];
            let decodes: Vec<_> = ids.iter().zip(&raw).map(|(id, t)| (id.to_string(), t.clone())).collect();
            let r = mention_f1(&decodes, &spec).unwrap();
            for s in r.per_concept.values() {
                prop_assert!((0.0..=1.0).contains(&s.f1));
            }
            let reordered: Vec<_> = decodes
                .iter()
                .map(|(id, t)| {
                    let mut t = t.clone();
                    t.reverse();
                    t.extend(t.clone());
                    (id.clone(), t)
                })
                .collect();
            prop_assert_eq!(mention_f1(&reordered, &spec).unwrap(), r);
        }
    }
}
