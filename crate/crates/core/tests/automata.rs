use std::collections::BTreeSet;

use proptest::prelude::*;
use ps3_core::automaton::{Fsa, GapSpec, PatternItem};
use ps3_core::oracle::{all_sequences, enumerate_language};
use ps3_core::{DisjunctiveSet, TokenId, Vocabulary};

fn vocab(n: usize) -> Vocabulary {
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    Vocabulary::new(&words).unwrap()
}

fn set(v: &Vocabulary, ids: &[TokenId]) -> DisjunctiveSet {
    DisjunctiveSet::from_ids(v, "s", ids.iter().copied()).unwrap()
}

/// Direct matcher for patterns: backtracking over items.
fn pattern_matches(items: &[PatternItem], seq: &[TokenId]) -> bool {
    match items.split_first() {
        None => seq.is_empty(),
        Some((PatternItem::Word(ds), rest)) => {
            !seq.is_empty() && ds.contains(seq[0]) && pattern_matches(rest, &seq[1..])
        }
        Some((PatternItem::Gap(g), rest)) => {
            let max = g.max.unwrap_or(seq.len()).min(seq.len());
            (g.min..=max).any(|k| pattern_matches(rest, &seq[k..]))
        }
    }
}

fn contains_run(seq: &[TokenId], phrase: &[TokenId]) -> bool {
    seq.windows(phrase.len()).any(|w| w == phrase)
}

fn sets_hit(seq: &[TokenId], sets: &[DisjunctiveSet]) -> usize {
    sets.iter().filter(|s| seq.iter().any(|&t| s.contains(t))).count()
}

#[test]
fn gap_pattern_agrees_with_enumeration() {
    let v = vocab(4);
    let items = vec![
        PatternItem::Word(set(&v, &[0])),
        PatternItem::Gap(GapSpec::AT_LEAST_ONE),
        PatternItem::Word(set(&v, &[2])),
    ];
    let f = Fsa::pattern(&v, &items).unwrap();
    for seq in all_sequences(4, 3).unwrap() {
        assert_eq!(f.accepts(&seq).unwrap(), pattern_matches(&items, &seq), "{seq:?}");
    }
    // (a, x, c) for every x; never (a, c).
    for x in 0..4 {
        assert!(f.accepts(&[0, x, 2]).unwrap());
    }
    assert!(!f.accepts(&[0, 2]).unwrap());
    assert!(enumerate_language(&f, 2).unwrap().is_empty());
    assert!(!enumerate_language(&f, 3).unwrap().is_empty());
    // Live states of the drawn automaton, plus one rejecting sink.
    let live = (0..f.num_states())
        .filter(|&s| {
            let sub = Fsa::from_parts(
                f.alphabet_size(),
                s,
                (0..f.num_states()).map(|q| f.is_accepting(q)).collect(),
                (0..f.num_states()).map(|q| f.labeled_edges(q).clone()).collect(),
                (0..f.num_states()).map(|q| f.default_target(q)).collect(),
            )
            .unwrap();
            sub.language_nonempty(f.num_states())
        })
        .count();
    assert_eq!(live, 4);
}

#[test]
fn negation_agrees_with_substring_predicate() {
    let v = vocab(3);
    let phrase = [0, 1];
    let f = Fsa::negation(&v, &phrase).unwrap();
    for seq in all_sequences(3, 4).unwrap() {
        assert_eq!(f.accepts(&seq).unwrap(), !contains_run(&seq, &phrase));
    }
}

#[test]
fn two_of_three_agrees_with_set_predicate() {
    // D1 = {bike, bikes}, D2 = {dog}, D3 = {red} over a 5-word alphabet.
    let v = vocab(5);
    let sets = vec![set(&v, &[0, 1]), set(&v, &[2]), set(&v, &[3])];
    let f = Fsa::at_least_m_of_n(&v, &sets, 2).unwrap();
    for seq in all_sequences(5, 5).unwrap() {
        assert_eq!(f.accepts(&seq).unwrap(), sets_hit(&seq, &sets) >= 2);
    }
}

#[test]
fn intersection_with_mentions_keeps_gap_language() {
    let v = vocab(4);
    let items = vec![
        PatternItem::Word(set(&v, &[0])),
        PatternItem::Gap(GapSpec::AT_LEAST_ONE),
        PatternItem::Word(set(&v, &[2])),
    ];
    let pat = Fsa::pattern(&v, &items).unwrap();
    let mentions_c = Fsa::at_least_m_of_n(&v, &[set(&v, &[2])], 1).unwrap();
    let both = pat.intersect(&mentions_c).unwrap();
    assert_eq!(
        enumerate_language(&both, 5).unwrap(),
        enumerate_language(&pat, 5).unwrap()
    );
}

#[test]
fn builders_agree_with_predicates_up_to_length_six() {
    let v = vocab(4);
    let seqs = all_sequences(4, 6).unwrap();
    assert_eq!(seqs.len(), 5461);

    let items = vec![
        PatternItem::Word(set(&v, &[0, 3])),
        PatternItem::Gap(GapSpec { min: 0, max: Some(2) }),
        PatternItem::Word(set(&v, &[1])),
        PatternItem::Gap(GapSpec::ANY),
    ];
    let pat = Fsa::pattern(&v, &items).unwrap();
    let phrase = [2, 2, 1];
    let neg = Fsa::negation(&v, &phrase).unwrap();
    let sets = vec![set(&v, &[0]), set(&v, &[1, 2]), set(&v, &[2])];
    let m_of_n = Fsa::at_least_m_of_n(&v, &sets, 2).unwrap();
    for seq in &seqs {
        assert_eq!(pat.accepts(seq).unwrap(), pattern_matches(&items, seq));
        assert_eq!(neg.accepts(seq).unwrap(), !contains_run(seq, &phrase));
        assert_eq!(m_of_n.accepts(seq).unwrap(), sets_hit(seq, &sets) >= 2);
    }
}

fn arb_fsa(alphabet: usize) -> impl Strategy<Value = Fsa> {
    (1usize..6).prop_flat_map(move |n| {
        (
            0..n,
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(proptest::collection::btree_map(0..alphabet, 0..n, 0..alphabet), n),
            proptest::collection::vec(0..n, n),
        )
            .prop_map(move |(init, acc, edges, defaults)| {
                Fsa::from_parts(alphabet, init, acc, edges, defaults).unwrap()
            })
    })
}

fn arb_items(alphabet: usize) -> impl Strategy<Value = Vec<(bool, BTreeSet<usize>, usize, Option<usize>)>> {
    proptest::collection::vec(
        (
            any::<bool>(),
            proptest::collection::btree_set(0..alphabet, 1..3),
            0usize..2,
            proptest::option::of(1usize..3),
        ),
        1..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn step_is_total(f in arb_fsa(4)) {
        for s in 0..f.num_states() {
            for t in 0..4 {
                let to = f.step(s, t).unwrap();
                prop_assert!(to < f.num_states());
            }
        }
    }

    #[test]
    fn intersection_is_conjunction(a in arb_fsa(3), b in arb_fsa(3)) {
        let both = a.intersect(&b).unwrap();
        for seq in all_sequences(3, 6).unwrap() {
            prop_assert_eq!(
                both.accepts(&seq).unwrap(),
                a.accepts(&seq).unwrap() && b.accepts(&seq).unwrap()
            );
        }
    }

    #[test]
    fn random_patterns_match_backtracking(raw in arb_items(3)) {
        let v = vocab(3);
        let items: Vec<PatternItem> = raw
            .into_iter()
            .map(|(is_word, ids, min, max)| {
                if is_word {
                    PatternItem::Word(DisjunctiveSet::from_ids(&v, "w", ids).unwrap())
                } else {
                    PatternItem::Gap(GapSpec { min, max: max.map(|m| m.max(min)) })
                }
            })
            .collect();
        let f = Fsa::pattern(&v, &items).unwrap();
        for seq in all_sequences(3, 5).unwrap() {
            prop_assert_eq!(f.accepts(&seq).unwrap(), pattern_matches(&items, &seq));
        }
    }

    #[test]
    fn random_negations_match_substring(phrase in proptest::collection::vec(0usize..3, 1..4)) {
        let v = vocab(3);
        let f = Fsa::negation(&v, &phrase).unwrap();
        for seq in all_sequences(3, 6).unwrap() {
            prop_assert_eq!(f.accepts(&seq).unwrap(), !contains_run(&seq, &phrase));
        }
    }

    #[test]
    fn satisfied_subset_only_grows(
        raw_sets in proptest::collection::vec(proptest::collection::btree_set(0usize..4, 1..3), 1..4),
        seq in proptest::collection::vec(0usize..4, 0..8),
    ) {
        let v = vocab(4);
        let sets: Vec<_> = raw_sets.into_iter().map(|s| DisjunctiveSet::from_ids(&v, "s", s).unwrap()).collect();
        let f = Fsa::at_least_m_of_n(&v, &sets, 1).unwrap();
        prop_assert_eq!(f.num_states(), 1 << sets.len());
        let mut state = f.initial();
        for &t in &seq {
            let next = f.step(state, t).unwrap();
            // States are bitmasks of satisfied sets.
            prop_assert_eq!(next & state, state);
            state = next;
        }
    }

    #[test]
    fn language_nonempty_matches_enumeration(f in arb_fsa(2), max_len in 0usize..6) {
        let lang = enumerate_language(&f, max_len).unwrap();
        prop_assert_eq!(f.language_nonempty(max_len), !lang.is_empty());
    }
}
