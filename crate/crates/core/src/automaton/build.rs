//! Constructions for partial-sequence constraints.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{determinize, Fsa};
use crate::error::{Error, Result};
use crate::lexicon::{DisjunctiveSet, TokenId, Vocabulary};

/// Largest `n` accepted by [`Fsa::at_least_m_of_n`]; the automaton has `2^n` states.
pub const MAX_SETS: usize = 12;

/// Length bounds of a run of unknown tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSpec {
    #[serde(default)]
    pub min: usize,
    #[serde(default)]
    pub max: Option<usize>,
}

impl GapSpec {
    pub const AT_LEAST_ONE: GapSpec = GapSpec { min: 1, max: None };
    pub const ANY: GapSpec = GapSpec { min: 0, max: None };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternItem {
    /// Exactly one token drawn from the set.
    Word(DisjunctiveSet),
    /// Any tokens, with the number bounded by the spec.
    Gap(GapSpec),
}

#[derive(Debug, Clone)]
enum Label {
    Set(BTreeSet<TokenId>),
    Any,
}

impl Label {
    fn matches(&self, tok: Option<TokenId>) -> bool {
        match (self, tok) {
            (Label::Any, _) => true,
            (Label::Set(s), Some(t)) => s.contains(&t),
            (Label::Set(_), None) => false,
        }
    }
}

#[derive(Default)]
struct Nfa {
    arcs: Vec<Vec<(Label, usize)>>,
    eps: Vec<Vec<usize>>,
}

impl Nfa {
    fn add_state(&mut self) -> usize {
        self.arcs.push(Vec::new());
        self.eps.push(Vec::new());
        self.arcs.len() - 1
    }

    fn closure(&self, states: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = states.into_iter().collect();
        while let Some(s) = stack.pop() {
            if out.insert(s) {
                stack.extend(self.eps[s].iter().copied());
            }
        }
        out
    }
}

impl Fsa {
    /// Automaton for a concatenation of words and gaps, e.g. `a <gap> c`.
    pub fn pattern(vocab: &Vocabulary, items: &[PatternItem]) -> Result<Fsa> {
        if items.is_empty() {
            return Err(Error::EmptyPattern);
        }
        let mut nfa = Nfa::default();
        let start = nfa.add_state();
        let mut cur = start;
        for item in items {
            match item {
                PatternItem::Word(ds) => {
                    let next = nfa.add_state();
                    nfa.arcs[cur].push((Label::Set(ds.ids().collect()), next));
                    cur = next;
                }
                PatternItem::Gap(GapSpec { min, max: None }) => {
                    if *min == 0 {
                        let lp = nfa.add_state();
                        nfa.eps[cur].push(lp);
                        cur = lp;
                    }
                    for _ in 0..*min {
                        let next = nfa.add_state();
                        nfa.arcs[cur].push((Label::Any, next));
                        cur = next;
                    }
                    // The loop sits on the last mandatory position.
                    nfa.arcs[cur].push((Label::Any, cur));
                }
                PatternItem::Gap(GapSpec { min, max: Some(max) }) => {
                    if max < min {
                        return Err(Error::InvalidGap { min: *min, max: *max });
                    }
                    let end = nfa.add_state();
                    for i in 0..=*max {
                        if i >= *min {
                            nfa.eps[cur].push(end);
                        }
                        if i < *max {
                            let next = nfa.add_state();
                            nfa.arcs[cur].push((Label::Any, next));
                            cur = next;
                        }
                    }
                    cur = end;
                }
            }
        }
        let fin = cur;
        determinize(
            vocab.content_size(),
            nfa.closure([start]),
            |set| set.contains(&fin),
            |set| {
                let mut toks = BTreeSet::new();
                for &s in set {
                    for (label, _) in &nfa.arcs[s] {
                        if let Label::Set(ids) = label {
                            toks.extend(ids.iter().copied());
                        }
                    }
                }
                toks
            },
            |set, tok| {
                nfa.closure(
                    set.iter()
                        .flat_map(|&s| nfa.arcs[s].iter().filter(|(l, _)| l.matches(tok)).map(|&(_, to)| to)),
                )
            },
        )
    }

    /// Automaton accepting every sequence that does not contain `phrase` as a
    /// contiguous run. States `0..k` count the matched prefix length (all
    /// accepting); state `k` is the rejecting sink.
    pub fn negation(vocab: &Vocabulary, phrase: &[TokenId]) -> Result<Fsa> {
        let k = phrase.len();
        if k == 0 {
            return Err(Error::EmptyPhrase);
        }
        for &t in phrase {
            if t == vocab.eos_id() {
                return Err(Error::UnexpectedEos);
            }
            if t >= vocab.size() {
                return Err(Error::InvalidToken(t));
            }
        }
        let symbols: BTreeSet<TokenId> = phrase.iter().copied().collect();
        // Matcher table with failure transitions folded in; tokens outside the
        // phrase always restart at 0.
        let mut table: Vec<BTreeMap<TokenId, usize>> = vec![BTreeMap::new(); k];
        for &c in &symbols {
            table[0].insert(c, usize::from(phrase[0] == c));
        }
        let mut fallback = 0;
        for j in 1..k {
            for &c in &symbols {
                let to = if phrase[j] == c { j + 1 } else { table[fallback][&c] };
                table[j].insert(c, to);
            }
            fallback = table[fallback][&phrase[j]];
        }
        let mut edges: Vec<BTreeMap<TokenId, usize>> = table
            .into_iter()
            .map(|row| row.into_iter().filter(|&(_, to)| to != 0).collect())
            .collect();
        edges.push(BTreeMap::new());
        let mut defaults = vec![0; k];
        defaults.push(k);
        let mut accepting = vec![true; k];
        accepting.push(false);
        Fsa::from_parts(vocab.content_size(), 0, accepting, edges, defaults)
    }

    /// Automaton accepting sequences that mention a token from at least `m`
    /// of the given sets. State `s` is the bitmask of satisfied sets; a token
    /// belonging to several sets satisfies all of them at once.
    pub fn at_least_m_of_n(vocab: &Vocabulary, sets: &[DisjunctiveSet], m: usize) -> Result<Fsa> {
        let n = sets.len();
        if n == 0 || m == 0 || m > n {
            return Err(Error::InvalidThreshold { m, n });
        }
        if n > MAX_SETS {
            return Err(Error::TooManySets(n, MAX_SETS));
        }
        let mut membership: BTreeMap<TokenId, usize> = BTreeMap::new();
        for (i, ds) in sets.iter().enumerate() {
            for id in ds.ids() {
                if id >= vocab.content_size() {
                    return Err(if id == vocab.eos_id() {
                        Error::UnexpectedEos
                    } else {
                        Error::InvalidToken(id)
                    });
                }
                *membership.entry(id).or_default() |= 1 << i;
            }
        }
        let states = 1usize << n;
        let edges = (0..states)
            .map(|mask| {
                membership
                    .iter()
                    .filter(|&(_, &bits)| mask | bits != mask)
                    .map(|(&tok, &bits)| (tok, mask | bits))
                    .collect()
            })
            .collect();
        let accepting = (0..states).map(|mask| mask.count_ones() as usize >= m).collect();
        Fsa::from_parts(vocab.content_size(), 0, accepting, edges, (0..states).collect())
    }

    /// Sequences mentioning at least one token of `set`.
    pub fn mentions(vocab: &Vocabulary, set: &DisjunctiveSet) -> Result<Fsa> {
        Fsa::at_least_m_of_n(vocab, std::slice::from_ref(set), 1)
    }
}
