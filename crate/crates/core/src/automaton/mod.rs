//! Deterministic automata over the content vocabulary.
//!
//! Every state has a set of labeled edges plus a default target that covers
//! all tokens without a labeled edge, so the transition function is total
//! while storage stays proportional to states plus labeled edges. The
//! end-of-sequence token is never part of the alphabet; acceptance is checked
//! by the decoder when it emits eos.

mod build;
mod json;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

pub use build::{GapSpec, PatternItem};
pub use json::{ConstraintSpec, PatternItemSpec};

use crate::error::{Error, Result};
use crate::lexicon::TokenId;

pub type StateId = usize;

/// Upper bound on the number of states any construction may produce.
pub const MAX_STATES: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fsa {
    alphabet: usize,
    initial: StateId,
    accepting: Vec<bool>,
    edges: Vec<BTreeMap<TokenId, StateId>>,
    defaults: Vec<StateId>,
}

impl Fsa {
    /// Assembles an automaton from raw parts, validating every index.
    ///
    /// `alphabet` is the number of content tokens; token ids must be below it.
    pub fn from_parts(
        alphabet: usize,
        initial: StateId,
        accepting: Vec<bool>,
        edges: Vec<BTreeMap<TokenId, StateId>>,
        defaults: Vec<StateId>,
    ) -> Result<Self> {
        let n = accepting.len();
        if n == 0 {
            return Err(Error::MalformedFsa("no states".into()));
        }
        if n > MAX_STATES {
            return Err(Error::TooManyStates(MAX_STATES));
        }
        if edges.len() != n || defaults.len() != n {
            return Err(Error::MalformedFsa(format!(
                "{} states but {} edge maps and {} defaults",
                n,
                edges.len(),
                defaults.len()
            )));
        }
        if initial >= n {
            return Err(Error::InvalidState(initial));
        }
        for (&d, map) in defaults.iter().zip(&edges) {
            if d >= n {
                return Err(Error::InvalidState(d));
            }
            for (&tok, &to) in map {
                if tok == alphabet {
                    return Err(Error::UnexpectedEos);
                }
                if tok > alphabet {
                    return Err(Error::InvalidToken(tok));
                }
                if to >= n {
                    return Err(Error::InvalidState(to));
                }
            }
        }
        Ok(Self {
            alphabet,
            initial,
            accepting,
            edges,
            defaults,
        })
    }

    /// One accepting state looping on every token.
    pub fn universal(alphabet: usize) -> Self {
        Self {
            alphabet,
            initial: 0,
            accepting: vec![true],
            edges: vec![BTreeMap::new()],
            defaults: vec![0],
        }
    }

    /// A universal automaton with `states` accepting states arranged in a
    /// cycle: even token ids advance to the next state, odd ones stay put.
    /// Every state is reachable at every length >= states-1, which makes it
    /// useful for scaling the state count without changing the language.
    pub fn cyclic_universal(alphabet: usize, states: usize) -> Result<Self> {
        if states == 0 {
            return Err(Error::MalformedFsa("no states".into()));
        }
        let edges = (0..states)
            .map(|s| {
                (0..alphabet)
                    .step_by(2)
                    .map(|t| (t, (s + 1) % states))
                    .filter(|&(_, to)| to != s)
                    .collect()
            })
            .collect();
        Self::from_parts(alphabet, 0, vec![true; states], edges, (0..states).collect())
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn num_states(&self) -> usize {
        self.accepting.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn is_accepting(&self, state: StateId) -> bool {
        self.accepting.get(state).copied().unwrap_or(false)
    }

    pub fn accepting_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.accepting.iter().enumerate().filter_map(|(s, &a)| a.then_some(s))
    }

    pub fn labeled_edges(&self, state: StateId) -> &BTreeMap<TokenId, StateId> {
        &self.edges[state]
    }

    pub fn default_target(&self, state: StateId) -> StateId {
        self.defaults[state]
    }

    pub fn num_labeled_edges(&self) -> usize {
        self.edges.iter().map(BTreeMap::len).sum()
    }

    pub fn step(&self, state: StateId, token: TokenId) -> Result<StateId> {
        if state >= self.num_states() {
            return Err(Error::InvalidState(state));
        }
        if token == self.alphabet {
            return Err(Error::UnexpectedEos);
        }
        if token > self.alphabet {
            return Err(Error::InvalidToken(token));
        }
        Ok(self.step_unchecked(state, token))
    }

    #[inline]
    pub(crate) fn step_unchecked(&self, state: StateId, token: TokenId) -> StateId {
        self.edges[state].get(&token).copied().unwrap_or(self.defaults[state])
    }

    /// Dense `num_states x alphabet` transition table, row-major.
    pub fn transition_table(&self) -> Vec<StateId> {
        let mut table = Vec::with_capacity(self.num_states() * self.alphabet);
        for s in 0..self.num_states() {
            let start = table.len();
            table.resize(start + self.alphabet, self.defaults[s]);
            for (&tok, &to) in &self.edges[s] {
                table[start + tok] = to;
            }
        }
        table
    }

    pub fn run(&self, seq: &[TokenId]) -> Result<StateId> {
        seq.iter().try_fold(self.initial, |s, &t| self.step(s, t))
    }

    pub fn accepts(&self, seq: &[TokenId]) -> Result<bool> {
        Ok(self.accepting[self.run(seq)?])
    }

    /// Shortest-path distance (in tokens) from the initial state to each state.
    pub fn distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_states()];
        dist[self.initial] = Some(0);
        let mut queue = VecDeque::from([self.initial]);
        while let Some(s) = queue.pop_front() {
            let d = dist[s].unwrap() + 1;
            let targets = self.edges[s]
                .values()
                .copied()
                .chain((self.edges[s].len() < self.alphabet).then_some(self.defaults[s]));
            for to in targets {
                if dist[to].is_none() {
                    dist[to] = Some(d);
                    queue.push_back(to);
                }
            }
        }
        dist
    }

    /// Length of the shortest path from each state to an accepting state.
    pub fn distances_to_accept(&self) -> Vec<Option<usize>> {
        let n = self.num_states();
        let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
        for (s, row) in self.transition_table().chunks(self.alphabet.max(1)).enumerate().take(n) {
            for &to in row {
                preds[to].push(s);
            }
        }
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for s in self.accepting_states() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
        while let Some(s) = queue.pop_front() {
            let d = dist[s].unwrap() + 1;
            for &p in &preds[s] {
                if dist[p].is_none() {
                    dist[p] = Some(d);
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    /// Length of the shortest accepted sequence, if any.
    pub fn shortest_accepted_len(&self) -> Option<usize> {
        self.distances()
            .into_iter()
            .zip(&self.accepting)
            .filter_map(|(d, &acc)| if acc { d } else { None })
            .min()
    }

    /// True iff some sequence of at most `max_len` tokens is accepted.
    pub fn language_nonempty(&self, max_len: usize) -> bool {
        self.shortest_accepted_len().is_some_and(|d| d <= max_len)
    }

    /// Product automaton recognizing the intersection of both languages.
    /// Only pairs reachable from the initial pair are materialized.
    pub fn intersect(&self, other: &Fsa) -> Result<Fsa> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch(self.alphabet, other.alphabet));
        }
        determinize(
            self.alphabet,
            (self.initial, other.initial),
            |&(a, b)| self.accepting[a] && other.accepting[b],
            |&(a, b)| self.edges[a].keys().chain(other.edges[b].keys()).copied().collect(),
            |&(a, b), tok| match tok {
                Some(t) => (self.step_unchecked(a, t), other.step_unchecked(b, t)),
                None => (self.defaults[a], other.defaults[b]),
            },
        )
    }

    /// Intersects a non-empty list of automata left to right.
    pub fn intersect_all(parts: &[Fsa]) -> Result<Fsa> {
        let (first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::MalformedFsa("nothing to intersect".into()))?;
        rest.iter().try_fold(first.clone(), |acc, f| acc.intersect(f))
    }
}

/// Breadth-first subset/product construction shared by the builders.
///
/// `mentioned(k)` lists the tokens that may behave differently from the
/// default at abstract state `k`; `next(k, None)` gives the target for any
/// other token. Labeled edges are only stored where they differ from the
/// default target.
pub(crate) fn determinize<K, A, M, N>(alphabet: usize, start: K, accepting: A, mentioned: M, next: N) -> Result<Fsa>
where
    K: Clone + Eq + std::hash::Hash,
    A: Fn(&K) -> bool,
    M: Fn(&K) -> BTreeSet<TokenId>,
    N: Fn(&K, Option<TokenId>) -> K,
{
    let mut ids: HashMap<K, StateId> = HashMap::new();
    let mut keys: Vec<K> = Vec::new();
    ids.insert(start.clone(), 0);
    keys.push(start);

    let mut edges = Vec::new();
    let mut defaults = Vec::new();
    let mut accepting_flags = Vec::new();
    let mut i = 0;
    while i < keys.len() {
        let key = keys[i].clone();
        accepting_flags.push(accepting(&key));
        let mut intern = |k: K| -> Result<StateId> {
            if let Some(&id) = ids.get(&k) {
                return Ok(id);
            }
            if keys.len() >= MAX_STATES {
                return Err(Error::TooManyStates(MAX_STATES));
            }
            ids.insert(k.clone(), keys.len());
            keys.push(k);
            Ok(keys.len() - 1)
        };
        let default = intern(next(&key, None))?;
        let mut map = BTreeMap::new();
        for tok in mentioned(&key) {
            let to = intern(next(&key, Some(tok)))?;
            if to != default {
                map.insert(tok, to);
            }
        }
        defaults.push(default);
        edges.push(map);
        i += 1;
    }
    Fsa::from_parts(alphabet, 0, accepting_flags, edges, defaults)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{DisjunctiveSet, Vocabulary};

    #[test]
    fn step_validates_inputs() {
        let f = Fsa::universal(3);
        assert_eq!(f.step(0, 2), Ok(0));
        assert_eq!(f.step(0, 1).and_then(|s| f.step(s, 1)), Ok(0));
        assert_eq!(f.step(1, 0), Err(Error::InvalidState(1)));
        assert_eq!(f.step(0, 3), Err(Error::UnexpectedEos));
        assert_eq!(f.step(0, 4), Err(Error::InvalidToken(4)));
        assert!(f.accepts(&[]).unwrap());
        assert!(f.language_nonempty(0));
    }

    #[test]
    fn from_parts_rejects_bad_indices() {
        let one = || vec![BTreeMap::new()];
        assert_eq!(
            Fsa::from_parts(2, 1, vec![true], one(), vec![0]),
            Err(Error::InvalidState(1))
        );
        assert_eq!(
            Fsa::from_parts(2, 0, vec![true], one(), vec![5]),
            Err(Error::InvalidState(5))
        );
        assert_eq!(
            Fsa::from_parts(2, 0, vec![true], vec![BTreeMap::from([(2, 0)])], vec![0]),
            Err(Error::UnexpectedEos)
        );
        assert!(matches!(
            Fsa::from_parts(2, 0, vec![], vec![], vec![]),
            Err(Error::MalformedFsa(_))
        ));
    }

    #[test]
    fn intersection_identities() {
        let v = Vocabulary::new(&["a", "b", "c"]).unwrap();
        let a = DisjunctiveSet::from_words(&v, &["a"]).unwrap();
        let mentions_a = Fsa::mentions(&v, &a).unwrap();
        let universal = Fsa::universal(v.content_size());
        let same = mentions_a.intersect(&universal).unwrap();
        assert_eq!(same, mentions_a);

        let never_a = Fsa::negation(&v, &[0]).unwrap();
        let empty = mentions_a.intersect(&never_a).unwrap();
        assert!(!empty.language_nonempty(100));

        assert_eq!(
            mentions_a.intersect(&Fsa::universal(7)),
            Err(Error::AlphabetMismatch(3, 7))
        );
    }

    #[test]
    fn cyclic_universal_reaches_every_state() {
        let f = Fsa::cyclic_universal(4, 3).unwrap();
        assert_eq!(f.num_states(), 3);
        assert!(f.distances().iter().all(Option::is_some));
        assert_eq!(f.step(0, 0), Ok(1));
        assert_eq!(f.step(0, 1), Ok(0));
        assert_eq!(f.step(2, 2), Ok(0));
        assert_eq!(Fsa::cyclic_universal(4, 1).unwrap(), Fsa::universal(4));
    }

    #[test]
    fn transition_table_agrees_with_step() {
        let v = Vocabulary::new(&["the", "score", "x"]).unwrap();
        let f = Fsa::negation(&v, &[0, 1]).unwrap();
        let table = f.transition_table();
        for s in 0..f.num_states() {
            for t in 0..f.alphabet_size() {
                assert_eq!(table[s * f.alphabet_size() + t], f.step(s, t).unwrap());
            }
        }
    }
}
