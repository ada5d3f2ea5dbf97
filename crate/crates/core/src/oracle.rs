//! Exhaustive reference implementations and synthetic scorers, used to check
//! the decoders and automaton builders on small instances.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::automaton::{Fsa, StateId};
use crate::decode::{rank, DecodeMode, Hypothesis, Scorer};
use crate::error::{Error, Result};
use crate::lexicon::TokenId;
use crate::model::ContextVector;

/// Largest search space the oracles will enumerate.
pub const MAX_ENUMERATION: u128 = 10_000_000;

fn check_space(base: usize, exponent: usize) -> Result<()> {
    let mut total: u128 = 1;
    for _ in 0..exponent {
        total = total.saturating_mul(base as u128);
        if total > MAX_ENUMERATION {
            return Err(Error::SearchSpaceTooLarge(total));
        }
    }
    Ok(())
}

/// All sequences over `0..alphabet` of length at most `max_len`, shortest
/// first, lexicographic within a length.
pub fn all_sequences(alphabet: usize, max_len: usize) -> Result<Vec<Vec<TokenId>>> {
    check_space(alphabet.max(1), max_len)?;
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * alphabet);
        for seq in &frontier {
            for w in 0..alphabet {
                let mut s = seq.clone();
                s.push(w);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(out)
}

/// Every accepted sequence of at most `max_len` tokens.
pub fn enumerate_language(fsa: &Fsa, max_len: usize) -> Result<BTreeSet<Vec<TokenId>>> {
    let mut out = BTreeSet::new();
    for seq in all_sequences(fsa.alphabet_size(), max_len)? {
        if fsa.accepts(&seq)? {
            out.insert(seq);
        }
    }
    Ok(out)
}

/// Exact argmax of the scorer over every sequence the decoders could return
/// (optionally restricted to those `fsa` accepts), ties broken towards the
/// lexicographically smaller sequence.
pub fn brute_force_best<S: Scorer>(
    scorer: &S,
    ctx: &ContextVector,
    max_len: usize,
    mode: DecodeMode,
    fsa: Option<&Fsa>,
) -> Result<Hypothesis> {
    check_space(scorer.vocab_size(), max_len)?;
    let content = scorer.vocab_size() - 1;
    if let Some(f) = fsa {
        if f.alphabet_size() != content {
            return Err(Error::AlphabetMismatch(content, f.alphabet_size()));
        }
    }
    let mut search = Exhaustive {
        scorer,
        fsa,
        max_len,
        mode,
        best: None,
        prefix: Vec::new(),
    };
    let start = scorer.start(ctx)?;
    search.visit(&start, fsa.map(Fsa::initial), 0.0);
    search.best.ok_or(Error::EmptyLanguage)
}

struct Exhaustive<'a, S: Scorer> {
    scorer: &'a S,
    fsa: Option<&'a Fsa>,
    max_len: usize,
    mode: DecodeMode,
    best: Option<Hypothesis>,
    prefix: Vec<TokenId>,
}

impl<S: Scorer> Exhaustive<'_, S> {
    fn offer(&mut self, tokens: Vec<TokenId>, logprob: f64, fsa_state: Option<StateId>, finished: bool) {
        let better = match &self.best {
            None => true,
            Some(b) => rank(logprob, &tokens, b.logprob, &b.tokens).is_lt(),
        };
        if better {
            self.best = Some(Hypothesis {
                tokens,
                logprob,
                fsa_state,
                finished,
            });
        }
    }

    fn visit(&mut self, state: &S::State, fsa_state: Option<StateId>, logprob: f64) {
        let accepted = match (self.fsa, fsa_state) {
            (Some(f), Some(s)) => f.is_accepting(s),
            _ => true,
        };
        let len = self.prefix.len();
        let lp = self.scorer.log_probs(state);
        match self.mode {
            DecodeMode::EosTerminated => {
                if accepted {
                    let eos = self.scorer.eos_id();
                    let mut tokens = self.prefix.clone();
                    tokens.push(eos);
                    self.offer(tokens, logprob + lp[eos], fsa_state, true);
                }
            }
            DecodeMode::FixedLength => {
                if len == self.max_len {
                    if accepted {
                        self.offer(self.prefix.clone(), logprob, fsa_state, false);
                    }
                    return;
                }
            }
        }
        if len == self.max_len {
            return;
        }
        let content = self.scorer.vocab_size() - 1;
        for (w, &step_lp) in lp.iter().enumerate().take(content) {
            let next_fsa = match (self.fsa, fsa_state) {
                (Some(f), Some(s)) => Some(f.step(s, w).expect("valid transition")),
                _ => None,
            };
            let next = self.scorer.advance(state, w);
            self.prefix.push(w);
            self.visit(&next, next_fsa, logprob + step_lp);
            self.prefix.pop();
        }
    }
}

/// Up to `limit` accepted sequences of at most `max_len` tokens, shortest
/// first and lexicographic within a length.
pub fn shortest_accepted(fsa: &Fsa, limit: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let to_accept = fsa.distances_to_accept();
    let mut out = Vec::new();
    let Some(first) = to_accept[fsa.initial()] else {
        return out;
    };
    let mut prefix = Vec::new();
    for len in first..=max_len {
        collect_exact(fsa, &to_accept, fsa.initial(), len, &mut prefix, &mut out, limit);
        if out.len() >= limit {
            break;
        }
    }
    out
}

fn collect_exact(
    fsa: &Fsa,
    to_accept: &[Option<usize>],
    state: StateId,
    remaining: usize,
    prefix: &mut Vec<TokenId>,
    out: &mut Vec<Vec<TokenId>>,
    limit: usize,
) {
    if out.len() >= limit {
        return;
    }
    if remaining == 0 {
        if fsa.is_accepting(state) {
            out.push(prefix.clone());
        }
        return;
    }
    for w in 0..fsa.alphabet_size() {
        let next = fsa.step(state, w).expect("valid transition");
        if to_accept[next].is_some_and(|d| d < remaining) {
            prefix.push(w);
            collect_exact(fsa, to_accept, next, remaining - 1, prefix, out, limit);
            prefix.pop();
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

fn mix(mut h: u64, x: u64) -> u64 {
    h ^= x
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(h << 6)
        .wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Scorer with pseudo-random conditionals: each (seed, context, prefix)
/// deterministically maps to its own distribution.
#[derive(Debug, Clone)]
pub struct RandomScorer {
    vocab_size: usize,
    seed: u64,
    /// Logits are drawn uniformly from `[-spread, spread]`.
    pub spread: f64,
}

impl RandomScorer {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            seed,
            spread: 3.0,
        }
    }
}

impl Scorer for RandomScorer {
    /// Running hash of the context and prefix.
    type State = u64;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start(&self, ctx: &ContextVector) -> Result<u64> {
        Ok(ctx.0.iter().fold(mix(self.seed, 0x5eed), |h, x| mix(h, x.to_bits())))
    }

    fn log_probs(&self, state: &u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(*state);
        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|_| rng.gen_range(-self.spread..=self.spread))
            .collect();
        log_softmax(&logits)
    }

    fn advance(&self, state: &u64, token: TokenId) -> u64 {
        mix(*state, token as u64 + 1)
    }
}

/// Every conditional is uniform.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl Scorer for UniformScorer {
    type State = ();

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start(&self, _: &ContextVector) -> Result<()> {
        Ok(())
    }

    fn log_probs(&self, _: &()) -> Vec<f64> {
        vec![-(self.vocab_size as f64).ln(); self.vocab_size]
    }

    fn advance(&self, _: &(), _: TokenId) {}
}

/// Puts almost all mass on one target sequence while the prefix follows it;
/// uniform elsewhere.
#[derive(Debug, Clone)]
pub struct PeakedScorer {
    vocab_size: usize,
    target: Vec<TokenId>,
}

impl PeakedScorer {
    pub fn new(vocab_size: usize, target: Vec<TokenId>) -> Self {
        Self { vocab_size, target }
    }
}

impl Scorer for PeakedScorer {
    /// Position in the target, or `None` once the prefix diverged.
    type State = Option<usize>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start(&self, _: &ContextVector) -> Result<Option<usize>> {
        Ok(Some(0))
    }

    fn log_probs(&self, state: &Option<usize>) -> Vec<f64> {
        let mut logits = vec![0.0; self.vocab_size];
        if let Some(&want) = state.and_then(|i| self.target.get(i)) {
            logits.iter_mut().for_each(|x| *x = -30.0);
            logits[want] = 0.0;
        }
        log_softmax(&logits)
    }

    fn advance(&self, state: &Option<usize>, token: TokenId) -> Option<usize> {
        state.filter(|&i| self.target.get(i) == Some(&token)).map(|i| i + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{beam_search, DecodeConfig};
    use crate::lexicon::{DisjunctiveSet, Vocabulary};

    #[test]
    fn shortest_samples_come_in_length_then_lexicographic_order() {
        let v = Vocabulary::new(&["a", "b", "c"]).unwrap();
        let c = DisjunctiveSet::from_words(&v, &["c"]).unwrap();
        let f = Fsa::mentions(&v, &c).unwrap();
        let got = shortest_accepted(&f, 5, 4);
        assert_eq!(got, vec![vec![2], vec![0, 2], vec![1, 2], vec![2, 0], vec![2, 1]]);
        let lang = enumerate_language(&f, 3).unwrap();
        let all = shortest_accepted(&f, 1000, 3);
        assert_eq!(all.len(), lang.len());
        assert!(all.iter().all(|s| lang.contains(s)));
    }

    #[test]
    fn counts_universal_language() {
        let lang = enumerate_language(&Fsa::universal(2), 2).unwrap();
        assert_eq!(lang.len(), 7);
    }

    #[test]
    fn negation_language_over_two_words() {
        let v = Vocabulary::new(&["the", "score"]).unwrap();
        let f = Fsa::negation(&v, &[0, 1]).unwrap();
        let lang = enumerate_language(&f, 2).unwrap();
        let all: BTreeSet<_> = all_sequences(2, 2).unwrap().into_iter().collect();
        let expected: BTreeSet<_> = all.into_iter().filter(|s| s != &vec![0, 1]).collect();
        assert_eq!(lang, expected);
        assert_eq!(lang.len(), 6);
    }

    #[test]
    fn guard_trips_loudly() {
        assert!(matches!(
            enumerate_language(&Fsa::universal(10), 8),
            Err(Error::SearchSpaceTooLarge(_))
        ));
    }

    #[test]
    fn peaked_scorer_oracle_agrees_with_greedy() {
        let s = PeakedScorer::new(4, vec![2, 0, 3]);
        let cfg = DecodeConfig::new(1, 4, DecodeMode::EosTerminated);
        let greedy = beam_search(&s, &ContextVector(vec![]), &cfg).unwrap();
        let best = brute_force_best(&s, &ContextVector(vec![]), 4, DecodeMode::EosTerminated, None).unwrap();
        assert_eq!(greedy.tokens, best.tokens);
        assert_eq!(best.tokens, vec![2, 0, 3]);
    }

    #[test]
    fn contradiction_has_no_best() {
        let v = Vocabulary::new(&["a", "b"]).unwrap();
        let a = DisjunctiveSet::from_words(&v, &["a"]).unwrap();
        let never = Fsa::mentions(&v, &a)
            .unwrap()
            .intersect(&Fsa::negation(&v, &[0]).unwrap())
            .unwrap();
        let s = RandomScorer::new(3, 1);
        assert_eq!(
            brute_force_best(&s, &ContextVector(vec![]), 3, DecodeMode::EosTerminated, Some(&never)),
            Err(Error::EmptyLanguage)
        );
    }

    #[test]
    fn uniform_ties_resolve_lexicographically() {
        // |Σ| = 3 content words; all accepted sequences mentioning `a` of
        // equal length tie, and the shortest ones win under a uniform scorer.
        let v = Vocabulary::new(&["x", "a", "y"]).unwrap();
        let a = DisjunctiveSet::from_words(&v, &["a"]).unwrap();
        let f = Fsa::mentions(&v, &a).unwrap();
        let s = UniformScorer { vocab_size: 4 };
        let best = brute_force_best(&s, &ContextVector(vec![]), 3, DecodeMode::EosTerminated, Some(&f)).unwrap();
        assert_eq!(best.tokens, vec![1, 3]);
        let fixed = brute_force_best(&s, &ContextVector(vec![]), 3, DecodeMode::FixedLength, Some(&f)).unwrap();
        // Smallest length-3 sequence containing id 1.
        assert_eq!(fixed.tokens, vec![0, 0, 1]);
    }

    #[test]
    fn universal_fsa_changes_nothing() {
        for seed in 0..10 {
            let s = RandomScorer::new(4, seed);
            let ctx = ContextVector(vec![seed as f64]);
            for mode in [DecodeMode::EosTerminated, DecodeMode::FixedLength] {
                let plain = brute_force_best(&s, &ctx, 4, mode, None).unwrap();
                let with = brute_force_best(&s, &ctx, 4, mode, Some(&Fsa::universal(3))).unwrap();
                assert_eq!(plain.tokens, with.tokens);
                assert_eq!(plain.logprob, with.logprob);
            }
        }
    }
}
