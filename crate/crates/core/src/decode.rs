//! Beam search and constrained beam search over any autoregressive scorer.
//!
//! Constrained search keeps one beam per automaton state. At every step each
//! hypothesis is extended by every token, the extension is routed to the
//! state the automaton moves to, and each state keeps its own top-`b`
//! candidates. The returned sequence is therefore always accepted.
//!
//! Candidates are ranked by log-probability, ties broken by the
//! lexicographically smaller token sequence, so results are deterministic.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automaton::{Fsa, StateId};
use crate::error::{Error, Result};
use crate::lexicon::TokenId;
use crate::model::ContextVector;

/// An autoregressive model exposed step by step. The last token id
/// (`vocab_size - 1`) is end-of-sequence.
pub trait Scorer: Sync {
    type State: Clone + Send + Sync;

    fn vocab_size(&self) -> usize;

    /// State for the empty prefix.
    fn start(&self, ctx: &ContextVector) -> Result<Self::State>;

    /// Log-probabilities of every next token, `vocab_size` entries.
    fn log_probs(&self, state: &Self::State) -> Vec<f64>;

    /// State after appending a content token.
    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State;

    fn eos_id(&self) -> TokenId {
        self.vocab_size() - 1
    }
}

impl<S: Scorer> Scorer for &S {
    type State = S::State;

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn start(&self, ctx: &ContextVector) -> Result<Self::State> {
        (**self).start(ctx)
    }

    fn log_probs(&self, state: &Self::State) -> Vec<f64> {
        (**self).log_probs(state)
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State {
        (**self).advance(state, token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Sequences end when eos is emitted; at most `max_len` content tokens.
    EosTerminated,
    /// Exactly `max_len` content tokens and no eos.
    FixedLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub mode: DecodeMode,
    /// When set to `k`, each source beam forwards only its `beam_size * k`
    /// best extensions before routing. Faster on large vocabularies, but it
    /// can change results, so it is off by default.
    #[serde(default)]
    pub prune_factor: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_len: 16,
            mode: DecodeMode::EosTerminated,
            prune_factor: None,
        }
    }
}

impl DecodeConfig {
    pub fn new(beam_size: usize, max_len: usize, mode: DecodeMode) -> Self {
        Self {
            beam_size,
            max_len,
            mode,
            prune_factor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidConfig("beam_size must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be >= 1".into()));
        }
        if self.prune_factor == Some(0) {
            return Err(Error::InvalidConfig("prune_factor must be >= 1".into()));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        match self.mode {
            DecodeMode::EosTerminated => self.max_len + 1,
            DecodeMode::FixedLength => self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Includes the trailing eos when `finished`.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub fsa_state: Option<StateId>,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the trailing eos.
    pub fn content(&self) -> &[TokenId] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Total order used for ranking: higher log-probability first, then the
/// lexicographically smaller sequence.
pub fn rank(a_logprob: f64, a_tokens: &[TokenId], b_logprob: f64, b_tokens: &[TokenId]) -> Ordering {
    b_logprob.total_cmp(&a_logprob).then_with(|| a_tokens.cmp(b_tokens))
}

struct Entry<St> {
    hyp: Hypothesis,
    state: Option<St>,
}

#[derive(Clone, Copy)]
struct Candidate {
    source: StateId,
    parent: usize,
    /// `None` carries a finished hypothesis over unchanged.
    token: Option<TokenId>,
    logprob: f64,
}

fn cmp_candidates<St>(beams: &[Vec<Entry<St>>], a: &Candidate, b: &Candidate) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| {
        let pa = &beams[a.source][a.parent].hyp.tokens;
        let pb = &beams[b.source][b.parent].hyp.tokens;
        pa.iter().chain(a.token.iter()).cmp(pb.iter().chain(b.token.iter()))
    })
}

fn top_k<St>(beams: &[Vec<Entry<St>>], cands: &mut Vec<Candidate>, k: usize) {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, |a, b| cmp_candidates(beams, a, b));
        cands.truncate(k);
    }
    cands.sort_by(|a, b| cmp_candidates(beams, a, b));
}

/// Shared search loop. `table` is the dense transition table of the
/// automaton; the unconstrained search uses a single accepting state.
struct Search<'a, S: Scorer> {
    scorer: &'a S,
    config: &'a DecodeConfig,
    num_states: usize,
    content: usize,
    table: &'a [StateId],
    accepting: &'a [bool],
    constrained: bool,
}

impl<S: Scorer> Search<'_, S> {
    fn run(&self, ctx: &ContextVector, initial: StateId) -> Result<Vec<Vec<Entry<S::State>>>> {
        let eos = self.scorer.eos_id();
        let mut beams: Vec<Vec<Entry<S::State>>> = (0..self.num_states).map(|_| Vec::new()).collect();
        beams[initial].push(Entry {
            hyp: Hypothesis {
                tokens: Vec::new(),
                logprob: 0.0,
                fsa_state: self.constrained.then_some(initial),
                finished: false,
            },
            state: Some(self.scorer.start(ctx)?),
        });
        let steps = self.config.steps();
        for t in 0..steps {
            let any_open = beams.iter().flatten().any(|e| !e.hyp.finished);
            if !any_open {
                break;
            }
            let eos_only = self.config.mode == DecodeMode::EosTerminated && t == self.config.max_len;
            let mut pools: Vec<Vec<Candidate>> = vec![Vec::new(); self.num_states];
            for (source, beam) in beams.iter().enumerate() {
                let mut local: Vec<(StateId, Candidate)> = Vec::new();
                for (parent, entry) in beam.iter().enumerate() {
                    if entry.hyp.finished {
                        pools[source].push(Candidate {
                            source,
                            parent,
                            token: None,
                            logprob: entry.hyp.logprob,
                        });
                        continue;
                    }
                    let lp = self.scorer.log_probs(entry.state.as_ref().expect("open hypothesis"));
                    if !eos_only {
                        let row = &self.table[source * self.content..(source + 1) * self.content];
                        for (w, &target) in row.iter().enumerate() {
                            local.push((
                                target,
                                Candidate {
                                    source,
                                    parent,
                                    token: Some(w),
                                    logprob: entry.hyp.logprob + lp[w],
                                },
                            ));
                        }
                    }
                    if self.config.mode == DecodeMode::EosTerminated && self.accepting[source] {
                        local.push((
                            source,
                            Candidate {
                                source,
                                parent,
                                token: Some(eos),
                                logprob: entry.hyp.logprob + lp[eos],
                            },
                        ));
                    }
                }
                if let Some(k) = self.config.prune_factor {
                    let keep = self.config.beam_size * k;
                    if local.len() > keep {
                        local.sort_by(|a, b| cmp_candidates(&beams, &a.1, &b.1));
                        local.truncate(keep);
                    }
                }
                for (target, c) in local {
                    pools[target].push(c);
                }
            }

            let mut next: Vec<Vec<Entry<S::State>>> = Vec::with_capacity(self.num_states);
            for (target, mut pool) in pools.into_iter().enumerate() {
                top_k(&beams, &mut pool, self.config.beam_size);
                let entries = pool
                    .into_iter()
                    .map(|c| {
                        let parent = &beams[c.source][c.parent];
                        match c.token {
                            None => Entry {
                                hyp: parent.hyp.clone(),
                                state: None,
                            },
                            Some(w) => {
                                let mut tokens = Vec::with_capacity(parent.hyp.tokens.len() + 1);
                                tokens.extend_from_slice(&parent.hyp.tokens);
                                tokens.push(w);
                                let finished = w == eos;
                                let state = (!finished)
                                    .then(|| self.scorer.advance(parent.state.as_ref().expect("open hypothesis"), w));
                                Entry {
                                    hyp: Hypothesis {
                                        tokens,
                                        logprob: c.logprob,
                                        fsa_state: self.constrained.then_some(target),
                                        finished,
                                    },
                                    state,
                                }
                            }
                        }
                    })
                    .collect();
                next.push(entries);
            }
            beams = next;
        }
        Ok(beams)
    }
}

fn best_of<'a>(hyps: impl Iterator<Item = &'a Hypothesis>) -> Option<Hypothesis> {
    hyps.min_by(|a, b| rank(a.logprob, &a.tokens, b.logprob, &b.tokens))
        .cloned()
}

fn check_vocab<S: Scorer>(scorer: &S) -> Result<()> {
    if scorer.vocab_size() < 2 {
        return Err(Error::InvalidConfig(
            "scorer vocabulary needs at least one content token and eos".into(),
        ));
    }
    Ok(())
}

/// Standard beam search. In eos mode only finished hypotheses are returned.
pub fn beam_search<S: Scorer>(scorer: &S, ctx: &ContextVector, config: &DecodeConfig) -> Result<Hypothesis> {
    config.validate()?;
    check_vocab(scorer)?;
    let content = scorer.vocab_size() - 1;
    let table = vec![0; content];
    let search = Search {
        scorer,
        config,
        num_states: 1,
        content,
        table: &table,
        accepting: &[true],
        constrained: false,
    };
    let beams = search.run(ctx, 0)?;
    let beam = beams[0].iter().map(|e| &e.hyp);
    match config.mode {
        DecodeMode::EosTerminated => {
            best_of(beam.filter(|h| h.finished)).ok_or(Error::NoFinishedHypothesis(config.max_len))
        }
        DecodeMode::FixedLength => Ok(best_of(beam).expect("beam is never empty")),
    }
}

/// Constrained beam search: the most probable sequence found that `fsa`
/// accepts.
pub fn constrained_beam_search<S: Scorer>(
    scorer: &S,
    ctx: &ContextVector,
    config: &DecodeConfig,
    fsa: &Fsa,
) -> Result<Hypothesis> {
    config.validate()?;
    check_vocab(scorer)?;
    let content = scorer.vocab_size() - 1;
    if fsa.alphabet_size() != content {
        return Err(Error::AlphabetMismatch(content, fsa.alphabet_size()));
    }
    if !fsa.language_nonempty(config.max_len) {
        return Err(Error::Unsatisfiable(config.max_len));
    }
    let table = fsa.transition_table();
    let accepting: Vec<bool> = (0..fsa.num_states()).map(|s| fsa.is_accepting(s)).collect();
    let search = Search {
        scorer,
        config,
        num_states: fsa.num_states(),
        content,
        table: &table,
        accepting: &accepting,
        constrained: true,
    };
    let beams = search.run(ctx, fsa.initial())?;
    let finals = fsa
        .accepting_states()
        .flat_map(|s| beams[s].iter().map(|e| &e.hyp))
        .filter(|h| config.mode == DecodeMode::FixedLength || h.finished);
    best_of(finals).ok_or(Error::NoAcceptedHypothesis)
}

/// Decodes each item independently, constrained when an automaton is given.
/// Failures are reported per item.
pub fn decode_batch<S: Scorer>(
    scorer: &S,
    items: &[(ContextVector, Option<&Fsa>)],
    config: &DecodeConfig,
) -> Vec<Result<Hypothesis>> {
    items
        .par_iter()
        .map(|(ctx, fsa)| match fsa {
            Some(fsa) => constrained_beam_search(scorer, ctx, config, fsa),
            None => beam_search(scorer, ctx, config),
        })
        .collect()
}
