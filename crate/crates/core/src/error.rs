use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate word `{0}` in vocabulary")]
    DuplicateWord(String),
    #[error("invalid word `{0}`")]
    InvalidWord(String),
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("word-form group is empty")]
    EmptyGroup,
    #[error("token id {0} is out of range")]
    InvalidToken(usize),
    #[error("end-of-sequence token is not allowed here")]
    UnexpectedEos,

    #[error("automaton state {0} is out of range")]
    InvalidState(usize),
    #[error("malformed automaton: {0}")]
    MalformedFsa(String),
    #[error("automata are defined over different alphabets ({0} vs {1} tokens)")]
    AlphabetMismatch(usize, usize),
    #[error("pattern has no items")]
    EmptyPattern,
    #[error("phrase is empty")]
    EmptyPhrase,
    #[error("invalid gap bounds: min {min}, max {max}")]
    InvalidGap { min: usize, max: usize },
    #[error("at-least-m-of-n requires 1 <= m <= n, got m={m}, n={n}")]
    InvalidThreshold { m: usize, n: usize },
    #[error("too many disjunctive sets: {0} (limit {1})")]
    TooManySets(usize, usize),
    #[error("automaton exceeds {0} states")]
    TooManyStates(usize),

    #[error("invalid model dimensions: {0}")]
    InvalidDimensions(String),
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),
    #[error("context has dimension {got}, expected {expected}")]
    ContextDimension { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("constraint is unsatisfiable within {0} tokens")]
    Unsatisfiable(usize),
    #[error("no accepted finished hypothesis survived the search")]
    NoAcceptedHypothesis,
    #[error("no finished hypothesis within {0} steps")]
    NoFinishedHypothesis(usize),

    #[error("search space of {0} sequences exceeds the oracle limit")]
    SearchSpaceTooLarge(u128),
    #[error("language is empty")]
    EmptyLanguage,

    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has no complete examples")]
    NoCompleteExamples,
    #[error("every partial example failed completion")]
    AllCompletionsFailed,
    #[error("decode ids do not match ground truth: {0}")]
    IdMismatch(String),

    #[error("serialization: {0}")]
    Format(String),
}
