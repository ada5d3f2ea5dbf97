//! Command-line front end: dataset files, training runs, decoding,
//! evaluation and the synthetic benchmark corpus.

pub mod commands;
pub mod config;
pub mod data;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0} of {1} decodes failed")]
    DecodeFailures(usize, usize),
    #[error("empty language: the constraint accepts no sequence")]
    EmptyLanguage,
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_UNSATISFIABLE: u8 = 3;
pub const EXIT_DECODE: u8 = 4;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use ps3_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            match e {
                E::Unsatisfiable(_) | E::EmptyLanguage => return EXIT_UNSATISFIABLE,
                E::NoAcceptedHypothesis | E::NoFinishedHypothesis(_) => return EXIT_DECODE,
                _ => {}
            }
        }
        if let Some(data::DataError::Unsatisfiable { .. }) = cause.downcast_ref::<data::DataError>() {
            return EXIT_UNSATISFIABLE;
        }
        if let Some(e) = cause.downcast_ref::<CommandError>() {
            return match e {
                CommandError::DecodeFailures(..) => EXIT_DECODE,
                CommandError::EmptyLanguage => EXIT_UNSATISFIABLE,
            };
        }
    }
    EXIT_VALIDATION
}
