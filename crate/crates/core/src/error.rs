use thiserror::Error;

/// A tensor or vector that does not have the width an operation expects.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{what}: expected length {expected}, got {got}")]
pub struct ShapeError {
    pub what: &'static str,
    pub expected: usize,
    pub got: usize,
}

impl ShapeError {
    pub fn check(what: &'static str, expected: usize, got: usize) -> Result<(), ShapeError> {
        if expected == got {
            Ok(())
        } else {
            Err(ShapeError { what, expected, got })
        }
    }
}

/// Umbrella error for callers that drive several subsystems at once.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Reasoner(#[from] crate::reasoner::ReasonerError),
    #[error(transparent)]
    Command(#[from] crate::command_codec::CommandError),
    #[error(transparent)]
    Coarsen(#[from] crate::coarsen::CoarsenError),
    #[error(transparent)]
    Decoder(#[from] crate::hier_decoder::DecoderError),
    #[error(transparent)]
    Training(#[from] crate::training::TrainError),
    #[error(transparent)]
    Eval(#[from] crate::evaluator::EvalError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}
