//! Textline-level document pre-training at toy scale.
//!
//! A page is an image plus OCR textlines. The model pairs a small CNN image
//! stream with a layout-aware text transformer and a fusion encoder, and is
//! pre-trained with four objectives: masked language modeling, a
//! textline-region contrastive loss, masked region reconstruction and
//! textline grid matching.
//!
//! Everything runs on a self-contained f64 autodiff engine ([`numkit`]) so
//! gradients can be checked against finite differences end to end.

pub mod docgen;
pub mod doclib;
pub mod encoders;
pub mod evalkit;
pub mod numkit;
pub mod objectives;
pub mod seed;
pub mod trainkit;

pub use docgen::{generate_corpus, generate_document, GenError, GenParams};
pub use doclib::{BBox, Corpus, DocError, Document, GridConfig, Textline, Vocab, Word};
pub use encoders::{EncoderError, Model, ModelConfig};
pub use evalkit::{AlignmentReport, EvalError, FinetuneConfig};
pub use numkit::{Checkpoint, NumError, Tensor};
pub use objectives::{Lambdas, LossReport, ObjectiveConfig, ObjectiveError, ObjectiveFlags};
pub use trainkit::{TrainConfig, TrainError};

use thiserror::Error;

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Error {
    /// True for failures caused by non-finite values during training.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Num(NumError::NonFinite(_))
                | Error::Objective(ObjectiveError::NonFinite(_))
                | Error::Train(TrainError::NonFinite { .. } | TrainError::Num(NumError::NonFinite(_)))
                | Error::Eval(EvalError::Num(NumError::NonFinite(_)))
        )
    }
}
