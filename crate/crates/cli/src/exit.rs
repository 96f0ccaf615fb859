//! Exit-code classification of errors raised by the core crate.

use docline_core::{DocError, EncoderError, Error, EvalError, GenError, NumError, ObjectiveError, TrainError};

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERIC: u8 = 3;

/// Bad flags or config values detected by the CLI itself.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// The first layer of the chain that we recognize decides; anything else
/// (I/O, malformed files) is a data error.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let c = if cause.is::<Usage>() {
            Some(USAGE)
        } else if let Some(e) = cause.downcast_ref::<Error>() {
            Some(core(e))
        } else if let Some(e) = cause.downcast_ref::<TrainError>() {
            Some(train(e))
        } else if let Some(e) = cause.downcast_ref::<EvalError>() {
            Some(eval(e))
        } else if let Some(e) = cause.downcast_ref::<GenError>() {
            Some(gen(e))
        } else if let Some(e) = cause.downcast_ref::<ObjectiveError>() {
            Some(objective(e))
        } else if let Some(e) = cause.downcast_ref::<EncoderError>() {
            Some(encoder(e))
        } else if let Some(e) = cause.downcast_ref::<NumError>() {
            Some(num(e))
        } else {
            cause.downcast_ref::<DocError>().map(doc)
        };
        if let Some(c) = c {
            return c;
        }
    }
    DATA
}

fn core(e: &Error) -> u8 {
    match e {
        Error::Num(e) => num(e),
        Error::Doc(e) => doc(e),
        Error::Gen(e) => gen(e),
        Error::Encoder(e) => encoder(e),
        Error::Objective(e) => objective(e),
        Error::Train(e) => train(e),
        Error::Eval(e) => eval(e),
    }
}

fn num(e: &NumError) -> u8 {
    match e {
        NumError::NonFinite(_) => NUMERIC,
        NumError::InvalidConfig(_) | NumError::StepOutOfRange { .. } => USAGE,
        _ => DATA,
    }
}

fn doc(e: &DocError) -> u8 {
    match e {
        DocError::InvalidGrid { .. } => USAGE,
        _ => DATA,
    }
}

fn gen(e: &GenError) -> u8 {
    match e {
        GenError::Doc(e) => doc(e),
        _ => USAGE,
    }
}

fn encoder(e: &EncoderError) -> u8 {
    match e {
        EncoderError::InvalidConfig(_) => USAGE,
        EncoderError::Num(e) => num(e),
        EncoderError::Input(_) => DATA,
    }
}

fn objective(e: &ObjectiveError) -> u8 {
    match e {
        ObjectiveError::NonFinite(_) => NUMERIC,
        ObjectiveError::InvalidConfig(_) => USAGE,
        ObjectiveError::Encoder(e) => encoder(e),
        ObjectiveError::Num(e) => num(e),
        ObjectiveError::Doc(e) => doc(e),
        _ => DATA,
    }
}

fn train(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) | TrainError::ConfigMismatch(_) => USAGE,
        TrainError::NonFinite { .. } => NUMERIC,
        TrainError::Doc(e) => doc(e),
        TrainError::Encoder(e) => encoder(e),
        TrainError::Objective(e) => objective(e),
        TrainError::Num(e) => num(e),
        TrainError::Io(_) => DATA,
    }
}

fn eval(e: &EvalError) -> u8 {
    match e {
        EvalError::InvalidConfig(_) => USAGE,
        EvalError::Doc(e) => doc(e),
        EvalError::Encoder(e) => encoder(e),
        EvalError::Num(e) => num(e),
        _ => DATA,
    }
}
