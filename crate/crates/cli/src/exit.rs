use std::fmt;
use std::io::ErrorKind;

use mutaprobe_core::container::ContainerError;
use mutaprobe_core::corpus::CorpusError;
use mutaprobe_core::mutator::MutatorError;
use mutaprobe_core::probe::ProbeError;
use mutaprobe_core::runner::RunnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Validation,
    MissingInput,
    Endpoint,
    Internal,
}

impl FailureClass {
    pub fn code(self) -> u8 {
        match self {
            FailureClass::Validation => 2,
            FailureClass::MissingInput => 3,
            FailureClass::Endpoint => 4,
            FailureClass::Internal => 5,
        }
    }
}

/// An error raised by the CLI itself with its class attached.
#[derive(Debug)]
pub struct Failure {
    pub class: FailureClass,
    pub message: String,
}

impl Failure {
    pub fn new(class: FailureClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(FailureClass::MissingInput, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn io_class(e: &std::io::Error) -> FailureClass {
    if e.kind() == ErrorKind::NotFound {
        FailureClass::MissingInput
    } else {
        FailureClass::Internal
    }
}

/// Walks the cause chain; the first error with a known class decides.
pub fn classify(err: &anyhow::Error) -> FailureClass {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.class;
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return match e {
                CorpusError::MissingTokenization(_) => FailureClass::MissingInput,
                CorpusError::Io { source, .. } => io_class(source),
                _ => FailureClass::Validation,
            };
        }
        if let Some(e) = cause.downcast_ref::<RunnerError>() {
            if e.is_endpoint_failure() {
                return FailureClass::Endpoint;
            }
            match e {
                RunnerError::MalformedLedger { .. } | RunnerError::Inconsistent(_) => {
                    return FailureClass::Validation
                }
                RunnerError::Io { source, .. } => return io_class(source),
                _ => continue,
            }
        }
        if let Some(e) = cause.downcast_ref::<MutatorError>() {
            match e {
                MutatorError::Io { source, .. } => return io_class(source),
                MutatorError::Container(_) => continue,
                _ => return FailureClass::Validation,
            }
        }
        if let Some(e) = cause.downcast_ref::<ContainerError>() {
            return match e {
                ContainerError::Io { source, .. } => io_class(source),
                _ => FailureClass::Validation,
            };
        }
        if let Some(e) = cause.downcast_ref::<ProbeError>() {
            match e {
                ProbeError::MissingActivation(_) => return FailureClass::MissingInput,
                ProbeError::Io { source, .. } => return io_class(source),
                ProbeError::TestSplitReused(_) => return FailureClass::Internal,
                ProbeError::Container(_) | ProbeError::Stats(_) | ProbeError::Analysis(_) => continue,
                _ => return FailureClass::Validation,
            }
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return FailureClass::Validation;
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return io_class(e);
        }
    }
    FailureClass::Internal
}
